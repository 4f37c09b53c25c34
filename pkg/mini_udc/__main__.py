from mini_udc.driver import main

raise SystemExit(main())
