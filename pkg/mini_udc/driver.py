# driver.py
import argparse
import json
import pathlib
import sys
from dataclasses import replace
from typing import List, Optional

import numpy as np

from mini_udc.codec.bitcoder import Container
from mini_udc.codec.nml_codec import decode_nml, encode_nml
from mini_udc.codec.rng import RNG_ID
from mini_udc.codec.table_codecs import decode_t1, decode_t2, encode_t1, encode_t2
from mini_udc.config import REFERENCE_CONFIG, ExperimentConfig, load_config
from mini_udc.core.distortion_space import (
    AnyClassTable,
    ClassRegistry,
    enumerate_realizable_classes,
    growth_bound,
    growth_bound_polynomial,
    load_class_table,
    save_class_table,
)
from mini_udc.core.rd_solver import solve_rd
from mini_udc.errors import ConfigError, DecodeError, InvalidInputError, SizeError, UdcError
from mini_udc.experiments import (
    BOUNDS_COLUMNS,
    FAULTS,
    SuiteSettings,
    bounds_rows,
    run_experiment,
    run_invariant_suite,
    write_csv,
)
from mini_udc.log import configure_logging


def read_symbols(path: str) -> np.ndarray:
    # 一行一个整数；'-' 表示 stdin
    text = sys.stdin.read() if path == "-" else pathlib.Path(path).read_text(encoding="utf-8")
    try:
        return np.array([int(line) for line in text.split()], dtype=np.int64)
    except ValueError as e:
        raise InvalidInputError(f"symbol file must hold one integer per line: {e}") from e


def write_text(text: str, out: Optional[str]) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        pathlib.Path(out).write_text(text, encoding="utf-8")


def t1_table(n: int, J: int, K: int, path: Optional[str], create: bool = False) -> AnyClassTable:
    """Class table for t1: a saved UDCT file, else the enumerated tiny table, else a fresh registry."""
    if path is not None and (not create or pathlib.Path(path).exists()):
        with open(path, "rb") as f:
            table = load_class_table(f)
        if (table.n, table.J, table.K) != (n, J, K):
            raise DecodeError(f"class table is for n={table.n}, J={table.J}, K={table.K}")
        return table
    try:
        return enumerate_realizable_classes(n, J, K)
    except SizeError:
        if not create:
            raise ConfigError(f"t1 at n={n} uses a class registry; pass the --table the encoder wrote")
        return ClassRegistry(n, J, K)


def _config(args) -> ExperimentConfig:
    if args.config is None:
        raise ConfigError("--config is required")
    return load_config(args.config).with_overrides(seed=args.seed, out=args.out)


# ==== subcommands ====

def cmd_rd(args) -> int:
    cfg = _config(args)
    sol = solve_rd(cfg.source(), float(cfg.level), cfg.measure(), cfg.tol)
    doc = {
        "rate": sol.rate,
        "lambda": sol.lambda_star,
        "Q": sol.Q_star.tolist(),
        "d_max": sol.d_max,
        "distortion": sol.distortion,
        "iterations": sol.iterations,
    }
    write_text(json.dumps(doc, indent=2) + "\n", cfg.out)
    return 0


def cmd_encode(args) -> int:
    cfg = _config(args)
    rho, d = cfg.measure(), cfg.level
    x = read_symbols(args.input)
    n = int(x.size)
    if args.codec == "t1":
        table = t1_table(n, rho.J, rho.K, args.table, create=True)
        frame = encode_t1(x, rho, d, table)
        box = Container("t1", n, rho.J, rho.K, frame.bits)
        if args.table is not None:
            with open(args.table, "wb") as f:
                save_class_table(table, f)
        elif isinstance(table, ClassRegistry):
            print(f"[warn] class index {frame.class_index} is session-local; pass --table to keep it", file=sys.stderr)
    elif args.codec == "t2":
        frame = encode_t2(x, rho, d)
        box = Container("t2", n, rho.J, rho.K, frame.bits)
    else:
        # 0 records the default cap; explicit caps are at least 1
        cap = 0 if cfg.cap is None else cfg.cap
        nml = encode_nml(x, rho, d, cfg.seed, cfg.cap)
        box = Container("nml", n, rho.J, rho.K, nml.bits, cfg.seed, cap, RNG_ID)
    data = box.pack()
    if cfg.out is None:
        sys.stdout.buffer.write(data)
    else:
        pathlib.Path(cfg.out).write_bytes(data)
    return 0


def cmd_decode(args) -> int:
    cfg = _config(args)
    rho = cfg.measure()
    data = sys.stdin.buffer.read() if args.input == "-" else pathlib.Path(args.input).read_bytes()
    box = Container.unpack(data)
    if (box.J, box.K) != (rho.J, rho.K):
        raise DecodeError(f"container alphabets {box.J}x{box.K} do not match the config's {rho.J}x{rho.K}")
    if box.codec == "t1":
        y = decode_t1(box.payload, box.n, box.J, box.K, t1_table(box.n, box.J, box.K, args.table))
    elif box.codec == "t2":
        rho_max = rho.exact_rho_max if rho.exact_rho_max is not None else rho.rho_max
        y = decode_t2(box.payload, box.n, box.J, box.K, cfg.level, rho_max)
    else:
        if box.rng_id != RNG_ID:
            raise DecodeError(f"unknown rng id {box.rng_id}")
        y = decode_nml(box.payload, box.seed, box.n, box.K)
    write_text("".join(f"{int(s)}\n" for s in y), cfg.out)
    return 0


def cmd_classes(args) -> int:
    cfg = _config(args)
    rho = cfg.measure()
    J, K = rho.J, rho.K
    lines = ["n,classes,growth_bound,polynomial_bound"]
    table: Optional[AnyClassTable] = None
    for n in args.n or [1]:
        try:
            table = enumerate_realizable_classes(n, J, K)
            count = str(len(table))
        except SizeError as e:
            print(f"[skip] {e}", file=sys.stderr)
            # past tiny tables, save a registry that already holds the config's class
            table = ClassRegistry(n, J, K)
            table.index_of(rho, cfg.level)
            count = ""
        lines.append(f"{n},{count},{growth_bound(n, J, K)},{growth_bound_polynomial(n, J, K)}")
    print("\n".join(lines))
    if cfg.out is not None and table is not None:
        with open(cfg.out, "wb") as f:
            save_class_table(table, f)
        kind = "registry" if isinstance(table, ClassRegistry) else "class table"
        print(f"[ok] wrote {kind} {cfg.out}")
    return 0


def cmd_bounds(args) -> int:
    cfg = _config(args)
    _emit_csv(bounds_rows(cfg), cfg.out, BOUNDS_COLUMNS)
    return 0


def cmd_experiment(args) -> int:
    cfg = _config(args)
    _emit_csv(run_experiment(cfg), cfg.out)
    return 0


def cmd_verify(args) -> int:
    base = load_config(args.config) if args.config else REFERENCE_CONFIG
    cfg = base.with_overrides(seed=args.seed)
    settings = SuiteSettings.acceptance() if args.full else SuiteSettings()
    if args.trials is not None:
        settings = replace(settings, trials=args.trials, nml_trials=args.trials)
    if args.fault:
        settings = replace(settings, faults=tuple(args.fault))
    report = run_invariant_suite(cfg, settings)
    for line in report.lines():
        print(line)
    if not report.passed:
        print(f"[fail] {', '.join(report.failed())}", file=sys.stderr)
        return 1
    print("[ok] all checks passed")
    return 0


def _emit_csv(rows, out: Optional[str], columns: Optional[List[str]] = None) -> None:
    kwargs = {"columns": columns} if columns else {}
    if out is None:
        write_csv(rows, sys.stdout, **kwargs)
    else:
        with open(out, "w", encoding="utf-8", newline="") as f:
            write_csv(rows, f, **kwargs)


# ==== entry ====

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="udc", description="universal-distortion d-semifaithful coding lab")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output path (default: stdout)")
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")

    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("rd", parents=[common], help="rate-distortion function at the config's (p, d, rho)")

    enc = sub.add_parser("encode", parents=[common], help="encode a symbol file into a container")
    enc.add_argument("codec", choices=("t1", "t2", "nml"))
    enc.add_argument("input", help="symbol file, one integer per line ('-' for stdin)")
    enc.add_argument("--table", help="UDCT class table for t1")

    dec = sub.add_parser("decode", parents=[common], help="decode a container back into symbols")
    dec.add_argument("input", help="container file ('-' for stdin)")
    dec.add_argument("--table", help="UDCT class table for t1")

    cls = sub.add_parser("classes", parents=[common], help="count realizable equivalence classes")
    cls.add_argument("-n", type=int, action="append", help="blocklength (repeatable, default 1)")

    sub.add_parser("bounds", parents=[common], help="ball-probability, converse and Shtarkov bounds as CSV")
    sub.add_parser("experiment", parents=[common], help="redundancy-scaling experiment as CSV")

    ver = sub.add_parser("verify", parents=[common], help="run the invariant suite")
    ver.add_argument("--full", action="store_true", help="acceptance-scale trial counts and blocklengths")
    ver.add_argument("--trials", type=int, help="randomized trials per codec")
    ver.add_argument("--fault", action="append", choices=FAULTS, help="inject a codec fault")
    return ap


COMMANDS = {
    "rd": cmd_rd,
    "encode": cmd_encode,
    "decode": cmd_decode,
    "classes": cmd_classes,
    "bounds": cmd_bounds,
    "experiment": cmd_experiment,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        return COMMANDS[args.command](args)
    except UdcError as e:
        print(f"[error] {e}", file=sys.stderr)
        return 2
    except Exception as e:
        print(f"[error] {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
