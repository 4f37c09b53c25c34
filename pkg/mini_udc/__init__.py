"""mini_udc: universal-distortion d-semifaithful lossy coding lab."""

__version__ = "0.1.0"
