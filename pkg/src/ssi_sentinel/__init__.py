"""SSI surveillance: term selection, sensitivity-first classification, review loop."""

__version__ = "0.1.0"
