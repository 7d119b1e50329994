"""Open-set recognition with reciprocal point learning on a small CPU stack."""

__version__ = "0.1.0"
