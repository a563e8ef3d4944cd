"""Gaussian beams, X-ray transforms and boundary observability for rough-coefficient waves."""

__version__ = "0.1.0"
