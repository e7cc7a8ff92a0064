"""SRB measures of random iterated systems of increasing interval maps."""

__version__ = "0.1.0"
