"""Out-of-process predictor server for the active label refinement loop."""

__version__ = "0.1.0"
