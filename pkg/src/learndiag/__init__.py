"""Learning-diagnosis engine: psychometric channels fused with a neural predictor."""

__version__ = "0.1.0"
