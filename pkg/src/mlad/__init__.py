"""Log anomaly detection across multiple systems: template parsing, window
datasets, an entmax-attention encoder with a Gaussian-mixture energy head,
and the evaluation protocols around them."""

__version__ = "0.1.0"
