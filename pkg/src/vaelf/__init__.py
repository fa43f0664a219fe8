"""VAE-based imputation of sparse power-load-monitoring tensors, with an MF baseline."""

__version__ = "0.1.0"
