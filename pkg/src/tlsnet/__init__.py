"""Two-level atom dynamics and a conditional seq2seq LSTM forecaster for its dipole."""

__version__ = "0.1.0"
