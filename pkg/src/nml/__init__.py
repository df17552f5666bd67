"""Weekly policy-stance index, causality tests, mode decomposition, LSTM forecasting and attribution."""

__version__ = "0.1.0"
