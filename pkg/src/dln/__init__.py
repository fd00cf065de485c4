"""Domain layer norm: style-controllable sequence generation with shared LN-LSTM decoders."""

__version__ = "0.1.0"
