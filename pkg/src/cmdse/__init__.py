"""Open-vocabulary HOI detection with conditional multi-level decoding, at desk scale."""

__version__ = "0.1.0"
