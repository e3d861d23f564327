"""ECG language processing: waves as words, records as sentences."""

__version__ = "0.1.0"
