"""1D-CNN phishing website classifiers built on a small numpy engine."""

__version__ = "0.1.0"
