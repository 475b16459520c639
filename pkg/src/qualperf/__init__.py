"""Quality-conditioned prediction of biometric verification performance."""

__version__ = "0.1.0"
