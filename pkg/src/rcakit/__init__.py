"""Root cause analysis from metrics, logs and module topology."""

__version__ = "0.1.0"
