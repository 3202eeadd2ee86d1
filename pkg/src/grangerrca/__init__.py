"""Root-cause analysis on multivariate time series via neural Granger discovery."""

__version__ = "0.1.0"
