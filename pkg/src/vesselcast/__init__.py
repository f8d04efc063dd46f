"""Multi-vessel trajectory forecasting with CPA-based collision screening."""

__version__ = "0.1.0"
