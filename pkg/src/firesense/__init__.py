"""Multi-UAV active sensing of wildfire fronts."""

__version__ = "0.1.0"
