"""Phase-angle control for flexible traction power supply clusters."""

__version__ = "0.1.0"
