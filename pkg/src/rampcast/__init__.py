"""Daily primary three-hour net-load ramp labelling and forecasting."""

__version__ = "0.1.0"
