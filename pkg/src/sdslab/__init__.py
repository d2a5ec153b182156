"""Numerical checks of mixing, large deviations and CLTs for random translations on tori,
their skew-product extensions, and expanding circle maps."""

__version__ = "0.1.0"
