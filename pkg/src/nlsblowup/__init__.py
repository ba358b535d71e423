"""Self-similar blow-up of the radial focusing NLS: profile solver,
dynamic-rescaling simulator and trace analysis."""

__version__ = "0.1.0"
