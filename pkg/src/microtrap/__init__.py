"""Digital twin of an SLM-addressed microlens dipole-trap array."""

__version__ = "0.1.0"
