"""State-dependent dynamic tube MPC workbench."""

__version__ = "0.1.0"
