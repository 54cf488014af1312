"""Sphere-modulated continuous-variable QKD toolkit.

Samplers for the key/Gaussian/decoy modulations, a linear-channel simulator,
division-algebra reverse reconciliation, covariance-based key-rate analysis,
and a CLI that sweeps the analytic curves and runs full protocol sessions.
"""

__version__ = "0.1.0"
