"""Quenched disordered pinning and directed polymer toolkit.

Exact log-space partition functions, seeded replica campaigns, martingale
concentration bounds and their empirical verification, and Monte Carlo
estimates of free energies and of the polymer endpoint rate function.
"""

__version__ = "0.1.0"
