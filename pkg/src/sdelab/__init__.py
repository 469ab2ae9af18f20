"""sdelab: coefficient analysis, growth criteria, stationary densities, and
Monte Carlo verification for Ito diffusions with locally integrable drifts."""

__version__ = "0.1.0"
