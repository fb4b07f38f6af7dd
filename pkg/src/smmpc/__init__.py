"""Maximum-likelihood signal matrix model (SMM) predictive control.

Submodules:

- :mod:`smmpc.plant`          LTI plant realization, simulation, data generation
- :mod:`smmpc.signal_matrix`  Hankel signal matrices, compression, online updates
- :mod:`smmpc.smm`            ML estimator, linearization, covariance, prediction
- :mod:`smmpc.qp`             dense active-set QP solver
- :mod:`smmpc.controllers`    SMM-PC, regularized DeePC, ideal MPC, impulse MPC
- :mod:`smmpc.harness`        closed loop, Monte Carlo, CSV/JSON output
- :mod:`smmpc.experiments`    presets for the six numerical examples
- :mod:`smmpc.config`         TOML experiment files
- :mod:`smmpc.plotting`       figure rendering
"""

__version__ = "0.1.0"
