"""Posterior approximation under randomized likelihoods.

Modules
-------
measures    parameter grids, prior quadrature, densities and Hellinger distances
forward     forward models and the Gaussian quadratic misfit
randmisfit  random sketches and the randomized misfit
probode     deterministic and randomized one-step ODE integrators
posterior   exact, sample and marginal posteriors and bound constants
expharness  config-driven experiments and the ``randlik`` command line
"""

__version__ = "0.1.0"
