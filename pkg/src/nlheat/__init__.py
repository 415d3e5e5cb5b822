"""Radial toolkit for supercritical semilinear heat blow-up.

Submodules
----------
constants    closed-form numerology for (d, p) pairs
grids        composite radial grids, finite differences, quadrature
groundstate  the radial ground state and its tail diagnostics
spectral     kernels, ladders and projection generators of the linearization
profile      approximate blow-up profiles and their residual
flow         finite-dimensional parameter dynamics and trapped-regime shooting
sim          radial PDE simulation and blow-up classification
ineq         Hardy / Rellich / coercivity quotient laboratory
cli          command-line entry points
"""

__version__ = "0.1.0"
