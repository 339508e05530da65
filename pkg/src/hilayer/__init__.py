"""hilayer: higher-order divergence-form operators in the half-space.

Numerical constructions of fundamental solutions, Newton potentials, single
and double layer potentials with t-independent coefficients, and the
square-function / Carleson measurement harness built on top of them.
"""

from .mindex import MIArray, enumerate_mi, mi_factorial, laplacian_power_coeffs
from .fields import GridField, SlabField, gradient_k, div_k
from .dyadic import DyadicCube, annuli, dyadic_forest

__version__ = "0.1.0"
