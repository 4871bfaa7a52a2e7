"""hermdeform: numerical Hermitian geometry and certified curvature-sign
deformation.

The package computes the canonical connection apparatus of Hermitian
metrics in holomorphic charts (connection coefficients, torsion, full
curvature tensor, both curvature traces, scalar curvature, and traces
against a second background metric) using exact truncated-Taylor
arithmetic, and implements a constructive conformal deformation that
turns metrics whose background-traced curvature is nonnegative-definite
and somewhere positive (resp. the mirrored negative case) into metrics
with a strictly positive (resp. negative) trace, with certified margins.
"""

__version__ = "0.1.0"
