"""Numerical laboratory for CGO-based inversion of convection-diffusion boundary data.

Subpackage map:

  * ``grid``       uniform grids, fields, discrete calculus, Fourier, norms
  * ``io``         binary field/matrix container
  * ``potentials`` Hölder test coefficients, mollification, reductions, gauges
  * ``dbar``       frames, zeta vectors, Cauchy transform, transport phases
  * ``forward``    discrete operators, Dirichlet solves, boundary-map synthesis
  * ``cgo``        conjugated-operator bookkeeping and remainder solves
  * ``recon``      pairing-based Fourier recovery and the decision pipeline
  * ``carleman``   weighted lower-bound probes
  * ``experiments``/``config``/``cli``  reproducible experiment harness
"""

__version__ = "0.1.0"
