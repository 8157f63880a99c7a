"""Pseudo-spectral simulator and statistical verifier for the renormalized
quadratic stochastic wave equation on the 3-torus.

The package is organized bottom-up:

- ``spectral``: frequency-cube fields, transforms, dealiased products
- ``blocks``: dyadic block decomposition, paraproducts, Besov norms
- ``noise``: counter-based Gaussian noise and exact one-step integrals
- ``objects``: renormalized stochastic objects and integral operators
- ``solver``: the fixed-point system solver and the direct truncated solver
- ``moments``: closed-form covariances, spectrum estimators, decay fits
- ``fieldio``: binary snapshot and CSV formats
- ``cli``: experiment runner (``parawave <kind> --config ...``)
"""

__version__ = "0.1.0"
