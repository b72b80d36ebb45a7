"""Numerical toolkit for multi-bubble self-similar blow-up of slightly
L^2-supercritical generalized KdV equations

    u_t + (u_xx + u|u|^(p-1))_x = 0,   p slightly above 5.

Modules: ``groundstate`` (closed-form Q_p, Lambda, L, invariants),
``profile`` (self-similar profiles and the eigenvalue b_c(p)), ``pde``
(pseudo-spectral evolution), ``modulation`` (bubble decomposition,
localized norms, reduced flows), ``sync`` (synchronizing collapse times by
bisection), ``placement`` (hitting a prescribed blow-up set) and ``cli``.
"""

__version__ = "0.1.0"
