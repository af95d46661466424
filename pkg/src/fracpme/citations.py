"""Reference labels carried by every verdict.

Each check reports which mathematical statement it exercises through one of
these keys; the acceptance suite asserts that every emitted key is listed.
"""

CITATIONS = {
    "semigroup.linear-kernel": "m = 1 evolution equals convolution with the fractional heat kernel",
    "operator.sigma1-kernel": "closed-form Cauchy kernel for sigma = 1 in one dimension",
    "operator.cross-validation": "Fourier, hypersingular-kernel and extension definitions coincide",
    "resolvent.t-contraction": "T-contraction in L1 of the elliptic resolvent",
    "mass.conservation": "conservation of mass for m >= m_star",
    "mass.cutoff-scaling": "cutoff-function flux bound scaling like R^(-sigma + N(p-1)/p)",
    "mass.loss-subcritical": "mass is not conserved below the critical exponent",
    "extinction.whole-space": "finite-time extinction below the critical exponent",
    "extinction.bounded": "finite-time extinction on bounded domains for 0 < m < 1",
    "extinction.none": "nonnegative solutions with m >= 1 do not vanish in finite time",
    "extinction.separated": "explicit separated-variables extinction solution",
    "smoothing.l1-linf": "L1 to Linf smoothing effect with exponent gamma_p",
    "lp.monotone": "every Lp norm is nonincreasing in time",
    "l1.order-contraction": "ordered L1 contraction between two solutions",
    "comparison": "comparison principle for constructed solutions",
    "positivity": "strict positivity of nonnegative nontrivial solutions",
    "time-derivative.l1": "L1 bound on time-increment quotients",
    "homogeneity": "(m - 1) t u_t + u >= 0 from the homogeneity of the equation",
    "retention": "t^(1/(m-1)) u is nondecreasing for m > 1",
    "continuity.parameters": "continuous dependence on m, sigma and the datum",
    "continuity.sigma-to-2": "continuity of the solution map as sigma tends to 2",
    "energy.identity": "energy identity obtained by testing with u^m",
    "inequality.stroock-varopoulos": "Stroock-Varopoulos inequality",
    "inequality.generalized-sv": "generalized Stroock-Varopoulos inequality with psi' = (Psi')^2",
    "inequality.ngn": "Nash-Gagliardo-Nirenberg type inequality",
    "inequality.hls": "Hardy-Littlewood-Sobolev inequality",
    "bounded.spectral": "spectral fractional Laplacian on a bounded domain",
    "ode-limit": "pointwise ODE limit as sigma tends to 0",
}


def is_known(label: str) -> bool:
    return label in CITATIONS
