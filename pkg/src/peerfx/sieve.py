"""Series (sieve) bases over estimated latent positions, and the residualizer.

The estimators regress out an unknown smooth function of the latent
positions by projecting onto a finite tensor-product basis evaluated at the
estimated positions. Everything downstream only needs two things from this
module: the evaluated design matrix and the annihilator projection.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import DataError

#: relative cutoff (times the largest singular value) for the projector rank
RANK_RTOL = 1e-10

_FAMILIES = ("polynomial", "cosine")


@dataclass(frozen=True)
class SieveSpec:
    """Which basis to build.

    family : "polynomial" (monomials of the raw coordinates) or "cosine"
        (cos(k*pi*u) on coordinates min-max rescaled to [0, 1]).
    total_degree_cap : maximum total degree of the tensor-product terms.
    include_constant : whether the all-zero multi-index (constant column) is kept.
    """

    family: str = "polynomial"
    total_degree_cap: int = 2
    include_constant: bool = True

    def __post_init__(self) -> None:
        if self.family not in _FAMILIES:
            raise DataError(f"unknown sieve family {self.family!r}; choose from {_FAMILIES}")
        if self.total_degree_cap < 0:
            raise DataError("total_degree_cap must be >= 0")


@dataclass(frozen=True)
class SieveDesign:
    """An evaluated basis: n x L matrix plus the multi-indices behind each column."""

    phi: np.ndarray
    spec: SieveSpec
    indices: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        phi = np.asarray(self.phi, dtype=float)
        if phi.ndim != 2:
            raise DataError("sieve design matrix must be 2-d")
        if not np.all(np.isfinite(phi)):
            raise DataError("sieve design matrix contains non-finite entries")
        phi = phi.copy()
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)

    @property
    def n_terms(self) -> int:
        return self.phi.shape[1]


def multi_indices(d: int, cap: int, include_constant: bool) -> list[tuple[int, ...]]:
    """All d-tuples of nonnegative ints with total degree <= cap.

    Ordered by total degree, then reverse-lexicographically, so d=2, cap=2
    enumerates (0,0), (1,0), (0,1), (2,0), (1,1), (0,2).
    """
    idx = [k for k in product(range(cap + 1), repeat=d) if sum(k) <= cap]
    if not include_constant:
        idx = [k for k in idx if any(k)]
    idx.sort(key=lambda k: (sum(k), tuple(-x for x in k)))
    return idx


def build_basis(u_hat: np.ndarray, spec: SieveSpec) -> SieveDesign:
    """Evaluate the tensor-product basis at the given latent positions.

    The number of basis terms must stay below the number of rows, otherwise
    the projection would be able to absorb everything.
    """
    u = np.asarray(u_hat, dtype=float)
    if u.ndim != 2:
        raise DataError("latent positions must be an n x d matrix")
    if not np.all(np.isfinite(u)):
        raise DataError("latent positions contain non-finite entries")
    n, d = u.shape
    idx = multi_indices(d, spec.total_degree_cap, spec.include_constant)
    if len(idx) >= n:
        raise DataError(
            f"sieve basis has {len(idx)} terms for only {n} observations; "
            "reduce total_degree_cap"
        )

    if spec.family == "cosine":
        lo = u.min(axis=0)
        span = u.max(axis=0) - lo
        scaled = np.full_like(u, 0.5)
        ok = span > 0
        scaled[:, ok] = (u[:, ok] - lo[ok]) / span[ok]
        # univariate factors: psi_k(u) = cos(k*pi*u), psi_0 = 1
        factors = [
            np.array([np.cos(k * np.pi * scaled[:, ell]) for k in range(spec.total_degree_cap + 1)])
            for ell in range(d)
        ]
    else:
        factors = [
            np.array([u[:, ell] ** k for k in range(spec.total_degree_cap + 1)])
            for ell in range(d)
        ]

    cols = np.empty((n, len(idx)))
    for c, k in enumerate(idx):
        col = np.ones(n)
        for ell, power in enumerate(k):
            if power:
                col = col * factors[ell][power]
        cols[:, c] = col
    return SieveDesign(cols, spec, tuple(idx))


def residualize(w: np.ndarray, design: SieveDesign) -> np.ndarray:
    """Apply the annihilator of the basis columns: w minus its projection.

    Uses a rank-revealing SVD of the design matrix, dropping directions with
    singular value below RANK_RTOL times the largest, so collinear bases are
    handled without blowup. An empty basis returns w unchanged.
    """
    w = np.asarray(w, dtype=float)
    squeeze = w.ndim == 1
    wm = w[:, None] if squeeze else w
    phi = design.phi
    if phi.shape[0] != wm.shape[0]:
        raise DataError(
            f"cannot residualize: {wm.shape[0]} rows against a basis with {phi.shape[0]} rows"
        )
    if phi.shape[1] == 0:
        out = wm.copy()
        return out[:, 0] if squeeze else out
    basis_u, sing, _ = np.linalg.svd(phi, full_matrices=False)
    keep = sing > RANK_RTOL * sing[0]
    basis_u = basis_u[:, keep]
    out = wm - basis_u @ (basis_u.T @ wm)
    return out[:, 0] if squeeze else out
