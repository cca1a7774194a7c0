"""Multivariate peer-effect estimation by instrumented least squares.

The outcome model is simultaneous in the network: each node's m outcomes
respond to the peer average of its neighbors' outcomes (an m x m matrix of
peer effects), to own covariates, and to peer-averaged covariates. Higher
network powers of the covariates instrument the endogenous peer average.
The adjusted estimator additionally residualizes everything against a sieve
basis in estimated latent positions before the instrumented fit, removing
bias from latent-driven network formation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, IdentificationError, NumericalError
from .graph import PeerOperator
from .sieve import SieveDesign, residualize

#: smallest singular value of a cross-moment matrix (scaled by 1/N) still
#: treated as identified
IDENT_TOL = 1e-8


# =============================================================================
# Data containers
# =============================================================================


@dataclass(frozen=True)
class MsarData:
    """Outcomes (N x m), covariates (N x p), and the peer operator."""

    y: np.ndarray
    x: np.ndarray
    gop: PeerOperator

    def __post_init__(self) -> None:
        y = np.atleast_2d(np.asarray(self.y, dtype=float))
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        if y.shape[0] == 1 and self.gop.n != 1:
            y = y.T
        if x.shape[0] == 1 and self.gop.n != 1:
            x = x.T
        n = self.gop.n
        if y.shape[0] != n or x.shape[0] != n:
            raise DataError(
                f"outcomes ({y.shape[0]} rows) and covariates ({x.shape[0]} rows) "
                f"must match the {n}-node peer operator"
            )
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(x)):
            raise DataError("outcomes and covariates must be finite")
        y = y.copy()
        x = x.copy()
        y.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def m(self) -> int:
        return self.y.shape[1]

    @property
    def p(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class InstrumentSet:
    """Regressor block z = [Gy | x | Gx] and instrument block k = [x | Gx | GGx].

    With x_in_model=False the regressors are just the peer averages Gy and
    the covariates serve only as instruments.
    """

    z: np.ndarray
    k: np.ndarray
    m: int
    p: int
    x_in_model: bool


def build_instruments(data: MsarData, x_in_model: bool = True) -> InstrumentSet:
    """Form the regressor and instrument blocks from outcomes and covariates."""
    g = data.gop.g
    gy = g @ data.y
    gx = g @ data.x
    ggx = g @ gx
    z = np.hstack([gy, data.x, gx]) if x_in_model else gy
    k = np.hstack([data.x, gx, ggx])
    return InstrumentSet(z=z, k=k, m=data.m, p=data.p, x_in_model=x_in_model)


@dataclass(frozen=True)
class PeerEffectsFit:
    """Estimates, covariance, and diagnostics from one instrumented fit.

    beta_mat stacks [peer-effect rows; own-covariate rows; peer-covariate
    rows] per outcome column. cov_beta is the covariance of vec(beta_mat)
    in column-major (outcome-major) order; se_mat holds its square-rooted
    diagonal reshaped to match beta_mat.
    """

    beta_mat: np.ndarray
    cov_beta: np.ndarray
    se_mat: np.ndarray
    vhat: np.ndarray
    residuals: np.ndarray
    method: str
    x_in_model: bool
    diagnostics: dict

    @property
    def m(self) -> int:
        return self.vhat.shape[0]

    @property
    def p(self) -> int:
        return 0 if not self.x_in_model else (self.beta_mat.shape[0] - self.m) // 2

    @property
    def d_hat(self) -> np.ndarray:
        """Peer-effect matrix: entry (i, j) is the effect of peer outcome i on outcome j."""
        return self.beta_mat[: self.m, :]

    @property
    def d_se(self) -> np.ndarray:
        return self.se_mat[: self.m, :]

    @property
    def b1_hat(self) -> np.ndarray | None:
        if not self.x_in_model:
            return None
        return self.beta_mat[self.m : self.m + self.p, :]

    @property
    def b2_hat(self) -> np.ndarray | None:
        if not self.x_in_model:
            return None
        return self.beta_mat[self.m + self.p :, :]


# =============================================================================
# Shared algebra
# =============================================================================


def _check_identified(w_scaled: np.ndarray, block: str, q: int) -> float:
    sv = np.linalg.svd(w_scaled, compute_uv=False)
    smallest = float(sv[-1]) if sv.size else 0.0
    if w_scaled.shape[0] < q or smallest < IDENT_TOL:
        raise IdentificationError(
            f"cross-moment matrix {block} (scaled by 1/N) must have full column "
            f"rank {q}; smallest singular value is {smallest:.3e}"
        )
    return smallest


def _tsls_core(
    y: np.ndarray, z: np.ndarray, k: np.ndarray, block_label: str
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, dict]:
    """Instrumented least squares of y on z using instruments k.

    Returns (beta_mat, s_inv, residuals, vhat, diagnostics) where s_inv is
    the inverse of z'P_k z and the error covariance uses divisor N.
    """
    n, q = z.shape[0], z.shape[1]
    gram_k = k.T @ k
    sv_gram = np.linalg.svd(gram_k / n, compute_uv=False)
    if sv_gram[-1] < IDENT_TOL * max(1.0, sv_gram[0]):
        raise IdentificationError(
            f"instrument gram matrix K'K is numerically singular (relative "
            f"smallest singular value {sv_gram[-1] / max(sv_gram[0], 1e-300):.3e}); "
            "instruments are collinear"
        )
    w = k.T @ z
    min_sv = _check_identified(w / n, block_label, q)
    c_inv_w = np.linalg.solve(gram_k, w)
    s = w.T @ c_inv_w
    t = c_inv_w.T @ (k.T @ y)
    try:
        beta_mat = np.linalg.solve(s, t)
        s_inv = np.linalg.inv(s)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"projected normal equations are singular: {exc}") from exc
    resid = y - z @ beta_mat
    vhat = resid.T @ resid / n
    diagnostics = {
        "min_sv_kz_scaled": min_sv,
        "cond_kk": float(sv_gram[0] / sv_gram[-1]),
        "cond_s": float(np.linalg.cond(s)),
        "n": n,
        "n_regressors": q,
        "n_instruments": k.shape[1],
    }
    return beta_mat, s_inv, resid, vhat, diagnostics


def _residualized_blocks(
    data: MsarData, design: SieveDesign, x_in_model: bool
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    inst = build_instruments(data, x_in_model=x_in_model)
    yt = residualize(data.y, design)
    zt = residualize(inst.z, design)
    kt = residualize(inst.k, design)
    return yt, zt, kt


# =============================================================================
# Estimators
# =============================================================================


def naive_2sls(data: MsarData, x_in_model: bool = True) -> PeerEffectsFit:
    """Instrumented fit on the raw data, ignoring network endogeneity."""
    inst = build_instruments(data, x_in_model=x_in_model)
    beta_mat, s_inv, resid, vhat, diag = _tsls_core(data.y, inst.z, inst.k, "K'Z/N")
    cov = np.kron(vhat, s_inv)
    se = _se_from_cov(cov, beta_mat.shape)
    return PeerEffectsFit(
        beta_mat=beta_mat,
        cov_beta=cov,
        se_mat=se,
        vhat=vhat,
        residuals=resid,
        method="naive",
        x_in_model=x_in_model,
        diagnostics=diag,
    )


def adjusted_2sls(
    data: MsarData, design: SieveDesign, x_in_model: bool = True
) -> PeerEffectsFit:
    """Latent-adjusted fit, computed the long way.

    Residualizes outcomes, regressors, and instruments against the sieve
    basis, stacks the m outcome equations into one system with identity-
    Kronecker blocks, and solves the projected normal equations with the
    full sandwich covariance. This is the reference implementation;
    fast_kronecker_path produces the same numbers without materializing the
    stacked system.
    """
    yt, zt, kt = _residualized_blocks(data, design, x_in_model)
    n, m = yt.shape
    q = zt.shape[1]

    gram_kt = kt.T @ kt
    sv_gram = np.linalg.svd(gram_kt / n, compute_uv=False)
    if sv_gram[-1] < IDENT_TOL * max(1.0, sv_gram[0]):
        raise IdentificationError(
            "residualized instrument gram matrix K'K is numerically singular; "
            "instruments are absorbed by the sieve basis or collinear"
        )
    min_sv = _check_identified(kt.T @ zt / n, "K'Z/N (residualized)", q)

    eye_m = np.eye(m)
    y_v = yt.flatten(order="F")
    z_v = np.kron(eye_m, zt)
    k_v = np.kron(eye_m, kt)
    p_k = k_v @ np.linalg.solve(k_v.T @ k_v, k_v.T)
    s = z_v.T @ p_k @ z_v
    try:
        beta_v = np.linalg.solve(s, z_v.T @ (p_k @ y_v))
        s_inv = np.linalg.inv(s)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"projected normal equations are singular: {exc}") from exc
    resid_v = y_v - z_v @ beta_v
    resid = resid_v.reshape((n, m), order="F")
    vhat = resid.T @ resid / n
    mid = np.kron(vhat, np.eye(n))
    half = p_k @ z_v
    cov = s_inv @ (half.T @ mid @ half) @ s_inv
    beta_mat = beta_v.reshape((q, m), order="F")
    se = _se_from_cov(cov, beta_mat.shape)
    diag = {
        "min_sv_kz_scaled": min_sv,
        "cond_kk": float(sv_gram[0] / sv_gram[-1]),
        "cond_s": float(np.linalg.cond(s)),
        "n": n,
        "n_regressors": q,
        "n_instruments": kt.shape[1],
        "sieve_terms": design.n_terms,
    }
    return PeerEffectsFit(
        beta_mat=beta_mat,
        cov_beta=cov,
        se_mat=se,
        vhat=vhat,
        residuals=resid,
        method="adjusted-literal",
        x_in_model=x_in_model,
        diagnostics=diag,
    )


def fast_kronecker_path(
    data: MsarData, design: SieveDesign, x_in_model: bool = True
) -> PeerEffectsFit:
    """Latent-adjusted fit without materializing the stacked system.

    Because the stacked regressor and instrument blocks are identity
    Kronecker products, the stacked normal equations factor into one shared
    q x q core across outcome equations, and the sandwich covariance
    collapses to vhat kron (z'P_k z)^(-1). Agrees with adjusted_2sls to
    rounding error at a fraction of the cost.
    """
    yt, zt, kt = _residualized_blocks(data, design, x_in_model)
    beta_mat, s_inv, resid, vhat, diag = _tsls_core(
        yt, zt, kt, "K'Z/N (residualized)"
    )
    diag["sieve_terms"] = design.n_terms
    cov = np.kron(vhat, s_inv)
    se = _se_from_cov(cov, beta_mat.shape)
    return PeerEffectsFit(
        beta_mat=beta_mat,
        cov_beta=cov,
        se_mat=se,
        vhat=vhat,
        residuals=resid,
        method="adjusted-fast",
        x_in_model=x_in_model,
        diagnostics=diag,
    )


def _se_from_cov(cov: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    var = np.diagonal(cov).copy()
    bad = var < 0
    var[bad] = np.nan
    return np.sqrt(var).reshape((shape[1], shape[0])).T


# =============================================================================
# Compositional outcomes
# =============================================================================


@dataclass(frozen=True)
class Composition:
    """Rows of class probabilities, floored away from zero and renormalized.

    Raw rows must already sum to one up to 1e-6; entries are floored at 1e-6
    and each row rescaled, so every stored row sums to one within 1e-9 with
    strictly interior entries.
    """

    probs: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 2 or p.shape[1] < 2:
            raise DataError("composition needs an n x c matrix with c >= 2")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise DataError("composition entries must be finite and nonnegative")
        sums = p.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-6):
            bad = int(np.argmax(np.abs(sums - 1.0)))
            raise DataError(f"composition row {bad} sums to {sums[bad]!r}, expected 1")
        p = np.clip(p, 1e-6, None)
        p = p / p.sum(axis=1, keepdims=True)
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def n_classes(self) -> int:
        return self.probs.shape[1]


def alr(probs: np.ndarray | Composition, baseline: int) -> np.ndarray:
    """Additive log-ratio transform: log(p_j / p_baseline) for j != baseline."""
    p = probs.probs if isinstance(probs, Composition) else np.asarray(probs, dtype=float)
    c = p.shape[1]
    if not 0 <= baseline < c:
        raise DataError(f"baseline {baseline} out of range for {c} classes")
    if np.any(p <= 0):
        raise DataError("log-ratio transform needs strictly positive probabilities")
    others = [j for j in range(c) if j != baseline]
    return np.log(p[:, others] / p[:, [baseline]])


def alr_inverse(y: np.ndarray, baseline: int) -> np.ndarray:
    """Invert the additive log-ratio transform back to probabilities."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    n, cm1 = y.shape
    c = cm1 + 1
    if not 0 <= baseline < c:
        raise DataError(f"baseline {baseline} out of range for {c} classes")
    full = np.zeros((n, c))
    others = [j for j in range(c) if j != baseline]
    full[:, others] = y
    # subtract the rowwise max before exponentiating for stability
    full -= full.max(axis=1, keepdims=True)
    e = np.exp(full)
    return e / e.sum(axis=1, keepdims=True)


# =============================================================================
# Reporting
# =============================================================================


def wald_table(
    fit: PeerEffectsFit,
    outcome_names: list[str] | None = None,
    covariate_names: list[str] | None = None,
) -> list[dict]:
    """Coefficient table in stacked order: per outcome equation, the
    peer-effect rows come first, then own covariates, then peer covariates.

    Entries with nonpositive or non-finite variance are flagged rather than
    raising; their se and z are NaN.
    """
    m, p = fit.m, fit.p
    ynames = outcome_names or [f"y{j + 1}" for j in range(m)]
    xnames = covariate_names or [f"x{k + 1}" for k in range(p)]
    if len(ynames) != m or len(xnames) != p:
        raise DataError("name lists do not match the fitted dimensions")
    rows = []
    for j in range(m):
        labels = [f"peer:{yn}" for yn in ynames]
        if fit.x_in_model:
            labels += [f"own:{xn}" for xn in xnames]
            labels += [f"peer_avg:{xn}" for xn in xnames]
        for r, label in enumerate(labels):
            est = float(fit.beta_mat[r, j])
            se = float(fit.se_mat[r, j])
            flagged = not np.isfinite(se) or se <= 0
            rows.append(
                {
                    "equation": ynames[j],
                    "term": label,
                    "estimate": est,
                    "se": np.nan if flagged else se,
                    "z": np.nan if flagged else est / se,
                    "flagged": flagged,
                }
            )
    return rows
