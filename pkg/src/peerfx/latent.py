"""Latent-position network models: spectral embedding, logistic latent-space
fits, their simulators, and embedding-dimension selection.

Two model families are supported. The dot-product family treats edge
probabilities as inner products of latent vectors and is estimated by
spectral embedding of the adjacency matrix. The logistic family puts
multiplicative and additive node effects (plus optional observed pair
covariates) behind a logistic link and is estimated by projected gradient
ascent from a singular-value-thresholding start.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DataError, DegenerateInputError, NumericalError
from .graph import Graph

# USVT reconstruction clamp
_CLAMP_EPS = 1e-4
# probability clip for deviance scoring
_DEV_EPS = 1e-6


# =============================================================================
# Containers
# =============================================================================


@dataclass(frozen=True)
class RdpgFit:
    """Spectral embedding of an adjacency matrix.

    u_hat has one row per node; eigenvalues are the d leading eigenvalues of
    the adjacency by magnitude, in the order used for the embedding columns.
    """

    u_hat: np.ndarray
    eigenvalues: np.ndarray

    @property
    def d(self) -> int:
        return self.u_hat.shape[1]


@dataclass(frozen=True)
class EdgeCovariates:
    """A stack of symmetric pair-covariate matrices (k, n, n)."""

    x_edge: np.ndarray

    def __post_init__(self) -> None:
        x = np.asarray(self.x_edge, dtype=float)
        if x.ndim == 2:
            x = x[None, :, :]
        if x.ndim != 3 or x.shape[1] != x.shape[2]:
            raise DataError(f"edge covariates must be (k, n, n), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise DataError("edge covariates contain non-finite entries")
        for s in range(x.shape[0]):
            if not np.allclose(x[s], x[s].T, atol=1e-9, rtol=0.0):
                raise DataError(f"edge covariate {s} is not symmetric")
        x = 0.5 * (x + np.transpose(x, (0, 2, 1)))
        x.setflags(write=False)
        object.__setattr__(self, "x_edge", x)

    @property
    def k(self) -> int:
        return self.x_edge.shape[0]

    @property
    def n(self) -> int:
        return self.x_edge.shape[1]


@dataclass(frozen=True)
class UsvtInit:
    """Warm start for the logistic latent-space fit."""

    q: np.ndarray
    v: np.ndarray
    rho: float


@dataclass(frozen=True)
class LsmFit:
    """Fitted logistic latent-space model.

    The representation is normalized: columns of q are mean-centered with
    diagonal q'q (descending), v sums to zero, and the grand level lives in
    rho. beta_edge is None when the model has no pair covariates.
    """

    q: np.ndarray
    v: np.ndarray
    rho: float
    beta_edge: np.ndarray | None
    logit_theta: np.ndarray
    loglik_trace: np.ndarray
    converged: bool

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def d(self) -> int:
        return self.q.shape[1]


@dataclass(frozen=True)
class DimensionSelection:
    """Held-out deviance per candidate embedding dimension."""

    d: int
    candidates: tuple[int, ...]
    mean_deviance: np.ndarray


# =============================================================================
# Shared pieces
# =============================================================================


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    """Flip eigenvector signs so the largest-magnitude entry is positive."""
    out = vecs.copy()
    for c in range(out.shape[1]):
        pivot = int(np.argmax(np.abs(out[:, c])))
        if out[pivot, c] < 0:
            out[:, c] = -out[:, c]
    return out


def _leading_eigpairs(sym: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-d eigenpairs of a symmetric matrix by |eigenvalue|, positive first on ties."""
    vals, vecs = np.linalg.eigh(sym)
    order = np.lexsort((-vals, -np.abs(vals)))[:d]
    return vals[order], _fix_signs(vecs[:, order])


def bernoulli_graph(probs: np.ndarray, rng: np.random.Generator) -> Graph:
    """Draw an undirected graph with independent upper-triangle edges."""
    n = probs.shape[0]
    upper = np.triu_indices(n, k=1)
    draws = (rng.random(upper[0].size) < probs[upper]).astype(float)
    a = np.zeros((n, n))
    a[upper] = draws
    a = a + a.T
    return Graph(a)


def _pair_logits(
    q: np.ndarray, v: np.ndarray, rho: float, beta: np.ndarray | None,
    cov: EdgeCovariates | None,
) -> np.ndarray:
    theta = q @ q.T + v[:, None] + v[None, :] + rho
    if cov is not None and beta is not None:
        theta = theta + np.tensordot(beta, cov.x_edge, axes=1)
    np.fill_diagonal(theta, 0.0)
    return theta


# =============================================================================
# Dot-product family
# =============================================================================


def spectral_embed(graph: Graph, d: int) -> RdpgFit:
    """Embed nodes as rows of V |Lambda|^(1/2) from the top-|lambda| eigenpairs."""
    if not 1 <= d <= graph.n:
        raise DataError(f"embedding dimension {d} out of range for n={graph.n}")
    vals, vecs = _leading_eigpairs(graph.a, d)
    u_hat = vecs * np.sqrt(np.abs(vals))[None, :]
    return RdpgFit(u_hat=u_hat, eigenvalues=vals)


def rdpg_simulate(
    u: np.ndarray, rho: float, rng: np.random.Generator
) -> tuple[Graph, int]:
    """Draw a graph with edge probabilities rho * u_i'u_j.

    Probabilities falling outside [0, 1] are clamped; the count of clamped
    upper-triangle entries is returned alongside the graph.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim != 2:
        raise DataError("latent positions must be an n x d matrix")
    probs = rho * (u @ u.T)
    upper = np.triu_indices(u.shape[0], k=1)
    clamped = int(np.sum((probs[upper] < 0) | (probs[upper] > 1)))
    return bernoulli_graph(np.clip(probs, 0.0, 1.0), rng), clamped


# =============================================================================
# Logistic latent-space family
# =============================================================================


def usvt_init(graph: Graph, d: int) -> UsvtInit:
    """Singular-value-thresholding warm start for the logistic fit.

    Reconstructs the probability matrix from singular values above
    1.01*sqrt(n*density), clamps it away from {0,1}, inverts the logistic
    link, then splits the logit matrix into an additive part (row means) and
    a multiplicative part (top-d eigencomponents after double centering).
    """
    a = graph.a
    n = graph.n
    if n < 3:
        raise DegenerateInputError("latent-space fit needs at least 3 nodes")
    density = a.sum() / (n * (n - 1))
    if density == 0 or density == 1:
        raise DegenerateInputError("graph density is degenerate (all or no edges)")
    left, sing, right = np.linalg.svd(a, full_matrices=False)
    tau = 1.01 * np.sqrt(n * density)
    keep = sing > tau
    if not np.any(keep):
        keep = np.zeros_like(keep)
        keep[0] = True
    m = (left[:, keep] * sing[keep][None, :]) @ right[keep, :]
    m = 0.5 * (m + m.T)
    m = np.clip(m, _CLAMP_EPS, 1.0 - _CLAMP_EPS)
    theta = np.log(m / (1.0 - m))

    off = ~np.eye(n, dtype=bool)
    row_means = theta.sum(axis=1, where=off) / (n - 1)
    grand = float(row_means.mean())
    v = row_means - grand
    # fill the (meaningless) diagonal with the additive model's value there,
    # so double centering is not polluted by reconstruction junk
    theta_f = theta.copy()
    np.fill_diagonal(theta_f, 2.0 * row_means - grand)
    j = np.eye(n) - np.ones((n, n)) / n
    centered = j @ theta_f @ j
    centered = 0.5 * (centered + centered.T)
    vals, vecs = np.linalg.eigh(centered)
    order = np.argsort(-vals)[:d]
    comp = np.clip(vals[order], 0.0, None)
    q = _fix_signs(vecs[:, order]) * np.sqrt(comp)[None, :]
    return UsvtInit(q=q, v=v, rho=grand)


def _lsm_loglik(a: np.ndarray, theta: np.ndarray) -> float:
    """Bernoulli log-likelihood over unordered pairs."""
    upper = np.triu_indices(a.shape[0], k=1)
    t = theta[upper]
    return float(np.sum(a[upper] * t - np.logaddexp(0.0, t)))


def _project(q: np.ndarray, v: np.ndarray, rho: float) -> tuple[np.ndarray, np.ndarray, float]:
    """Move to the normalized representative of the same fit.

    Centering q's columns and v, with matching shifts absorbed into v and
    rho, leaves every pairwise logit unchanged; rotating q to diagonalize
    q'q leaves q q' unchanged. So this never changes the likelihood.
    """
    qbar = q.mean(axis=0)
    w = q @ qbar
    q = q - qbar[None, :]
    v = v + w
    rho = rho - float(qbar @ qbar)
    vbar = float(v.mean())
    v = v - vbar
    rho = rho + 2.0 * vbar
    gram_vals, gram_vecs = np.linalg.eigh(q.T @ q)
    order = np.argsort(-gram_vals)
    q = q @ _fix_signs(gram_vecs[:, order])
    return q, v, rho


def lsm_fit(
    graph: Graph,
    d: int,
    cov: EdgeCovariates | None = None,
    *,
    max_iter: int = 2000,
    tol: float = 1e-7,
    step0: float | None = None,
) -> LsmFit:
    """Maximum-likelihood logistic latent-space fit by projected gradient ascent.

    Parameters
    ----------
    graph : Graph
        Binary undirected graph.
    d : int
        Number of multiplicative latent dimensions.
    cov : EdgeCovariates, optional
        Symmetric pair covariates entering the logit linearly.
    max_iter, tol, step0
        Ascent controls: iteration cap, relative log-likelihood tolerance,
        and the initial backtracking step (default 0.5/n).

    Notes
    -----
    Node blocks (q, v) take the raw step; the scalar blocks (rho, beta) use
    step * 2/n, matching their n-times-larger curvature. Backtracking halves
    the step until the log-likelihood increases, so the trace is monotone.
    """
    if not graph.is_binary():
        raise DataError("latent-space fit requires a binary graph")
    a = graph.a
    n = graph.n
    if cov is not None and cov.n != n:
        raise DataError(f"edge covariates are for {cov.n} nodes, graph has {n}")
    if not 1 <= d < n:
        raise DataError(f"latent dimension {d} out of range for n={n}")

    init = usvt_init(graph, d)
    q, v, rho = _project(init.q, init.v, init.rho)
    beta = np.zeros(cov.k) if cov is not None else None

    step = step0 if step0 is not None else 0.5 / n
    theta = _pair_logits(q, v, rho, beta, cov)
    ll = _lsm_loglik(a, theta)
    trace = [ll]
    converged = False
    off = ~np.eye(n, dtype=bool)

    for _ in range(max_iter):
        p = expit(theta)
        resid = np.where(off, a - p, 0.0)
        g_q = resid @ q
        g_v = resid.sum(axis=1)
        g_rho = 0.5 * float(resid.sum())
        if cov is not None:
            g_beta = 0.5 * np.tensordot(cov.x_edge, resid, axes=([1, 2], [0, 1]))
        # backtracking ascent
        accepted = False
        while step > 1e-16:
            scalar_step = step * 2.0 / n
            q_new = q + step * g_q
            v_new = v + step * g_v
            rho_new = rho + scalar_step * g_rho
            beta_new = beta + scalar_step * g_beta if cov is not None else None
            q_new, v_new, rho_new = _project(q_new, v_new, rho_new)
            theta_new = _pair_logits(q_new, v_new, rho_new, beta_new, cov)
            ll_new = _lsm_loglik(a, theta_new)
            if ll_new > ll:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            converged = True
            break
        q, v, rho, beta, theta = q_new, v_new, rho_new, beta_new, theta_new
        improvement = ll_new - ll
        ll = ll_new
        trace.append(ll)
        step *= 1.6
        if improvement <= tol * (abs(ll) + 1.0):
            converged = True
            break

    if not np.isfinite(ll):
        raise NumericalError("latent-space fit produced a non-finite log-likelihood")
    return LsmFit(
        q=q,
        v=v,
        rho=float(rho),
        beta_edge=None if beta is None else np.asarray(beta, dtype=float),
        logit_theta=theta,
        loglik_trace=np.asarray(trace),
        converged=converged,
    )


def lsm_simulate(fit: LsmFit, rng: np.random.Generator, cov: EdgeCovariates | None = None) -> Graph:
    """Draw a graph from a fitted (or hand-built) logistic latent-space model.

    When cov is given the pair logits are rebuilt from the parameters so the
    covariate term is included; otherwise the stored logit matrix is used.
    """
    if cov is not None:
        theta = _pair_logits(fit.q, fit.v, fit.rho, fit.beta_edge, cov)
    else:
        theta = fit.logit_theta
    probs = expit(theta)
    np.fill_diagonal(probs, 0.0)
    return bernoulli_graph(probs, rng)


def lsm_params(
    q: np.ndarray,
    v: np.ndarray,
    rho: float,
    beta_edge: np.ndarray | None = None,
    cov: EdgeCovariates | None = None,
) -> LsmFit:
    """Package raw parameters as an LsmFit (for simulation from known truth)."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    beta = None if beta_edge is None else np.atleast_1d(np.asarray(beta_edge, dtype=float))
    theta = _pair_logits(q, v, float(rho), beta, cov)
    return LsmFit(
        q=q,
        v=v,
        rho=float(rho),
        beta_edge=beta,
        logit_theta=theta,
        loglik_trace=np.empty(0),
        converged=True,
    )


# =============================================================================
# Embedding-dimension selection
# =============================================================================


def select_dimension(
    graph: Graph,
    candidates: tuple[int, ...] | list[int],
    folds: int = 5,
    *,
    rng: np.random.Generator,
    holdout: float = 0.1,
) -> DimensionSelection:
    """Pick an embedding dimension by held-out edge deviance.

    Each round masks a uniform share of node pairs, imputes them at the
    density of the remaining pairs, reconstructs the matrix at each candidate
    rank from the leading eigenpairs, and scores the masked pairs by binomial
    deviance. The winner minimizes mean deviance, ties going to the smaller
    dimension.
    """
    cands = tuple(int(c) for c in candidates)
    if len(cands) == 0:
        raise DataError("no candidate dimensions given")
    if any(c < 1 or c >= graph.n for c in cands):
        raise DataError(f"candidate dimensions must be in [1, n); got {cands}")
    a = graph.a
    n = graph.n
    iu, ju = np.triu_indices(n, k=1)
    n_pairs = iu.size
    n_hold = max(1, int(round(holdout * n_pairs)))
    dev = np.zeros((folds, len(cands)))
    for f in range(folds):
        held = rng.choice(n_pairs, size=n_hold, replace=False)
        mask = np.zeros(n_pairs, dtype=bool)
        mask[held] = True
        observed_density = a[iu[~mask], ju[~mask]].mean()
        work = a.copy()
        work[iu[mask], ju[mask]] = observed_density
        work[ju[mask], iu[mask]] = observed_density
        vals, vecs = np.linalg.eigh(work)
        order = np.lexsort((-vals, -np.abs(vals)))
        y_held = a[iu[mask], ju[mask]]
        for ci, c in enumerate(cands):
            sel = order[:c]
            recon = (vecs[:, sel] * vals[sel][None, :]) @ vecs[:, sel].T
            p = np.clip(recon[iu[mask], ju[mask]], _DEV_EPS, 1.0 - _DEV_EPS)
            dev[f, ci] = -2.0 * float(np.sum(y_held * np.log(p) + (1 - y_held) * np.log1p(-p)))
    mean_dev = dev.mean(axis=0)
    # ties toward the smaller candidate: argmin returns the first minimum
    by_size = np.argsort(cands, kind="stable")
    best = by_size[int(np.argmin(mean_dev[by_size]))]
    return DimensionSelection(d=cands[best], candidates=cands, mean_deviance=mean_dev)
