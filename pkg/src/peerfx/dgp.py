"""Synthetic data generation and the Monte Carlo harness.

A Scenario pins every constant of one simulation design: how the network
forms (dot-product or logistic latent-space with pair covariates), how the
latent positions leak into the outcome errors, and the structural
coefficients. generate() draws one replicate bit-reproducibly from
(scenario, rep); run_monte_carlo() sweeps replicates, re-estimates the peer
effects per replicate, and aggregates accuracy and calibration.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError, PeerfxError
from .estimator import MsarData, PeerEffectsFit, fast_kronecker_path, naive_2sls
from .graph import Graph, row_normalize
from .latent import EdgeCovariates, bernoulli_graph, lsm_fit, rdpg_simulate, spectral_embed
from .rng import substream
from .sieve import SieveSpec, build_basis

_H_SPECS = ("linear", "quadratic", "quadratic_interaction")
_NETWORK_MODELS = ("rdpg", "lsm_cov")
_ESTIMATORS = ("naive", "adjusted", "both")

#: rho_net = "auto" uses _RHO_COEF * n**(-2/3), capped at 1
_RHO_COEF = 12.0
#: net_intercept = "auto" uses this at n=100, minus (2/3)*log(n/100)
_LSM_BASE_INTERCEPT = -1.0
#: fixed gain on the latent-to-error channel; confound_strength scales it
_CONFOUND_GAIN = 4.0

#: two-sided normal critical value for 95% intervals
Z95 = 1.959963984540054


def h_features(u: np.ndarray, h_spec: str) -> np.ndarray:
    """Polynomial feature map of the latent positions used by the error channel.

    linear: the coordinates themselves; quadratic: coordinates then squares;
    quadratic_interaction: coordinates, squares, then pairwise products.
    """
    if h_spec not in _H_SPECS:
        raise DataError(f"unknown h_spec {h_spec!r}; choose from {_H_SPECS}")
    blocks = [u]
    if h_spec in ("quadratic", "quadratic_interaction"):
        blocks.append(u**2)
    if h_spec == "quadratic_interaction":
        d = u.shape[1]
        cross = [u[:, a] * u[:, b] for a in range(d) for b in range(a + 1, d)]
        if cross:
            blocks.append(np.column_stack(cross))
    return np.hstack(blocks)


def _n_features(d: int, h_spec: str) -> int:
    if h_spec == "linear":
        return d
    if h_spec == "quadratic":
        return 2 * d
    return 2 * d + d * (d - 1) // 2


def _default_theta(k: int, m: int) -> np.ndarray:
    """Checkerboard of 4.0 / 2.0 loadings.

    The scale is deliberately large relative to the latent coordinates
    (which live in a short interval) so the homophily channel leaves a
    bias in the unadjusted estimator that replication noise cannot hide.
    """
    theta = np.empty((k, m))
    for i in range(k):
        for j in range(m):
            theta[i, j] = 4.0 if (i + j) % 2 == 0 else 2.0
    return theta


def _default_b1(p: int, m: int) -> np.ndarray:
    """Unit diagonal with signed, row-varying off-diagonal entries.

    The off-diagonal pattern matters more than it looks: the first-stage
    relevance of the m peer-outcome regressors rests on b2 + b1 @ d_true
    having well separated columns. Repeated rows in b1 (or a constant b2)
    make that matrix nearly rank one and the peer-effect block is then
    unidentified in finite samples even though the formal rank condition
    holds.
    """
    b = np.empty((p, m))
    for i in range(p):
        for j in range(m):
            if j == i % m:
                b[i, j] = 1.0
            else:
                b[i, j] = ((-1.0) ** (i + j)) * (0.3 + 0.15 * (i % 3))
    # the overall scale sets first-stage strength relative to unit error
    # noise; sieve adjustment only keeps the covariate-driven share of the
    # peer variation, so this needs to be comfortably above 1
    return 4.0 * b


def _default_b2(p: int, m: int, b1: np.ndarray, d_true: np.ndarray) -> np.ndarray:
    """Contextual effects solving for a near-orthogonal first stage.

    The identifying power of the estimator comes from the two-hop covariate
    averages, whose loading on the m peer outcomes is pi = b2 + b1 @ d_true.
    Two properties of pi matter: its scale (the two-hop averages carry a
    1/degree attenuation the scale has to overcome) and the angle between
    its columns (correlated columns couple the D entries and the joint
    confidence region degenerates along the weak direction). So pick a
    well-spread target pi and back out b2 from it.
    """
    pi = np.zeros((p, m))
    for i in range(p):
        if i < m:
            pi[i, i] = 7.0
        else:
            for j in range(m):
                pi[i, j] = ((-1.0) ** (i + j)) * 2.0
    return pi - b1 @ d_true


@dataclass(frozen=True)
class Scenario:
    """All constants of one simulation design.

    The latent dimension of the outcome-error channel is fixed at 2 (matching
    the estimation side). p must be at least m or the peer effects would not
    be identified from the covariate instruments.
    """

    name: str
    network_model: str
    n: int
    h_spec: str = "linear"
    m: int = 2
    p: int = 3
    d_true: np.ndarray = field(default_factory=lambda: np.array([[0.3, 0.2], [0.25, 0.6]]))
    theta_y: np.ndarray | None = None
    b1: np.ndarray | None = None
    b2: np.ndarray | None = None
    v_err: np.ndarray | None = None
    confound_strength: float = 1.0
    reps: int = 100
    seed: int = 0
    # network-side constants. "auto" scales density like n**(-2/3) so the
    # average degree grows as n**(1/3): the two-hop covariate averages that
    # identify the peer effects carry a 1/degree attenuation, so slow degree
    # growth keeps their total information increasing in n. A fixed density
    # (or even degree ~ sqrt(n)) makes that information flat in n and the
    # Monte Carlo error stops shrinking.
    rho_net: float | str = "auto"   # dot-product scale, or "auto"
    net_intercept: float | str = "auto"  # logistic-model level, or "auto"
    q_sd: float = 0.6               # multiplicative-factor scale
    v_half_range: float = 0.4       # additive-factor half range
    beta_edge: tuple[float, ...] = (-1.0, 0.5)
    latent_dim: int = 2

    def rho_net_value(self) -> float:
        if self.rho_net == "auto":
            return min(1.0, _RHO_COEF * self.n ** (-2.0 / 3.0))
        return float(self.rho_net)

    def net_intercept_value(self) -> float:
        if self.net_intercept == "auto":
            return _LSM_BASE_INTERCEPT - (2.0 / 3.0) * math.log(self.n / 100.0)
        return float(self.net_intercept)

    def __post_init__(self) -> None:
        if self.network_model not in _NETWORK_MODELS:
            raise DataError(
                f"unknown network model {self.network_model!r}; choose from {_NETWORK_MODELS}"
            )
        if self.h_spec not in _H_SPECS:
            raise DataError(f"unknown h_spec {self.h_spec!r}; choose from {_H_SPECS}")
        if self.n < 10:
            raise DataError("scenario needs at least 10 nodes")
        for nm in ("rho_net", "net_intercept"):
            val = getattr(self, nm)
            if isinstance(val, str) and val != "auto":
                raise DataError(f"{nm} must be a number or 'auto', got {val!r}")
        if not isinstance(self.rho_net, str) and not 0.0 < float(self.rho_net) <= 1.0:
            raise DataError(f"rho_net must lie in (0, 1], got {self.rho_net}")
        if self.m < 1 or self.p < self.m:
            raise DataError(
                f"need p >= m covariates to identify the peer effects; got p={self.p}, m={self.m}"
            )
        d_true = np.asarray(self.d_true, dtype=float)
        if d_true.shape != (self.m, self.m):
            raise DataError(f"d_true must be {self.m}x{self.m}, got {d_true.shape}")
        rad = float(np.max(np.abs(np.linalg.eigvals(d_true))))
        if rad >= 1.0:
            raise DataError(
                f"spectral radius of the peer-effect matrix is {rad:.3f}; "
                "the simultaneous system has no stable solution unless it is < 1"
            )
        k = _n_features(self.latent_dim, self.h_spec)
        theta = self.theta_y if self.theta_y is not None else _default_theta(k, self.m)
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (k, self.m):
            raise DataError(f"theta_y must be {k}x{self.m} for h_spec={self.h_spec}")
        b1 = np.asarray(self.b1 if self.b1 is not None else _default_b1(self.p, self.m), float)
        b2 = self.b2 if self.b2 is not None else _default_b2(self.p, self.m, b1, d_true)
        b2 = np.asarray(b2, dtype=float)
        v_err = self.v_err if self.v_err is not None else 0.25 * (
            np.full((self.m, self.m), 0.3) + 0.7 * np.eye(self.m)
        )
        v_err = np.asarray(v_err, dtype=float)
        for mat, nm, shape in ((b1, "b1", (self.p, self.m)), (b2, "b2", (self.p, self.m)),
                               (v_err, "v_err", (self.m, self.m))):
            if mat.shape != shape:
                raise DataError(f"{nm} must have shape {shape}, got {mat.shape}")
        np.linalg.cholesky(v_err)  # must be positive definite
        first_stage = b2 + b1 @ d_true
        sv = np.linalg.svd(first_stage, compute_uv=False)
        if sv[0] == 0.0 or sv[-1] < 0.05 * sv[0]:
            ratio = sv[-1] / sv[0] if sv[0] > 0 else 0.0
            raise DataError(
                "b2 + b1 @ d_true is nearly rank deficient (singular value ratio "
                f"{ratio:.2e}); the peer-outcome block would be weakly "
                "identified, pick b1/b2 with better separated columns"
            )
        object.__setattr__(self, "d_true", d_true)
        object.__setattr__(self, "theta_y", theta)
        object.__setattr__(self, "b1", b1)
        object.__setattr__(self, "b2", b2)
        object.__setattr__(self, "v_err", v_err)

    def with_n(self, n: int) -> "Scenario":
        return replace(self, n=n)


@dataclass(frozen=True)
class SimulatedData:
    """One replicate: the graph, outcomes, covariates, and the pieces behind them."""

    graph: Graph
    y: np.ndarray
    x: np.ndarray
    u: np.ndarray
    e: np.ndarray
    cov: EdgeCovariates | None
    n_clamped: int = 0


def _standardized_gap(t: np.ndarray) -> np.ndarray:
    """|t_i - t_j| as a symmetric matrix, standardized over off-diagonal entries."""
    gap = np.abs(t[:, None] - t[None, :])
    off = ~np.eye(t.size, dtype=bool)
    mu = gap[off].mean()
    sd = gap[off].std()
    gap = (gap - mu) / sd
    np.fill_diagonal(gap, 0.0)
    return gap


def generate(scenario: Scenario, rep: int) -> SimulatedData:
    """Draw one replicate of the scenario, bit-reproducible in (seed, rep)."""
    s = scenario
    rng_u = substream(s.seed, "latent", rep)
    rng_net = substream(s.seed, "network", rep)
    rng_x = substream(s.seed, "covariates", rep)
    rng_e = substream(s.seed, "noise", rep)

    n_clamped = 0
    cov = None
    if s.network_model == "rdpg":
        # coordinates in a box keeping all pairwise inner products inside (0, 1)
        u = rng_u.uniform(0.2, 0.9, size=(s.n, s.latent_dim)) / np.sqrt(s.latent_dim)
        graph, n_clamped = rdpg_simulate(u, s.rho_net_value(), rng_net)
    else:
        q = rng_u.normal(0.0, s.q_sd, size=(s.n, s.latent_dim))
        v = rng_u.uniform(-s.v_half_range, s.v_half_range, size=s.n)
        v = v - v.mean()
        mats = [_standardized_gap(rng_net.random(s.n)) for _ in s.beta_edge]
        cov = EdgeCovariates(np.stack(mats))
        theta = q @ q.T + v[:, None] + v[None, :] + s.net_intercept_value()
        theta += np.tensordot(np.asarray(s.beta_edge), cov.x_edge, axes=1)
        probs = 1.0 / (1.0 + np.exp(-theta))
        np.fill_diagonal(probs, 0.0)
        graph = bernoulli_graph(probs, rng_net)
        u = q

    x = rng_x.standard_normal((s.n, s.p))
    feats = h_features(u, s.h_spec)
    noise = rng_e.standard_normal((s.n, s.m)) @ np.linalg.cholesky(s.v_err).T
    # the error-side channel is the first latent feature at a fixed gain;
    # confound_strength multiplies it, so 0 switches the channel off and 1
    # is the documented operating point
    e = s.confound_strength * _CONFOUND_GAIN * feats[:, [0]] @ np.ones((1, s.m)) + noise

    g = row_normalize(graph).g
    rhs = x @ s.b1 + (g @ x) @ s.b2 + feats @ s.theta_y + e
    # simultaneous solve: vec(y) = (I - D' kron G)^(-1) vec(rhs)
    sys = np.eye(s.n * s.m) - np.kron(s.d_true.T, g)
    y = np.linalg.solve(sys, rhs.flatten(order="F")).reshape((s.n, s.m), order="F")
    return SimulatedData(graph=graph, y=y, x=x, u=u, e=e, cov=cov, n_clamped=n_clamped)


# =============================================================================
# Monte Carlo
# =============================================================================


@dataclass(frozen=True)
class EstimatorStats:
    """Accuracy and calibration aggregates for one estimator across replicates."""

    mse: np.ndarray
    bias: np.ndarray
    coverage: np.ndarray
    z_mean: np.ndarray
    z_sd: np.ndarray
    d_draws: np.ndarray
    se_draws: np.ndarray


@dataclass(frozen=True)
class McReport:
    """run_monte_carlo output: per-estimator aggregates plus bookkeeping."""

    scenario: Scenario
    estimators: tuple[str, ...]
    stats: dict
    reps_requested: int
    reps_used: int
    failures: tuple[tuple[int, str], ...]
    elapsed_seconds: float


def _estimate_once(scenario: Scenario, rep: int, which: tuple[str, ...],
                   sieve: SieveSpec) -> dict:
    data = generate(scenario, rep)
    gop = row_normalize(data.graph)
    msar = MsarData(data.y, data.x, gop)
    out = {}
    if "naive" in which:
        fit = naive_2sls(msar)
        out["naive"] = (fit.d_hat, fit.d_se)
    if "adjusted" in which:
        if scenario.network_model == "rdpg":
            u_est = spectral_embed(data.graph, scenario.latent_dim).u_hat
        else:
            lfit = lsm_fit(data.graph, scenario.latent_dim, data.cov)
            u_est = np.hstack([lfit.q, lfit.v[:, None]])
        design = build_basis(u_est, sieve)
        fit = fast_kronecker_path(msar, design)
        out["adjusted"] = (fit.d_hat, fit.d_se)
    return out


def _rep_task(args):
    scenario, rep, which, sieve = args
    try:
        return rep, _estimate_once(scenario, rep, which, sieve), None
    except PeerfxError as exc:
        return rep, None, f"{type(exc).__name__}: {exc}"


def run_monte_carlo(
    scenario: Scenario,
    estimator: str = "adjusted",
    reps: int | None = None,
    *,
    sieve: SieveSpec | None = None,
    workers: int = 1,
) -> McReport:
    """Replicate the scenario, re-estimate each draw, and aggregate.

    estimator is "naive", "adjusted", or "both" (both estimators on the same
    draws, which makes their per-replicate difference a paired quantity).
    Replicate failures are recorded with their rep index and excluded from
    the aggregates. With workers > 1 replicates run in a process pool; the
    aggregates do not depend on completion order.
    """
    if estimator not in _ESTIMATORS:
        raise DataError(f"unknown estimator {estimator!r}; choose from {_ESTIMATORS}")
    which = ("naive", "adjusted") if estimator == "both" else (estimator,)
    n_reps = scenario.reps if reps is None else int(reps)
    sieve = sieve if sieve is not None else SieveSpec()
    t0 = time.perf_counter()

    tasks = [(scenario, r, which, sieve) for r in range(n_reps)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(_rep_task, tasks, chunksize=max(1, n_reps // (4 * workers))))
    else:
        raw = [_rep_task(t) for t in tasks]
    raw.sort(key=lambda r: r[0])

    failures = tuple((rep, msg) for rep, _, msg in raw if msg is not None)
    kept = [(rep, res) for rep, res, msg in raw if msg is None]
    if not kept:
        raise DataError("every replicate failed; first error: " + failures[0][1])

    m = scenario.m
    stats = {}
    for name in which:
        d_draws = np.stack([res[name][0] for _, res in kept])
        se_draws = np.stack([res[name][1] for _, res in kept])
        dev = d_draws - scenario.d_true[None, :, :]
        z = dev / se_draws
        lo = d_draws - Z95 * se_draws
        hi = d_draws + Z95 * se_draws
        inside = (lo <= scenario.d_true[None, :, :]) & (scenario.d_true[None, :, :] <= hi)
        stats[name] = EstimatorStats(
            mse=(dev**2).mean(axis=0),
            bias=dev.mean(axis=0),
            coverage=inside.mean(axis=0),
            z_mean=z.mean(axis=0),
            z_sd=z.std(axis=0, ddof=1),
            d_draws=d_draws,
            se_draws=se_draws,
        )
    return McReport(
        scenario=scenario,
        estimators=which,
        stats=stats,
        reps_requested=n_reps,
        reps_used=len(kept),
        failures=failures,
        elapsed_seconds=time.perf_counter() - t0,
    )


def rdpg_scenario(n: int, h_spec: str = "linear", *, reps: int = 100, seed: int = 0,
                  confound_strength: float = 1.0) -> Scenario:
    """Dot-product-network design with the documented default constants."""
    return Scenario(
        name=f"rdpg-{h_spec}-n{n}",
        network_model="rdpg",
        n=n,
        h_spec=h_spec,
        p=3,
        reps=reps,
        seed=seed,
        confound_strength=confound_strength,
    )


def lsm_cov_scenario(n: int, h_spec: str = "linear", *, reps: int = 50, seed: int = 0,
                     confound_strength: float = 1.0) -> Scenario:
    """Logistic-network design with pair covariates and the documented constants."""
    return Scenario(
        name=f"lsmcov-{h_spec}-n{n}",
        network_model="lsm_cov",
        n=n,
        h_spec=h_spec,
        p=5,
        d_true=np.array([[0.8, 0.2], [0.3, 0.6]]),
        reps=reps,
        seed=seed,
        confound_strength=confound_strength,
    )
