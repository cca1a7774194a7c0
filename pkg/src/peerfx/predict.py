"""Prediction utilities: penalized logistic fits, cross-fitted scoring,
rank-based AUC, drop-one importance, and marginal-effect profiles.

Two feature blocks are kept apart so they can carry separate L1 penalties:
a primary block (e.g. node covariates) and an optional secondary block
(e.g. transformed class probabilities). The intercept is never penalized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from .errors import DataError, DivergenceError, NumericalError
from .rng import substream

#: relative objective tolerance for the penalized fits
FIT_TOL = 1e-9
MAX_ITER = 10_000
#: coefficient norm beyond which an unpenalized fit is declared divergent
DIVERGENCE_NORM = 1e3


@dataclass(frozen=True)
class PredDataset:
    """Binary labels with one or two feature blocks.

    x is the primary block (n x p); t, when present, is a secondary block
    (n x h) that gets its own penalty level.
    """

    y: np.ndarray
    x: np.ndarray
    t: np.ndarray | None = None
    x_names: tuple[str, ...] | None = None
    t_names: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        y = np.asarray(self.y, dtype=float).ravel()
        if not np.all(np.isin(y, (0.0, 1.0))):
            raise DataError("labels must be 0/1")
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        if x.shape[0] == 1 and y.size > 1:
            x = x.T
        t = self.t
        if t is not None:
            t = np.atleast_2d(np.asarray(t, dtype=float))
            if t.shape[0] == 1 and y.size > 1:
                t = t.T
            if t.shape[0] != y.size or not np.all(np.isfinite(t)):
                raise DataError("secondary block must be finite with one row per label")
        if x.shape[0] != y.size or not np.all(np.isfinite(x)):
            raise DataError("features must be finite with one row per label")
        x_names = self.x_names or tuple(f"x{i + 1}" for i in range(x.shape[1]))
        t_names = self.t_names or (
            tuple(f"t{i + 1}" for i in range(t.shape[1])) if t is not None else None
        )
        if len(x_names) != x.shape[1] or (t is not None and len(t_names) != t.shape[1]):
            raise DataError("feature names do not match block widths")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x_names", tuple(x_names))
        object.__setattr__(self, "t_names", None if t_names is None else tuple(t_names))

    @property
    def n(self) -> int:
        return self.y.size

    def design(self) -> np.ndarray:
        """[1 | x | t] with an explicit intercept column."""
        blocks = [np.ones((self.n, 1)), self.x]
        if self.t is not None:
            blocks.append(self.t)
        return np.hstack(blocks)

    def feature_names(self) -> tuple[str, ...]:
        return self.x_names + (self.t_names or ())

    def subset(self, idx: np.ndarray) -> "PredDataset":
        return PredDataset(
            y=self.y[idx],
            x=self.x[idx],
            t=None if self.t is None else self.t[idx],
            x_names=self.x_names,
            t_names=self.t_names,
        )

    def drop_feature(self, name: str) -> "PredDataset":
        if name in self.x_names:
            keep = [i for i, nm in enumerate(self.x_names) if nm != name]
            return PredDataset(self.y, self.x[:, keep],
                               t=self.t,
                               x_names=tuple(self.x_names[i] for i in keep),
                               t_names=self.t_names)
        if self.t_names and name in self.t_names:
            keep = [i for i, nm in enumerate(self.t_names) if nm != name]
            t = self.t[:, keep] if keep else None
            return PredDataset(self.y, self.x, t=t,
                               x_names=self.x_names,
                               t_names=tuple(self.t_names[i] for i in keep) if keep else None)
        raise DataError(f"no feature named {name!r}")


@dataclass(frozen=True)
class LogisticFit:
    """Fitted coefficients: intercept first, then the x block, then the t block."""

    coef: np.ndarray
    lam1: float
    lam2: float
    converged: bool
    n_iter: int
    objective: float

    def predict(self, data: PredDataset) -> np.ndarray:
        return expit(data.design() @ self.coef)


def _deviance(y: np.ndarray, w: np.ndarray, coef: np.ndarray) -> float:
    eta = w @ coef
    return 2.0 * float(np.sum(np.logaddexp(0.0, eta) - y * eta))


def _penalty_weights(data: PredDataset, lam1: float, lam2: float) -> np.ndarray:
    pen = [0.0] + [lam1] * data.x.shape[1]
    if data.t is not None:
        pen += [lam2] * data.t.shape[1]
    return np.asarray(pen)


def _newton_fit(y: np.ndarray, w: np.ndarray, max_iter: int, tol: float) -> tuple[np.ndarray, bool, int]:
    coef = np.zeros(w.shape[1])
    dev = _deviance(y, w, coef)
    for it in range(1, max_iter + 1):
        p = expit(w @ coef)
        weights = np.clip(p * (1 - p), 1e-12, None)
        hess = w.T @ (w * weights[:, None])
        grad = w.T @ (y - p)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step, *_ = np.linalg.lstsq(hess, grad, rcond=None)
        coef = coef + step
        if np.linalg.norm(coef) > DIVERGENCE_NORM:
            raise DivergenceError(
                "unpenalized logistic fit diverged (coefficient norm exceeded "
                f"{DIVERGENCE_NORM:g}); the classes are likely separable"
            )
        new_dev = _deviance(y, w, coef)
        if abs(dev - new_dev) <= tol * (abs(dev) + 1.0):
            return coef, True, it
        dev = new_dev
    return coef, False, max_iter


def fit_logistic(
    data: PredDataset,
    lam1: float = 0.0,
    lam2: float = 0.0,
    *,
    max_iter: int = MAX_ITER,
    tol: float = FIT_TOL,
) -> LogisticFit:
    """L1-penalized logistic regression by proximal gradient descent.

    Minimizes the summed negative log-likelihood plus lam1 * |x block| +
    lam2 * |t block|; the intercept is free. With both penalties zero the
    fit switches to Newton iterations and raises DivergenceError if the
    coefficients run away (separation).
    """
    if lam1 < 0 or lam2 < 0:
        raise DataError("penalty levels must be nonnegative")
    w = data.design()
    y = data.y
    if lam1 == 0.0 and lam2 == 0.0:
        coef, converged, it = _newton_fit(y, w, max_iter, tol)
        obj = 0.5 * _deviance(y, w, coef)
        return LogisticFit(coef=coef, lam1=0.0, lam2=0.0, converged=converged,
                           n_iter=it, objective=obj)

    pen = _penalty_weights(data, lam1, lam2)
    coef = np.zeros(w.shape[1])
    # Lipschitz bound for the logistic gradient: ||W'W||_2 / 4
    lip = float(np.linalg.norm(w, 2) ** 2) / 4.0
    step = 1.0 / max(lip, 1e-12)

    def objective(c: np.ndarray) -> float:
        return 0.5 * _deviance(y, w, c) + float(pen @ np.abs(c))

    obj = objective(coef)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(w @ coef)
        grad = w.T @ (p - y)
        raw = coef - step * grad
        new = np.sign(raw) * np.maximum(np.abs(raw) - step * pen, 0.0)
        new_obj = objective(new)
        # the fixed 1/L step guarantees descent; guard against rounding
        if new_obj > obj + 1e-10 * (abs(obj) + 1.0):
            step *= 0.5
            continue
        coef = new
        if abs(obj - new_obj) <= tol * (abs(obj) + 1.0):
            obj = new_obj
            converged = True
            break
        obj = new_obj
    if not np.all(np.isfinite(coef)):
        raise NumericalError("penalized logistic fit produced non-finite coefficients")
    return LogisticFit(coef=coef, lam1=lam1, lam2=lam2, converged=converged,
                       n_iter=it, objective=obj)


# =============================================================================
# Cross-fitting
# =============================================================================


@dataclass(frozen=True)
class CvResult:
    """Pooled out-of-fold scores plus the frozen penalty and per-fold fits."""

    auc: float
    lam: float
    scores: np.ndarray
    fold_id: np.ndarray
    fold_fits: tuple[LogisticFit, ...]
    full_fit: LogisticFit


def _stratified_folds(y: np.ndarray, folds: int, rng: np.random.Generator) -> np.ndarray:
    """Fold assignment that splits each class as evenly as possible."""
    fold_id = np.empty(y.size, dtype=int)
    for cls in (0.0, 1.0):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(idx.size)]
        fold_id[idx] = np.arange(idx.size) % folds
    return fold_id


def _lambda_grid(data: PredDataset, n_points: int = 20) -> np.ndarray:
    w = data.design()
    ybar = data.y.mean()
    grad0 = np.abs(w.T @ (data.y - ybar))[1:]  # exclude intercept
    lam_max = float(grad0.max())
    if lam_max <= 0:
        lam_max = 1.0
    return np.geomspace(lam_max, lam_max * 1e-4, n_points)


def cross_fit(
    data: PredDataset,
    folds: int = 5,
    lambda_rule: str | float = "cv",
    *,
    seed: int,
) -> CvResult:
    """K-fold cross-fitting with the penalty frozen before the folds run.

    lambda_rule "cv" picks the penalty by inner cross-validated deviance on
    the full data over a log-spaced grid; "none" means unpenalized; a number
    fixes the penalty directly. The same value serves both feature blocks.
    Scores are pooled across held-out folds into one AUC.
    """
    if folds < 2 or folds > data.n:
        raise DataError(f"folds must be in [2, n]; got {folds}")
    rng = substream(seed, "folds")
    fold_id = _stratified_folds(data.y, folds, rng)
    for f in range(folds):
        tr = fold_id != f
        if data.y[tr].min() == data.y[tr].max():
            # one resample, then give up: a training fold lost a whole class
            fold_id = _stratified_folds(data.y, folds, substream(seed, "folds-retry"))
            bad = any(
                data.y[fold_id != g].min() == data.y[fold_id != g].max()
                for g in range(folds)
            )
            if bad:
                raise DataError(
                    "a training fold contains a single class even after resampling; "
                    "reduce folds or check the labels"
                )
            break

    if lambda_rule == "cv":
        lam = _select_lambda(data, folds, seed)
    elif lambda_rule == "none":
        lam = 0.0
    else:
        lam = float(lambda_rule)
        if lam < 0:
            raise DataError("fixed penalty must be nonnegative")

    scores = np.empty(data.n)
    fits = []
    for f in range(folds):
        tr = np.flatnonzero(fold_id != f)
        te = np.flatnonzero(fold_id == f)
        fit = fit_logistic(data.subset(tr), lam, lam)
        fits.append(fit)
        scores[te] = fit.predict(data.subset(te))
    full_fit = fit_logistic(data, lam, lam)
    return CvResult(
        auc=auc(scores, data.y),
        lam=lam,
        scores=scores,
        fold_id=fold_id,
        fold_fits=tuple(fits),
        full_fit=full_fit,
    )


def _select_lambda(data: PredDataset, folds: int, seed: int) -> float:
    grid = _lambda_grid(data)
    rng = substream(seed, "lambda-folds")
    fold_id = _stratified_folds(data.y, folds, rng)
    dev = np.zeros(grid.size)
    for f in range(folds):
        tr = np.flatnonzero(fold_id != f)
        te = np.flatnonzero(fold_id == f)
        train = data.subset(tr)
        test_w = data.subset(te).design()
        for gi, lam in enumerate(grid):
            fit = fit_logistic(train, lam, lam)
            dev[gi] += _deviance(data.y[te], test_w, fit.coef)
    return float(grid[int(np.argmin(dev))])


# =============================================================================
# Scoring and interpretation
# =============================================================================


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the ROC curve by rank summation (ties get mean ranks)."""
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels, dtype=float).ravel()
    if scores.size != labels.size:
        raise DataError("scores and labels differ in length")
    if not np.all(np.isin(labels, (0.0, 1.0))):
        raise DataError("labels must be 0/1")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs both classes present")
    ranks = rankdata(scores)
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def variable_importance(
    data: PredDataset, folds: int = 5, *, seed: int
) -> list[dict]:
    """Drop-one share of explained deviance, per fold.

    For each training fold, the share is one minus the deviance ratio of the
    full unpenalized model against the intercept-only model; a variable's
    importance is the drop in that share when it is left out. Folds where a
    refit diverges are recorded as NaN for that variable.
    """
    rng = substream(seed, "importance-folds")
    fold_id = _stratified_folds(data.y, folds, rng)
    names = data.feature_names()
    per_fold = {name: [] for name in names}
    full_r2 = []
    for f in range(folds):
        tr = np.flatnonzero(fold_id != f)
        train = data.subset(tr)
        w = train.design()
        null_coef, *_ = _newton_fit(train.y, np.ones((train.n, 1)), MAX_ITER, FIT_TOL)
        dev_null = _deviance(train.y, np.ones((train.n, 1)), null_coef)
        try:
            full = _newton_fit(train.y, w, MAX_ITER, FIT_TOL)[0]
            r2_full = 1.0 - _deviance(train.y, w, full) / dev_null
        except DivergenceError:
            full_r2.append(np.nan)
            for name in names:
                per_fold[name].append(np.nan)
            continue
        full_r2.append(r2_full)
        for name in names:
            reduced = data.drop_feature(name).subset(tr)
            try:
                coef = _newton_fit(reduced.y, reduced.design(), MAX_ITER, FIT_TOL)[0]
                r2_red = 1.0 - _deviance(reduced.y, reduced.design(), coef) / dev_null
                per_fold[name].append(r2_full - r2_red)
            except DivergenceError:
                per_fold[name].append(np.nan)
    return [
        {
            "feature": name,
            "mean_delta_r2": float(np.nanmean(per_fold[name])),
            "per_fold": [float(v) for v in per_fold[name]],
        }
        for name in names
    ]


def marginal_effect_curve(
    fit: LogisticFit,
    data: PredDataset,
    feature: str,
    grid: np.ndarray | None = None,
    n_grid: int = 50,
) -> dict:
    """Predicted probability along one feature, others held at their medians.

    Returns the grid, the predicted probabilities, and a warning string when
    any grid point lies outside the feature's observed range.
    """
    names = data.feature_names()
    if feature not in names:
        raise DataError(f"no feature named {feature!r}")
    cols = np.hstack([data.x] + ([data.t] if data.t is not None else []))
    j = names.index(feature)
    observed = cols[:, j]
    if grid is None:
        grid = np.linspace(observed.min(), observed.max(), n_grid)
    grid = np.asarray(grid, dtype=float).ravel()
    warning = None
    if grid.min() < observed.min() or grid.max() > observed.max():
        warning = (
            f"grid for {feature} extends beyond its observed range "
            f"[{observed.min():.6g}, {observed.max():.6g}]; extrapolating"
        )
    profile = np.median(cols, axis=0)
    w = np.empty((grid.size, cols.shape[1] + 1))
    w[:, 0] = 1.0
    w[:, 1:] = profile[None, :]
    w[:, j + 1] = grid
    probs = expit(w @ fit.coef)
    return {"feature": feature, "grid": grid, "probability": probs, "warning": warning}
