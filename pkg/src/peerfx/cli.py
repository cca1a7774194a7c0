"""Command-line entry point.

Usage: peerfx <command> --config <file> [--seed S] [--out DIR]

Commands
--------
embed      spectral embedding of an adjacency matrix (dimension fixed or selected)
fit-net    fit a latent-space network model
gof        goodness-of-fit: observed statistics against model simulations
estimate   latent-adjusted instrumented peer-effect estimation
mc         Monte Carlo accuracy sweep over network sizes
predict    cross-fitted penalized logistic prediction

Exit codes: 0 ok, 2 configuration, 3 data, 4 identification, 5 numerical,
6 other expected failure, 70 internal error.
"""

from __future__ import annotations

import argparse
import sys
import time
import traceback
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .dgp import lsm_cov_scenario, rdpg_scenario, run_monte_carlo
from .errors import (
    ConfigError,
    DataError,
    IdentificationError,
    NumericalError,
    PeerfxError,
)
from .estimator import (
    Composition,
    MsarData,
    alr,
    fast_kronecker_path,
    naive_2sls,
    wald_table,
)
from .gof import PLACEHOLDER_MODELS, placeholder_report, run_gof
from .graph import Graph, load_adjacency_csv, row_normalize
from .latent import EdgeCovariates, lsm_fit, select_dimension, spectral_embed
from .predict import PredDataset, cross_fit, marginal_effect_curve, variable_importance
from .rng import substream
from .runio import (
    load_matrix_csv,
    load_vector_csv,
    prepare_outputs,
    save_json,
    save_matrix_csv,
    sha256_of,
)
from .sieve import SieveSpec, build_basis

COMMANDS = ("embed", "fit-net", "gof", "estimate", "mc", "predict")

_TOP_KEYS = {"command", "seed", "out", "inputs", "network", "sieve",
             "estimate", "gof", "mc", "predict"}


@dataclass
class RunConfig:
    command: str
    seed: int
    out: Path
    raw: dict
    base_dir: Path

    def section(self, name: str) -> dict:
        sec = self.raw.get(name) or {}
        if not isinstance(sec, dict):
            raise ConfigError(f"config section {name!r} must be a mapping")
        return sec

    def input_path(self, key: str, required: bool = True) -> Path | None:
        inputs = self.section("inputs")
        val = inputs.get(key)
        if val is None:
            if required:
                raise ConfigError(f"config is missing inputs.{key}")
            return None
        return self._resolve(val)

    def input_paths(self, key: str) -> list[Path]:
        inputs = self.section("inputs")
        val = inputs.get(key)
        if val is None:
            return []
        if isinstance(val, (str, Path)):
            val = [val]
        if not isinstance(val, list):
            raise ConfigError(f"inputs.{key} must be a path or list of paths")
        return [self._resolve(v) for v in val]

    def _resolve(self, val) -> Path:
        p = Path(str(val))
        return p if p.is_absolute() else self.base_dir / p


def validate_and_load(
    config_path: str | Path,
    command: str,
    seed_override: int | None = None,
    out_override: str | None = None,
) -> RunConfig:
    """Parse and validate the YAML run configuration."""
    path = Path(config_path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config file must contain a mapping at the top level")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    file_cmd = raw.get("command")
    if file_cmd is not None and file_cmd != command:
        raise ConfigError(
            f"config names command {file_cmd!r} but the command line says {command!r}"
        )
    seed = seed_override if seed_override is not None else raw.get("seed")
    if seed is None:
        raise ConfigError("a seed is required (config key 'seed' or --seed)")
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    out = out_override if out_override is not None else raw.get("out")
    if out is None:
        raise ConfigError("an output directory is required (config key 'out' or --out)")
    return RunConfig(command=command, seed=int(seed), out=Path(out), raw=raw,
                     base_dir=path.parent)


# =============================================================================
# Shared loaders
# =============================================================================


def _load_graph(cfg: RunConfig) -> Graph:
    return load_adjacency_csv(cfg.input_path("adjacency"))


def _load_edge_covariates(cfg: RunConfig, n: int) -> EdgeCovariates | None:
    paths = cfg.input_paths("edge_covariates")
    if not paths:
        return None
    mats = [load_matrix_csv(p, "edge covariate") for p in paths]
    for p, m in zip(paths, mats):
        if m.shape != (n, n):
            raise DataError(f"edge covariate {p} is {m.shape}, expected ({n}, {n})")
    return EdgeCovariates(np.stack(mats))


def _latent_positions(model: str, graph: Graph, dim: int,
                      cov: EdgeCovariates | None) -> tuple[np.ndarray, dict]:
    if model == "rdpg":
        emb = spectral_embed(graph, dim)
        return emb.u_hat, {"model": model, "dim": dim,
                           "eigenvalues": emb.eigenvalues}
    fit = lsm_fit(graph, dim, cov if model == "lsm_cov" else None)
    pos = np.hstack([fit.q, fit.v[:, None]])
    info = {
        "model": model,
        "dim": dim,
        "converged": fit.converged,
        "iterations": int(fit.loglik_trace.size - 1),
        "loglik": float(fit.loglik_trace[-1]),
        "rho": fit.rho,
        "beta_edge": fit.beta_edge,
    }
    return pos, info


def _sieve_spec(cfg: RunConfig) -> SieveSpec:
    sec = cfg.section("sieve")
    return SieveSpec(
        family=sec.get("family", "polynomial"),
        total_degree_cap=int(sec.get("total_degree_cap", 2)),
        include_constant=bool(sec.get("include_constant", True)),
    )


# =============================================================================
# Commands
# =============================================================================


def _cmd_embed(cfg: RunConfig, stages: dict) -> dict:
    net = cfg.section("network")
    t0 = time.perf_counter()
    graph = _load_graph(cfg)
    stages["load"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    dim = net.get("dim", "auto")
    selection = None
    if dim == "auto":
        candidates = net.get("dim_candidates", [1, 2, 3, 4, 5])
        sel = select_dimension(
            graph, candidates, int(net.get("folds", 5)),
            rng=substream(cfg.seed, "dimension"),
        )
        dim = sel.d
        selection = {
            "candidates": list(sel.candidates),
            "mean_deviance": sel.mean_deviance,
            "selected": sel.d,
        }
    emb = spectral_embed(graph, int(dim))
    stages["fit"] = time.perf_counter() - t0

    out = prepare_outputs(cfg.out, ["latent.csv", "embed.json"])
    save_matrix_csv(out / "latent.csv", emb.u_hat)
    save_json(out / "embed.json", {
        "dim": int(dim),
        "eigenvalues": emb.eigenvalues,
        "n": graph.n,
        "selection": selection,
    })
    return {"latent.csv": None, "embed.json": None}


def _cmd_fit_net(cfg: RunConfig, stages: dict) -> dict:
    net = cfg.section("network")
    model = net.get("model")
    if model not in ("rdpg", "lsm", "lsm_cov"):
        raise ConfigError("network.model must be rdpg, lsm, or lsm_cov")
    dim = net.get("dim")
    if not isinstance(dim, int):
        raise ConfigError("network.dim must be an integer")

    t0 = time.perf_counter()
    graph = _load_graph(cfg)
    cov = _load_edge_covariates(cfg, graph.n)
    if model == "lsm_cov" and cov is None:
        raise ConfigError("network.model lsm_cov needs inputs.edge_covariates")
    stages["load"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    pos, info = _latent_positions(model, graph, dim, cov)
    stages["fit"] = time.perf_counter() - t0

    out = prepare_outputs(cfg.out, ["latent.csv", "netfit.json"])
    save_matrix_csv(out / "latent.csv", pos)
    save_json(out / "netfit.json", info)
    return {"latent.csv": None, "netfit.json": None}


def _cmd_gof(cfg: RunConfig, stages: dict) -> dict:
    sec = cfg.section("gof")
    net = cfg.section("network")
    dim = int(net.get("dim", 2))
    replicates = int(sec.get("replicates", 200))
    t0 = time.perf_counter()
    graph = _load_graph(cfg)
    cov = _load_edge_covariates(cfg, graph.n)
    stages["load"] = time.perf_counter() - t0

    models = sec.get("models")
    if models is None:
        models = ["rdpg", "lsm"] + (["lsm_cov"] if cov is not None else [])
    t0 = time.perf_counter()
    reports = []
    for mdl in models:
        rep = run_gof(graph, mdl, dim, cov=cov if mdl == "lsm_cov" else None,
                      replicates=replicates, seed=cfg.seed)
        reports.append(rep)
    stages["fit"] = time.perf_counter() - t0

    out = prepare_outputs(cfg.out, ["gof.json", "gof.csv"])
    payload = {
        "replicates": replicates,
        "dim": dim,
        "models": [
            {
                "model": r.model,
                "implemented": True,
                "stats": [vars(s) for s in r.stats],
            }
            for r in reports
        ]
        + [placeholder_report(m) for m in PLACEHOLDER_MODELS],
    }
    save_json(out / "gof.json", payload)
    lines = ["model,stat,observed,sim_mean,band_low,band_high,percentile,in_band"]
    for r in reports:
        for s in r.stats:
            lines.append(
                f"{r.model},{s.name},{s.observed!r},{s.sim_mean!r},"
                f"{s.band_low!r},{s.band_high!r},{s.percentile!r},{int(s.in_band)}"
            )
    for m in PLACEHOLDER_MODELS:
        for name in ("modularity", "sd_row_means", "transitivity"):
            lines.append(f"{m},{name},,,,,,")
    (out / "gof.csv").write_text("\n".join(lines) + "\n")
    return {"gof.json": None, "gof.csv": None}


def _drop_isolated(graph: Graph, arrays: list[np.ndarray]) -> tuple[Graph, list[np.ndarray]]:
    keep = graph.degrees > 0
    if keep.all():
        return graph, arrays
    sub = Graph(graph.a[np.ix_(keep, keep)])
    return sub, [a[keep] for a in arrays]


def _cmd_estimate(cfg: RunConfig, stages: dict) -> dict:
    est = cfg.section("estimate")
    net = cfg.section("network")
    model = net.get("model", "rdpg")
    if model not in ("rdpg", "lsm", "lsm_cov"):
        raise ConfigError("network.model must be rdpg, lsm, or lsm_cov")
    dim = int(net.get("dim", 2))

    t0 = time.perf_counter()
    graph = _load_graph(cfg)
    x = load_matrix_csv(cfg.input_path("covariates"), "covariates")
    out_path = cfg.input_path("outcomes", required=False)
    probs_path = cfg.input_path("class_probabilities", required=False)
    if (out_path is None) == (probs_path is None):
        raise ConfigError(
            "estimate needs exactly one of inputs.outcomes or inputs.class_probabilities"
        )
    if out_path is not None:
        y = load_matrix_csv(out_path, "outcomes")
        baseline = None
    else:
        baseline = est.get("baseline")
        if not isinstance(baseline, int):
            raise ConfigError("estimate.baseline (integer class index) is required "
                              "with class probabilities")
        comp = Composition(load_matrix_csv(probs_path, "class probabilities"))
        y = alr(comp, baseline)
    cov = _load_edge_covariates(cfg, graph.n)
    if x.shape[0] != graph.n or y.shape[0] != graph.n:
        raise DataError(
            f"rows mismatch: adjacency n={graph.n}, outcomes {y.shape[0]}, "
            f"covariates {x.shape[0]}"
        )
    if bool(est.get("drop_isolated", False)):
        graph, (y, x) = _drop_isolated(graph, [y, x])
    stages["load"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    pos, latent_info = _latent_positions(model, graph, dim, cov)
    spec = _sieve_spec(cfg)
    design = build_basis(pos, spec)
    x_in_model = bool(est.get("covariates_in_model", True))
    data = MsarData(y, x, row_normalize(graph))
    if spec.total_degree_cap == 0 and not spec.include_constant:
        fit = naive_2sls(data, x_in_model=x_in_model)
    else:
        fit = fast_kronecker_path(data, design, x_in_model=x_in_model)
    stages["fit"] = time.perf_counter() - t0

    rows = wald_table(fit)
    out = prepare_outputs(cfg.out, ["estimate.json", "wald.csv"])
    save_json(out / "estimate.json", {
        "method": fit.method,
        "n": data.n,
        "m": data.m,
        "p": data.p,
        "covariates_in_model": x_in_model,
        "baseline": baseline,
        "latent": latent_info,
        "sieve": {
            "family": spec.family,
            "total_degree_cap": spec.total_degree_cap,
            "include_constant": spec.include_constant,
            "n_terms": design.n_terms,
        },
        "d_hat": fit.d_hat,
        "d_se": fit.d_se,
        "b1_hat": fit.b1_hat,
        "b2_hat": fit.b2_hat,
        "vhat": fit.vhat,
        "diagnostics": fit.diagnostics,
    })
    lines = ["equation,term,estimate,se,z,flagged"]
    for r in rows:
        se = "" if not np.isfinite(r["se"]) else repr(r["se"])
        z = "" if not np.isfinite(r["z"]) else repr(r["z"])
        lines.append(
            f"{r['equation']},{r['term']},{r['estimate']!r},{se},{z},{int(r['flagged'])}"
        )
    (out / "wald.csv").write_text("\n".join(lines) + "\n")
    return {"estimate.json": None, "wald.csv": None}


def _cmd_mc(cfg: RunConfig, stages: dict) -> dict:
    sec = cfg.section("mc")
    network_model = sec.get("network_model", "rdpg")
    h_spec = sec.get("h_spec", "linear")
    n_values = sec.get("n_values", [100, 300, 500])
    if not isinstance(n_values, list) or not n_values:
        raise ConfigError("mc.n_values must be a non-empty list of sizes")
    estimator = sec.get("estimator", "adjusted")
    reps = sec.get("reps")
    workers = int(sec.get("workers", 1))
    confound = float(sec.get("confound_strength", 1.0))

    t0 = time.perf_counter()
    results = []
    for n in n_values:
        if network_model == "rdpg":
            scen = rdpg_scenario(int(n), h_spec, seed=cfg.seed, confound_strength=confound,
                                 reps=int(reps) if reps else 100)
        elif network_model == "lsm_cov":
            scen = lsm_cov_scenario(int(n), h_spec, seed=cfg.seed, confound_strength=confound,
                                    reps=int(reps) if reps else 50)
        else:
            raise ConfigError("mc.network_model must be rdpg or lsm_cov")
        results.append(run_monte_carlo(scen, estimator, workers=workers))
    stages["fit"] = time.perf_counter() - t0

    m = results[0].scenario.m
    primary = "adjusted" if "adjusted" in results[0].estimators else results[0].estimators[0]
    header = "n," + ",".join(f"d{i + 1}{j + 1}" for i in range(m) for j in range(m))
    lines = [header]
    for rep in results:
        mse = rep.stats[primary].mse
        cells = ",".join(repr(float(mse[i, j])) for i in range(m) for j in range(m))
        lines.append(f"{rep.scenario.n},{cells}")
    out = prepare_outputs(cfg.out, ["mc_mse.csv", "mc.json"])
    (out / "mc_mse.csv").write_text("\n".join(lines) + "\n")
    save_json(out / "mc.json", {
        "network_model": network_model,
        "h_spec": h_spec,
        "estimator": estimator,
        "runs": [
            {
                "n": rep.scenario.n,
                "reps_used": rep.reps_used,
                "failures": len(rep.failures),
                "stats": {
                    name: {
                        "mse": st.mse,
                        "bias": st.bias,
                        "coverage": st.coverage,
                        "z_mean": st.z_mean,
                        "z_sd": st.z_sd,
                    }
                    for name, st in rep.stats.items()
                },
            }
            for rep in results
        ],
    })
    return {"mc_mse.csv": None, "mc.json": None}


def _cmd_predict(cfg: RunConfig, stages: dict) -> dict:
    sec = cfg.section("predict")
    t0 = time.perf_counter()
    y = load_vector_csv(cfg.input_path("labels"), "labels")
    x = load_matrix_csv(cfg.input_path("features"), "features")
    t_block = None
    extra = cfg.input_path("extra_features", required=False)
    probs_path = cfg.input_path("class_probabilities", required=False)
    if extra is not None and probs_path is not None:
        raise ConfigError("give either inputs.extra_features or "
                          "inputs.class_probabilities, not both")
    if extra is not None:
        t_block = load_matrix_csv(extra, "extra features")
    elif probs_path is not None:
        baseline = sec.get("baseline")
        if not isinstance(baseline, int):
            raise ConfigError("predict.baseline (integer class index) is required "
                              "with class probabilities")
        t_block = alr(Composition(load_matrix_csv(probs_path, "class probabilities")),
                      baseline)
    data = PredDataset(y, x, t_block)
    stages["load"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    folds = int(sec.get("folds", 5))
    lambda_rule = sec.get("lambda_rule", "cv")
    result = cross_fit(data, folds, lambda_rule, seed=cfg.seed)
    importance = None
    if bool(sec.get("importance", False)):
        importance = variable_importance(data, folds, seed=cfg.seed)
    margins = None
    target = sec.get("margins")
    if target is not None:
        margins = marginal_effect_curve(result.full_fit, data, str(target))
    stages["fit"] = time.perf_counter() - t0

    names = ["predict.json", "scores.csv"]
    if importance is not None:
        names.append("importance.csv")
    if margins is not None:
        names.append("margins.csv")
    out = prepare_outputs(cfg.out, names)
    save_json(out / "predict.json", {
        "auc": result.auc,
        "lambda": result.lam,
        "folds": folds,
        "lambda_rule": lambda_rule if isinstance(lambda_rule, str) else float(lambda_rule),
        "full_coefficients": result.full_fit.coef,
        "feature_names": list(data.feature_names()),
        "nonzero_features": [
            nm for nm, c in zip(data.feature_names(), result.full_fit.coef[1:])
            if c != 0.0
        ],
        "importance": importance,
        "margins_warning": None if margins is None else margins["warning"],
    })
    lines = ["score,fold,label"]
    for s, f, lab in zip(result.scores, result.fold_id, data.y):
        lines.append(f"{s!r},{int(f)},{int(lab)}")
    (out / "scores.csv").write_text("\n".join(lines) + "\n")
    if importance is not None:
        ilines = ["feature,mean_delta_r2," + ",".join(f"fold{i + 1}" for i in range(folds))]
        for row in importance:
            cells = ",".join(repr(v) for v in row["per_fold"])
            ilines.append(f"{row['feature']},{row['mean_delta_r2']!r},{cells}")
        (out / "importance.csv").write_text("\n".join(ilines) + "\n")
    if margins is not None:
        mlines = ["grid,probability"]
        for g, pr in zip(margins["grid"], margins["probability"]):
            mlines.append(f"{g!r},{pr!r}")
        (out / "margins.csv").write_text("\n".join(mlines) + "\n")
    return {nm: None for nm in names}


_DISPATCH = {
    "embed": _cmd_embed,
    "fit-net": _cmd_fit_net,
    "gof": _cmd_gof,
    "estimate": _cmd_estimate,
    "mc": _cmd_mc,
    "predict": _cmd_predict,
}


def dispatch(cfg: RunConfig) -> dict:
    """Run one command and write its outputs plus a manifest."""
    stages: dict = {}
    t_total = time.perf_counter()
    outputs = _DISPATCH[cfg.command](cfg, stages)
    stages["total"] = time.perf_counter() - t_total

    inputs = {}
    for key, val in (cfg.raw.get("inputs") or {}).items():
        paths = val if isinstance(val, list) else [val]
        for p in paths:
            rp = cfg._resolve(p)
            if rp.exists():
                inputs[str(p)] = sha256_of(rp)
    out_hashes = {nm: sha256_of(cfg.out / nm) for nm in outputs}
    manifest = {
        "command": cfg.command,
        "version": __version__,
        "seed": cfg.seed,
        "config": cfg.raw,
        "stage_seconds": stages,
        "input_sha256": inputs,
        "output_sha256": out_hashes,
    }
    save_json(cfg.out / "manifest.json", manifest)
    return manifest


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="peerfx",
        description="Peer-effect estimation on endogenously formed networks.",
        epilog="Exit codes: 0 ok, 2 config, 3 data, 4 identification, "
               "5 numerical, 6 other failure, 70 internal.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="YAML run configuration")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--out", default=None, help="override output directory")
    args = parser.parse_args(argv)

    try:
        cfg = validate_and_load(args.config, args.command, args.seed, args.out)
        dispatch(cfg)
        return 0
    except ConfigError as exc:
        print(f"peerfx: configuration error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"peerfx: data error: {exc}", file=sys.stderr)
        return 3
    except IdentificationError as exc:
        print(f"peerfx: identification error: {exc}", file=sys.stderr)
        return 4
    except NumericalError as exc:
        print(f"peerfx: numerical error: {exc}", file=sys.stderr)
        return 5
    except PeerfxError as exc:
        print(f"peerfx: error: {exc}", file=sys.stderr)
        return 6
    except Exception:
        traceback.print_exc()
        return 70


if __name__ == "__main__":
    sys.exit(main())
