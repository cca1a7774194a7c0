"""peerfx: peer-effect estimation on endogenously formed networks.

The pieces, in dependency order: graph containers and statistics; latent-
position network models (spectral and logistic); sieve bases over estimated
positions; instrumented estimators with latent adjustment; simulation and
Monte Carlo harnesses; goodness of fit; prediction utilities; and a CLI.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DataError,
    DegenerateInputError,
    DivergenceError,
    IdentificationError,
    NumericalError,
    PeerfxError,
)
from .graph import (
    Graph,
    PeerOperator,
    greedy_communities,
    load_adjacency_csv,
    modularity,
    partition_modularity,
    row_normalize,
    save_adjacency_csv,
    sd_row_means,
    transitivity,
)
from .latent import (
    DimensionSelection,
    EdgeCovariates,
    LsmFit,
    RdpgFit,
    UsvtInit,
    bernoulli_graph,
    lsm_fit,
    lsm_params,
    lsm_simulate,
    rdpg_simulate,
    select_dimension,
    spectral_embed,
    usvt_init,
)
from .sieve import SieveDesign, SieveSpec, build_basis, multi_indices, residualize
from .estimator import (
    Composition,
    InstrumentSet,
    MsarData,
    PeerEffectsFit,
    alr,
    alr_inverse,
    adjusted_2sls,
    build_instruments,
    fast_kronecker_path,
    naive_2sls,
    wald_table,
)
from .dgp import (
    McReport,
    Scenario,
    SimulatedData,
    generate,
    h_features,
    lsm_cov_scenario,
    rdpg_scenario,
    run_monte_carlo,
)
from .gof import GofReport, GofStat, run_gof
from .predict import (
    CvResult,
    LogisticFit,
    PredDataset,
    auc,
    cross_fit,
    fit_logistic,
    marginal_effect_curve,
    variable_importance,
)
from .rng import substream

__all__ = [
    "__version__",
    # errors
    "PeerfxError", "ConfigError", "DataError", "DegenerateInputError",
    "IdentificationError", "NumericalError", "DivergenceError",
    # graph
    "Graph", "PeerOperator", "row_normalize", "transitivity", "sd_row_means",
    "modularity", "partition_modularity", "greedy_communities",
    "load_adjacency_csv", "save_adjacency_csv",
    # latent network models
    "RdpgFit", "LsmFit", "EdgeCovariates", "UsvtInit", "DimensionSelection",
    "spectral_embed", "rdpg_simulate", "usvt_init", "lsm_fit", "lsm_simulate",
    "lsm_params", "select_dimension", "bernoulli_graph",
    # sieve
    "SieveSpec", "SieveDesign", "build_basis", "residualize", "multi_indices",
    # estimators
    "MsarData", "InstrumentSet", "PeerEffectsFit", "Composition",
    "build_instruments", "naive_2sls", "adjusted_2sls", "fast_kronecker_path",
    "alr", "alr_inverse", "wald_table",
    # simulation
    "Scenario", "SimulatedData", "McReport", "generate", "run_monte_carlo",
    "rdpg_scenario", "lsm_cov_scenario", "h_features",
    # gof
    "GofReport", "GofStat", "run_gof",
    # prediction
    "PredDataset", "LogisticFit", "CvResult", "fit_logistic", "cross_fit",
    "auc", "variable_importance", "marginal_effect_curve",
    # rng
    "substream",
]
