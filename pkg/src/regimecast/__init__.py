"""Density models, identification certificates, and outcome estimators
for systems observed under combinations of discrete interventions."""

__version__ = "0.1.0"

from .algebraic import (
    PrTransformation,
    Unidentifiable,
    build_system,
    greedy_reduce,
    solve_pr,
    verify_pr,
)
from .energy import (
    EnergyModel,
    Grid,
    discretize,
    density_ratio,
    fit,
    load_model,
    log_ratio_rows,
    log_unnorm,
    new_model,
    pll_gradient,
    pseudo_loglik,
    save_model,
)
from .errors import (
    ConditionsNotMet,
    DegenerateVariable,
    DomainError,
    GridTooLarge,
    InsufficientData,
    InvalidSpec,
    MissingOutcome,
    ModelFormatError,
    NonFinite,
    NotChordal,
    UnknownStructure,
)
from .estimators import (
    ConformalBand,
    Estimate,
    OutcomeModel,
    conformal_band,
    estimate_covshift,
    estimate_direct,
    estimate_ipw,
    fit_outcome,
    load_outcome,
    predict_outcome,
    save_outcome,
)
from .fileio import (
    fingerprint,
    graph_to_dict,
    load_graph,
    load_manifest,
    parse_graph,
    parse_regime_text,
    read_dataset_csv,
    write_dataset_csv,
)
from .junction import (
    ConditionReport,
    JunctionTree,
    build_junction_tree,
    check_conditions,
    is_decomposable,
    maximal_cliques,
    message_passing_identify,
    triangulate,
)
from .model import (
    FactorSpec,
    IfmStructure,
    InterventionSpace,
    RegimeDataset,
    RegimeSet,
    RegimeVector,
    SigmaGraph,
    normalize_factors,
    restrict_regime,
    sigma_graph,
    sigma_zero_set,
)
from .sampling import exact_density, gibbs_sample
from .simbench import (
    BenchmarkReport,
    StructureBundle,
    builtin_structure,
    ground_truth_mu,
    make_dag_truth,
    make_ifm_truth,
    make_outcome,
    prmse,
    rcor,
    run_benchmark,
    sample_truth,
)

__all__ = [
    "__version__",
    "BenchmarkReport",
    "ConditionReport",
    "ConditionsNotMet",
    "ConformalBand",
    "DegenerateVariable",
    "DomainError",
    "EnergyModel",
    "Estimate",
    "FactorSpec",
    "Grid",
    "GridTooLarge",
    "IfmStructure",
    "InsufficientData",
    "InterventionSpace",
    "InvalidSpec",
    "JunctionTree",
    "MissingOutcome",
    "ModelFormatError",
    "NonFinite",
    "NotChordal",
    "OutcomeModel",
    "PrTransformation",
    "RegimeDataset",
    "RegimeSet",
    "RegimeVector",
    "SigmaGraph",
    "StructureBundle",
    "Unidentifiable",
    "UnknownStructure",
    "build_junction_tree",
    "build_system",
    "builtin_structure",
    "check_conditions",
    "conformal_band",
    "density_ratio",
    "discretize",
    "estimate_covshift",
    "estimate_direct",
    "estimate_ipw",
    "exact_density",
    "fingerprint",
    "fit",
    "fit_outcome",
    "gibbs_sample",
    "graph_to_dict",
    "greedy_reduce",
    "ground_truth_mu",
    "is_decomposable",
    "load_graph",
    "load_manifest",
    "load_model",
    "load_outcome",
    "log_ratio_rows",
    "log_unnorm",
    "make_dag_truth",
    "make_ifm_truth",
    "make_outcome",
    "maximal_cliques",
    "message_passing_identify",
    "new_model",
    "normalize_factors",
    "parse_graph",
    "parse_regime_text",
    "pll_gradient",
    "predict_outcome",
    "prmse",
    "pseudo_loglik",
    "rcor",
    "read_dataset_csv",
    "restrict_regime",
    "run_benchmark",
    "sample_truth",
    "save_model",
    "save_outcome",
    "sigma_graph",
    "sigma_zero_set",
    "solve_pr",
    "triangulate",
    "verify_pr",
    "write_dataset_csv",
]
