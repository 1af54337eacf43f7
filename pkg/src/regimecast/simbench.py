"""Synthetic ground truths, built-in benchmark structures, and the runner.

Two simulator families share each structure: a DAG truth with per-node
location/scale nets (intervention levels switch the parameters of their
target node's equation) and a product-of-potentials truth with randomly
seeded nets over the same factors. Outcomes are y = tanh(lam . x) + noise
with the signal variance calibrated under the baseline regime. The runner
simulates training regimes, certifies every test regime before scoring it,
fits the estimators, and reports per-problem errors plus summaries.
"""

from __future__ import annotations

import csv
import itertools
import json
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import spearmanr

from . import algebraic, estimators
from .energy import EnergyModel, Grid, discretize, fit as fit_energy, new_model
from .errors import DegenerateVariable, InvalidSpec, NonFinite, UnknownStructure
from .model import (
    FactorSpec,
    IfmStructure,
    InterventionSpace,
    RegimeDataset,
    RegimeSet,
    RegimeVector,
    normalize_factors,
)
from .nets import Adam, init_mlp, mlp_backward, mlp_forward
from .sampling import gibbs_sample

REPORT_FORMAT = "regimecast-benchmark-report"
REPORT_FORMAT_VERSION = 1

_SCALE_FLOOR = 1e-3


@dataclass(frozen=True)
class DagSpec:
    """Parent sets, per-node intervention target (or None), topological order."""

    parents: tuple
    targets: tuple
    order: tuple


@dataclass(frozen=True)
class StructureBundle:
    """A named benchmark problem: structure, optional DAG, regime split."""

    name: str
    ifm: IfmStructure
    dag: DagSpec | None
    train: RegimeSet
    test: RegimeSet


def _topological_order(parents) -> tuple:
    m = len(parents)
    remaining = set(range(m))
    order = []
    while remaining:
        ready = sorted(k for k in remaining if all(p not in remaining for p in parents[k]))
        if not ready:
            raise InvalidSpec("parent sets contain a cycle")
        order.append(ready[0])
        remaining.discard(ready[0])
    return tuple(order)


def _dag_bundle(name, var_names, intv_names, edges, target_nodes, test_regimes) -> StructureBundle:
    m = len(var_names)
    parents = [set() for _ in range(m)]
    for a, b in edges:
        parents[b].add(a)
    parents = tuple(tuple(sorted(p)) for p in parents)

    node_of_intv = dict(enumerate(target_nodes))
    targets = [None] * m
    for j, node in node_of_intv.items():
        targets[node] = j

    factors = []
    for k in range(m):
        scope = tuple(sorted({k, *parents[k]}))
        intv = (targets[k],) if targets[k] is not None else ()
        factors.append(FactorSpec(scope, intv))

    space = InterventionSpace(tuple(intv_names), (2,) * len(intv_names))
    ifm = IfmStructure(m, space, tuple(factors), tuple(var_names))
    dag = DagSpec(parents, tuple(targets), _topological_order(parents))

    d = space.d
    train = [RegimeVector((0,) * d)]
    for j in range(d):
        levels = [0] * d
        levels[j] = 1
        train.append(RegimeVector(tuple(levels)))
    return StructureBundle(name, ifm, dag, RegimeSet(tuple(train)), RegimeSet.of(test_regimes))


def builtin_structure(name: str) -> StructureBundle:
    """Named benchmark structures with their train/test regime splits.

    "chain3" and "triangle" are single-variable problems with three binary
    interventions whose pairwise factor overlaps form a path and a cycle;
    "sachs" and "dream" are DAG-backed problems whose factors are each
    node together with its parents, switched by the node's intervention.
    """
    if name == "chain3":
        space = InterventionSpace(("s1", "s2", "s3"), (2, 2, 2))
        ifm = IfmStructure(
            1, space,
            (FactorSpec((0,), (0, 1)), FactorSpec((0,), (1, 2))),
            ("x1",),
        )
        train = RegimeSet.of([
            (0, 0, 0), (0, 1, 0), (1, 0, 0), (1, 1, 0), (0, 0, 1), (0, 1, 1),
        ])
        test = RegimeSet.of([(1, 1, 1), (1, 0, 1)])
        return StructureBundle(name, ifm, None, train, test)

    if name == "triangle":
        space = InterventionSpace(("s1", "s2", "s3"), (2, 2, 2))
        ifm = IfmStructure(
            1, space,
            (FactorSpec((0,), (0, 1)), FactorSpec((0,), (1, 2)), FactorSpec((0,), (0, 2))),
            ("x1",),
        )
        train = RegimeSet.of([
            (0, 0, 0), (0, 1, 0), (1, 0, 0), (1, 1, 0), (0, 0, 1), (0, 1, 1), (1, 0, 1),
        ])
        test = RegimeSet.of([(1, 1, 1)])
        return StructureBundle(name, ifm, None, train, test)

    if name == "sachs":
        var_names = [f"x{i}" for i in range(1, 12)]
        edges = [
            (0, 1), (1, 5), (2, 3), (2, 8), (3, 8), (4, 2), (4, 3), (4, 6),
            (5, 6), (7, 0), (7, 1), (7, 5), (7, 6), (7, 9), (7, 10),
            (8, 0), (8, 1), (8, 7), (8, 9), (8, 10),
        ]
        intv_names = ["u0126", "psitect", "aktinhib", "g0076"]
        target_nodes = [1, 3, 6, 8]
        all_regimes = list(itertools.product((0, 1), repeat=4))
        train = {(0, 0, 0, 0)} | {tuple(int(i == j) for i in range(4)) for j in range(4)}
        test = [r for r in all_regimes if r not in train]
        return _dag_bundle(name, var_names, intv_names, edges, target_nodes, test)

    if name == "dream":
        var_names = [f"x{i}" for i in range(1, 11)]
        edges = [
            (1, 0), (1, 2), (2, 3), (2, 4), (2, 5), (2, 6),
            (7, 4), (7, 6), (8, 3), (8, 4), (9, 6),
        ]
        intv_names = [f"ko{i}" for i in range(1, 11)]
        target_nodes = list(range(10))
        test = []
        for i in range(10):
            for j in range(i + 1, 10):
                levels = [0] * 10
                levels[i] = 1
                levels[j] = 1
                test.append(tuple(levels))
        return _dag_bundle(name, var_names, intv_names, edges, target_nodes, test)

    raise UnknownStructure(f"no built-in structure named {name!r}")


def _softplus(z):
    return np.logaddexp(0.0, z)


@dataclass(eq=False)
class DagTruth:
    """Location/scale equations along a DAG, switched by intervention levels.

    Per node there is one (mean, scale) net pair per level of the node's
    intervention (a single pair when untargeted); a level flip changes only
    its target node's conditional. Serves both as a simulator and as the
    fitted form of the DAG-based estimator.
    """

    ifm: IfmStructure
    dag: DagSpec
    mean_nets: tuple
    scale_nets: tuple
    seed: int

    @property
    def m(self) -> int:
        return self.ifm.m

    def baseline(self) -> RegimeVector:
        return self.ifm.space.baseline()

    def sample(self, regime: RegimeVector, n: int, seed: int = 0, **_ignored) -> np.ndarray:
        """Ancestral draws; tanh-bounded means keep every moment finite."""
        self.ifm.space.check_regime(regime)
        rng = np.random.default_rng(seed)
        x = np.zeros((n, self.m))
        for k in self.dag.order:
            level = regime[self.dag.targets[k]] if self.dag.targets[k] is not None else 0
            feats = x[:, self.dag.parents[k]]
            mean, _ = mlp_forward(self.mean_nets[k][level], feats)
            raw, _ = mlp_forward(self.scale_nets[k][level], feats)
            scale = _softplus(raw) + _SCALE_FLOOR
            x[:, k] = mean + scale * rng.standard_normal(n)
        return x


def make_dag_truth(bundle: StructureBundle, seed: int = 0, hidden: int = 10) -> DagTruth:
    """Randomly seeded DAG simulator for a bundle that carries a DAG."""
    if bundle.dag is None:
        raise InvalidSpec(f"structure {bundle.name!r} has no DAG")
    rng = np.random.default_rng(seed)
    space = bundle.ifm.space
    mean_nets, scale_nets = [], []
    for k in range(bundle.ifm.m):
        t = bundle.dag.targets[k]
        n_sets = space.cardinalities[t] if t is not None else 1
        fan_in = len(bundle.dag.parents[k])
        mean_nets.append(tuple(init_mlp(fan_in, hidden, rng, out_scale=1.0) for _ in range(n_sets)))
        scale_nets.append(tuple(init_mlp(fan_in, hidden, rng, out_scale=0.5) for _ in range(n_sets)))
    return DagTruth(bundle.ifm, bundle.dag, tuple(mean_nets), tuple(scale_nets), seed)


@dataclass(eq=False)
class IfmTruth:
    """A randomly seeded potential model used as a simulator."""

    model: EnergyModel
    seed: int

    @property
    def m(self) -> int:
        return self.model.ifm.m

    @property
    def ifm(self) -> IfmStructure:
        return self.model.ifm

    def baseline(self) -> RegimeVector:
        return self.model.ifm.space.baseline()

    def sample(self, regime: RegimeVector, n: int, seed: int = 0,
               burn: int = 500, thin: int = 5) -> np.ndarray:
        return gibbs_sample(self.model, regime, n, burn=burn, thin=thin, seed=seed)


def make_ifm_truth(bundle: StructureBundle, seed: int = 0, bins: int = 20,
                   span: float = 2.5, hidden: int = 15, scale: float = 1.0) -> IfmTruth:
    """Potential-model simulator over the bundle's own factors.

    The grid is fixed at `bins` uniform bins on [-span, span] per variable;
    `scale` sets the spread of the random output layers, and with it how
    strongly level patterns interact.
    """
    edges = tuple(np.linspace(-span, span, bins + 1) for _ in range(bundle.ifm.m))
    model = new_model(bundle.ifm, Grid(edges), hidden=hidden, seed=seed, out_scale=scale)
    return IfmTruth(model, seed)


def sample_truth(truth, regime: RegimeVector, n: int, seed: int = 0, **opts) -> np.ndarray:
    """Draw n rows from either simulator under the given regime."""
    return truth.sample(regime, n, seed=seed, **opts)


@dataclass(eq=False)
class OutcomeTruth:
    """y = tanh(lam . x) + noise with a fixed noise standard deviation."""

    lam: np.ndarray
    noise_sd: float
    seed: int

    def mean(self, x) -> np.ndarray:
        return np.tanh(np.atleast_2d(np.asarray(x, dtype=float)) @ self.lam)

    def draw(self, x, rng: np.random.Generator) -> np.ndarray:
        mu = self.mean(x)
        return mu + self.noise_sd * rng.standard_normal(mu.shape[0])


def make_outcome(truth, seed: int = 0, baseline_x=None, n_calib: int = 20000,
                 signal_range=(0.6, 0.8), preset: str = "additive") -> OutcomeTruth:
    """Random outcome with the signal variance calibrated under baseline.

    The direction lam is standard normal, then rescaled so Var(lam . x) on
    baseline draws hits a target: a uniform draw from `signal_range` with
    noise variance 1 minus the target ("additive" preset), or a uniform
    signal-to-noise ratio in [1.5, 4] with total variance 1 ("ratio").
    Scaling lam by c scales the signal variance by c^2, so one Monte Carlo
    variance estimate calibrates it in closed form.
    """
    rng = np.random.default_rng(seed)
    lam0 = rng.standard_normal(truth.m)
    if preset == "additive":
        signal = rng.uniform(*signal_range)
        v_noise = 1.0 - signal
    elif preset == "ratio":
        ratio = rng.uniform(1.5, 4.0)
        signal = ratio / (1.0 + ratio)
        v_noise = 1.0 / (1.0 + ratio)
    else:
        raise InvalidSpec(f"unknown variance preset {preset!r}")
    if not 0.0 < v_noise:
        raise InvalidSpec("noise variance must be positive")

    if baseline_x is None:
        baseline_x = truth.sample(truth.baseline(), n_calib, seed=int(rng.integers(2 ** 63)))
    s = np.asarray(baseline_x) @ lam0
    var_s = float(s.var())
    if var_s <= 1e-12:
        raise DegenerateVariable("baseline signal variance is zero; cannot calibrate")
    lam = lam0 * np.sqrt(signal / var_s)
    return OutcomeTruth(lam, float(np.sqrt(v_noise)), seed)


def ground_truth_mu(truth, outcome: OutcomeTruth, regime: RegimeVector,
                    nmc: int = 25000, seed: int = 0, **opts):
    """Monte Carlo E[Y; regime]; returns (mu, standard error)."""
    draws = truth.sample(regime, nmc, seed=seed, **opts)
    vals = outcome.mean(draws)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(len(vals)))


def prmse(estimates, truths, truth_variances) -> float:
    """Mean squared estimation error, each entry scaled by the true Var(Y)."""
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truths, dtype=float)
    var = np.asarray(truth_variances, dtype=float)
    if not (est.shape == tru.shape == var.shape) or est.ndim != 1 or est.size == 0:
        raise InvalidSpec("need equal-length non-empty 1-D inputs")
    if np.any(var <= 0):
        raise InvalidSpec("true variances must be positive")
    return float(np.mean((est - tru) ** 2 / var))


def rcor(estimates, truths) -> float:
    """Spearman rank correlation with average ranks on ties."""
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truths, dtype=float)
    if est.shape != tru.shape or est.ndim != 1 or est.size < 2:
        raise InvalidSpec("need two equal-length vectors of length >= 2")
    return float(spearmanr(est, tru).statistic)


def fit_dag(bundle: StructureBundle, datasets, hidden: int = 10, steps: int = 1500,
            lr: float = 1e-2, seed: int = 0) -> DagTruth:
    """Fit DAG location/scale nets by Gaussian likelihood, per local level.

    Each node's parameter set for level v trains on the pooled rows of the
    regimes whose target intervention sits at v; untargeted nodes train on
    everything. Scales go through the same softplus floor used in sampling.
    """
    if bundle.dag is None:
        raise InvalidSpec(f"structure {bundle.name!r} has no DAG")
    rng = np.random.default_rng(seed)
    space = bundle.ifm.space
    mean_nets, scale_nets = [], []
    for k in range(bundle.ifm.m):
        t = bundle.dag.targets[k]
        n_sets = space.cardinalities[t] if t is not None else 1
        fan_in = len(bundle.dag.parents[k])
        means, scales = [], []
        for level in range(n_sets):
            rows_x, rows_t = [], []
            for ds in datasets:
                local = ds.regime[t] if t is not None else 0
                if local == level:
                    rows_x.append(ds.x[:, bundle.dag.parents[k]])
                    rows_t.append(ds.x[:, k])
            mnet = init_mlp(fan_in, hidden, rng, out_scale=0.0)
            snet = init_mlp(fan_in, hidden, rng, out_scale=0.0)
            if rows_x:
                feats = np.vstack(rows_x)
                tvals = np.concatenate(rows_t)
                opt = Adam(mnet.params() + snet.params(), lr=lr)
                for step in range(steps):
                    mu, hm = mlp_forward(mnet, feats)
                    raw, hs = mlp_forward(snet, feats)
                    g = _softplus(raw) + _SCALE_FLOOR
                    resid = tvals - mu
                    nll = float(np.sum(np.log(g) + 0.5 * (resid / g) ** 2))
                    if not np.isfinite(nll):
                        raise NonFinite(f"node {k} likelihood diverged (step {step})")
                    dmu = -(resid / g ** 2) / len(tvals)
                    draw_ = (1.0 / g - resid ** 2 / g ** 3) * expit(raw) / len(tvals)
                    grads = mlp_backward(mnet, feats, hm, dmu) + mlp_backward(snet, feats, hs, draw_)
                    opt.step(grads)
            means.append(mnet)
            scales.append(snet)
        mean_nets.append(tuple(means))
        scale_nets.append(tuple(scales))
    return DagTruth(bundle.ifm, bundle.dag, tuple(mean_nets), tuple(scale_nets), seed)


def _ridge_fit(levels_rows: np.ndarray, y: np.ndarray, penalty: float) -> np.ndarray:
    """Closed-form ridge of y on intervention levels, intercept unpenalized."""
    phi = np.column_stack([np.ones(len(y)), levels_rows])
    reg = penalty * np.eye(phi.shape[1])
    reg[0, 0] = 0.0
    return np.linalg.solve(phi.T @ phi + reg, phi.T @ y)


DEFAULT_CONFIG = {
    "structure": "chain3",
    "truth": "ifm",
    "seed": 0,
    "n_problems": 100,
    "methods": ["ifm_direct", "ifm_ipw", "ifm_covshift", "ridge"],
    "n_baseline": 5000,
    "n_regime": 500,
    "mc_samples": 25000,
    "bins": 20,
    "hidden": 15,
    "fit_steps": 1500,
    "fit_lr": 1e-3,
    "outcome_hidden": 15,
    "outcome_steps": 1500,
    "outcome_lr": 1e-2,
    "gibbs_n": 5000,
    "gibbs_burn": 500,
    "gibbs_thin": 5,
    "truth_burn": 500,
    "truth_thin": 5,
    "ridge_penalty": 1.0,
    "dag_hidden": 10,
    "dag_steps": 1500,
    "dag_lr": 1e-2,
    "signal_range": [0.6, 0.8],
    "variance_preset": "additive",
    "truth_scale": 1.0,
    "truth_hidden": 15,
    "truth_bins": 20,
    "truth_span": 2.5,
}

_METHODS = ("ifm_direct", "ifm_ipw", "ifm_covshift", "ridge", "dag_direct")


def resolve_config(config: dict) -> dict:
    """Overlay user settings on the defaults, rejecting unknown keys."""
    unknown = set(config) - set(DEFAULT_CONFIG)
    if unknown:
        raise InvalidSpec(f"unknown benchmark config keys: {sorted(unknown)}")
    cfg = dict(DEFAULT_CONFIG)
    cfg.update(config)
    cfg["methods"] = list(cfg["methods"])
    for meth in cfg["methods"]:
        if meth not in _METHODS:
            raise InvalidSpec(f"unknown method {meth!r}; choose from {_METHODS}")
    if cfg["truth"] not in ("ifm", "dag"):
        raise InvalidSpec("truth must be 'ifm' or 'dag'")
    return cfg


@dataclass
class BenchmarkReport:
    """Full run record; `data` is JSON-ready, csv_rows mirror the estimates."""

    data: dict
    csv_rows: list

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True)

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["problem", "method", "regime", "mu_hat", "mu_true", "var_true"])
            for row in self.csv_rows:
                writer.writerow([row[0], row[1], row[2]] + [repr(float(v)) for v in row[3:]])


@contextmanager
def _stage(name: str):
    """Prefix escaping errors with the pipeline stage that raised them."""
    try:
        yield
    except Exception as exc:
        exc.args = (f"{name}: {exc}",) + exc.args[1:]
        raise


def _regime_key(regime: RegimeVector) -> str:
    return ",".join(str(v) for v in regime.levels)


_SHARED = None


def _set_shared(shared):
    global _SHARED
    _SHARED = shared


def _run_problem(args):
    """One outcome problem end to end; reads the shared fitted state."""
    p, seeds = args
    sh = _SHARED
    cfg = sh["cfg"]
    bundle = sh["bundle"]
    truth = sh["truth"]
    targets = sh["targets"]

    with _stage(f"problem {p}: draw outcomes"):
        outcome = make_outcome(
            truth, seeds["outcome"], baseline_x=sh["calib_x"],
            signal_range=tuple(cfg["signal_range"]), preset=cfg["variance_preset"],
        )
        rng_y = np.random.default_rng(seeds["noise"])
        datasets_y = []
        for ds in sh["datasets"]:
            datasets_y.append(RegimeDataset(ds.regime, ds.x, outcome.draw(ds.x, rng_y)))

    mu_true, var_true = {}, {}
    for t in targets:
        vals = outcome.mean(sh["mc_x"][t])
        mu_true[t] = float(vals.mean())
        var_true[t] = float(vals.var()) + outcome.noise_sd ** 2

    methods = {}
    onet = None
    if {"ifm_direct", "dag_direct"} & set(cfg["methods"]):
        with _stage(f"problem {p}: fit outcome net"):
            onet = estimators.fit_outcome(
                datasets_y, hidden=cfg["outcome_hidden"], steps=cfg["outcome_steps"],
                lr=cfg["outcome_lr"], seed=seeds["outcome_fit"],
            )
    for meth in cfg["methods"]:
        est = {}
        with _stage(f"problem {p}: estimate with {meth}"):
            if meth == "ifm_direct":
                for t in targets:
                    est[t] = float(estimators.predict_outcome(onet, sh["draws_fit"][t]).mean())
            elif meth == "ifm_ipw":
                for t in targets:
                    est[t] = estimators.estimate_ipw(sh["model"], datasets_y, t).mu
            elif meth == "ifm_covshift":
                shift_rng = np.random.default_rng(seeds["covshift"])
                for t in targets:
                    weights = [
                        estimators.regime_weights(sh["model"], ds, t) for ds in datasets_y
                    ]
                    refit = estimators.fit_outcome(
                        datasets_y, hidden=cfg["outcome_hidden"], steps=cfg["outcome_steps"],
                        lr=cfg["outcome_lr"], seed=int(shift_rng.integers(2 ** 63)),
                        weights=weights,
                    )
                    est[t] = float(estimators.predict_outcome(refit, sh["draws_fit"][t]).mean())
            elif meth == "ridge":
                rows = np.vstack([
                    np.tile(np.asarray(ds.regime.levels, dtype=float), (ds.n, 1))
                    for ds in datasets_y
                ])
                beta = _ridge_fit(rows, np.concatenate([ds.y for ds in datasets_y]),
                                  cfg["ridge_penalty"])
                for t in targets:
                    est[t] = float(beta[0] + np.asarray(t.levels, dtype=float) @ beta[1:])
            elif meth == "dag_direct":
                for t in targets:
                    est[t] = float(estimators.predict_outcome(onet, sh["draws_dag"][t]).mean())

        entry = {"estimates": {_regime_key(t): est[t] for t in targets}}
        if targets:
            ests = [est[t] for t in targets]
            trus = [mu_true[t] for t in targets]
            entry["prmse"] = prmse(ests, trus, [var_true[t] for t in targets])
            entry["rcor"] = rcor(ests, trus) if len(targets) >= 2 else None
        else:
            entry["prmse"] = None
            entry["rcor"] = None
        methods[meth] = entry

    return {
        "problem": p,
        "truth": {
            _regime_key(t): {"mu": mu_true[t], "var": var_true[t]} for t in targets
        },
        "methods": methods,
    }


def run_benchmark(config: dict, jobs: int = 1) -> BenchmarkReport:
    """Run the full pipeline for a config; deterministic given the config.

    Stages: build the structure, seed the truth, certify every test regime
    (unidentifiable ones are reported, never scored), simulate training X
    once, fit the density model once, then score `n_problems` independent
    outcome problems. With jobs > 1 problems run in worker processes; the
    merge is by problem index so the report does not depend on jobs.
    """
    cfg = resolve_config(config)
    t_start = time.perf_counter()
    bundle = builtin_structure(cfg["structure"])
    if "dag_direct" in cfg["methods"] and bundle.dag is None:
        raise InvalidSpec(f"dag_direct needs a DAG; {bundle.name!r} has none")

    seeder = np.random.default_rng(cfg["seed"])

    def draw_seed() -> int:
        return int(seeder.integers(2 ** 63))

    # seeds are drawn in one fixed order so runs are reproducible
    truth_seed = draw_seed()
    data_seeds = [draw_seed() for _ in bundle.train]
    fit_seed = draw_seed()
    calib_seed = draw_seed()
    mc_seeds = [draw_seed() for _ in bundle.test]
    gibbs_seeds = [draw_seed() for _ in bundle.test]
    dag_fit_seed = draw_seed()
    problem_seeds = [
        {
            "outcome": draw_seed(),
            "noise": draw_seed(),
            "outcome_fit": draw_seed(),
            "covshift": draw_seed(),
        }
        for _ in range(cfg["n_problems"])
    ]

    with _stage("build truth"):
        if cfg["truth"] == "ifm":
            truth = make_ifm_truth(
                bundle, truth_seed, bins=cfg["truth_bins"], span=cfg["truth_span"],
                hidden=cfg["truth_hidden"], scale=cfg["truth_scale"],
            )
            samp_opts = {"burn": cfg["truth_burn"], "thin": cfg["truth_thin"]}
        else:
            truth = make_dag_truth(bundle, truth_seed, hidden=cfg["dag_hidden"])
            samp_opts = {}

    with _stage("certify test regimes"):
        norm = normalize_factors(bundle.ifm)
        targets, unidentifiable = [], []
        for t in bundle.test:
            result = algebraic.solve_pr(norm, bundle.train, t)
            if isinstance(result, algebraic.PrTransformation):
                targets.append(t)
            else:
                unidentifiable.append({"regime": _regime_key(t), "reason": result.reason})

    with _stage("simulate training data"):
        datasets = []
        for regime, dseed in zip(bundle.train, data_seeds):
            n = cfg["n_baseline"] if regime.is_baseline() else cfg["n_regime"]
            datasets.append(RegimeDataset(regime, truth.sample(regime, n, seed=dseed, **samp_opts)))

    with _stage("fit density model"):
        grid = discretize(datasets, bins=cfg["bins"])
        model0 = new_model(bundle.ifm, grid, hidden=cfg["hidden"], seed=fit_seed)
        model, _fitlog = fit_energy(model0, datasets, steps=cfg["fit_steps"], lr=cfg["fit_lr"])

    with _stage("draw evaluation samples"):
        calib_x = truth.sample(truth.baseline(), cfg["mc_samples"], seed=calib_seed, **samp_opts)
        mc_x, draws_fit, draws_dag = {}, {}, {}
        for t, ms, gs in zip(targets, mc_seeds, gibbs_seeds):
            mc_x[t] = truth.sample(t, cfg["mc_samples"], seed=ms, **samp_opts)
            draws_fit[t] = gibbs_sample(
                model, t, cfg["gibbs_n"], burn=cfg["gibbs_burn"],
                thin=cfg["gibbs_thin"], seed=gs,
            )
        if "dag_direct" in cfg["methods"]:
            fitted_dag = fit_dag(
                bundle, datasets, hidden=cfg["dag_hidden"], steps=cfg["dag_steps"],
                lr=cfg["dag_lr"], seed=dag_fit_seed,
            )
            for t, gs in zip(targets, gibbs_seeds):
                draws_dag[t] = fitted_dag.sample(t, cfg["gibbs_n"], seed=gs)

    shared = {
        "cfg": cfg,
        "bundle": bundle,
        "truth": truth,
        "targets": targets,
        "datasets": datasets,
        "model": model,
        "calib_x": calib_x,
        "mc_x": mc_x,
        "draws_fit": draws_fit,
        "draws_dag": draws_dag,
    }
    tasks = list(zip(range(cfg["n_problems"]), problem_seeds))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_set_shared,
                                 initargs=(shared,)) as pool:
            problems = list(pool.map(_run_problem, tasks))
    else:
        _set_shared(shared)
        problems = [_run_problem(task) for task in tasks]
    problems.sort(key=lambda entry: entry["problem"])

    summary = {}
    for meth in cfg["methods"]:
        pr = [pb["methods"][meth]["prmse"] for pb in problems if pb["methods"][meth]["prmse"] is not None]
        rc = [pb["methods"][meth]["rcor"] for pb in problems if pb["methods"][meth]["rcor"] is not None]
        summary[meth] = {
            "prmse_mean": float(np.mean(pr)) if pr else None,
            "prmse_median": float(np.median(pr)) if pr else None,
            "rcor_mean": float(np.mean(rc)) if rc else None,
        }

    csv_rows = []
    for pb in problems:
        for meth in cfg["methods"]:
            for t in targets:
                key = _regime_key(t)
                csv_rows.append((
                    pb["problem"], meth, key,
                    pb["methods"][meth]["estimates"][key],
                    pb["truth"][key]["mu"],
                    pb["truth"][key]["var"],
                ))

    data = {
        "format": REPORT_FORMAT,
        "format_version": REPORT_FORMAT_VERSION,
        "config": cfg,
        "structure": bundle.name,
        "train_regimes": [_regime_key(r) for r in bundle.train],
        "test_regimes": [_regime_key(r) for r in bundle.test],
        "scored_regimes": [_regime_key(t) for t in targets],
        "unidentifiable": unidentifiable,
        "problems": problems,
        "summary": summary,
        "runtime_seconds": time.perf_counter() - t_start,
    }
    return BenchmarkReport(data, csv_rows)
