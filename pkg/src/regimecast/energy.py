"""Discretized product-of-potentials density model with switched parameters.

Variables are binned on a per-variable grid; each factor contributes one
scalar potential net per level pattern of the interventions that switch it,
evaluated on the bin centers of the variables it reads. The unnormalized
log density under a regime is the sum of the selected potentials. Training
maximizes the sum over rows and variables of the log conditional of each
variable given the rest, which needs no partition function: the conditional
normalizes over one variable's grid using only the factors that read it.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateVariable, InvalidSpec, ModelFormatError, NonFinite
from .fileio import fingerprint, graph_to_dict, parse_graph
from .model import IfmStructure, RegimeVector
from .nets import (
    Adam,
    Mlp,
    init_mlp,
    mlp_backward,
    mlp_forward,
    mlp_from_dict,
    mlp_to_dict,
    zero_grads,
)

MODEL_FORMAT = "regimecast-energy-model"
FORMAT_VERSION = 1

# one potential net per (factor, level pattern); the net itself is a plain MLP
PotentialNet = Mlp


@dataclass(frozen=True, eq=False)
class Grid:
    """Per-variable bin edges; bins are half-open, the last one closed."""

    edges: tuple

    def __post_init__(self):
        edges = []
        centers = []
        for e in self.edges:
            e = np.asarray(e, dtype=float).copy()
            if e.ndim != 1 or e.size < 2:
                raise InvalidSpec("each variable needs at least one bin (two edges)")
            if not np.all(np.isfinite(e)) or not np.all(np.diff(e) > 0):
                raise InvalidSpec("bin edges must be finite and strictly increasing")
            e.flags.writeable = False
            c = 0.5 * (e[:-1] + e[1:])
            c.flags.writeable = False
            edges.append(e)
            centers.append(c)
        object.__setattr__(self, "edges", tuple(edges))
        object.__setattr__(self, "centers", tuple(centers))

    @property
    def m(self) -> int:
        return len(self.edges)

    @property
    def nbins(self) -> tuple:
        return tuple(e.size - 1 for e in self.edges)

    def bin_rows(self, x: np.ndarray) -> np.ndarray:
        """Map raw rows (n, m) to bin indices; out-of-range values clip."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.m:
            raise InvalidSpec(f"rows have {x.shape[1]} columns, grid has {self.m}")
        out = np.empty(x.shape, dtype=int)
        for j, e in enumerate(self.edges):
            out[:, j] = np.clip(np.searchsorted(e, x[:, j], side="right") - 1, 0, e.size - 2)
        return out

    def center_rows(self, bins: np.ndarray, scope=None) -> np.ndarray:
        """Bin-center values for the given columns (all variables by default)."""
        cols = range(self.m) if scope is None else scope
        return np.column_stack([self.centers[j][bins[:, j]] for j in cols])


def discretize(datasets, bins: int = 20) -> Grid:
    """Uniform per-variable grids spanning the pooled range of the datasets."""
    if bins < 1:
        raise InvalidSpec("need at least one bin")
    if not datasets:
        raise InvalidSpec("need at least one dataset")
    x = np.vstack([ds.x for ds in datasets])
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    edges = []
    for j in range(x.shape[1]):
        if hi[j] <= lo[j]:
            raise DegenerateVariable(f"variable {j} has zero observed range")
        edges.append(np.linspace(lo[j], hi[j], bins + 1))
    return Grid(tuple(edges))


@dataclass(eq=False)
class EnergyModel:
    """Potential nets keyed by (factor index, level pattern over its scope)."""

    ifm: IfmStructure
    grid: Grid
    hidden: int
    nets: dict
    seed: int

    def net_for(self, k: int, regime: RegimeVector) -> Mlp:
        return self.nets[(k, regime.project(self.ifm.factors[k].intv_scope))]

    def copy(self) -> "EnergyModel":
        return EnergyModel(
            self.ifm, self.grid, self.hidden,
            {key: net.copy() for key, net in self.nets.items()}, self.seed,
        )


def expected_net_keys(ifm: IfmStructure) -> list:
    keys = []
    for k, f in enumerate(ifm.factors):
        for value in itertools.product(*[range(ifm.space.cardinalities[j]) for j in f.intv_scope]):
            keys.append((k, value))
    return keys


def new_model(ifm: IfmStructure, grid: Grid, hidden: int = 15, seed: int = 0,
              out_scale: float = 0.0) -> EnergyModel:
    """Fresh model; with out_scale 0 every regime starts exactly uniform."""
    if grid.m != ifm.m:
        raise InvalidSpec(f"grid covers {grid.m} variables, structure has {ifm.m}")
    if hidden < 1:
        raise InvalidSpec("hidden width must be >= 1")
    rng = np.random.default_rng(seed)
    nets = {}
    for key in expected_net_keys(ifm):
        k = key[0]
        nets[key] = init_mlp(len(ifm.factors[k].var_scope), hidden, rng, out_scale=out_scale)
    return EnergyModel(ifm, grid, hidden, nets, seed)


def _check_bins(model: EnergyModel, x_bins) -> np.ndarray:
    bins = np.atleast_2d(np.asarray(x_bins, dtype=int))
    if bins.shape[1] != model.ifm.m:
        raise InvalidSpec(f"bin rows have {bins.shape[1]} columns, expected {model.ifm.m}")
    for j, b in enumerate(model.grid.nbins):
        col = bins[:, j]
        if col.min() < 0 or col.max() >= b:
            raise InvalidSpec(f"bin index out of range for variable {j}")
    return bins


def log_unnorm(model: EnergyModel, x_bins, regime: RegimeVector):
    """Unnormalized log density of binned rows under the given regime.

    Accepts one row (m,) or a matrix (n, m) of bin indices; returns a float
    or an (n,) array accordingly.
    """
    model.ifm.space.check_regime(regime)
    single = np.asarray(x_bins).ndim == 1
    bins = _check_bins(model, x_bins)
    out = np.zeros(bins.shape[0])
    for k, f in enumerate(model.ifm.factors):
        net = model.net_for(k, regime)
        vals, _ = mlp_forward(net, model.grid.center_rows(bins, f.var_scope))
        out += vals
    return float(out[0]) if single else out


def _swept_design(grid: Grid, bins: np.ndarray, scope, r: int) -> np.ndarray:
    """Inputs for one factor with variable r swept over its whole grid.

    Row blocks are per data row, candidate bin cycling fastest, matching
    reshape(n, nbins[r]) downstream.
    """
    n = bins.shape[0]
    br = grid.nbins[r]
    x = np.repeat(grid.center_rows(bins, scope), br, axis=0)
    x[:, list(scope).index(r)] = np.tile(grid.centers[r], n)
    return x


def _prepare(model: EnergyModel, datasets) -> list:
    """Per dataset and variable, the swept designs of every factor reading it."""
    prep = []
    for ds in datasets:
        model.ifm.space.check_regime(ds.regime)
        if ds.x.shape[1] != model.ifm.m:
            raise InvalidSpec("dataset width does not match the structure")
        bins = model.grid.bin_rows(ds.x)
        per_var = []
        for r in range(model.ifm.m):
            entries = []
            for k, f in enumerate(model.ifm.factors):
                if r not in f.var_scope:
                    continue
                key = (k, ds.regime.project(f.intv_scope))
                entries.append((key, _swept_design(model.grid, bins, f.var_scope, r)))
            per_var.append((r, bins[:, r].copy(), entries))
        prep.append(per_var)
    return prep


def _slice_prep(prep, row_sets) -> list:
    """Restrict prepared designs to chosen rows (for minibatch steps)."""
    out = []
    for per_var, rows in zip(prep, row_sets):
        sliced = []
        for r, obs, entries in per_var:
            n = obs.shape[0]
            cut = []
            for key, x in entries:
                br = x.shape[0] // n
                cut.append((key, x.reshape(n, br, -1)[rows].reshape(len(rows) * br, -1)))
            sliced.append((r, obs[rows], cut))
        out.append(sliced)
    return out


def _pll_from_prep(model: EnergyModel, prep, want_grad: bool):
    total = 0.0
    grads = {key: zero_grads(net) for key, net in model.nets.items()} if want_grad else None
    for per_var in prep:
        for r, obs, entries in per_var:
            n = obs.shape[0]
            br = model.grid.nbins[r]
            logits = np.zeros((n, br))
            caches = []
            for key, x in entries:
                net = model.nets[key]
                vals, h = mlp_forward(net, x)
                logits += vals.reshape(n, br)
                if want_grad:
                    caches.append((key, net, x, h))
            lse = logsumexp(logits, axis=1)
            rows = np.arange(n)
            total += float(np.sum(logits[rows, obs] - lse))
            if want_grad:
                dl = -np.exp(logits - lse[:, None])
                dl[rows, obs] += 1.0
                dout = dl.reshape(-1)
                for key, net, x, h in caches:
                    for acc, g in zip(grads[key], mlp_backward(net, x, h, dout)):
                        acc += g
    if not np.isfinite(total):
        raise NonFinite("pseudo-log-likelihood is not finite")
    if want_grad:
        for key, gs in grads.items():
            for g in gs:
                if not np.all(np.isfinite(g)):
                    raise NonFinite(f"gradient for net {key} is not finite")
    return total, grads


def pseudo_loglik(model: EnergyModel, datasets) -> float:
    """Sum over datasets, rows, and variables of log p(x_r | rest; regime)."""
    return _pll_from_prep(model, _prepare(model, datasets), False)[0]


def pll_gradient(model: EnergyModel, datasets) -> dict:
    """Exact gradient of pseudo_loglik per net, keyed like model.nets."""
    return _pll_from_prep(model, _prepare(model, datasets), True)[1]


@dataclass(frozen=True)
class FitLog:
    """Objective trace; `regressions` flags epochs that dropped by > 1e-3."""

    objectives: tuple
    regressions: tuple
    steps: int
    lr: float
    batch: int | None


def fit(model: EnergyModel, datasets, steps: int = 500, lr: float = 1e-3,
        batch: int | None = None, seed: int = 0):
    """Ascend the pseudo-log-likelihood with Adam; returns (model, FitLog).

    The input model is untouched; a copy is trained. Full-batch by default,
    in which case one step is one epoch. With `batch` set, each step draws
    that many rows (without replacement) from every dataset using the given
    seed, and the full objective is logged once per epoch.

    Args:
        model: initialized model to start from.
        datasets: RegimeDataset list covering the training regimes.
        steps: number of Adam updates.
        lr: Adam learning rate (beta1 0.9, beta2 0.999, eps 1e-8).
        batch: rows per dataset per step; None means all rows.
        seed: minibatch shuffling seed; unused in full-batch mode.

    Raises:
        NonFinite: objective or gradient became NaN/inf (step reported).
    """
    trained = model.copy()
    keys = sorted(trained.nets)
    params = [p for key in keys for p in trained.nets[key].params()]
    opt = Adam(params, lr=lr, maximize=True)
    prep = _prepare(trained, datasets)
    rng = np.random.default_rng(seed)
    sizes = [per_var[0][1].shape[0] if per_var else 0 for per_var in prep]

    objectives = []
    regressions = []

    def log_obj(value):
        if objectives and value < objectives[-1] - 1e-3:
            regressions.append(len(objectives))
        objectives.append(value)

    if batch is None:
        for step in range(steps):
            try:
                obj, grads = _pll_from_prep(trained, prep, True)
            except NonFinite as exc:
                raise NonFinite(f"{exc} (step {step})") from None
            log_obj(obj)
            opt.step([g for key in keys for g in grads[key]])
        objectives_full = objectives
    else:
        if batch < 1:
            raise InvalidSpec("batch must be >= 1")
        per_epoch = max(1, -(-max(sizes) // batch))
        for step in range(steps):
            rows = [rng.choice(n, size=min(batch, n), replace=False) for n in sizes]
            sub = _slice_prep(prep, rows)
            try:
                _, grads = _pll_from_prep(trained, sub, True)
            except NonFinite as exc:
                raise NonFinite(f"{exc} (step {step})") from None
            opt.step([g for key in keys for g in grads[key]])
            if (step + 1) % per_epoch == 0 or step + 1 == steps:
                log_obj(_pll_from_prep(trained, prep, False)[0])
        objectives_full = objectives

    if not objectives_full:
        objectives_full = [_pll_from_prep(trained, prep, False)[0]]
    return trained, FitLog(tuple(objectives_full), tuple(regressions), steps, lr, batch)


def log_ratio_rows(model: EnergyModel, x, num: RegimeVector, den: RegimeVector) -> np.ndarray:
    """Log unnormalized density ratio, row-wise; basis for stable reweighting."""
    model.ifm.space.check_regime(num)
    model.ifm.space.check_regime(den)
    xm = np.atleast_2d(np.asarray(x, dtype=float))
    bins = model.grid.bin_rows(xm)
    delta = np.zeros(bins.shape[0])
    for k, f in enumerate(model.ifm.factors):
        key_n = (k, num.project(f.intv_scope))
        key_d = (k, den.project(f.intv_scope))
        if key_n == key_d:
            continue
        feats = model.grid.center_rows(bins, f.var_scope)
        delta += mlp_forward(model.nets[key_n], feats)[0]
        delta -= mlp_forward(model.nets[key_d], feats)[0]
    return delta


def density_ratio(model: EnergyModel, x, num: RegimeVector, den: RegimeVector):
    """Unnormalized density ratio p(x; num) / p(x; den) for raw rows x.

    Factors whose level pattern agrees under both regimes drop out exactly,
    so regimes differing only in factors that do not read some variables
    give ratios constant in those variables. Normalizing constants are NOT
    included; downstream consumers self-normalize.
    """
    delta = log_ratio_rows(model, x, num, den)
    ratio = np.exp(delta)
    return float(ratio[0]) if np.asarray(x, dtype=float).ndim == 1 else ratio


def model_to_dict(model: EnergyModel) -> dict:
    nets = []
    for key in sorted(model.nets):
        k, value = key
        entry = {"factor": k, "value": list(value)}
        entry.update(mlp_to_dict(model.nets[key]))
        nets.append(entry)
    return {
        "format": MODEL_FORMAT,
        "format_version": FORMAT_VERSION,
        "seed": model.seed,
        "hidden": model.hidden,
        "graph": graph_to_dict(model.ifm),
        "fingerprint": fingerprint(model.ifm),
        "grid": {"edges": [e.tolist() for e in model.grid.edges]},
        "nets": nets,
    }


def model_from_dict(obj: dict) -> EnergyModel:
    if not isinstance(obj, dict) or obj.get("format") != MODEL_FORMAT:
        raise ModelFormatError("not an energy model file")
    if obj.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format_version {obj.get('format_version')!r}")
    ifm = parse_graph(obj["graph"])
    grid = Grid(tuple(np.asarray(e, dtype=float) for e in obj["grid"]["edges"]))
    if grid.m != ifm.m:
        raise ModelFormatError("grid and graph disagree on the variable count")
    nets = {}
    for entry in obj["nets"]:
        nets[(int(entry["factor"]), tuple(int(v) for v in entry["value"]))] = mlp_from_dict(entry)
    expected = expected_net_keys(ifm)
    if sorted(nets) != sorted(expected):
        raise ModelFormatError("net inventory does not match the graph")
    hidden = int(obj["hidden"])
    for key, net in nets.items():
        k = key[0]
        if net.hidden != hidden or net.in_dim != len(ifm.factors[k].var_scope):
            raise ModelFormatError(f"net {key} has the wrong shape")
    return EnergyModel(ifm, grid, hidden, nets, int(obj["seed"]))


def save_model(path, model: EnergyModel) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path) -> EnergyModel:
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"{path}: {exc}") from None
    return model_from_dict(obj)
