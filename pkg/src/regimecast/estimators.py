"""Outcome-mean estimators for a target regime, built on a fitted model.

Three routes to E[Y; target]: average a regression net over model samples
(direct), reweight observed outcomes by density ratios (IPW), or refit the
regression under those weights first (covariate shift). A weighted split
conformal procedure turns the direct estimate into a band whose coverage
holds when the model's density ratios are exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .energy import EnergyModel, log_ratio_rows
from .errors import InsufficientData, InvalidSpec, MissingOutcome, ModelFormatError, NonFinite
from .model import RegimeDataset, RegimeVector
from .nets import Adam, init_mlp, mlp_backward, mlp_forward, mlp_from_dict, mlp_to_dict
from .sampling import gibbs_sample

OUTCOME_FORMAT = "regimecast-outcome-model"
OUTCOME_FORMAT_VERSION = 1


@dataclass(eq=False)
class OutcomeModel:
    """Regression net x -> y over raw (unbinned) variable values."""

    net: object
    m: int
    seed: int


def predict_outcome(outcome: OutcomeModel, x) -> np.ndarray:
    xm = np.atleast_2d(np.asarray(x, dtype=float))
    if xm.shape[1] != outcome.m:
        raise InvalidSpec(f"rows have {xm.shape[1]} columns, model expects {outcome.m}")
    return mlp_forward(outcome.net, xm)[0]


def fit_outcome(datasets, hidden: int = 15, steps: int = 2000, lr: float = 1e-2,
                seed: int = 0, weights=None) -> OutcomeModel:
    """Fit the regression net by (optionally weighted) squared error.

    Rows pool across regimes; `weights`, when given, is one nonnegative
    array per dataset and the loss normalizes by the total weight. The
    output layer starts at zero, so zero steps means the constant 0.
    """
    if not datasets:
        raise InsufficientData("no datasets")
    for ds in datasets:
        if ds.y is None:
            raise MissingOutcome(f"dataset for regime {ds.regime.levels} has no y column")
    m = datasets[0].x.shape[1]
    x = np.vstack([ds.x for ds in datasets])
    y = np.concatenate([ds.y for ds in datasets])
    if weights is None:
        w = np.ones(len(y))
    else:
        if len(weights) != len(datasets):
            raise InvalidSpec("need one weight array per dataset")
        w = np.concatenate([np.asarray(wi, dtype=float).reshape(-1) for wi in weights])
        if w.shape[0] != len(y):
            raise InvalidSpec("weight lengths must match dataset rows")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InvalidSpec("weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0:
        raise InvalidSpec("weights sum to zero")
    w = w / total

    rng = np.random.default_rng(seed)
    net = init_mlp(m, hidden, rng, out_scale=0.0)
    opt = Adam(net.params(), lr=lr)
    for step in range(steps):
        pred, h = mlp_forward(net, x)
        resid = pred - y
        loss = float(np.sum(w * resid * resid))
        if not math.isfinite(loss):
            raise NonFinite(f"outcome loss is not finite (step {step})")
        opt.step(mlp_backward(net, x, h, 2.0 * w * resid))
    return OutcomeModel(net, m, seed)


@dataclass(frozen=True)
class RegimeEstimate:
    """One training regime's reweighted mean and its variance proxy."""

    regime: RegimeVector
    mu: float
    var_proxy: float


@dataclass(frozen=True)
class Estimate:
    """Point estimate of E[Y; target] with a rough standard error."""

    mu: float
    se: float
    per_regime: tuple | None = None


def estimate_direct(model: EnergyModel, outcome: OutcomeModel, target: RegimeVector,
                    nsamples: int = 2000, seed: int = 0, burn: int = 500,
                    thin: int = 5) -> Estimate:
    """Average the outcome net over model samples from the target regime.

    The standard error is the plain Monte Carlo one; Gibbs autocorrelation
    makes it optimistic, which is acceptable for its reporting role.
    """
    draws = gibbs_sample(model, target, nsamples, burn=burn, thin=thin, seed=seed)
    preds = predict_outcome(outcome, draws)
    se = float(preds.std(ddof=1) / np.sqrt(len(preds))) if len(preds) > 1 else 0.0
    return Estimate(float(preds.mean()), se)


def regime_weights(model: EnergyModel, ds, target: RegimeVector) -> np.ndarray:
    """Self-normalized density-ratio weights for one dataset's rows."""
    logr = log_ratio_rows(model, ds.x, target, ds.regime)
    logr = logr - logr.max()
    w = np.exp(logr)
    return w / w.sum()


def estimate_ipw(model: EnergyModel, datasets, target: RegimeVector) -> Estimate:
    """Pool per-regime self-normalized importance-weighted outcome means.

    Each regime contributes mu_i = sum_j y_j w_j with weights summing to 1,
    and a variance proxy v_i = sum_j y_j^2 w_j^2; regimes pool by inverse
    variance. When the target is itself a training regime, its weights are
    uniform and mu_i is the plain sample mean. Regimes with a zero proxy
    (all-zero outcomes) are left out of the pool; if every regime is left
    out the unweighted mean of the mu_i is returned.
    """
    model.ifm.space.check_regime(target)
    if not datasets:
        raise InsufficientData("no datasets")
    per = []
    for ds in datasets:
        if ds.y is None:
            raise MissingOutcome(f"dataset for regime {ds.regime.levels} has no y column")
        w = regime_weights(model, ds, target)
        mu_i = float(np.sum(ds.y * w))
        v_i = float(np.sum((ds.y * w) ** 2))
        per.append(RegimeEstimate(ds.regime, mu_i, v_i))

    usable = [p for p in per if p.var_proxy > 0.0]
    if usable:
        r = np.array([1.0 / p.var_proxy for p in usable])
        mus = np.array([p.mu for p in usable])
        mu = float(np.sum(r * mus) / np.sum(r))
        se = float(np.sqrt(1.0 / np.sum(r)))
    else:
        mu = float(np.mean([p.mu for p in per]))
        se = 0.0
    return Estimate(mu, se, per_regime=tuple(per))


def estimate_covshift(model: EnergyModel, datasets, target: RegimeVector,
                      nsamples: int = 2000, seed: int = 0, burn: int = 500,
                      thin: int = 5, hidden: int = 15, steps: int = 2000,
                      lr: float = 1e-2) -> Estimate:
    """Refit the outcome net under target-regime weights, then average it.

    Rows are reweighted by self-normalized density ratios toward the target
    regime (per regime, as in estimate_ipw) before the squared-error refit,
    then the estimate proceeds as in estimate_direct.
    """
    model.ifm.space.check_regime(target)
    if not datasets:
        raise InsufficientData("no datasets")
    rng = np.random.default_rng(seed)
    fit_seed = int(rng.integers(2 ** 63))
    gibbs_seed = int(rng.integers(2 ** 63))
    weights = [regime_weights(model, ds, target) for ds in datasets]
    outcome = fit_outcome(datasets, hidden=hidden, steps=steps, lr=lr,
                          seed=fit_seed, weights=weights)
    return estimate_direct(model, outcome, target, nsamples=nsamples,
                           seed=gibbs_seed, burn=burn, thin=thin)


@dataclass(frozen=True)
class ConformalBand:
    """Symmetric band center +- half_width at miscoverage level alpha."""

    center: float
    half_width: float
    alpha: float
    n_scores: int

    @property
    def lo(self) -> float:
        return self.center - self.half_width

    @property
    def hi(self) -> float:
        return self.center + self.half_width

    def covers(self, value: float) -> bool:
        return self.lo <= value <= self.hi


def conformal_band(model: EnergyModel, datasets, target: RegimeVector, alpha: float,
                   seed: int = 0, nsamples: int = 2000, burn: int = 500, thin: int = 5,
                   hidden: int = 15, steps: int = 2000, lr: float = 1e-2) -> ConformalBand:
    """Weighted split conformal band for a new outcome under the target regime.

    Rows split in half at random within each regime. The first half fits the
    outcome net, giving one model-based mean per regime and the band center
    for the target. Scores on the second half are absolute residuals against
    their own regime's mean. Each score carries a density-ratio weight toward
    the target, rescaled to sum to the number of scores; the half width is
    the smallest score whose cumulative weight reaches ceil((n2+1)(1-alpha)),
    or infinity when the weights never get there. With uniform weights this
    is the usual split conformal quantile. Coverage is >= 1 - alpha when the
    model's ratios are exact.

    Args:
        model: fitted energy model supplying density ratios and samples.
        datasets: training data with outcomes.
        target: regime the band should cover.
        alpha: miscoverage level in (0, 1).
        seed: drives the split and every sampling step.

    Raises:
        InsufficientData: fewer than 4 pooled rows.
        MissingOutcome: some dataset has no y.
    """
    model.ifm.space.check_regime(target)
    if not 0.0 < alpha < 1.0:
        raise InvalidSpec("alpha must be strictly between 0 and 1")
    if not datasets:
        raise InsufficientData("no datasets")
    for ds in datasets:
        if ds.y is None:
            raise MissingOutcome(f"dataset for regime {ds.regime.levels} has no y column")
    if sum(ds.n for ds in datasets) < 4:
        raise InsufficientData("need at least 4 pooled rows")

    rng = np.random.default_rng(seed)
    fit_parts, score_parts = [], []
    for ds in datasets:
        perm = rng.permutation(ds.n)
        k = ds.n // 2
        if k >= 1:
            score_parts.append((ds.regime, ds.x[perm[:k]], ds.y[perm[:k]]))
        fit_parts.append(RegimeDataset(ds.regime, ds.x[perm[k:]], ds.y[perm[k:]]))

    fit_seed = int(rng.integers(2 ** 63))
    outcome = fit_outcome(fit_parts, hidden=hidden, steps=steps, lr=lr, seed=fit_seed)

    centers = {}
    for ds in datasets:
        centers[ds.regime] = estimate_direct(
            model, outcome, ds.regime, nsamples=nsamples,
            seed=int(rng.integers(2 ** 63)), burn=burn, thin=thin,
        ).mu
    target_mu = estimate_direct(
        model, outcome, target, nsamples=nsamples,
        seed=int(rng.integers(2 ** 63)), burn=burn, thin=thin,
    ).mu

    if not score_parts:
        raise InsufficientData("every regime has a single row; nothing left to score")
    scores = []
    logr = []
    for regime, xs, ys in score_parts:
        scores.append(np.abs(ys - centers[regime]))
        logr.append(log_ratio_rows(model, xs, target, regime))
    scores = np.concatenate(scores)
    logr = np.concatenate(logr)
    n2 = len(scores)

    logr = logr - logr.max()
    w = np.exp(logr)
    w = w / w.sum() * n2

    q = math.ceil((n2 + 1) * (1.0 - alpha))
    order = np.argsort(scores, kind="stable")
    cum = np.cumsum(w[order])
    # tolerance so uniform weights hit integer thresholds despite rounding
    hit = np.nonzero(cum >= q - 1e-9)[0]
    tau = float(scores[order[hit[0]]]) if hit.size else float("inf")
    return ConformalBand(float(target_mu), tau, float(alpha), n2)


def outcome_to_dict(outcome: OutcomeModel) -> dict:
    obj = {
        "format": OUTCOME_FORMAT,
        "format_version": OUTCOME_FORMAT_VERSION,
        "m": outcome.m,
        "seed": outcome.seed,
    }
    obj.update(mlp_to_dict(outcome.net))
    return obj


def outcome_from_dict(obj: dict) -> OutcomeModel:
    if not isinstance(obj, dict) or obj.get("format") != OUTCOME_FORMAT:
        raise ModelFormatError("not an outcome model file")
    if obj.get("format_version") != OUTCOME_FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format_version {obj.get('format_version')!r}")
    net = mlp_from_dict(obj)
    if net.in_dim != int(obj["m"]):
        raise ModelFormatError("net width does not match the variable count")
    return OutcomeModel(net, int(obj["m"]), int(obj["seed"]))


def save_outcome(path, outcome: OutcomeModel) -> None:
    with open(path, "w") as fh:
        json.dump(outcome_to_dict(outcome), fh)


def load_outcome(path) -> OutcomeModel:
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"{path}: {exc}") from None
    return outcome_from_dict(obj)
