"""Drawing from a fitted model: exact enumeration for small grids, Gibbs
sampling everywhere else.

Conditionals of one variable given the rest involve only the factors that
read it, so each Gibbs update sums a handful of precomputed factor tables
along one axis, normalizes over that variable's bins, and draws.
"""

from __future__ import annotations

import numpy as np

from .energy import EnergyModel
from .errors import GridTooLarge, InvalidSpec
from .model import RegimeVector
from .nets import mlp_forward

CELL_CAP = 1_000_000


def _factor_table(model: EnergyModel, k: int, regime: RegimeVector) -> np.ndarray:
    """Potential of factor k over the full grid of the variables it reads."""
    f = model.ifm.factors[k]
    centers = [model.grid.centers[j] for j in f.var_scope]
    mesh = np.meshgrid(*centers, indexing="ij")
    feats = np.column_stack([g.reshape(-1) for g in mesh])
    vals, _ = mlp_forward(model.net_for(k, regime), feats)
    return vals.reshape([c.size for c in centers])


def exact_density(model: EnergyModel, regime: RegimeVector, cap: int = CELL_CAP) -> np.ndarray:
    """Normalized probability table over the full grid, cell count capped.

    Returns an array with one axis per variable, summing to 1, obtained by
    broadcasting every factor table into the joint log table and taking a
    softmax over all cells.
    """
    model.ifm.space.check_regime(regime)
    nbins = model.grid.nbins
    cells = 1
    for b in nbins:
        cells *= b
    if cells > cap:
        raise GridTooLarge(f"{cells} cells exceed the cap of {cap}")

    logp = np.zeros(nbins)
    for k, f in enumerate(model.ifm.factors):
        table = _factor_table(model, k, regime)
        shape = [nbins[j] if j in f.var_scope else 1 for j in range(model.ifm.m)]
        logp += table.reshape(shape)
    logp -= logp.max()
    p = np.exp(logp)
    p /= p.sum()
    return p


def gibbs_sample(model: EnergyModel, regime: RegimeVector, n: int,
                 burn: int = 500, thin: int = 5, seed: int = 0,
                 table_cap: int = 200_000) -> np.ndarray:
    """Systematic-scan Gibbs sampler; returns (n, m) rows of bin centers.

    One scan updates variables 0..m-1 in order from their full conditionals.
    The first `burn` scans are discarded, then every `thin`-th scan is kept.
    The chain starts from every variable's middle bin and is a deterministic
    function of the seed. Factor tables are precomputed when they fit under
    `table_cap` cells; larger factors are evaluated on the fly.

    Args:
        model: fitted (or constructed) energy model.
        regime: intervention levels to sample under.
        n: number of rows to return.
        burn: scans discarded before collecting.
        thin: scans between kept rows (>= 1).
        seed: generator seed.
    """
    model.ifm.space.check_regime(regime)
    if n < 1:
        raise InvalidSpec("need n >= 1 samples")
    if burn < 0 or thin < 1:
        raise InvalidSpec("need burn >= 0 and thin >= 1")

    m = model.ifm.m
    nbins = model.grid.nbins
    centers = model.grid.centers
    rng = np.random.default_rng(seed)

    # per variable: the factors reading it, with either a table or the net
    plans = []
    for r in range(m):
        entries = []
        for k, f in enumerate(model.ifm.factors):
            if r not in f.var_scope:
                continue
            size = 1
            for j in f.var_scope:
                size *= nbins[j]
            if size <= table_cap:
                entries.append((f.var_scope, f.var_scope.index(r), _factor_table(model, k, regime), None))
            else:
                entries.append((f.var_scope, f.var_scope.index(r), None, model.net_for(k, regime)))
        plans.append(entries)

    state = np.array([b // 2 for b in nbins], dtype=int)
    out = np.empty((n, m))
    kept = 0
    scan = 0
    while kept < n:
        scan += 1
        for r in range(m):
            logits = np.zeros(nbins[r])
            for scope, pos, table, net in plans[r]:
                if table is not None:
                    idx = tuple(
                        slice(None) if j == pos else state[scope[j]]
                        for j in range(len(scope))
                    )
                    logits += table[idx]
                else:
                    feats = np.tile(
                        np.array([centers[j][state[j]] for j in scope]), (nbins[r], 1)
                    )
                    feats[:, pos] = centers[r]
                    logits += mlp_forward(net, feats)[0]
            logits -= logits.max()
            probs = np.exp(logits)
            cum = np.cumsum(probs)
            # rounding can push u onto cum[-1]; keep the index in range
            u = rng.random() * cum[-1]
            state[r] = min(int(np.searchsorted(cum, u, side="right")), nbins[r] - 1)
        if scan > burn and (scan - burn) % thin == 0:
            out[kept] = [centers[j][state[j]] for j in range(m)]
            kept += 1
    return out
