"""Brute-force exact rank search on tiny instances.

Iterative deepening over the decomposition length with depth-first
enumeration of canonical factors. Branches are pruned with an exact lower
bound (max unfolding rank over the rationals), which is sound: a residual
whose lower bound exceeds the remaining depth cannot be finished.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import BudgetError, UsageError
from .tensors import ENTRY_CAP, Factor, factor_tensor, is_zero

_rank_cache = {}


@dataclass(frozen=True)
class OracleConfig:
    s: int = 2
    r_max: int = 3
    entries: tuple = (-1, 0, 1)
    canonical_only: bool = True
    budget: int = 1_000_000_000
    entry_cap: int = ENTRY_CAP

    def __post_init__(self):
        if self.s > 3:
            raise UsageError("oracle supports S <= 3 only")
        if self.r_max > 4:
            raise UsageError("oracle supports R_max <= 4 only")

    def check_budget(self):
        n_vec = len(self.entries) ** self.s - 1
        n_canon = n_vec // 2 if self.canonical_only else n_vec
        per_factor = n_canon * n_canon * n_vec
        if per_factor ** self.r_max > self.budget:
            raise BudgetError(f"search space {per_factor}^{self.r_max} exceeds "
                              f"budget {self.budget}")


def _nonzero_vectors(entries, s, canonical):
    out = []
    for vec in itertools.product(entries, repeat=s):
        if not any(vec):
            continue
        if canonical:
            lead = next(x for x in vec if x)
            if lead < 0:
                continue
        out.append(vec)
    return out


def candidate_factors(cfg: OracleConfig):
    """All (canonical) factors over the entry set, sorted for determinism."""
    uv = _nonzero_vectors(cfg.entries, cfg.s, cfg.canonical_only)
    ws = _nonzero_vectors(cfg.entries, cfg.s, False)
    return sorted(Factor(u, v, w) for u in uv for v in uv for w in ws)


def _candidate_tensors(cfg: OracleConfig):
    key = (cfg.s, cfg.entries, cfg.canonical_only)
    cached = _rank_cache.get(("cands", key))
    if cached is None:
        factors = candidate_factors(cfg)
        stack = np.stack([factor_tensor(f) for f in factors])
        cached = (factors, stack)
        _rank_cache[("cands", key)] = cached
    return cached


def _unfolding_lb(T) -> int:
    """Max matrix rank of the three unfoldings: a lower bound on tensor rank."""
    s = T.shape[0]
    mats = np.stack([T.reshape(s, s * s),
                     np.moveaxis(T, 1, 0).reshape(s, s * s),
                     np.moveaxis(T, 2, 0).reshape(s, s * s)]).astype(np.float64)
    return int(np.linalg.matrix_rank(mats).max())


def _batched_lb(diffs) -> np.ndarray:
    """Unfolding lower bound for a stack of residual tensors at once."""
    n, s = diffs.shape[0], diffs.shape[1]
    mats = np.concatenate([
        diffs.reshape(n, s, s * s),
        np.moveaxis(diffs, 2, 1).reshape(n, s, s * s),
        np.moveaxis(diffs, 3, 1).reshape(n, s, s * s),
    ]).astype(np.float64)
    ranks = np.linalg.matrix_rank(mats)
    return ranks.reshape(3, n).max(axis=0)


def brute_force_rank(T, cfg: OracleConfig):
    """Least decomposition length over the oracle's factor set, with one
    witness; None when the rank exceeds r_max."""
    cfg.check_budget()
    if T.shape != (cfg.s,) * 3:
        raise UsageError(f"tensor shape {T.shape} does not match oracle S={cfg.s}")
    if is_zero(T):
        return 0, []
    factors, tensors = _candidate_tensors(cfg)

    def dfs(res, remaining, start):
        diffs = res[None] - tensors[start:]
        ok = np.abs(diffs).max(axis=(1, 2, 3)) <= cfg.entry_cap
        zero_hit = ~diffs.any(axis=(1, 2, 3))
        if zero_hit.any():
            idx = int(np.argmax(zero_hit))
            return [factors[start + idx]]
        if remaining <= 1:
            return None
        lbs = _batched_lb(diffs)
        for idx in np.nonzero(ok & (lbs <= remaining - 1))[0]:
            sub = dfs(diffs[idx], remaining - 1, start + int(idx))
            if sub is not None:
                return [factors[start + int(idx)]] + sub
        return None

    lb0 = _unfolding_lb(T)
    for r in range(max(lb0, 1), cfg.r_max + 1):
        witness = dfs(T, r, 0)
        if witness is not None:
            return r, witness
    return None


def cached_rank(T, cfg: OracleConfig):
    """Memoized rank lookup (None when rank > r_max); used by the exact-value
    search guide."""
    key = (cfg, T.tobytes())
    if key not in _rank_cache:
        res = brute_force_rank(T, cfg)
        _rank_cache[key] = None if res is None else res[0]
    return _rank_cache[key]
