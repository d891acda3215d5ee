"""PUCT Monte Carlo Tree Search over residual tensors, plus the outer
decomposition loop that subtracts the chosen factor until the zero tensor or
the step limit.

Rewards are negated costs: every applied factor contributes -1, reaching the
zero tensor contributes 0, truncation at the depth limit contributes minus a
rank upper bound of the leftover residual, and leaf evaluation contributes
minus the guide's rank-to-go estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import SearchError, UsageError
from .oracle import OracleConfig, cached_rank, candidate_factors
from .tensors import (ENTRY_CAP, Decomposition, Factor, apply_factor,
                      canonicalize, factor_line, factor_tensor, is_zero,
                      rank_upper_bound)
from . import model as model_mod
from . import kernels


@dataclass(frozen=True)
class SearchConfig:
    simulations: int = 400
    k: int = 16
    c_puct: float = 1.25
    temperature: float = 1.0
    r_limit: int = 12
    seed: int = 0
    entry_cap: int = ENTRY_CAP
    root_noise: bool = False
    noise_alpha: float = 0.3
    noise_frac: float = 0.25
    # value assumed for an unvisited edge: "optimistic" scores it as zero cost
    # (every child gets one look before any revisit), "mean" scores it with the
    # node's running average so wide flat nodes are not fully swept
    fpu: str = "optimistic"

    def __post_init__(self):
        if not self.simulations >= self.k >= 1:
            raise UsageError("need simulations >= k >= 1")
        if self.r_limit < 1:
            raise UsageError("need r_limit >= 1")
        if self.fpu not in ("optimistic", "mean"):
            raise UsageError(f"unknown fpu mode {self.fpu!r}")


class ModelGuide:
    """Policy/value guidance backed by network parameters."""

    def __init__(self, params):
        self.params = params

    def propose(self, T, step, k, temperature, rng):
        return model_mod.sample_actions(T, step, k, temperature, self.params, rng)

    def value(self, T, step):
        _, v = model_mod.forward(T, step, [], self.params)
        return v


class OracleGuide:
    """Exact guidance for tiny instances, playing the role of the network:
    leaf values come from the brute-force oracle, and priors come from a
    softmax over exact one-step lookahead costs."""

    def __init__(self, cfg: OracleConfig, prior_temp: float = 0.25,
                 lookahead_depth: int = 2):
        self.cfg = cfg
        self.prior_temp = prior_temp
        # cheaper oracle for the one-step lookahead: separating "progress"
        # children only needs ranks up to this depth
        self.look_cfg = replace(cfg, r_max=min(cfg.r_max, lookahead_depth))
        self.factors = candidate_factors(cfg)
        self._propose_cache = {}

    def propose(self, T, step, k, temperature, rng):
        key = T.tobytes()
        cached = self._propose_cache.get(key)
        if cached is not None:
            return cached
        cap = float(self.look_cfg.r_max + 1)
        costs = np.empty(len(self.factors))
        for i, f in enumerate(self.factors):
            child = T - factor_tensor(f)
            if is_zero(child):
                costs[i] = 0.0
            else:
                r = cached_rank(child, self.look_cfg)
                costs[i] = 1.0 + (float(r) if r is not None else cap)
        logits = -costs / self.prior_temp
        p = np.exp(logits - logits.max())
        p /= p.sum()
        out = list(zip(self.factors, p))
        self._propose_cache[key] = out
        return out

    def value(self, T, step):
        # shares the lookahead cache with propose; branches beyond its depth
        # fall back to an upper bound, which only makes them look worse
        r = cached_rank(T, self.look_cfg)
        return float(r) if r is not None else float(rank_upper_bound(T))


class _Node:
    __slots__ = ("factors", "P", "N", "W", "children")

    def __init__(self, factors, priors, children):
        self.factors = factors
        self.P = np.asarray(priors, dtype=np.float64)
        self.N = np.zeros(len(factors), dtype=np.int64)
        self.W = np.zeros(len(factors), dtype=np.float64)
        self.children = children  # child residual tensors

    def q(self, fpu="optimistic"):
        total = self.N.sum()
        q0 = 0.0
        if fpu == "mean" and total > 0:
            q0 = self.W.sum() / total
        return np.where(self.N > 0, self.W / np.maximum(self.N, 1), q0)

    def select(self, c_puct, fpu="optimistic"):
        total = self.N.sum()
        u = c_puct * self.P * np.sqrt(total) / (1.0 + self.N)
        return int(np.argmax(self.q(fpu) + u))


def _expand(T, depth, guide, cfg, rng):
    temperature = cfg.temperature
    for _ in range(3):
        proposed = guide.propose(T, depth, cfg.k, temperature, rng)
        factors, priors, children = [], [], []
        seen = {}
        for f, p in proposed:
            f = canonicalize(f)
            if f in seen:
                priors[seen[f]] += p
                continue
            child, m = kernels.sub_outer3(T, *f.arrays())
            if m > cfg.entry_cap:
                continue
            seen[f] = len(factors)
            factors.append(f)
            priors.append(p)
            children.append(child)
        if factors:
            order = sorted(range(len(factors)), key=lambda i: factors[i])
            priors = np.array([priors[i] for i in order])
            return _Node([factors[i] for i in order], priors / priors.sum(),
                         [children[i] for i in order])
        temperature = max(temperature, 0.25) * 2.0
    raise SearchError("no valid candidate factors after resampling")


def mcts_search(T, depth, guide, cfg: SearchConfig, rng=None):
    """One move: run simulations from the residual T at the given depth and
    return (chosen factor, stats)."""
    if is_zero(T):
        raise UsageError("mcts_search called on the zero tensor")
    if depth >= cfg.r_limit:
        raise UsageError("mcts_search called at the depth limit")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    nodes = {}
    terminal_hits = 0

    root_key = (T.tobytes(), depth)
    for _ in range(cfg.simulations):
        cur_T, cur_depth = T, depth
        path = []
        while True:
            if is_zero(cur_T):
                leaf = 0.0
                terminal_hits += 1
                break
            if cur_depth >= cfg.r_limit:
                leaf = -float(rank_upper_bound(cur_T))
                break
            key = (cur_T.tobytes(), cur_depth)
            node = nodes.get(key)
            if node is None:
                node = _expand(cur_T, cur_depth, guide, cfg, rng)
                if key == root_key and cfg.root_noise:
                    noise = rng.dirichlet([cfg.noise_alpha] * len(node.P))
                    node.P = (1 - cfg.noise_frac) * node.P + cfg.noise_frac * noise
                nodes[key] = node
                leaf = -guide.value(cur_T, cur_depth)
                break
            idx = node.select(cfg.c_puct, cfg.fpu)
            path.append((node, idx))
            cur_T = node.children[idx]
            cur_depth += 1
        g = leaf
        for node, idx in reversed(path):
            g = -1.0 + g
            node.W[idx] += g
            node.N[idx] += 1

    root = nodes[root_key]
    q = root.q()
    best = 0
    for i in range(1, len(root.factors)):
        key_i = (root.N[i], q[i])
        key_b = (root.N[best], q[best])
        if key_i > key_b or (key_i == key_b and root.factors[i] < root.factors[best]):
            best = i
    stats = {
        "simulations": cfg.simulations,
        "terminal_hits": terminal_hits,
        "children": [(f, int(n), float(qq), float(p))
                     for f, n, qq, p in zip(root.factors, root.N, q, root.P)],
    }
    return root.factors[best], stats


def tree_stats(stats) -> str:
    lines = [f"simulations={stats['simulations']} terminal_hits={stats['terminal_hits']}"]
    for f, n, q, p in stats["children"]:
        lines.append(f"child={factor_line(f)} N={n} Q={q:.4f} P={p:.6f}")
    return "\n".join(lines) + "\n"


def decompose(T, guide, cfg: SearchConfig):
    """Repeatedly pick a factor with MCTS and subtract it (the residual
    update loop). Returns (Decomposition, episode log lines)."""
    rng = np.random.default_rng(cfg.seed)
    dec = Decomposition(target=T.copy())
    lines = []
    step = 0
    while not is_zero(dec.residual) and step < cfg.r_limit:
        try:
            f, stats = mcts_search(dec.residual, step, guide, cfg, rng)
        except SearchError:
            retry = replace(cfg, temperature=max(cfg.temperature, 0.5) * 2.0)
            try:
                f, stats = mcts_search(dec.residual, step, guide, retry, rng)
            except SearchError as exc:
                lines.append(f"result=fail rank={len(dec.factors)}")
                raise SearchError(f"step {step}: {exc}") from exc
        visits = ",".join(str(n) for _, n, _, _ in stats["children"])
        nnz = int(np.count_nonzero(dec.residual))
        lines.append(f"step={step} residual_nnz={nnz} chosen={factor_line(f)} visits={visits}")
        dec.push(f, cap=cfg.entry_cap)
        step += 1
    success = is_zero(dec.residual)
    lines.append(f"result={'success' if success else 'fail'} rank={len(dec.factors)}")
    return dec, lines
