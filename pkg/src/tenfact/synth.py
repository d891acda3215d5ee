"""Synthetic demonstration generation, the redundancy filter, and the two
data augmentations (basis change, order shuffling), plus dataset persistence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (CorruptionError, DegenerateStateError, FormatError,
                     GenerationError, UsageError)
from .tensors import (ENTRY_CAP, Factor, canonicalize, change_of_basis,
                      factor_line, is_canonical, parse_factor_line,
                      random_basis_transform, sum_factors, transform_factors,
                      verify_decomposition)

DATASET_MAGIC = "OPENTENSOR-DEMOS v1"


@dataclass(frozen=True)
class GenParams:
    s: int = 4
    f_max: int = 2
    r_min: int = 3
    r_max: int = 8
    sparsity: float = 0.75
    pool_size: int = 0          # 0 = fresh vectors per factor
    seed: int = 0
    entry_cap: int = ENTRY_CAP
    filter_mode: str = "duplicate"    # "duplicate" | "strict"
    filter_sign: str = "up_to_sign"   # "up_to_sign" | "exact"
    basis_clip: str = "reject"        # "reject" | "keep"
    basis_ops: int = 3

    def __post_init__(self):
        if self.r_min < 1 or self.r_max < self.r_min:
            raise UsageError("need 1 <= r_min <= r_max")
        if not 0.0 <= self.sparsity < 1.0:
            raise UsageError("sparsity must be in [0, 1)")
        if self.filter_mode not in ("duplicate", "strict"):
            raise UsageError(f"unknown filter_mode {self.filter_mode!r}")
        if self.filter_sign not in ("up_to_sign", "exact"):
            raise UsageError(f"unknown filter_sign {self.filter_sign!r}")
        if self.basis_clip not in ("reject", "keep"):
            raise UsageError(f"unknown basis_clip {self.basis_clip!r}")


@dataclass
class Demo:
    tensor: np.ndarray
    factors: tuple
    seed: int = 0
    r_target: int = 0
    lineage: tuple = ("fresh",)
    rejects: int = 0
    rejected_indices: tuple = ()


def sample_vector(params: GenParams, rng):
    """Sparse random vector: each coordinate 0 with prob `sparsity`, else
    uniform over {-f_max..f_max} \\ {0}; never all-zero."""
    nonzero_vals = np.array([x for x in range(-params.f_max, params.f_max + 1) if x],
                            dtype=np.int64)
    while True:
        mask = rng.random(params.s) >= params.sparsity
        if not mask.any():
            continue
        vec = np.where(mask, nonzero_vals[rng.integers(0, len(nonzero_vals), size=params.s)], 0)
        return vec.astype(np.int64)


def make_pool(params: GenParams, rng):
    """Finite vector pool (Theorem-style generation mode)."""
    return [sample_vector(params, rng) for _ in range(params.pool_size)]


def sample_factor(params: GenParams, rng, pool=None) -> Factor:
    if pool is None and params.pool_size > 0:
        raise UsageError("pool_size > 0 requires an explicit pool (make_pool)")
    if pool:
        pick = lambda: pool[int(rng.integers(0, len(pool)))]
    else:
        pick = lambda: sample_vector(params, rng)
    return canonicalize(Factor.make(pick(), pick(), pick()))


def generate_demo(params: GenParams, rng, pool=None, r_target=None, seed=0) -> Demo:
    r = int(r_target) if r_target is not None else int(rng.integers(params.r_min, params.r_max + 1))
    while True:
        factors = tuple(sample_factor(params, rng, pool) for _ in range(r))
        try:
            T = sum_factors(list(factors), shape=(params.s,) * 3, cap=params.entry_cap)
        except DegenerateStateError:
            continue  # overflow: resample the whole demo
        if not T.any():
            continue  # factors cancelled exactly; useless as a demonstration
        return Demo(tensor=T, factors=factors, seed=seed, r_target=r)


# --- redundancy filter -------------------------------------------------------

def _factor_outer_mats(f: Factor):
    u, v, w = f.arrays()
    return [np.outer(x, y) for x, y in
            ((u, v), (u, w), (v, u), (v, w), (w, u), (w, v))]


def _mats_equal(a, b, up_to_sign: bool) -> bool:
    if np.array_equal(a, b):
        return True
    return up_to_sign and np.array_equal(a, -b)


def redundancy_index(factors, filter_sign: str = "up_to_sign",
                     filter_mode: str = "duplicate"):
    """Index of the first factor whose six own-vector outer products contain a
    duplicate (or are all equal in strict mode); None when clean."""
    if not factors:
        raise UsageError("redundancy check needs a non-empty factor list")
    sign = filter_sign == "up_to_sign"
    for i, f in enumerate(factors):
        mats = _factor_outer_mats(f)
        if filter_mode == "strict":
            if all(_mats_equal(mats[0], m, sign) for m in mats[1:]):
                return i
        else:
            if any(_mats_equal(mats[a], mats[b], sign)
                   for a in range(6) for b in range(a + 1, 6)):
                return i
    return None


def generate_filtered_demo(params: GenParams, rng, max_retries: int = 100,
                           pool=None, seed=0) -> Demo:
    rejected = []
    for _ in range(max_retries):
        demo = generate_demo(params, rng, pool=pool, seed=seed)
        idx = redundancy_index(demo.factors, params.filter_sign, params.filter_mode)
        if idx is None:
            demo.rejects = len(rejected)
            demo.rejected_indices = tuple(rejected)
            return demo
        rejected.append(idx)
    raise GenerationError(f"no filter-clean demo after {max_retries} tries "
                          f"(params likely force redundancy)")


# --- augmentations -----------------------------------------------------------

def augment_basis(demo: Demo, rng, params: GenParams, max_retries: int = 50) -> Demo:
    """Random unimodular basis change of a demo; output still verifies."""
    for _ in range(max_retries):
        bt = random_basis_transform(demo.tensor.shape[0], rng, k=params.basis_ops)
        moved = transform_factors(demo.factors, bt)
        if params.basis_clip == "reject" and any(f.max_entry() > params.f_max for f in moved):
            continue
        try:
            T2 = change_of_basis(demo.tensor, bt, cap=params.entry_cap)
        except DegenerateStateError:
            continue
        factors = tuple(canonicalize(f) for f in moved)
        return Demo(tensor=T2, factors=factors, seed=demo.seed,
                    r_target=demo.r_target, lineage=demo.lineage + ("basis",))
    raise GenerationError(f"no in-range basis transform after {max_retries} tries")


def shuffle_actions(demo: Demo, rng) -> Demo:
    """Swap one uniformly chosen factor with a uniformly chosen other slot."""
    r = len(demo.factors)
    if r < 2:
        return demo
    i = int(rng.integers(0, r))
    j = int(rng.integers(0, r - 1))
    if j >= i:
        j += 1
    factors = list(demo.factors)
    factors[i], factors[j] = factors[j], factors[i]
    return Demo(tensor=demo.tensor, factors=tuple(factors), seed=demo.seed,
                r_target=demo.r_target, lineage=demo.lineage + ("shuffle",))


# --- dataset generation ------------------------------------------------------

@dataclass
class GenStats:
    total: int = 0
    rejected: int = 0
    histogram: dict = field(default_factory=dict)

    @property
    def fraction(self) -> float:
        return self.rejected / self.total if self.total else 0.0

    def report(self) -> str:
        lines = [f"generated={self.total}",
                 f"rejected={self.rejected}",
                 f"rejection_fraction={self.fraction:.4f}",
                 "redundancy_index_histogram:"]
        for idx in sorted(self.histogram):
            lines.append(f"  index={idx} count={self.histogram[idx]}")
        return "\n".join(lines) + "\n"


def generate_dataset(params: GenParams, n: int, filtered: bool = True,
                     max_retries: int = 200):
    """n demos with per-demo seeded RNG streams; returns (demos, stats)."""
    demos, stats = [], GenStats()
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=params.seed,
                                                           spawn_key=(i,)))
        pool = make_pool(params, rng) if params.pool_size > 0 else None
        if filtered:
            demo = generate_filtered_demo(params, rng, max_retries=max_retries,
                                          pool=pool, seed=i)
            stats.total += 1 + demo.rejects
            stats.rejected += demo.rejects
            for idx in demo.rejected_indices:
                stats.histogram[idx] = stats.histogram.get(idx, 0) + 1
        else:
            demo = generate_demo(params, rng, pool=pool, seed=i)
            stats.total += 1
        demos.append(demo)
    return demos, stats


# --- persistence -------------------------------------------------------------

def write_dataset(demos, path, params: GenParams):
    with open(path, "w") as fh:
        fh.write(f"{DATASET_MAGIC} S={params.s} F={params.f_max}\n")
        for d in demos:
            fh.write(f"R={len(d.factors)} seed={d.seed} lineage={','.join(d.lineage)}\n")
            for f in d.factors:
                fh.write(factor_line(f) + "\n")


def read_dataset(path):
    """Returns (params-ish header dict, demos). Tensors are recomposed from
    the factor lines and every record is re-verified."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith(DATASET_MAGIC):
        raise FormatError("missing dataset magic header", line=1)
    try:
        head = dict(kv.split("=") for kv in lines[0][len(DATASET_MAGIC):].split())
        s, f_max = int(head["S"]), int(head["F"])
    except (ValueError, KeyError):
        raise FormatError(f"bad dataset header: {lines[0]!r}", line=1)
    demos = []
    ln = 1
    while ln < len(lines):
        if not lines[ln].strip():
            ln += 1
            continue
        rec = lines[ln]
        try:
            fields = dict(kv.split("=", 1) for kv in rec.split())
            r = int(fields["R"])
            seed = int(fields["seed"])
            lineage = tuple(fields["lineage"].split(","))
        except (ValueError, KeyError):
            raise FormatError(f"bad record header: {rec!r}", line=ln + 1)
        if ln + 1 + r > len(lines):
            raise FormatError(f"truncated record: expected {r} factor lines",
                              line=len(lines))
        factors = [parse_factor_line(lines[ln + 1 + k], s=s, lineno=ln + 2 + k)
                   for k in range(r)]
        for k, f in enumerate(factors):
            if not is_canonical(f):
                raise CorruptionError(f"line {ln + 2 + k}: factor is not canonical")
            if f.max_entry() > f_max:
                raise CorruptionError(f"line {ln + 2 + k}: factor entry exceeds F={f_max}")
        T = sum_factors(factors, shape=(s, s, s))
        if not verify_decomposition(T, factors):
            raise CorruptionError(f"record at line {ln + 1} failed re-verification")
        demos.append(Demo(tensor=T, factors=tuple(factors), seed=seed,
                          r_target=r, lineage=lineage))
        ln += 1 + r
    return {"s": s, "f_max": f_max}, demos
