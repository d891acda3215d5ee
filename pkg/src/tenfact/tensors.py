"""Exact integer tensor algebra.

Tensors are plain int64 numpy arrays of shape (S, S, S) (rectangular shapes
appear only in the matmul verifier/renderer). All arithmetic is exact; entry
magnitudes are capped so a runaway search trajectory fails loudly instead of
wrapping around.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import kernels
from .errors import DegenerateStateError, FormatError, IncompatibleError, UsageError

ENTRY_CAP = 64


def _as_vec(x):
    a = np.ascontiguousarray(x, dtype=np.int64)
    if a.ndim != 1:
        raise UsageError("expected a 1-d integer vector")
    return a


@dataclass(frozen=True, order=True)
class Factor:
    """One rank-1 action (u, v, w); vectors stored as int tuples so factors
    hash and sort deterministically."""

    u: tuple
    v: tuple
    w: tuple

    def __post_init__(self):
        for name, vec in (("u", self.u), ("v", self.v), ("w", self.w)):
            if not any(vec):
                raise UsageError(f"factor vector {name} is all-zero")

    @staticmethod
    def make(u, v, w) -> "Factor":
        return Factor(tuple(int(x) for x in u),
                      tuple(int(x) for x in v),
                      tuple(int(x) for x in w))

    def arrays(self):
        return (np.array(self.u, dtype=np.int64),
                np.array(self.v, dtype=np.int64),
                np.array(self.w, dtype=np.int64))

    def max_entry(self) -> int:
        return max(max(abs(x) for x in vec) for vec in (self.u, self.v, self.w))


def outer3(u, v, w):
    """Rank-1 tensor with entries u[a]*v[b]*w[c]."""
    u, v, w = _as_vec(u), _as_vec(v), _as_vec(w)
    return kernels.outer3_i64(u, v, w)


def factor_tensor(f: Factor):
    u, v, w = f.arrays()
    return kernels.outer3_i64(u, v, w)


def apply_factor(T, f: Factor, cap: int = ENTRY_CAP):
    """Residual update: T minus the factor's rank-1 tensor (new array)."""
    u, v, w = f.arrays()
    if T.shape != (len(u), len(v), len(w)):
        raise UsageError(f"factor dims {(len(u), len(v), len(w))} do not match tensor {T.shape}")
    out, m = kernels.sub_outer3(T, u, v, w)
    if m > cap:
        raise DegenerateStateError(f"residual entry magnitude {m} exceeds cap {cap}")
    return out


def is_zero(T) -> bool:
    return kernels.all_zero(T)


def build_matmul_tensor(n: int, m: int, p: int):
    """The 0/1 tensor whose rank-r decompositions are r-multiplication
    algorithms for the (n x m) @ (m x p) product.

    Index convention: a = i*m + j over A, b = j*p + k over B, c = i*p + k
    over C (C directly, not transposed).
    """
    if n < 1 or m < 1 or p < 1:
        raise UsageError("matmul dimensions must be positive")
    T = np.zeros((n * m, m * p, n * p), dtype=np.int64)
    for i in range(n):
        for j in range(m):
            for k in range(p):
                T[i * m + j, j * p + k, i * p + k] = 1
    return T


def _lead_sign(vec) -> int:
    for x in vec:
        if x:
            return 1 if x > 0 else -1
    raise UsageError("zero vector has no leading sign")


def canonicalize(f: Factor) -> Factor:
    """Sign-normalized orbit representative: leading nonzero of u and v
    positive, w scaled so the three signs multiply to +1."""
    l1 = _lead_sign(f.u)
    l2 = _lead_sign(f.v)
    l3 = l1 * l2
    if l1 == 1 and l2 == 1:
        return f
    return Factor(tuple(l1 * x for x in f.u),
                  tuple(l2 * x for x in f.v),
                  tuple(l3 * x for x in f.w))


def is_canonical(f: Factor) -> bool:
    return _lead_sign(f.u) == 1 and _lead_sign(f.v) == 1


def sum_factors(factors, shape=None, cap: int | None = None):
    """Exact sum of rank-1 tensors; raises on cap overflow when cap is set."""
    if shape is None:
        if not factors:
            raise UsageError("cannot infer shape from an empty factor list")
        f0 = factors[0]
        shape = (len(f0.u), len(f0.v), len(f0.w))
    acc = np.zeros(shape, dtype=np.int64)
    for f in factors:
        u, v, w = f.arrays()
        kernels.add_outer3_inplace(acc, u, v, w)
        if cap is not None and kernels.max_abs(acc) > cap:
            raise DegenerateStateError(f"partial sum exceeds entry cap {cap}")
    return acc


def verify_decomposition(T, factors) -> bool:
    return bool(np.array_equal(sum_factors(list(factors), shape=T.shape), T))


def verify_matmul_algorithm(n, m, p, factors, trials: int = 100, seed: int = 0) -> bool:
    """Check the bilinear algorithm on random integer matrix pairs."""
    factors = list(factors)
    if not factors:
        return False
    for f in factors:
        if (len(f.u), len(f.v), len(f.w)) != (n * m, m * p, n * p):
            raise UsageError("factor vector lengths do not match matmul dims")
    U = np.array([f.u for f in factors], dtype=np.int64)
    V = np.array([f.v for f in factors], dtype=np.int64)
    W = np.array([f.w for f in factors], dtype=np.int64)
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        A = rng.integers(-9, 10, size=(n, m), dtype=np.int64)
        B = rng.integers(-9, 10, size=(m, p), dtype=np.int64)
        prods = (U @ A.ravel()) * (V @ B.ravel())
        C = (W.T @ prods).reshape(n, p)
        if not np.array_equal(C, A @ B):
            return False
    return True


# --- change of basis -------------------------------------------------------

def _det_exact(M) -> int:
    """Exact determinant via Fraction Gaussian elimination (small matrices)."""
    n = M.shape[0]
    rows = [[Fraction(int(x)) for x in r] for r in M]
    det = Fraction(1)
    for c in range(n):
        piv = next((i for i in range(c, n) if rows[i][c] != 0), None)
        if piv is None:
            return 0
        if piv != c:
            rows[c], rows[piv] = rows[piv], rows[c]
            det = -det
        det *= rows[c][c]
        inv = rows[c][c]
        for i in range(c + 1, n):
            if rows[i][c]:
                ratio = rows[i][c] / inv
                for j in range(c, n):
                    rows[i][j] -= ratio * rows[c][j]
    assert det.denominator == 1
    return int(det)


def matrix_rank_exact(M) -> int:
    """Exact rank over the rationals (Fraction elimination)."""
    M = np.asarray(M)
    nrows, ncols = M.shape
    rows = [[Fraction(int(x)) for x in r] for r in M]
    rank = 0
    for c in range(ncols):
        piv = next((i for i in range(rank, nrows) if rows[i][c] != 0), None)
        if piv is None:
            continue
        rows[rank], rows[piv] = rows[piv], rows[rank]
        inv = rows[rank][c]
        for i in range(rank + 1, nrows):
            if rows[i][c]:
                ratio = rows[i][c] / inv
                for j in range(c, ncols):
                    rows[i][j] -= ratio * rows[rank][j]
        rank += 1
        if rank == nrows:
            break
    return rank


@dataclass(frozen=True)
class BasisTransform:
    """Triple of unimodular integer matrices acting multilinearly on tensors."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        for name, M in (("A", self.A), ("B", self.B), ("C", self.C)):
            M = np.asarray(M, dtype=np.int64)
            if M.ndim != 2 or M.shape[0] != M.shape[1]:
                raise UsageError(f"{name} must be square")
            if abs(_det_exact(M)) != 1:
                raise UsageError(f"{name} is not unimodular (|det| != 1)")
            object.__setattr__(self, name, M)

    @staticmethod
    def identity(s: int) -> "BasisTransform":
        eye = np.eye(s, dtype=np.int64)
        return BasisTransform(eye.copy(), eye.copy(), eye.copy())


def change_of_basis(T, bt: BasisTransform, cap: int = ENTRY_CAP):
    """Forward multilinear action of (A, B, C) on T."""
    if T.shape != (bt.A.shape[0], bt.B.shape[0], bt.C.shape[0]):
        raise UsageError("basis transform dims do not match tensor")
    out = np.einsum("ax,by,cz,xyz->abc", bt.A, bt.B, bt.C, T)
    if kernels.max_abs(out) > cap:
        raise DegenerateStateError(f"basis change exceeds entry cap {cap}")
    return out


def transform_factors(factors, bt: BasisTransform):
    """Map each (u, v, w) to (Au, Bv, Cw); entries may leave the factor range."""
    out = []
    for f in factors:
        u, v, w = f.arrays()
        out.append(Factor.make(bt.A @ u, bt.B @ v, bt.C @ w))
    return out


def random_basis_transform(s: int, rng, k: int = 3, entry_bound: int = 2,
                           max_tries: int = 200) -> BasisTransform:
    """Product of a signed permutation and k elementary unimodular row
    operations, resampled until all entries fit the bound."""

    def one_matrix():
        for _ in range(max_tries):
            M = np.zeros((s, s), dtype=np.int64)
            perm = rng.permutation(s)
            signs = rng.integers(0, 2, size=s) * 2 - 1
            M[np.arange(s), perm] = signs
            ok = True
            for _ in range(k):
                i, j = rng.integers(0, s, size=2)
                if i == j:
                    continue
                cand = M.copy()
                cand[j] += int(rng.integers(0, 2) * 2 - 1) * M[i]
                if np.abs(cand).max() <= entry_bound:
                    M = cand
            if np.abs(M).max() <= entry_bound:
                return M
        raise UsageError("could not sample a bounded unimodular matrix")

    return BasisTransform(one_matrix(), one_matrix(), one_matrix())


def rank_upper_bound(T) -> int:
    """Classical CP upper bound from first-mode slices: every slice is a
    combination of a maximal linearly independent subset of slices, so the
    tensor decomposes into at most the sum of those slices' matrix ranks.
    0 iff T is zero."""
    nonzero = [T[a] for a in range(T.shape[0]) if T[a].any()]
    if not nonzero:
        return 0
    flat = np.stack([sl.ravel() for sl in nonzero])
    total = 0
    rank_seen = 0
    for i in range(len(nonzero)):
        new_rank = matrix_rank_exact(flat[:i + 1])
        if new_rank > rank_seen:
            rank_seen = new_rank
            total += matrix_rank_exact(nonzero[i])
    return total


# --- decomposition container ----------------------------------------------

@dataclass
class Decomposition:
    target: np.ndarray
    factors: list = field(default_factory=list)
    residual: np.ndarray = None

    def __post_init__(self):
        if self.residual is None:
            self.residual = self.target.copy()

    def push(self, f: Factor, cap: int = ENTRY_CAP):
        self.residual = apply_factor(self.residual, f, cap=cap)
        self.factors.append(f)

    @property
    def complete(self) -> bool:
        return is_zero(self.residual)

    @property
    def rank_witness(self) -> int:
        return len(self.factors)

    def verifies(self) -> bool:
        return verify_decomposition(self.target, self.factors)


# --- rendering -------------------------------------------------------------

def _lincomb(coeffs, names) -> str:
    parts = []
    for c, name in zip(coeffs, names):
        c = int(c)
        if c == 0:
            continue
        mag = f"{abs(c)}*{name}" if abs(c) != 1 else name
        if not parts:
            parts.append(mag if c > 0 else f"-{mag}")
        else:
            parts.append(f"+ {mag}" if c > 0 else f"- {mag}")
    return " ".join(parts) if parts else "0"


def render_algorithm(factors, n: int, m: int, p: int) -> str:
    """Human-readable bilinear algorithm: one product line per factor, then
    each output entry as a signed combination of the products."""
    factors = list(factors)
    if not verify_matmul_algorithm(n, m, p, factors, trials=32, seed=7):
        raise UsageError("factor list does not verify as a matmul algorithm; refusing to render")
    a_names = [f"A{i + 1}{j + 1}" for i in range(n) for j in range(m)]
    b_names = [f"B{j + 1}{k + 1}" for j in range(m) for k in range(p)]
    m_names = [f"m{r + 1}" for r in range(len(factors))]
    lines = []
    for r, f in enumerate(factors):
        lines.append(f"{m_names[r]} = ({_lincomb(f.u, a_names)}) * ({_lincomb(f.v, b_names)})")
    for i in range(n):
        for k in range(p):
            c = i * p + k
            coeffs = [f.w[c] for f in factors]
            lines.append(f"C{i + 1}{k + 1} = {_lincomb(coeffs, m_names)}")
    return "\n".join(lines)


# --- certificate format ----------------------------------------------------

def _csv(vec) -> str:
    return ",".join(str(int(x)) for x in vec)


def factor_line(f: Factor) -> str:
    return f"u:{_csv(f.u)} v:{_csv(f.v)} w:{_csv(f.w)}"


def parse_factor_line(line: str, s: int | None = None, lineno=None) -> Factor:
    parts = line.split()
    if len(parts) != 3 or [p.split(":")[0] for p in parts] != ["u", "v", "w"]:
        raise FormatError(f"malformed factor line: {line!r}", line=lineno)
    vecs = []
    for part in parts:
        try:
            vecs.append(tuple(int(x) for x in part.split(":", 1)[1].split(",")))
        except ValueError:
            raise FormatError(f"non-integer entry in factor line: {line!r}", line=lineno)
    if s is not None and any(len(v) != s for v in vecs):
        raise FormatError(f"factor vector length != S={s}", line=lineno)
    try:
        return Factor(*vecs)
    except UsageError as exc:
        raise FormatError(str(exc), line=lineno)


def write_certificate(path, factors, f_max: int):
    factors = list(factors)
    s = len(factors[0].u)
    with open(path, "w") as fh:
        fh.write(f"S={s} R={len(factors)} F={f_max}\n")
        for f in factors:
            fh.write(factor_line(f) + "\n")


def read_certificate(path):
    """Returns (S, f_max, factors); bit-exact round trip with write_certificate."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatError("empty certificate", line=1)
    header = lines[0].split()
    try:
        fields = dict(kv.split("=") for kv in header)
        s, r, f_max = int(fields["S"]), int(fields["R"]), int(fields["F"])
    except (ValueError, KeyError):
        raise FormatError(f"bad certificate header: {lines[0]!r}", line=1)
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != r:
        raise FormatError(f"expected {r} factor lines, found {len(body)}", line=len(lines))
    factors = [parse_factor_line(ln, s=s, lineno=i + 2) for i, ln in enumerate(body)]
    for i, f in enumerate(factors):
        if f.max_entry() > f_max:
            raise FormatError(f"factor entry exceeds F={f_max}", line=i + 2)
    return s, f_max, factors


# --- tensor files ----------------------------------------------------------

def write_tensor(path, T):
    with open(path, "w") as fh:
        fh.write(f"S={T.shape[0]}\n")
        for a in range(T.shape[0]):
            for b in range(T.shape[1]):
                fh.write(" ".join(str(int(x)) for x in T[a, b]) + "\n")


def read_tensor(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("S="):
        raise FormatError("missing S= header", line=1)
    try:
        s = int(lines[0][2:])
    except ValueError:
        raise FormatError(f"bad header: {lines[0]!r}", line=1)
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != s * s:
        raise FormatError(f"expected {s * s} rows, found {len(body)}", line=len(lines))
    T = np.zeros((s, s, s), dtype=np.int64)
    for idx, ln in enumerate(body):
        try:
            row = [int(x) for x in ln.split()]
        except ValueError:
            raise FormatError(f"non-integer entry: {ln!r}", line=idx + 2)
        if len(row) != s:
            raise FormatError(f"expected {s} entries per row", line=idx + 2)
        T[idx // s, idx % s] = row
    return T


def check_checkpoint_dims(ckpt_s: int, want_s: int):
    if ckpt_s != want_s:
        raise IncompatibleError(f"checkpoint is for S={ckpt_s}, run needs S={want_s}")
