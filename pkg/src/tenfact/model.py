"""Policy/value network: factor tokenization, an MLP torso over the flattened
residual tensor, an autoregressive next-token policy head, a rank-to-go value
head, supervised training with the augmentation schedule, and checkpointing.

Everything is float64 numpy with hand-written backprop so gradients can be
checked exactly against finite differences.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import FormatError, IncompatibleError, TrainingError, UsageError
from .synth import (Demo, GenParams, augment_basis, redundancy_index,
                    shuffle_actions)
from .tensors import Factor, apply_factor, canonicalize
from .errors import GenerationError

CKPT_MAGIC = b"TENFACT-CKPT\x00"
CKPT_VERSION = 1


@dataclass(frozen=True)
class TokenizerConfig:
    s: int
    f_max: int = 2
    chunk: int = 4

    @property
    def base(self) -> int:
        return 2 * self.f_max + 1

    @property
    def vocab_size(self) -> int:
        return self.base ** self.chunk

    @property
    def tokens_per_factor(self) -> int:
        return math.ceil(3 * self.s / self.chunk)

    @property
    def pad(self) -> int:
        return self.tokens_per_factor * self.chunk - 3 * self.s


def tokenize_factor(f: Factor, cfg: TokenizerConfig):
    entries = list(f.u) + list(f.v) + list(f.w)
    if len(entries) != 3 * cfg.s:
        raise UsageError(f"factor length does not match S={cfg.s}")
    if any(abs(x) > cfg.f_max for x in entries):
        raise UsageError(f"factor entry outside [-{cfg.f_max}, {cfg.f_max}]")
    entries += [0] * cfg.pad
    tokens = []
    for k in range(cfg.tokens_per_factor):
        tok = 0
        for q in range(cfg.chunk - 1, -1, -1):
            tok = tok * cfg.base + (entries[k * cfg.chunk + q] + cfg.f_max)
        tokens.append(tok)
    return tokens


def detokenize(tokens, cfg: TokenizerConfig) -> Factor:
    if len(tokens) != cfg.tokens_per_factor:
        raise FormatError(f"expected {cfg.tokens_per_factor} tokens, got {len(tokens)}")
    entries = []
    for tok in tokens:
        tok = int(tok)
        if not 0 <= tok < cfg.vocab_size:
            raise FormatError(f"token {tok} out of vocabulary")
        for _ in range(cfg.chunk):
            entries.append(tok % cfg.base - cfg.f_max)
            tok //= cfg.base
    if any(entries[3 * cfg.s:]):
        raise FormatError("non-zero padding entries in token stream")
    s = cfg.s
    return Factor(tuple(entries[:s]), tuple(entries[s:2 * s]), tuple(entries[2 * s:3 * s]))


# --- parameters --------------------------------------------------------------

class ModelParams:
    """All network weights plus the tokenizer configuration."""

    def __init__(self, cfg: TokenizerConfig, hidden=(512, 512), embed_dim=16,
                 arrays=None, seed=0):
        self.cfg = cfg
        self.hidden = tuple(hidden)
        self.embed_dim = int(embed_dim)
        if arrays is not None:
            self.arrays = arrays
        else:
            self.arrays = self._init_arrays(seed)

    @property
    def input_dim(self) -> int:
        return self.cfg.s ** 3 + 1

    @property
    def policy_in_dim(self) -> int:
        return self.hidden[1] + self.cfg.tokens_per_factor * self.embed_dim

    def _init_arrays(self, seed):
        rng = np.random.default_rng(seed)
        h1, h2 = self.hidden
        d, v = self.input_dim, self.cfg.vocab_size

        def he(shape, fan_in):
            return rng.normal(scale=math.sqrt(2.0 / fan_in), size=shape)

        return {
            "w1": he((h1, d), d), "b1": np.zeros(h1),
            "w2": he((h2, h1), h1), "b2": np.zeros(h2),
            "wv": rng.normal(scale=0.01, size=h2), "bv": np.zeros(1),
            "emb": rng.normal(scale=0.1, size=(v, self.embed_dim)),
            "wh": he((h2, self.policy_in_dim), self.policy_in_dim),
            "bh": np.zeros(h2),
            "wp": rng.normal(scale=0.01, size=(v, h2)),
            "bp": np.zeros(v),
        }

    def manifest(self):
        return [(name, list(a.shape)) for name, a in sorted(self.arrays.items())]

    def flat(self):
        return np.concatenate([self.arrays[n].ravel() for n, _ in self.manifest()])

    def set_flat(self, vec):
        i = 0
        for name, shape in self.manifest():
            size = int(np.prod(shape)) if shape else 1
            self.arrays[name] = np.asarray(vec[i:i + size], dtype=np.float64).reshape(shape)
            i += size

    def copy(self) -> "ModelParams":
        return ModelParams(self.cfg, self.hidden, self.embed_dim,
                           arrays={k: v.copy() for k, v in self.arrays.items()})

    def finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays.values())


def featurize(T, step: int, cfg: TokenizerConfig):
    x = np.clip(T.astype(np.float64) / cfg.f_max, -4.0, 4.0).ravel()
    return np.concatenate([x, [step * 0.1]])


# --- forward / loss ----------------------------------------------------------

def _relu(z):
    return np.maximum(z, 0.0)


def _torso(X, p):
    a = p.arrays
    Z1 = X @ a["w1"].T + a["b1"]
    A1 = _relu(Z1)
    Z2 = A1 @ a["w2"].T + a["b2"]
    A2 = _relu(Z2)
    return Z1, A1, Z2, A2


def _prefix_slots(tok, p, mask=None):
    """Slot features (n, P, P*E): slot q of position t holds emb[tok_q] when
    q < t, zeros otherwise."""
    a = p.arrays
    P = p.cfg.tokens_per_factor
    n = tok.shape[0]
    if mask is None:
        mask = np.tril(np.ones((P, P)), k=-1)  # mask[t, q] = 1 iff q < t
    emb_tok = a["emb"][tok]                       # (n, P, E)
    slots = emb_tok[:, None, :, :] * mask[None, :, :, None]
    return slots.reshape(n, P, P * p.embed_dim), emb_tok, mask


def _policy_logits(A2, tok, p):
    """Per-position logits from a one-hidden-layer head over the concatenated
    torso output and prefix slots. The hidden layer lets the head model joint
    state/prefix structure, which a linear readout cannot (it factors into
    f(state) + g(prefix))."""
    a = p.arrays
    n = A2.shape[0]
    P = p.cfg.tokens_per_factor
    slots, emb_tok, mask = _prefix_slots(tok, p)
    Zin = np.concatenate([np.repeat(A2[:, None, :], P, axis=1), slots], axis=2)
    Zin = Zin.reshape(n * P, p.policy_in_dim)
    Zh = Zin @ a["wh"].T + a["bh"]
    Ah = _relu(Zh)
    logits = Ah @ a["wp"].T + a["bp"]
    return logits, (Zin, Zh, Ah), mask


def _softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(T, step, prefix, params: ModelParams):
    """Next-token distribution for one state/prefix, plus rank-to-go value."""
    cfg = params.cfg
    P = cfg.tokens_per_factor
    if len(prefix) >= P:
        raise UsageError("prefix already covers a full factor")
    x = featurize(T, step, cfg)
    if x.shape[0] != params.input_dim:
        raise UsageError(f"state size {x.shape[0]} does not match model input {params.input_dim}")
    _, _, _, A2 = _torso(x[None, :], params)
    tok = np.zeros((1, P), dtype=np.int64)
    tok[0, :len(prefix)] = prefix
    logits, _, _ = _policy_logits(A2, tok, params)
    probs = _softmax(logits[len(prefix)])
    value = float(A2[0] @ params.arrays["wv"] + params.arrays["bv"][0])
    return probs, value


def loss_and_grads(X, tok, y, params: ModelParams, value_weight: float = 0.5):
    """Teacher-forced token cross-entropy + weighted value MSE, with exact
    gradients for every parameter array."""
    a = params.arrays
    n = X.shape[0]
    P = params.cfg.tokens_per_factor
    H2 = params.hidden[1]
    E = params.embed_dim

    Z1, A1, Z2, A2 = _torso(X, params)
    val = A2 @ a["wv"] + a["bv"][0]
    logits, (Zin, Zh, Ah), mask = _policy_logits(A2, tok, params)
    probs = _softmax(logits)
    tgt = tok.ravel()
    eps = 1e-300
    ce = -np.mean(np.log(probs[np.arange(n * P), tgt] + eps))
    vmse = np.mean((val - y) ** 2)
    loss = ce + value_weight * vmse

    # policy backward
    dlogits = probs.copy()
    dlogits[np.arange(n * P), tgt] -= 1.0
    dlogits /= n * P
    grads = {"wp": dlogits.T @ Ah, "bp": dlogits.sum(axis=0)}
    dZh = (dlogits @ a["wp"]) * (Zh > 0)
    grads["wh"] = dZh.T @ Zin
    grads["bh"] = dZh.sum(axis=0)
    dZin = (dZh @ a["wh"]).reshape(n, P, params.policy_in_dim)
    dA2 = dZin[:, :, :H2].sum(axis=1)
    dslots = dZin[:, :, H2:].reshape(n, P, P, E)
    demb_tok = (dslots * mask[None, :, :, None]).sum(axis=1)  # (n, P, E)
    demb = np.zeros_like(a["emb"])
    np.add.at(demb, tok, demb_tok)
    grads["emb"] = demb

    # value backward
    dval = value_weight * 2.0 * (val - y) / n
    grads["wv"] = A2.T @ dval
    grads["bv"] = np.array([dval.sum()])
    dA2 = dA2 + dval[:, None] * a["wv"][None, :]

    # torso backward
    dZ2 = dA2 * (Z2 > 0)
    grads["w2"] = dZ2.T @ A1
    grads["b2"] = dZ2.sum(axis=0)
    dZ1 = (dZ2 @ a["w2"]) * (Z1 > 0)
    grads["w1"] = dZ1.T @ X
    grads["b1"] = dZ1.sum(axis=0)
    return loss, float(ce), float(vmse), grads


def evaluate(X, tok, y, params: ModelParams, value_weight: float = 0.5):
    _, _, _, A2 = _torso(X, params)
    val = A2 @ params.arrays["wv"] + params.arrays["bv"][0]
    logits, _, _ = _policy_logits(A2, tok, params)
    probs = _softmax(logits)
    n, P = tok.shape
    ce = -np.mean(np.log(probs[np.arange(n * P), tok.ravel()] + 1e-300))
    vmse = np.mean((val - y) ** 2)
    return float(ce + value_weight * vmse), float(ce), float(vmse)


# --- autoregressive sampling -------------------------------------------------

def sample_actions(T, step, k: int, temperature: float, params: ModelParams,
                   rng, max_retries: int = 3):
    """k factors sampled token-by-token; canonicalized, deduplicated (priors
    summed) and renormalized. Degenerate samples are retried then dropped."""
    if k < 1:
        raise UsageError("need k >= 1")
    cfg = params.cfg
    P = cfg.tokens_per_factor
    x = featurize(T, step, cfg)
    _, _, _, A2_one = _torso(x[None, :], params)

    def sample_rows(nrows):
        A2 = np.repeat(A2_one, nrows, axis=0)
        tok = np.zeros((nrows, P), dtype=np.int64)
        logq = np.zeros(nrows)
        for t in range(P):
            logits, _, _ = _policy_logits(A2, tok, params)
            logits_t = logits.reshape(nrows, P, -1)[:, t, :]
            if temperature <= 1e-8:
                choice = logits_t.argmax(axis=1)
            else:
                p = _softmax(logits_t / temperature)
                cdf = np.cumsum(p, axis=1)
                r = rng.random(nrows)
                choice = np.minimum((r[:, None] > cdf).sum(axis=1), p.shape[1] - 1)
                logq += np.log(p[np.arange(nrows), choice] + 1e-300)
            tok[:, t] = choice
        return tok, np.exp(logq)

    merged = {}
    want = k
    for _ in range(max_retries + 1):
        tok, priors = sample_rows(want)
        bad = 0
        for row, pr in zip(tok, priors):
            try:
                f = canonicalize(detokenize(row, cfg))
            except (FormatError, UsageError):
                bad += 1
                continue
            merged[f] = merged.get(f, 0.0) + float(pr)
        if bad == 0:
            break
        want = bad
    if not merged:
        return []
    total = sum(merged.values())
    items = sorted(merged.items())
    return [(f, pr / total) for f, pr in items]


# --- training ----------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 256
    lr: float = 1e-3
    value_weight: float = 0.5
    shuffle_period: int = 10
    aug_canon: bool = True
    aug_basis: bool = True
    aug_shuffle: bool = False
    filter_redundant: bool = False
    basis_prob: float = 0.25
    held_fraction: float = 0.1
    seed: int = 0
    variant: str = "custom"
    hidden: tuple = (512, 512)
    embed_dim: int = 16
    chunk: int = 4

    def __post_init__(self):
        if self.shuffle_period < 1:
            raise UsageError("shuffle_period must be >= 1")


VARIANTS = {
    # Ablation curves: baseline has canonicalization + basis change on
    # unfiltered demos; augmented adds order shuffling; full adds the
    # redundancy filter.
    "baseline": {"aug_shuffle": False, "filter_redundant": False},
    "augmented": {"aug_shuffle": True, "filter_redundant": False},
    "full": {"aug_shuffle": True, "filter_redundant": True},
}


def config_for_variant(cfg: TrainConfig, variant: str) -> TrainConfig:
    if variant not in VARIANTS:
        raise UsageError(f"unknown variant {variant!r} (want one of {sorted(VARIANTS)})")
    return replace(cfg, variant=variant, **VARIANTS[variant])


def demo_pairs(demo: Demo, params: ModelParams, rng=None, canon=True):
    """(features, target tokens, rank-to-go) triples walking the demo's
    residual sequence."""
    cfg = params.cfg
    out = []
    T = demo.tensor
    R = len(demo.factors)
    for t, f in enumerate(demo.factors):
        target = f
        if not canon and rng is not None:
            l1, l2 = (int(rng.integers(0, 2)) * 2 - 1 for _ in range(2))
            target = Factor(tuple(l1 * x for x in f.u),
                            tuple(l2 * x for x in f.v),
                            tuple(l1 * l2 * x for x in f.w))
        out.append((featurize(T, t, cfg), tokenize_factor(target, cfg), R - t))
        T = apply_factor(T, f)
    return out


def _stack_pairs(pairs):
    X = np.array([p[0] for p in pairs])
    tok = np.array([p[1] for p in pairs], dtype=np.int64)
    y = np.array([p[2] for p in pairs], dtype=np.float64)
    return X, tok, y


class Adam:
    """Per-parameter adaptive step scaling (decay 0.9 / 0.999)."""

    def __init__(self, params: ModelParams, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.arrays.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.arrays.items()}

    def step(self, params: ModelParams, grads):
        self.t += 1
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            mh = self.m[k] / (1 - self.b1 ** self.t)
            vh = self.v[k] / (1 - self.b2 ** self.t)
            params.arrays[k] -= self.lr * mh / (np.sqrt(vh) + self.eps)


def train(demos, cfg: TrainConfig, gen_params: GenParams,
          params: ModelParams | None = None, start_epoch: int = 1, log=None,
          held_demos=None):
    """Supervised training loop with the every-N-epochs order-shuffling hook
    and on-the-fly basis-change augmentation. Returns (params, log lines).

    held_demos, when given, is scored as the held-out split instead of
    carving one out of demos; variant comparisons use this so every variant
    is measured on the same data."""
    if not demos:
        raise UsageError("empty training dataset")
    tok_cfg = TokenizerConfig(s=demos[0].tensor.shape[0], f_max=gen_params.f_max,
                              chunk=cfg.chunk)
    if params is None:
        params = ModelParams(tok_cfg, hidden=cfg.hidden, embed_dim=cfg.embed_dim,
                             seed=cfg.seed)
    log = list(log) if log else []
    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed,
                                                       spawn_key=(start_epoch,)))

    clean = [i for i, d in enumerate(demos)
             if redundancy_index(d.factors, gen_params.filter_sign,
                                 gen_params.filter_mode) is None]
    if held_demos is not None:
        held = list(held_demos)
        held_idx = set()
    else:
        split_rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed,
                                                                 spawn_key=(0, 0)))
        n_held = 0
        if cfg.held_fraction > 0 and len(clean) > 1:
            n_held = max(1, int(len(clean) * cfg.held_fraction))
        held_idx = set(split_rng.choice(clean, size=n_held, replace=False).tolist()) if n_held else set()
        held = [demos[i] for i in sorted(held_idx)]
    pool = clean if cfg.filter_redundant else range(len(demos))
    train_demos = [demos[i] for i in pool if i not in held_idx]
    if not train_demos:
        raise UsageError("no training demos left after filtering/splitting")

    held_batch = _stack_pairs([p for d in held for p in demo_pairs(d, params)]) if held else None
    opt = Adam(params, lr=cfg.lr)
    last_good = params.copy()

    for epoch in range(start_epoch, start_epoch + cfg.epochs):
        epoch_demos = []
        for d in train_demos:
            use = d
            if cfg.aug_basis and rng.random() < cfg.basis_prob:
                try:
                    use = augment_basis(d, rng, gen_params)
                except GenerationError:
                    use = d
            epoch_demos.append(use)
        if cfg.aug_shuffle and epoch % cfg.shuffle_period == 0:
            epoch_demos.extend(shuffle_actions(d, rng) for d in train_demos)

        pairs = [p for d in epoch_demos
                 for p in demo_pairs(d, params, rng=rng, canon=cfg.aug_canon)]
        order = rng.permutation(len(pairs))
        X, tok, y = _stack_pairs(pairs)
        X, tok, y = X[order], tok[order], y[order]

        tot = np.zeros(3)
        nb = 0
        for lo in range(0, len(pairs), cfg.batch_size):
            Xb, tb, yb = X[lo:lo + cfg.batch_size], tok[lo:lo + cfg.batch_size], y[lo:lo + cfg.batch_size]
            loss, ce, vmse, grads = loss_and_grads(Xb, tb, yb, params, cfg.value_weight)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}", last_good=last_good)
            opt.step(params, grads)
            if not params.finite():
                raise TrainingError(f"non-finite update at epoch {epoch}", last_good=last_good)
            tot += (loss, ce, vmse)
            nb += 1
        tot /= max(nb, 1)
        log.append(f"epoch={epoch} split=train loss={tot[0]:.6f} ce={tot[1]:.6f} "
                   f"vmse={tot[2]:.6f} variant={cfg.variant} pairs={len(pairs)}")
        if held_batch is not None:
            hl, hce, hv = evaluate(*held_batch, params, cfg.value_weight)
            log.append(f"epoch={epoch} split=held loss={hl:.6f} ce={hce:.6f} "
                       f"vmse={hv:.6f} variant={cfg.variant}")
        last_good = params.copy()
    return params, log


# --- checkpointing -----------------------------------------------------------

def save_checkpoint(params: ModelParams, path):
    header = {
        "s": params.cfg.s, "f_max": params.cfg.f_max, "chunk": params.cfg.chunk,
        "hidden": list(params.hidden), "embed_dim": params.embed_dim,
        "manifest": [[n, sh] for n, sh in params.manifest()],
    }
    hb = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(hb)))
        fh.write(hb)
        fh.write(params.flat().astype("<f8").tobytes())


def load_checkpoint(path, expect_s=None) -> ModelParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(CKPT_MAGIC):
        raise FormatError("bad checkpoint magic")
    off = len(CKPT_MAGIC)
    if len(blob) < off + 8:
        raise FormatError("truncated checkpoint header")
    version, hlen = struct.unpack_from("<II", blob, off)
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    off += 8
    try:
        header = json.loads(blob[off:off + hlen])
    except ValueError:
        raise FormatError("corrupt checkpoint header")
    off += hlen
    if expect_s is not None and header["s"] != expect_s:
        raise IncompatibleError(f"checkpoint is for S={header['s']}, run needs S={expect_s}")
    cfg = TokenizerConfig(s=header["s"], f_max=header["f_max"], chunk=header["chunk"])
    params = ModelParams(cfg, hidden=tuple(header["hidden"]),
                         embed_dim=header["embed_dim"], arrays={})
    total = sum(int(np.prod(sh)) for _, sh in header["manifest"])
    if len(blob) - off != 8 * total:
        raise FormatError(f"checkpoint weight block has {len(blob) - off} bytes, "
                          f"manifest expects {8 * total}")
    weights = np.frombuffer(blob[off:], dtype="<f8")
    i = 0
    for name, shape in header["manifest"]:
        size = int(np.prod(shape)) if shape else 1
        params.arrays[name] = weights[i:i + size].reshape(shape).copy()
        i += size
    expected = {n for n, _ in ModelParams(cfg, tuple(header["hidden"]),
                                          header["embed_dim"], seed=0).manifest()}
    if set(params.arrays) != expected:
        raise FormatError("checkpoint manifest does not match architecture")
    return params
