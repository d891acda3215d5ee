"""Pure-numpy kernel implementations (fallback backend)."""

import numpy as np

BACKEND = "python"


def outer3_i64(u, v, w):
    return np.einsum("a,b,c->abc", u, v, w)


def sub_outer3(T, u, v, w):
    """Return (T - u x v x w, max abs entry of the result)."""
    out = T - np.einsum("a,b,c->abc", u, v, w)
    return out, int(np.abs(out).max(initial=0))


def add_outer3_inplace(acc, u, v, w, coef=1):
    acc += coef * np.einsum("a,b,c->abc", u, v, w)


def max_abs(T):
    return int(np.abs(T).max(initial=0))


def all_zero(T):
    return not T.any()
