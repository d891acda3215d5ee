"""Reference bilinear algorithms used as fixtures in tests and the CLI.

Index convention matches build_matmul_tensor: a = i*m + j, b = j*p + k,
c = i*p + k.
"""

from .tensors import Factor

# Strassen's 7-multiplication algorithm for the 2x2 product.
STRASSEN_FACTORS = [
    Factor.make((1, 0, 0, 1), (1, 0, 0, 1), (1, 0, 0, 1)),
    Factor.make((0, 0, 1, 1), (1, 0, 0, 0), (0, 0, 1, -1)),
    Factor.make((1, 0, 0, 0), (0, 1, 0, -1), (0, 1, 0, 1)),
    Factor.make((0, 0, 0, 1), (-1, 0, 1, 0), (1, 0, 1, 0)),
    Factor.make((1, 1, 0, 0), (0, 0, 0, 1), (-1, 1, 0, 0)),
    Factor.make((-1, 0, 1, 0), (1, 1, 0, 0), (0, 0, 0, 1)),
    Factor.make((0, 1, 0, -1), (0, 0, 1, 1), (1, 0, 0, 0)),
]


def standard_matmul_factors(n: int, m: int, p: int):
    """The n*m*p-multiplication textbook algorithm (one product per scalar
    multiply)."""
    factors = []
    for i in range(n):
        for j in range(m):
            for k in range(p):
                u = [0] * (n * m)
                v = [0] * (m * p)
                w = [0] * (n * p)
                u[i * m + j] = 1
                v[j * p + k] = 1
                w[i * p + k] = 1
                factors.append(Factor.make(u, v, w))
    return factors
