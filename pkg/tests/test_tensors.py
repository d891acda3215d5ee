import itertools

import numpy as np
import pytest

from tenfact.errors import DegenerateStateError, FormatError, UsageError
from tenfact.fixtures import STRASSEN_FACTORS, standard_matmul_factors
from tenfact.tensors import (ENTRY_CAP, BasisTransform, Decomposition, Factor,
                             apply_factor, build_matmul_tensor, canonicalize,
                             change_of_basis, factor_line, is_canonical,
                             is_zero, matrix_rank_exact, outer3,
                             parse_factor_line, random_basis_transform,
                             rank_upper_bound, read_certificate, read_tensor,
                             render_algorithm, transform_factors,
                             verify_decomposition, verify_matmul_algorithm,
                             write_certificate, write_tensor)


def scalar_outer(u, v, w):
    out = np.zeros((len(u), len(v), len(w)), dtype=np.int64)
    for a, b, c in itertools.product(range(len(u)), range(len(v)), range(len(w))):
        out[a, b, c] = u[a] * v[b] * w[c]
    return out


def random_factor(rng, s, f_max=2):
    while True:
        vecs = [rng.integers(-f_max, f_max + 1, size=s) for _ in range(3)]
        if all(v.any() for v in vecs):
            return Factor.make(*vecs)


class TestOuter3:
    def test_unit_vectors(self):
        T = outer3([1, 0], [1, 0], [1, 0])
        assert T[0, 0, 0] == 1 and T.sum() == 1

    def test_two_ones(self):
        T = outer3([1, 0], [0, 1], [1, 1])
        assert T[0, 1, 0] == 1 and T[0, 1, 1] == 1 and T.sum() == 2

    def test_signed_entry(self):
        T = outer3([2, -1], [1, 1], [1, 0])
        assert T[1, 1, 0] == -1
        assert np.array_equal(T, scalar_outer([2, -1], [1, 1], [1, 0]))

    def test_matches_scalar_loop(self, rng):
        for _ in range(200):
            s = int(rng.integers(2, 5))
            u, v, w = (rng.integers(-2, 3, size=s) for _ in range(3))
            assert np.array_equal(outer3(u, v, w), scalar_outer(u, v, w))

    def test_length_mismatch(self):
        with pytest.raises(UsageError):
            apply_factor(np.zeros((2, 2, 2), dtype=np.int64),
                         Factor.make([1, 0, 0], [1, 0], [1, 0]))


class TestApplyFactor:
    def test_exact_cancellation(self):
        f = Factor.make([1, -1], [2, 0], [0, 1])
        assert is_zero(apply_factor(outer3(*f.arrays()), f))

    def test_from_zero(self):
        f = Factor.make([1, 0], [1, 1], [0, -1])
        res = apply_factor(np.zeros((2, 2, 2), dtype=np.int64), f)
        assert np.array_equal(res, -outer3(*f.arrays()))

    def test_strassen_first_residual(self):
        T = build_matmul_tensor(2, 2, 2)
        f = STRASSEN_FACTORS[0]
        expected = T - scalar_outer(f.u, f.v, f.w)
        got = apply_factor(T, f)
        assert np.array_equal(got, expected)
        assert not np.array_equal(got, T)  # input unmodified, result differs
        assert T[0, 0, 0] == 1

    def test_overflow_rejected(self):
        T = np.full((2, 2, 2), ENTRY_CAP, dtype=np.int64)
        f = Factor.make([-2, 0], [2, 0], [2, 0])
        with pytest.raises(DegenerateStateError):
            apply_factor(T, f)

    def test_roundtrip(self, rng):
        for _ in range(100):
            T = rng.integers(-5, 6, size=(4, 4, 4)).astype(np.int64)
            f = random_factor(rng, 4)
            back = apply_factor(T, f) + outer3(*f.arrays())
            assert np.array_equal(back, T)


class TestMatmulTensor:
    def test_scalar_case(self):
        T = build_matmul_tensor(1, 1, 1)
        assert T.shape == (1, 1, 1) and T[0, 0, 0] == 1

    def test_2x2_ones_count(self):
        T = build_matmul_tensor(2, 2, 2)
        assert T.sum() == 8 and np.count_nonzero(T) == 8

    def test_index_formula(self):
        T = build_matmul_tensor(2, 2, 2)
        assert T[0, 0, 0] == 1 and T[0, 1, 0] == 0

    def test_ones_count_general(self):
        for n, m, p in [(1, 2, 3), (2, 3, 2), (3, 1, 2)]:
            T = build_matmul_tensor(n, m, p)
            assert np.count_nonzero(T) == n * m * p and set(np.unique(T)) <= {0, 1}

    def test_bad_dims(self):
        with pytest.raises(UsageError):
            build_matmul_tensor(0, 1, 1)


class TestCanonicalize:
    def test_spec_triple(self):
        f = Factor.make((-1, 0, 1), (0, -1, 0), (1, 1, 0))
        assert canonicalize(f) == Factor.make((1, 0, -1), (0, 1, 0), (1, 1, 0))

    def test_already_canonical(self):
        f = Factor.make((1, 0), (0, 2), (-1, 1))
        assert canonicalize(f) == f

    def test_v_flip_absorbed_by_w(self):
        f = Factor.make((1, 0), (-2, 1), (0, 1))
        assert canonicalize(f) == Factor.make((1, 0), (2, -1), (0, -1))

    def test_orbit_collapse(self, rng):
        for _ in range(300):
            f = random_factor(rng, 3)
            reps = set()
            for l1, l2 in itertools.product((1, -1), repeat=2):
                l3 = l1 * l2
                g = Factor(tuple(l1 * x for x in f.u), tuple(l2 * x for x in f.v),
                           tuple(l3 * x for x in f.w))
                reps.add(canonicalize(g))
                assert np.array_equal(outer3(*g.arrays()), outer3(*f.arrays()))
            assert len(reps) == 1
            can = reps.pop()
            assert canonicalize(can) == can  # idempotent
            assert np.array_equal(outer3(*can.arrays()), outer3(*f.arrays()))

    def test_zero_vector_rejected(self):
        with pytest.raises(UsageError):
            Factor.make((0, 0), (1, 0), (1, 0))


class TestVerify:
    def test_single_factor(self):
        f = Factor.make([1, 2], [0, 1], [1, 0])
        assert verify_decomposition(outer3(*f.arrays()), [f])

    def test_strassen(self):
        assert verify_decomposition(build_matmul_tensor(2, 2, 2), STRASSEN_FACTORS)

    def test_strassen_perturbed(self):
        bad = list(STRASSEN_FACTORS)
        f = bad[3]
        w = list(f.w)
        w[0] = -w[0]
        bad[3] = Factor(f.u, f.v, tuple(w))
        assert not verify_decomposition(build_matmul_tensor(2, 2, 2), bad)

    def test_matmul_strassen(self):
        assert verify_matmul_algorithm(2, 2, 2, STRASSEN_FACTORS, trials=100, seed=3)

    def test_matmul_standard(self):
        assert verify_matmul_algorithm(2, 2, 2, standard_matmul_factors(2, 2, 2))

    def test_matmul_rectangular(self):
        assert verify_matmul_algorithm(2, 3, 2, standard_matmul_factors(2, 3, 2))

    def test_matmul_deleted_factor_fails(self):
        assert not verify_matmul_algorithm(2, 2, 2, STRASSEN_FACTORS[:6], trials=100)

    def test_matmul_dim_mismatch(self):
        with pytest.raises(UsageError):
            verify_matmul_algorithm(3, 3, 3, STRASSEN_FACTORS)


class TestChangeOfBasis:
    def test_identity(self, rng):
        T = rng.integers(-3, 4, size=(4, 4, 4)).astype(np.int64)
        assert np.array_equal(change_of_basis(T, BasisTransform.identity(4)), T)

    def test_signed_permutation(self):
        T = np.zeros((2, 2, 2), dtype=np.int64)
        T[0, 1, 0] = 3
        P = np.array([[0, 1], [-1, 0]], dtype=np.int64)
        bt = BasisTransform(P, P.copy(), np.eye(2, dtype=np.int64))
        out = change_of_basis(T, bt)
        # u-mode: e0 -> -e1 row pattern, v-mode: e1 -> e0
        assert out[1, 0, 0] == -3 and np.abs(out).sum() == 3

    def test_rank1_transport(self, rng):
        for _ in range(100):
            f = random_factor(rng, 3, f_max=1)
            bt = random_basis_transform(3, rng)
            lhs = change_of_basis(outer3(*f.arrays()), bt)
            rhs = outer3(bt.A @ np.array(f.u), bt.B @ np.array(f.v), bt.C @ np.array(f.w))
            assert np.array_equal(lhs, rhs)

    def test_decomposition_transport(self, rng):
        T = build_matmul_tensor(2, 2, 2)
        for _ in range(50):
            bt = random_basis_transform(4, rng)
            moved = transform_factors(STRASSEN_FACTORS, bt)
            assert verify_decomposition(change_of_basis(T, bt), moved)

    def test_sign_orbit_transform(self):
        s = 3
        eye = np.eye(s, dtype=np.int64)
        bt = BasisTransform(-eye, -eye.copy(), eye.copy())
        f = Factor.make((1, 0, 2), (0, 1, 0), (1, -1, 0))
        (moved,) = transform_factors([f], bt)
        assert canonicalize(moved) == canonicalize(f)

    def test_non_unimodular_rejected(self):
        M = np.array([[2, 0], [0, 1]], dtype=np.int64)
        eye = np.eye(2, dtype=np.int64)
        with pytest.raises(UsageError):
            BasisTransform(M, eye, eye)


class TestRankUpperBound:
    def test_zero(self):
        assert rank_upper_bound(np.zeros((3, 3, 3), dtype=np.int64)) == 0

    def test_rank_one(self, rng):
        for _ in range(50):
            f = random_factor(rng, 4)
            assert rank_upper_bound(outer3(*f.arrays())) == 1

    def test_matmul_tensor(self):
        assert rank_upper_bound(build_matmul_tensor(2, 2, 2)) >= 7

    def test_zero_iff(self, rng):
        for _ in range(100):
            T = rng.integers(-2, 3, size=(3, 3, 3)).astype(np.int64)
            assert (rank_upper_bound(T) == 0) == is_zero(T)

    def test_exact_rank_against_numpy(self, rng):
        for _ in range(300):
            M = rng.integers(-6, 7, size=(int(rng.integers(1, 5)), int(rng.integers(1, 5))))
            assert matrix_rank_exact(M) == np.linalg.matrix_rank(M.astype(float))


class TestRender:
    def test_scalar(self):
        text = render_algorithm([Factor.make((1,), (1,), (1,))], 1, 1, 1)
        assert text.splitlines() == ["m1 = (A11) * (B11)", "C11 = m1"]

    def test_standard_2x2(self):
        text = render_algorithm(standard_matmul_factors(2, 2, 2), 2, 2, 2)
        lines = text.splitlines()
        assert len([l for l in lines if l.startswith("m")]) == 8
        assert len([l for l in lines if l.startswith("C")]) == 4

    def test_strassen(self):
        lines = render_algorithm(STRASSEN_FACTORS, 2, 2, 2).splitlines()
        assert len([l for l in lines if l.startswith("m")]) == 7
        assert "C11 = m1 + m4 - m5 + m7" in lines

    def test_refuses_unverified(self):
        with pytest.raises(UsageError):
            render_algorithm(STRASSEN_FACTORS[:6], 2, 2, 2)


class TestCertificate:
    def test_roundtrip(self, tmp_path, rng):
        factors = [random_factor(rng, 4) for _ in range(7)]
        path = tmp_path / "c.cert"
        write_certificate(path, factors, 2)
        s, f_max, back = read_certificate(path)
        assert (s, f_max) == (4, 2) and back == factors
        write_certificate(tmp_path / "c2.cert", back, 2)
        assert (tmp_path / "c.cert").read_bytes() == (tmp_path / "c2.cert").read_bytes()

    def test_truncated(self, tmp_path):
        path = tmp_path / "bad.cert"
        path.write_text("S=2 R=2 F=1\nu:1,0 v:0,1 w:1,1\n")
        with pytest.raises(FormatError):
            read_certificate(path)

    def test_bad_line_number(self, tmp_path):
        path = tmp_path / "bad.cert"
        path.write_text("S=2 R=1 F=1\nu:1,x v:0,1 w:1,1\n")
        with pytest.raises(FormatError, match="line 2"):
            read_certificate(path)

    def test_factor_line_roundtrip(self, rng):
        for _ in range(100):
            f = random_factor(rng, 3)
            assert parse_factor_line(factor_line(f), s=3) == f


class TestTensorFile:
    def test_roundtrip(self, tmp_path, rng):
        T = rng.integers(-9, 10, size=(4, 4, 4)).astype(np.int64)
        write_tensor(tmp_path / "t.txt", T)
        assert np.array_equal(read_tensor(tmp_path / "t.txt"), T)

    def test_truncated(self, tmp_path):
        (tmp_path / "t.txt").write_text("S=2\n1 0\n")
        with pytest.raises(FormatError):
            read_tensor(tmp_path / "t.txt")


class TestDecomposition:
    def test_incremental_residual(self, rng):
        T = build_matmul_tensor(2, 2, 2)
        dec = Decomposition(target=T)
        for f in STRASSEN_FACTORS:
            dec.push(f)
        assert dec.complete and dec.rank_witness == 7 and dec.verifies()

    def test_multilinearity(self, rng):
        for alpha in range(-2, 3):
            u = np.array([1, -2, 0])
            v = np.array([0, 1, 1])
            w = np.array([2, 0, -1])
            assert np.array_equal(outer3(alpha * u, v, w), alpha * outer3(u, v, w))
