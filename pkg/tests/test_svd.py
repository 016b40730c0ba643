#!/usr/bin/python3
import os
import tempfile
import unittest

import numpy as np
from hypothesis import given
from hypothesis import settings
from hypothesis import strategies as st

from specreg.operators import OperatorSpec
from specreg.operators import build_operator
from specreg.svd import SYSTEM_HEADER
from specreg.svd import SingularSystem
from specreg.svd import apply_forward
from specreg.svd import coefficients_x
from specreg.svd import compute_svd
from specreg.svd import load_matrix_csv
from specreg.svd import load_system
from specreg.svd import project_row_space
from specreg.svd import save_matrix_csv
from specreg.svd import save_system
from specreg.svd import system_from_bytes
from specreg.svd import system_to_bytes
from specreg.utils import DimensionMismatchError
from specreg.utils import EmptySpectrumError
from specreg.utils import FormatError
from specreg.utils import UnsupportedVersionError
from specreg.utils import WorkspaceTooLargeError


def orthonormality_error(M):
    return np.max(np.abs(M.T @ M - np.eye(M.shape[1])))


def assert_quality(testcase, A, system):
    testcase.assertLessEqual(orthonormality_error(system.U), 1e-10)
    testcase.assertLessEqual(orthonormality_error(system.V), 1e-10)
    testcase.assertLessEqual(
        np.max(np.abs(A - system.matrix())), 1e-8 * system.sigma[0]
    )
    testcase.assertTrue(np.all(np.diff(system.sigma) <= 0))


class SvdTestCase(unittest.TestCase):
    def test_diagonal(self):
        system = compute_svd(np.diag([3.0, 2.0, 1.0]))
        self.assertTrue(np.allclose([3.0, 2.0, 1.0], system.sigma, rtol=0, atol=1e-15))
        self.assertTrue(np.allclose(np.eye(3), system.U, rtol=0, atol=1e-15))
        self.assertTrue(np.allclose(np.eye(3), system.V, rtol=0, atol=1e-15))

    def test_two_by_two(self):
        A = np.array([[3.0, 0.0], [4.0, 5.0]])
        system = compute_svd(A)
        self.assertAlmostEqual(np.sqrt(45.0), system.sigma[0], places=12)
        self.assertAlmostEqual(np.sqrt(5.0), system.sigma[1], places=12)
        assert_quality(self, A, system)

    def test_transpose(self):
        A = np.random.default_rng(3).standard_normal((7, 4))
        system = compute_svd(A)
        transposed = compute_svd(A.T)
        self.assertTrue(np.allclose(system.sigma, transposed.sigma, rtol=1e-12, atol=0))
        # Swapped roles; compare projectors so signs do not matter.
        self.assertTrue(
            np.allclose(system.U @ system.U.T, transposed.V @ transposed.V.T, atol=1e-10)
        )
        self.assertTrue(
            np.allclose(system.V @ system.V.T, transposed.U @ transposed.U.T, atol=1e-10)
        )

    def test_sign_convention(self):
        system = compute_svd(np.random.default_rng(5).standard_normal((6, 6)))
        for n in range(system.n_modes):
            column = system.U[:, n]
            self.assertGreater(column[np.flatnonzero(np.abs(column) > 1e-12)[0]], 0)

    def test_rank_floor(self):
        A = np.outer([1.0, 2.0, 3.0], [1.0, -1.0])
        system = compute_svd(A)
        self.assertEqual(1, system.n_modes)
        assert_quality(self, A, system)
        full = compute_svd(np.diag([1.0, 1e-3, 1e-6]), rank_tol=1e-4)
        self.assertEqual(2, full.n_modes)
        self.assertTrue(np.all(full.sigma > 1e-4 * full.sigma[0]))

    def test_errors(self):
        with self.assertRaises(EmptySpectrumError):
            compute_svd(np.zeros((3, 3)))
        with self.assertRaises(DimensionMismatchError):
            compute_svd(np.zeros(3))
        with self.assertRaises(ValueError):
            compute_svd(np.array([[1.0, np.nan]]))
        with self.assertRaises(WorkspaceTooLargeError):
            compute_svd(np.broadcast_to(1.0, (4097, 4097)))

    def test_random_dense(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            rows, cols = rng.integers(1, 257, size=2)
            A = rng.standard_normal((rows, cols))
            assert_quality(self, A, compute_svd(A))

    def test_radon_quality(self):
        A = build_operator(OperatorSpec("radon2d", side=16, angles=24))
        assert_quality(self, A, compute_svd(A))

    @settings(max_examples=50, deadline=None)
    @given(
        st.integers(min_value=1, max_value=12),
        st.integers(min_value=1, max_value=12),
        st.integers(min_value=0, max_value=2**32 - 1),
    )
    def test_random_shapes(self, rows, cols, seed):
        A = np.random.default_rng(seed).standard_normal((rows, cols))
        system = compute_svd(A)
        assert_quality(self, A, system)
        self.assertEqual(min(rows, cols), system.n_modes)

    def test_forward_and_projection(self):
        rng = np.random.default_rng(17)
        A = rng.standard_normal((9, 6)) @ np.diag([1.0, 1.0, 1.0, 1.0, 0.0, 0.0])
        system = compute_svd(A)
        self.assertEqual(4, system.n_modes)
        u1 = system.U[:, 0]
        self.assertTrue(
            np.allclose(system.sigma[0] * system.V[:, 0], apply_forward(system, u1), atol=1e-12)
        )
        null = np.zeros(6)
        null[4] = 1.0
        self.assertTrue(np.allclose(0, apply_forward(system, null), atol=1e-12))
        self.assertTrue(np.allclose(0, project_row_space(system, null), atol=1e-12))
        self.assertTrue(np.allclose(u1, project_row_space(system, u1), atol=1e-12))
        for x in rng.standard_normal((100, 6)):
            self.assertLessEqual(
                np.max(np.abs(A @ x - apply_forward(system, x))),
                1e-8 * system.sigma[0] * np.linalg.norm(x),
            )
        batch = rng.standard_normal((3, 6))
        self.assertEqual((3, 4), coefficients_x(system, batch).shape)
        with self.assertRaises(DimensionMismatchError):
            apply_forward(system, np.zeros(5))

    def test_immutable(self):
        system = compute_svd(np.diag([2.0, 1.0]))
        with self.assertRaises(ValueError):
            system.sigma[0] = 5.0
        with self.assertRaises(DimensionMismatchError):
            SingularSystem(np.ones(2), np.eye(2), np.eye(3))


class SystemFileTestCase(unittest.TestCase):
    def setUp(self):
        self.system = compute_svd(np.random.default_rng(2).standard_normal((5, 3)))
        self.data = system_to_bytes(self.system)

    def test_save_load(self):
        with tempfile.TemporaryDirectory() as tempdir:
            for name in ("op.svdsys", "op.svdsys.zst"):
                path = os.path.join(tempdir, name)
                save_system(self.system, path)
                self.assertTrue(load_system(path).equals(self.system))

    def test_truncated(self):
        with self.assertRaises(FormatError) as err:
            system_from_bytes(self.data[:10])
        self.assertEqual(10, err.exception.offset)
        with self.assertRaises(FormatError) as err:
            system_from_bytes(self.data[:-1])
        self.assertIn("truncated payload", str(err.exception))

    def test_trailing(self):
        with self.assertRaises(FormatError) as err:
            system_from_bytes(self.data + b"\0")
        self.assertEqual(len(self.data), err.exception.offset)

    def test_bad_magic(self):
        with self.assertRaises(FormatError) as err:
            system_from_bytes(b"NOTMAGIC" + self.data[8:])
        self.assertEqual(0, err.exception.offset)

    def test_version(self):
        header = np.frombuffer(self.data, dtype=SYSTEM_HEADER, count=1).copy()
        header["version"] = 2
        with self.assertRaises(UnsupportedVersionError) as err:
            system_from_bytes(header.tobytes() + self.data[SYSTEM_HEADER.itemsize :])
        self.assertIn("unsupported version", str(err.exception))
        self.assertEqual(8, err.exception.offset)


class MatrixCsvTestCase(unittest.TestCase):
    def test_matrix_csv(self):
        A = np.random.default_rng(4).standard_normal((3, 2))
        with tempfile.TemporaryDirectory() as tempdir:
            path = os.path.join(tempdir, "A.csv")
            save_matrix_csv(A, path)
            with open(path, encoding="utf-8") as infile:
                self.assertEqual("3,2", infile.readline().strip())
            self.assertTrue(np.array_equal(A, load_matrix_csv(path)))

    def test_bad_matrix_csv(self):
        with tempfile.TemporaryDirectory() as tempdir:
            path = os.path.join(tempdir, "A.csv")
            with open(path, "w", encoding="utf-8") as outfile:
                outfile.write("rows,cols\n1,2\n")
            with self.assertRaises(FormatError):
                load_matrix_csv(path)
            with open(path, "w", encoding="utf-8") as outfile:
                outfile.write("2,2\n1,2\n")
            with self.assertRaises(DimensionMismatchError):
                load_matrix_csv(path)


if __name__ == "__main__":  # pragma: no cover
    unittest.main()
