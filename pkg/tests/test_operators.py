#!/usr/bin/python3
import math
import os
import tempfile
import unittest

import numpy as np

from specreg.operators import OperatorSpec
from specreg.operators import build_operator
from specreg.operators import detector_offsets
from specreg.operators import generate_phantom
from specreg.operators import read_pgm
from specreg.operators import sample_data_corpus
from specreg.operators import save_phantom
from specreg.operators import write_pgm
from specreg.stochastics import estimate_profile
from specreg.svd import compute_svd
from specreg.svd import load_matrix_csv
from specreg.utils import ConfigError
from specreg.utils import FormatError
from specreg.utils import TraceClassError


def chord_length(side, theta, offset):
    """Length of offset * n + tau * d inside [-side/2, side/2]^2, by slab clipping."""
    half = side / 2.0
    normal = np.array([math.cos(theta), math.sin(theta)])
    direction = np.array([-normal[1], normal[0]])
    origin = offset * normal
    lo, hi = -np.inf, np.inf
    for axis in range(2):
        if abs(direction[axis]) < 1e-15:
            if abs(origin[axis]) >= half:
                return 0.0
            continue
        t1 = (-half - origin[axis]) / direction[axis]
        t2 = (half - origin[axis]) / direction[axis]
        lo, hi = max(lo, min(t1, t2)), min(hi, max(t1, t2))
    return max(0.0, hi - lo)


RADON = OperatorSpec("radon2d", side=8, angles=6)


class OperatorTestCase(unittest.TestCase):
    def test_diagonal(self):
        A = build_operator(OperatorSpec("diagonal", size=3, decay=1.0))
        self.assertTrue(np.allclose(np.diag([1.0, 0.5, 1.0 / 3.0]), A, rtol=0, atol=1e-15))
        system = compute_svd(build_operator(OperatorSpec("diagonal", size=20, decay=1.5)))
        n = np.arange(1, 21, dtype=np.float64)
        self.assertLessEqual(np.max(np.abs(system.sigma - n**-1.5)), 1e-12)

    def test_convolution(self):
        self.assertTrue(
            np.array_equal(
                np.eye(5),
                build_operator(OperatorSpec("convolution1d", size=5, kernel=(1.0,))),
            )
        )
        A = build_operator(OperatorSpec("convolution1d", size=16, kernel=(0.5, 0.3, 0.2)))
        x = np.random.default_rng(1).standard_normal(16)
        self.assertLessEqual(np.max(np.abs(A @ np.roll(x, 1) - np.roll(A @ x, 1))), 1e-12)

    def test_radon_geometry(self):
        A = build_operator(RADON)
        self.assertEqual((6 * RADON.n_detectors, 64), A.shape)
        self.assertEqual(12, RADON.n_detectors)
        self.assertTrue(np.all(A >= 0))
        self.assertTrue(np.array_equal(np.zeros(A.shape[0]), A @ np.zeros(64)))
        offsets = detector_offsets(RADON.side, RADON.n_detectors)
        for t in range(RADON.angles):
            theta = math.pi * t / RADON.angles
            for k, offset in enumerate(offsets):
                self.assertAlmostEqual(
                    chord_length(RADON.side, theta, offset),
                    A[t * RADON.n_detectors + k].sum(),
                    delta=1e-9,
                )

    def test_adjoint(self):
        rng = np.random.default_rng(9)
        for spec in (
            OperatorSpec("diagonal", size=12, decay=2.0),
            OperatorSpec("convolution1d", size=12, kernel=(1.0, -0.5, 0.25)),
            RADON,
        ):
            A = build_operator(spec)
            x = rng.standard_normal(A.shape[1])
            y = rng.standard_normal(A.shape[0])
            bound = 1e-10 * np.linalg.norm(A, 2) * np.linalg.norm(x) * np.linalg.norm(y)
            self.assertLessEqual(abs((A @ x) @ y - x @ (A.T @ y)), bound)

    def test_spec_validation(self):
        with self.assertRaises(ConfigError) as err:
            OperatorSpec.from_dict({"kind": "fanbeam"})
        self.assertEqual("operator.kind", err.exception.field)
        with self.assertRaises(ConfigError) as err:
            OperatorSpec.from_dict({"kind": "diagonal", "size": 4, "colour": 1})
        self.assertEqual("operator.colour", err.exception.field)
        with self.assertRaises(ConfigError) as err:
            OperatorSpec.from_dict({"kind": "convolution1d", "size": 2, "kernel": [1, 2, 3]})
        self.assertEqual("operator.size", err.exception.field)
        with self.assertRaises(ConfigError) as err:
            OperatorSpec.from_dict({"kind": "radon2d", "side": 65, "angles": 4})
        self.assertEqual("operator.side", err.exception.field)
        with self.assertRaises(ConfigError) as err:
            OperatorSpec.from_dict({"kind": "diagonal", "size": 5000})
        self.assertEqual("operator.size", err.exception.field)
        spec = OperatorSpec.from_dict({"kind": "radon2d", "side": 16, "angles": 24})
        self.assertEqual(spec, OperatorSpec.from_dict(spec.to_dict()))
        self.assertEqual(32, spec.resized(32).side)


class PhantomTestCase(unittest.TestCase):
    def test_phantom(self):
        first = generate_phantom(16, 7)
        second = generate_phantom(16, 7)
        self.assertTrue(np.array_equal(first.pixels, second.pixels))
        self.assertFalse(np.array_equal(first.pixels, generate_phantom(16, 8).pixels))
        self.assertTrue(np.all((first.pixels >= 0) & (first.pixels <= 1)))
        self.assertGreater(first.pixels.max(), 0)
        self.assertEqual(256, len(first.flatten()))
        with self.assertRaises(ConfigError):
            generate_phantom(3, 1)

    def test_phantom_mean_intensity(self):
        mean = np.mean([generate_phantom(16, seed).pixels.mean() for seed in range(100)])
        self.assertGreater(mean, 0.05)
        self.assertLess(mean, 0.6)

    def test_pgm(self):
        phantom = generate_phantom(16, 3)
        with tempfile.TemporaryDirectory() as tempdir:
            path = os.path.join(tempdir, "phantom.pgm")
            save_phantom(phantom, path)
            with open(path, "rb") as infile:
                self.assertEqual(b"P5\n16 16\n65535\n", infile.read(15))
            self.assertLessEqual(np.max(np.abs(read_pgm(path) - phantom.pixels)), 1.0 / 65535)
            csv_path = os.path.join(tempdir, "phantom.csv")
            save_phantom(phantom, csv_path)
            self.assertTrue(np.array_equal(phantom.pixels, load_matrix_csv(csv_path)))
            write_pgm(path, np.array([[-1.0, 2.0]]))
            self.assertTrue(np.array_equal([[0.0, 1.0]], read_pgm(path)))
            with open(path, "wb") as outfile:
                outfile.write(b"P2\n1 1\n65535\n\0\0")
            with self.assertRaises(FormatError):
                read_pgm(path)
            with open(path, "wb") as outfile:
                outfile.write(b"P5\n2 2\n65535\n\0\0")
            with self.assertRaises(FormatError):
                read_pgm(path)


class CorpusTestCase(unittest.TestCase):
    def test_corpus(self):
        spec = OperatorSpec("diagonal", size=8, decay=1.0)
        system = compute_svd(build_operator(spec))
        self.assertTrue(
            np.array_equal(
                sample_data_corpus(spec, 1, 4, system=system),
                sample_data_corpus(spec, 1, 4, system=system),
            )
        )
        with self.assertRaises(TraceClassError) as err:
            sample_data_corpus(spec, 1, 4, q=1.0, system=system)
        self.assertIn("trace-class violated", str(err.exception))
        with self.assertRaises(ValueError):
            sample_data_corpus(spec, 0, 4, system=system)

    def test_corpus_moments(self):
        spec = OperatorSpec("diagonal", size=16, decay=1.0)
        system = compute_svd(build_operator(spec))
        samples = sample_data_corpus(spec, 100000, 12, q=2.0, system=system)
        pi = estimate_profile(samples, system.U).values
        self.assertLess(abs(pi[0] - 1.0), 0.03)
        n = np.arange(1, 11, dtype=np.float64)
        self.assertTrue(np.all(np.abs(pi[:10] / n**-2.0 - 1.0) < 0.05))

    def test_phantom_corpus(self):
        corpus = sample_data_corpus(RADON, 3, 5)
        self.assertEqual((3, 64), corpus.shape)
        self.assertFalse(np.array_equal(corpus[0], corpus[1]))


if __name__ == "__main__":  # pragma: no cover
    unittest.main()
