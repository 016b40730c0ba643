#!/usr/bin/python3
"""Discretized forward operators and synthetic ground truths."""
import logging
import math
from dataclasses import dataclass
from dataclasses import field
from dataclasses import replace

import numpy as np
from scipy.linalg import circulant

from specreg.svd import compute_svd
from specreg.svd import save_matrix_csv
from specreg.utils import ConfigError
from specreg.utils import MAX_GRAM_SIZE
from specreg.utils import PGM_MAXVAL
from specreg.utils import STREAM_DATA
from specreg.utils import STREAM_PHANTOM
from specreg.utils import TraceClassError
from specreg.utils import FormatError
from specreg.utils import derive_seed
from specreg.utils import make_rng
from specreg.utils import read_bytes
from specreg.utils import write_bytes

OPERATOR_KINDS = ("diagonal", "convolution1d", "radon2d")
MIN_PHANTOM_SIDE = 4
ELLIPSE_COUNT = (3, 8)
ELLIPSE_CENTER = 0.7
ELLIPSE_AXES = (0.1, 0.5)
ELLIPSE_INTENSITY = (0.1, 0.6)


@dataclass(frozen=True)
class OperatorSpec:
    """Forward operator description.

    diagonal: size N and decay a, sigma_n = n^-a.
    convolution1d: kernel samples and signal length size, periodic.
    radon2d: image side, angle count and detector count (0 picks
    ceil(sqrt(2) * side)).
    """

    kind: str
    size: int = 0
    decay: float = 1.0
    kernel: tuple = ()
    side: int = 0
    angles: int = 0
    detectors: int = 0

    @property
    def n_detectors(self):
        if self.detectors:
            return self.detectors
        return math.ceil(math.sqrt(2.0) * self.side)

    @property
    def dimension(self):
        if self.kind == "radon2d":
            return self.side
        return self.size

    def resized(self, dimension):
        if self.kind == "radon2d":
            return replace(self, side=int(dimension))
        return replace(self, size=int(dimension))

    def validate(self, prefix="operator"):
        if self.kind not in OPERATOR_KINDS:
            raise ConfigError(
                f"{prefix}.kind", f"unknown kind {self.kind!r}, expected {OPERATOR_KINDS}"
            )
        if self.kind == "diagonal":
            if self.size < 1:
                raise ConfigError(f"{prefix}.size", "must be at least 1")
            if not self.decay > 0:
                raise ConfigError(f"{prefix}.decay", "must be positive")
            if self.size > MAX_GRAM_SIZE:
                raise ConfigError(f"{prefix}.size", f"must be at most {MAX_GRAM_SIZE}")
        elif self.kind == "convolution1d":
            if not self.kernel:
                raise ConfigError(f"{prefix}.kernel", "must not be empty")
            if not all(math.isfinite(k) for k in self.kernel):
                raise ConfigError(f"{prefix}.kernel", "must be finite")
            if not any(self.kernel):
                raise ConfigError(f"{prefix}.kernel", "must not be all zero")
            if self.size < len(self.kernel):
                raise ConfigError(f"{prefix}.size", "must be at least the kernel length")
            if self.size > MAX_GRAM_SIZE:
                raise ConfigError(f"{prefix}.size", f"must be at most {MAX_GRAM_SIZE}")
        else:
            if self.side < 2:
                raise ConfigError(f"{prefix}.side", "must be at least 2")
            if self.angles < 1:
                raise ConfigError(f"{prefix}.angles", "must be at least 1")
            if self.detectors < 0:
                raise ConfigError(f"{prefix}.detectors", "must be non-negative")
            if self.side * self.side > MAX_GRAM_SIZE:
                raise ConfigError(
                    f"{prefix}.side", f"{self.side}^2 pixels exceed {MAX_GRAM_SIZE}"
                )
        return self

    def to_dict(self):
        fields = {"kind": self.kind}
        if self.kind == "diagonal":
            fields.update(size=self.size, decay=self.decay)
        elif self.kind == "convolution1d":
            fields.update(size=self.size, kernel=list(self.kernel))
        else:
            fields.update(side=self.side, angles=self.angles, detectors=self.detectors)
        return fields

    @classmethod
    def from_dict(cls, fields, prefix="operator"):
        if not isinstance(fields, dict):
            raise ConfigError(prefix, "must be an object")
        known = {"kind", "size", "decay", "kernel", "side", "angles", "detectors"}
        unknown = sorted(set(fields) - known)
        if unknown:
            raise ConfigError(f"{prefix}.{unknown[0]}", "unknown field")
        try:
            spec = cls(
                kind=str(fields.get("kind", "")),
                size=int(fields.get("size", 0)),
                decay=float(fields.get("decay", 1.0)),
                kernel=tuple(float(k) for k in fields.get("kernel", ())),
                side=int(fields.get("side", 0)),
                angles=int(fields.get("angles", 0)),
                detectors=int(fields.get("detectors", 0)),
            )
        except (TypeError, ValueError) as err:
            raise ConfigError(prefix, str(err)) from err
        return spec.validate(prefix)


def diagonal_operator(size, decay):
    return np.diag(np.arange(1, size + 1, dtype=np.float64) ** -decay)


def convolution_operator(kernel, length):
    column = np.zeros(length)
    column[: len(kernel)] = kernel
    return circulant(column)


def _axis_crossings(offset, direction, half, lines):
    """Ray parameters where offset + tau * direction meets each grid line."""
    if abs(direction) < 1e-15:
        if abs(offset) >= half:
            return None, np.empty(0)
        return (-np.inf, np.inf), np.empty(0)
    taus = (lines - offset) / direction
    return (min(taus[0], taus[-1]), max(taus[0], taus[-1])), taus


def ray_weights(side, theta, offset):
    """Intersection lengths of one ray with every pixel, row-major from the top.

    The image occupies [-side/2, side/2]^2 with unit pixels; the ray is
    offset * n + tau * d with n = (cos, sin) and d = (-sin, cos).
    """
    half = side / 2.0
    lines = np.linspace(-half, half, side + 1)
    normal = np.array([math.cos(theta), math.sin(theta)])
    direction = np.array([-normal[1], normal[0]])
    origin = offset * normal
    weights = np.zeros(side * side)
    x_span, x_taus = _axis_crossings(origin[0], direction[0], half, lines)
    y_span, y_taus = _axis_crossings(origin[1], direction[1], half, lines)
    if x_span is None or y_span is None:
        return weights
    tau_in = max(x_span[0], y_span[0])
    tau_out = min(x_span[1], y_span[1])
    if not tau_out > tau_in:
        return weights
    taus = np.concatenate([[tau_in, tau_out], x_taus, y_taus])
    taus = np.unique(taus[(taus >= tau_in) & (taus <= tau_out)])
    lengths = np.diff(taus)
    mids = 0.5 * (taus[:-1] + taus[1:])
    points = origin[None, :] + mids[:, None] * direction[None, :]
    cols = np.clip(np.floor(points[:, 0] + half).astype(int), 0, side - 1)
    rows = np.clip(np.floor(half - points[:, 1]).astype(int), 0, side - 1)
    np.add.at(weights, rows * side + cols, lengths)
    return weights


def detector_offsets(side, detectors):
    radius = side / math.sqrt(2.0)
    return -radius + (np.arange(detectors) + 0.5) * (2.0 * radius / detectors)


def radon_operator(side, angles, detectors):
    """Parallel-beam system matrix, row t * detectors + k for angle t, bin k."""
    offsets = detector_offsets(side, detectors)
    rows = []
    for t in range(angles):
        theta = math.pi * t / angles
        for offset in offsets:
            rows.append(ray_weights(side, theta, offset))
    return np.array(rows)


def build_operator(spec):
    spec.validate()
    if spec.kind == "diagonal":
        A = diagonal_operator(spec.size, spec.decay)
    elif spec.kind == "convolution1d":
        A = convolution_operator(spec.kernel, spec.size)
    else:
        A = radon_operator(spec.side, spec.angles, spec.n_detectors)
    logging.info("built %s operator %ux%u", spec.kind, A.shape[0], A.shape[1])
    return A


@dataclass(frozen=True, eq=False)
class Phantom:
    pixels: np.ndarray
    seed: int
    generator: str = "ellipses"
    ellipses: tuple = field(default=(), repr=False)

    @property
    def side(self):
        return self.pixels.shape[0]

    def flatten(self):
        return self.pixels.reshape(-1)


def generate_phantom(side, seed):
    """Sum of 3-8 random ellipses on a [-1, 1]^2 grid, clipped to [0, 1]."""
    if side < MIN_PHANTOM_SIDE:
        raise ConfigError("side", f"phantom side must be at least {MIN_PHANTOM_SIDE}")
    rng = make_rng(seed, STREAM_PHANTOM)
    centers = (np.arange(side) + 0.5) / side * 2.0 - 1.0
    x = centers[None, :]
    y = -centers[:, None]
    pixels = np.zeros((side, side))
    ellipses = []
    for _ in range(int(rng.integers(ELLIPSE_COUNT[0], ELLIPSE_COUNT[1] + 1))):
        cx, cy = rng.uniform(-ELLIPSE_CENTER, ELLIPSE_CENTER, size=2)
        a, b = rng.uniform(ELLIPSE_AXES[0], ELLIPSE_AXES[1], size=2)
        phi = rng.uniform(0.0, math.pi)
        intensity = rng.uniform(ELLIPSE_INTENSITY[0], ELLIPSE_INTENSITY[1])
        dx = x - cx
        dy = y - cy
        along = (dx * math.cos(phi) + dy * math.sin(phi)) / a
        across = (-dx * math.sin(phi) + dy * math.cos(phi)) / b
        pixels = pixels + intensity * (along**2 + across**2 <= 1.0)
        ellipses.append((cx, cy, a, b, phi, intensity))
    pixels = np.clip(pixels, 0.0, 1.0)
    pixels.setflags(write=False)
    return Phantom(pixels=pixels, seed=seed, ellipses=tuple(ellipses))


def sample_data_corpus(spec, count, seed, q=2.0, system=None):
    """Ground-truth samples, one per row.

    radon2d gives flattened phantoms. Other kinds give
    x = sum_n c_n xi_n u_n with c_n^2 = n^-q, which is trace class for q > 1.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    if spec.kind == "radon2d":
        return np.array(
            [
                generate_phantom(spec.side, derive_seed(seed, STREAM_DATA, i)).flatten()
                for i in range(count)
            ]
        )
    if not q > 1:
        raise TraceClassError("data.exponent", f"trace-class violated: q={q} must exceed 1")
    if system is None:
        system = compute_svd(build_operator(spec))
    scales = np.arange(1, system.n_modes + 1, dtype=np.float64) ** (-q / 2.0)
    xi = make_rng(seed, STREAM_DATA).standard_normal((count, system.n_modes))
    return (xi * scales) @ system.U.T


def pgm_bytes(image):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError("PGM export needs a 2-D image")
    levels = np.round(np.clip(image, 0.0, 1.0) * PGM_MAXVAL).astype(">u2")
    header = f"P5\n{image.shape[1]} {image.shape[0]}\n{PGM_MAXVAL}\n".encode("ascii")
    return header + levels.tobytes()


def write_pgm(path, image):
    return write_bytes(path, pgm_bytes(image))


def read_pgm(path):
    """16-bit P5 image scaled back to [0, 1]."""
    data = read_bytes(path)
    fields = []
    offset = 0
    while len(fields) < 4:
        while offset < len(data) and data[offset : offset + 1].isspace():
            offset += 1
        start = offset
        while offset < len(data) and not data[offset : offset + 1].isspace():
            offset += 1
        if start == offset:
            raise FormatError("truncated PGM header", offset)
        fields.append(data[start:offset])
    offset += 1
    if fields[0] != b"P5":
        raise FormatError("not a P5 PGM", 0)
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError as err:
        raise FormatError("bad PGM header", 0) from err
    if maxval != PGM_MAXVAL:
        raise FormatError(f"maxval {maxval} is not {PGM_MAXVAL}", offset)
    if len(data) != offset + 2 * width * height:
        raise FormatError("PGM payload size mismatch", len(data))
    levels = np.frombuffer(data, dtype=">u2", offset=offset)
    return levels.reshape(height, width).astype(np.float64) / PGM_MAXVAL


def save_phantom(phantom, path):
    """Export as PGM or, for .csv names, as a matrix CSV."""
    if str(path).endswith(".csv"):
        return save_matrix_csv(phantom.pixels, path)
    return write_pgm(path, phantom.pixels)
