#!/usr/bin/python3
"""Singular systems of dense forward operators.

A forward operator A maps X (length cols) to Y (length rows) and is
stored as A = V diag(sigma) U^T, so A u_n = sigma_n v_n.

    system = compute_svd(load_matrix_csv("operator.csv"))
    save_system(system, "operator.svdsys.zst")
"""
import io
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from specreg.utils import CSV_FLOAT_FORMAT
from specreg.utils import DimensionMismatchError
from specreg.utils import EmptySpectrumError
from specreg.utils import FormatError
from specreg.utils import JACOBI_TOL
from specreg.utils import JacobiConvergenceError
from specreg.utils import MAX_GRAM_SIZE
from specreg.utils import MAX_SWEEPS
from specreg.utils import UnsupportedVersionError
from specreg.utils import WorkspaceTooLargeError
from specreg.utils import read_bytes
from specreg.utils import write_bytes
from specreg.utils import write_text

SYSTEM_MAGIC = b"\x89SVDSYS\n"
SYSTEM_VERSION = 1
SYSTEM_HEADER = np.dtype(
    [
        ("magic", "S8"),
        ("version", "<u4"),
        ("n_modes", "<u8"),
        ("dim_x", "<u8"),
        ("dim_y", "<u8"),
    ]
)
SIGN_TOL = 1e-12


def _frozen(values):
    values = np.array(values, dtype=np.float64, copy=True)
    values.setflags(write=False)
    return values


@dataclass(frozen=True, eq=False)
class SingularSystem:
    sigma: np.ndarray
    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sigma", _frozen(self.sigma))
        object.__setattr__(self, "U", _frozen(self.U))
        object.__setattr__(self, "V", _frozen(self.V))
        if self.sigma.ndim != 1 or self.U.ndim != 2 or self.V.ndim != 2:
            raise DimensionMismatchError("sigma must be 1-D, U and V 2-D")
        n_modes = len(self.sigma)
        if self.U.shape[1] != n_modes or self.V.shape[1] != n_modes:
            raise DimensionMismatchError(
                f"{n_modes} singular values but U has {self.U.shape[1]} "
                f"and V has {self.V.shape[1]} columns"
            )

    @property
    def n_modes(self):
        return len(self.sigma)

    @property
    def dim_x(self):
        return self.U.shape[0]

    @property
    def dim_y(self):
        return self.V.shape[0]

    def matrix(self):
        """Dense V diag(sigma) U^T."""
        return (self.V * self.sigma) @ self.U.T

    def truncated(self, n_modes):
        return SingularSystem(
            self.sigma[:n_modes], self.U[:, :n_modes], self.V[:, :n_modes]
        )

    def equals(self, other):
        return (
            np.array_equal(self.sigma, other.sigma)
            and np.array_equal(self.U, other.U)
            and np.array_equal(self.V, other.V)
        )


def check_matrix(A):
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or 0 in A.shape:
        raise DimensionMismatchError(f"expected a non-empty 2-D matrix, got {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    return A


def _round_robin(n):
    """Rounds of disjoint column pairs covering every pair once (n even)."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        p = np.array(players[:half])
        q = np.array(players[half:][::-1])
        rounds.append((p, q))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _jacobi(B, max_sweeps):
    """Orthogonalize the columns of B (m >= n) by one-sided Jacobi rotations.

    Returns (B W, W) with W orthogonal and the columns of B W mutually
    orthogonal to JACOBI_TOL relative.
    """
    _, n = B.shape
    B = B.copy()
    W = np.eye(n)
    if n == 1:
        return B, W
    rounds = _round_robin(n + (n % 2))
    tiny = np.finfo(np.float64).tiny
    for sweep in range(max_sweeps):
        rotations = 0
        for p, q in rounds:
            keep = (p < n) & (q < n)
            p, q = p[keep], q[keep]
            bp = B[:, p]
            bq = B[:, q]
            alpha = np.einsum("ij,ij->j", bp, bp)
            beta = np.einsum("ij,ij->j", bq, bq)
            gamma = np.einsum("ij,ij->j", bp, bq)
            active = (
                (alpha > tiny)
                & (beta > tiny)
                & (np.abs(gamma) > JACOBI_TOL * np.sqrt(alpha * beta))
            )
            if not np.any(active):
                continue
            rotations += int(np.count_nonzero(active))
            p, q = p[active], q[active]
            alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.where(zeta >= 0, 1.0, -1.0) / (
                np.abs(zeta) + np.sqrt(1.0 + zeta * zeta)
            )
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            for M in (B, W):
                mp = M[:, p]
                mq = M[:, q]
                M[:, p] = c * mp - s * mq
                M[:, q] = s * mp + c * mq
        logging.debug("jacobi sweep %u: %u rotations", sweep, rotations)
        if not rotations:
            return B, W
    raise JacobiConvergenceError(f"no convergence after {max_sweeps} sweeps")


def _fix_signs(U, V):
    for n in range(U.shape[1]):
        nonzero = np.flatnonzero(np.abs(U[:, n]) > SIGN_TOL)
        if len(nonzero) and U[nonzero[0], n] < 0:
            U[:, n] = -U[:, n]
            V[:, n] = -V[:, n]


def compute_svd(A, rank_tol=0.0, max_sweeps=MAX_SWEEPS):
    """Singular system of A, dropping modes with sigma_n <= rank_tol * sigma_1.

    Modes at or below max(rows, cols) * machine epsilon * sigma_1 are
    numerically zero and always dropped.
    """
    A = check_matrix(A)
    if rank_tol < 0:
        raise ValueError("rank_tol must be non-negative")
    rows, cols = A.shape
    if min(rows, cols) > MAX_GRAM_SIZE:
        raise WorkspaceTooLargeError(
            f"{rows}x{cols} needs a {min(rows, cols)}^2 Gram workspace, "
            f"limit is {MAX_GRAM_SIZE}^2"
        )
    transposed = rows < cols
    B, W = _jacobi(A.T if transposed else A, max_sweeps)
    norms = np.sqrt(np.einsum("ij,ij->j", B, B))
    order = np.argsort(-norms, kind="stable")
    norms = norms[order]
    B = B[:, order]
    W = W[:, order]
    if not len(norms) or norms[0] == 0:
        raise EmptySpectrumError("empty spectrum: matrix is zero")
    floor = max(rank_tol, max(rows, cols) * np.finfo(np.float64).eps) * norms[0]
    n_modes = int(np.count_nonzero(norms > floor))
    if n_modes == 0:
        raise EmptySpectrumError(f"empty spectrum: no modes above {floor}")
    sigma = norms[:n_modes]
    normalized = B[:, :n_modes] / sigma
    kept = W[:, :n_modes].copy()
    if transposed:
        U, V = normalized, kept
    else:
        U, V = kept, normalized
    _fix_signs(U, V)
    logging.info(
        "svd of %ux%u: %u modes, sigma in [%g, %g]",
        rows,
        cols,
        n_modes,
        sigma[-1],
        sigma[0],
    )
    return SingularSystem(sigma, U, V)


def _check_vector(x, dim, what):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != dim:
        raise DimensionMismatchError(f"{what} has shape {x.shape}, expected length {dim}")
    return x


def coefficients_x(system, x):
    """<x, u_n> for a vector, or row-wise for a batch."""
    return _check_vector(x, system.dim_x, "x") @ system.U


def coefficients_y(system, y):
    """<y, v_n> for a vector, or row-wise for a batch."""
    return _check_vector(y, system.dim_y, "y") @ system.V


def apply_forward(system, x):
    return (coefficients_x(system, x) * system.sigma) @ system.V.T


def project_row_space(system, x):
    return coefficients_x(system, x) @ system.U.T


def system_to_bytes(system):
    header = np.zeros((), dtype=SYSTEM_HEADER)
    header["magic"] = SYSTEM_MAGIC
    header["version"] = SYSTEM_VERSION
    header["n_modes"] = system.n_modes
    header["dim_x"] = system.dim_x
    header["dim_y"] = system.dim_y
    return b"".join(
        [
            header.tobytes(),
            system.sigma.astype("<f8").tobytes(),
            np.ascontiguousarray(system.U, dtype="<f8").tobytes(),
            np.ascontiguousarray(system.V, dtype="<f8").tobytes(),
        ]
    )


def system_from_bytes(data):
    header_size = SYSTEM_HEADER.itemsize
    if len(data) < header_size:
        raise FormatError("truncated header", len(data))
    header = np.frombuffer(data, dtype=SYSTEM_HEADER, count=1)[0]
    if header["magic"] != SYSTEM_MAGIC:
        raise FormatError("not a singular-system file", 0)
    version = int(header["version"])
    if version != SYSTEM_VERSION:
        raise UnsupportedVersionError(
            f"unsupported version {version}, expected {SYSTEM_VERSION}", 8
        )
    n_modes = int(header["n_modes"])
    dim_x = int(header["dim_x"])
    dim_y = int(header["dim_y"])
    if n_modes == 0 or n_modes > min(dim_x, dim_y):
        raise FormatError(f"invalid dimensions {n_modes}/{dim_x}/{dim_y}", 12)
    expected = header_size + 8 * n_modes * (1 + dim_x + dim_y)
    if len(data) < expected:
        raise FormatError("truncated payload", len(data))
    if len(data) > expected:
        raise FormatError("trailing bytes", expected)
    offset = header_size
    sigma = np.frombuffer(data, dtype="<f8", count=n_modes, offset=offset)
    offset += 8 * n_modes
    U = np.frombuffer(data, dtype="<f8", count=dim_x * n_modes, offset=offset)
    offset += 8 * dim_x * n_modes
    V = np.frombuffer(data, dtype="<f8", count=dim_y * n_modes, offset=offset)
    return SingularSystem(
        sigma.astype(np.float64),
        U.reshape(dim_x, n_modes).astype(np.float64),
        V.reshape(dim_y, n_modes).astype(np.float64),
    )


def save_system(system, path):
    return write_bytes(path, system_to_bytes(system))


def load_system(path):
    return system_from_bytes(read_bytes(path))


def matrix_to_csv(A):
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    body = pd.DataFrame(A).to_csv(
        header=False, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n"
    )
    return f"{A.shape[0]},{A.shape[1]}\n{body}"


def save_matrix_csv(A, path):
    return write_text(path, matrix_to_csv(A))


def load_matrix_csv(path):
    """Read a matrix CSV: a `rows,cols` line, then one row per line."""
    text = read_bytes(path).decode("utf-8")
    first, _, body = text.partition("\n")
    try:
        rows, cols = (int(field) for field in first.strip().split(","))
    except ValueError as err:
        raise FormatError(f"bad header {first.strip()!r}", 0) from err
    if rows <= 0 or cols <= 0:
        raise FormatError(f"bad dimensions {rows}x{cols}", 0)
    if not body.strip():
        raise FormatError("no matrix rows", len(first) + 1)
    df = pd.read_csv(io.StringIO(body), header=None, dtype=np.float64)
    if df.shape != (rows, cols):
        raise DimensionMismatchError(
            f"header says {rows}x{cols}, file holds {df.shape[0]}x{df.shape[1]}"
        )
    return check_matrix(df.to_numpy())
