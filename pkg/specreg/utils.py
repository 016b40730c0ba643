#!/usr/bin/python3
import concurrent.futures
import hashlib
import io
import logging
import math
import os

import numpy as np
import zstandard

SEED_ENV = "SPECREG_SEED"
LOGLEVELS = ["critical", "error", "warning", "info", "debug"]

# Largest min(rows, cols) the Jacobi SVD will accept.
MAX_GRAM_SIZE = 4096
MAX_SWEEPS = 40
JACOBI_TOL = 1e-12
# Log-log slope below -SLOPE_TOLERANCE counts as a decaying ratio.
SLOPE_TOLERANCE = 0.05
SUMMABILITY_CONFIDENCE = 0.95
PGM_MAXVAL = 65535
CSV_FLOAT_FORMAT = "%.17g"
READ_CHUNK = 1 << 20

# Stream keys so generators for different purposes never share a counter.
STREAM_NOISE = 1
STREAM_DATA = 2
STREAM_PHANTOM = 3
STREAM_CORPUS = 4
STREAM_TEST = 5


class ConfigError(ValueError):
    """Invalid configuration value, carrying the dotted field path."""

    def __init__(self, field, msg):
        self.field = field
        self.msg = msg
        super().__init__(f"{field}: {msg}")


class TraceClassError(ConfigError):
    pass


class DimensionMismatchError(ValueError):
    pass


class FormatError(ValueError):
    """Malformed file, carrying the byte offset where parsing stopped."""

    def __init__(self, msg, offset):
        self.offset = offset
        super().__init__(f"{msg} (at byte {offset})")


class UnsupportedVersionError(FormatError):
    pass


class NumericalError(ArithmeticError):
    pass


class EmptySpectrumError(NumericalError):
    pass


class WorkspaceTooLargeError(NumericalError):
    pass


class JacobiConvergenceError(NumericalError):
    pass


class NonBracketingError(NumericalError):
    pass


class AssumptionViolatedError(NumericalError):
    """A data profile has Pi_n = 0; mode is 1-based."""

    def __init__(self, mode):
        self.mode = mode
        super().__init__(f"Assumption 1 violated: Pi_n = 0 at mode n={mode}")


def resolve_seed(*candidates):
    """First non-None candidate, then $SPECREG_SEED, then 0."""
    for candidate in candidates:
        if candidate is not None:
            return check_seed(candidate)
    env_seed = os.getenv(SEED_ENV)
    if env_seed:
        return check_seed(env_seed)
    return 0


def check_seed(seed):
    try:
        seed = int(seed)
    except (TypeError, ValueError) as err:
        raise ConfigError("seed", f"not an integer: {seed!r}") from err
    if seed < 0:
        raise ConfigError("seed", "must be non-negative")
    return seed


def make_rng(seed, *keys):
    """Counter-based Philox generator for (seed, keys...).

    The same (seed, keys) always yields the same stream, independent of
    which process or in which order draws are made.
    """
    sequence = np.random.SeedSequence(
        check_seed(seed), spawn_key=tuple(int(key) for key in keys)
    )
    return np.random.Generator(np.random.Philox(sequence))


def derive_seed(seed, *keys):
    """Derive a plain integer seed for a sub-task."""
    sequence = np.random.SeedSequence(
        check_seed(seed), spawn_key=tuple(int(key) for key in keys)
    )
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def get_reader(filename):
    # nosemgrep:github.workflows.config.useless-inner-function
    def zst_reader(x):
        return zstandard.ZstdDecompressor().stream_reader(
            open(x, "rb"), read_across_frames=True
        )

    def default_reader(x):
        return open(x, "rb")

    if str(filename).endswith(".zst"):
        return zst_reader
    return default_reader


def read_bytes(filename):
    reader = get_reader(filename)
    buffer = io.BytesIO()
    with reader(filename) as infile:
        while True:
            chunk = infile.read(READ_CHUNK)
            if not chunk:
                break
            buffer.write(chunk)
    return buffer.getvalue()


def dotfile_for(filename):
    return os.path.join(
        os.path.dirname(filename), "." + os.path.basename(filename)
    )


def write_bytes(filename, data):
    """Write data via a dotfile renamed into place, compressing .zst names."""
    filename = str(filename)
    if filename.endswith(".zst"):
        data = zstandard.ZstdCompressor().compress(data)
    dotfile = dotfile_for(filename)
    with open(dotfile, "wb") as outfile:
        outfile.write(data)
    os.rename(dotfile, filename)
    return filename


def write_text(filename, text):
    return write_bytes(filename, text.encode("utf-8"))


def write_dataframe(df, filename, **kwargs):
    kwargs.setdefault("index", False)
    kwargs.setdefault("float_format", CSV_FLOAT_FORMAT)
    return write_text(filename, df.to_csv(lineterminator="\n", **kwargs))


def finite_or_none(value):
    """JSON has no inf or nan, so they are reported as null."""
    if value is None or not math.isfinite(value):
        return None
    return float(value)


def sha256_file(filename):
    digest = hashlib.sha256()
    with open(filename, "rb") as infile:
        for chunk in iter(lambda: infile.read(READ_CHUNK), b""):
            digest.update(chunk)
    return digest.hexdigest()


def replace_ext(filename, ext):
    base, _ = os.path.splitext(filename)
    return f"{base}.{ext}"


def map_cells(func, cells, workers=1):
    """Apply func to every cell, in order, optionally over a process pool."""
    cells = list(cells)
    if workers is None or workers <= 1 or len(cells) <= 1:
        return [func(cell) for cell in cells]
    logging.info("fanning %u cells out to %u workers", len(cells), workers)
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(func, cells))
