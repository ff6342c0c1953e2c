"""Synthetic binary data from a sparse-loading logistic latent model.

Randomness: every dataset owns a ``numpy.random.Generator`` backed by
PCG64, seeded from the 64-bit ``GenConfig.seed``.  Latent scores are drawn
first (N x k standard normals, ziggurat method, row-major), then N x d
uniforms in row-major order; ``x_ij = 1`` iff ``u_ij < pi_ij``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, DataError

FORMAT_VERSION = 1
BLOCK = 20


@dataclass(frozen=True)
class GenConfig:
    N: int
    d: int
    k: int = 2
    variances: tuple[float, ...] = (0.09, 0.25)
    seed: int = 0
    keep_probabilities: bool = False

    def __post_init__(self):
        object.__setattr__(self, "variances", tuple(float(v) for v in self.variances))
        if self.N < 1:
            raise ConfigurationError(f"N must be >= 1, got {self.N}")
        if self.k < 1:
            raise ConfigurationError(f"k must be >= 1, got {self.k}")
        if self.d < BLOCK * self.k:
            raise ConfigurationError(
                f"d={self.d} too small for the {BLOCK}-row loading blocks of k={self.k}"
            )
        if len(self.variances) != self.k:
            raise ConfigurationError(
                f"need one variance per latent component: k={self.k}, got {len(self.variances)}"
            )
        if any(not v > 0 for v in self.variances):
            raise ConfigurationError(f"variances must be strictly positive: {self.variances}")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must fit in an unsigned 64-bit integer")


@dataclass
class BinaryDataset:
    X: np.ndarray
    config: GenConfig | None = None
    Pi: np.ndarray | None = field(default=None, repr=False)

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


def make_loadings(d: int, k: int) -> np.ndarray:
    """Block-sparse loadings: column c is one on rows 20c..20c+19 (0-based)."""
    if k < 1:
        raise ConfigurationError(f"k must be >= 1, got {k}")
    if d < BLOCK * k:
        raise ConfigurationError(f"d={d} too small for k={k} blocks of {BLOCK} rows")
    B = np.zeros((d, k))
    for c in range(k):
        B[BLOCK * c: BLOCK * (c + 1), c] = 1.0
    return B


def build_probability_matrix(A, B) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise ConfigurationError(f"shape mismatch: A {A.shape}, B {B.shape}")
    return expit(A @ B.T)


def generate_dataset(config: GenConfig) -> BinaryDataset:
    rng = np.random.Generator(np.random.PCG64(config.seed))
    A = rng.standard_normal((config.N, config.k)) * np.sqrt(np.asarray(config.variances))
    Pi = build_probability_matrix(A, make_loadings(config.d, config.k))
    U = rng.random((config.N, config.d))
    X = (U < Pi).astype(np.uint8)
    return BinaryDataset(X=X, config=config, Pi=Pi if config.keep_probabilities else None)


def check_binary(X) -> np.ndarray:
    X = np.asarray(X)
    if X.ndim != 2:
        raise DataError(f"expected a 2-d observation matrix, got shape {X.shape}")
    bad = np.argwhere((X != 0) & (X != 1))
    if bad.size:
        idx = tuple(int(i) for i in bad[0])
        raise DataError(f"non-binary entry {X[idx]!r} at index {idx}", index=idx)
    return X


def metadata_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".meta.json")


def save_dataset(data: BinaryDataset, path) -> tuple[Path, Path]:
    """Write ``path`` (CSV of 0/1) and its ``<stem>.meta.json`` header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerows(data.X.astype(int).tolist())
    meta = {
        "format_version": FORMAT_VERSION,
        "N": data.N,
        "d": data.d,
        "seed": data.config.seed if data.config else None,
        "config": asdict(data.config) if data.config else None,
    }
    mpath = metadata_path(path)
    mpath.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path, mpath


def load_dataset(path) -> BinaryDataset:
    """Read a 0/1 CSV; the metadata sidecar is optional."""
    path = Path(path)
    X = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    X = check_binary(X).astype(np.uint8)
    config = None
    mpath = metadata_path(path)
    if mpath.exists():
        meta = json.loads(mpath.read_text())
        if meta.get("format_version") != FORMAT_VERSION:
            raise DataError(f"unsupported dataset format version {meta.get('format_version')}")
        if (meta["N"], meta["d"]) != X.shape:
            raise DataError(f"metadata says {meta['N']}x{meta['d']}, CSV is {X.shape[0]}x{X.shape[1]}")
        if meta.get("config"):
            config = GenConfig(**meta["config"])
    return BinaryDataset(X=X, config=config)
