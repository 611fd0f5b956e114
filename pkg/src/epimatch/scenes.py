"""Synthetic two-view scenes with known pose and inlier labels.

Each sample is built from a random relative pose and a cloud of 3-D points
visible in both views.  Inlier correspondences are the two projections of the
same point plus Gaussian pixel noise; outliers pair a visible view-1 point
with a uniformly drawn view-2 coordinate.  Rows are shuffled and labelled by
thresholding the symmetric epipolar distance against the ground-truth
essential matrix, so a label is a property of the noisy coordinates, not of
how a row was constructed.

Sampling is driven by a counter-based Philox generator keyed by
``(seed, sample index)``: sample i of a dataset is reproducible in isolation
and insensitive to how many draws other samples consumed.

Dataset file format (all little-endian)::

    magic   "C2VD"
    u32     version (currently 1)
    u64     record count
    record: u32 n, 9*f64 E (row-major), 9*f64 R, 3*f64 t,
            n*4*f64 coords, n*u8 labels
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import (
    BadMagicError,
    GenerationExhaustedError,
    TruncatedFileError,
    VersionMismatchError,
)

Array = np.ndarray

DEFAULT_TAU = 1e-4
MAX_RESAMPLES = 100

# sampling box for image coordinates and visibility bounds for view 2
_BOX = 0.7
_VIEW2_BOX = 0.8
_MIN_DEPTH2 = 0.2
# baseline length as a fraction of max_baseline, kept away from zero so the
# epipolar constraint stays informative (a zero baseline satisfies it for
# every translation direction)
_BASELINE_LO = 0.5

_MAGIC = b"C2VD"
_VERSION = 1


@dataclass
class SceneConfig:
    """Generation parameters for a dataset of correspondence sets."""

    seed: int = 0
    pairs: int = 2000
    n: int = 256
    outlier_ratio: float = 0.5
    noise_sigma: float = 1e-3
    depth_range: tuple[float, float] = (2.0, 10.0)
    max_rotation_deg: float = 30.0
    max_baseline: float = 1.0

    def __post_init__(self):
        if self.pairs < 0:
            raise ValueError("pairs must be non-negative")
        if self.n < 8:
            raise ValueError("need at least 8 correspondences per sample")
        if not 0.0 <= self.outlier_ratio < 1.0:
            raise ValueError("outlier_ratio must be in [0, 1)")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be non-negative")
        lo, hi = self.depth_range
        if not 0.0 < lo <= hi:
            raise ValueError("depth_range must be positive and ordered")
        if self.max_baseline <= 0.0:
            raise ValueError("max_baseline must be positive")


@dataclass
class SampleRecord:
    """One correspondence set with its ground truth."""

    coords: Array   # (n, 4) float64
    labels: Array   # (n,) bool
    e: Array        # (3, 3) unit Frobenius norm
    pose: geometry.Pose


def label(coords: Array, e: Array, tau: float = DEFAULT_TAU) -> Array:
    """Boolean inlier labels: symmetric epipolar distance below ``tau``."""
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    return geometry.residuals(coords, e) < tau


def _sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([seed, index], dtype=np.uint64)))


def _fill_inliers(rng, n_in, cfg, r, t_vec):
    """Rejection-sample 3-D points visible in both views, projected to rows."""
    lo, hi = cfg.depth_range
    rows = np.empty((n_in, 4))
    have = 0
    for _ in range(60):
        if have >= n_in:
            break
        m = max(n_in - have, 32)
        uv = rng.uniform(-_BOX, _BOX, size=(m, 2))
        z = rng.uniform(lo, hi, size=m)
        pts = np.column_stack([uv[:, 0] * z, uv[:, 1] * z, z])
        pts2 = pts @ r.T + t_vec
        with np.errstate(divide="ignore", invalid="ignore"):
            proj2 = pts2[:, :2] / pts2[:, 2, None]
        ok = (pts2[:, 2] > _MIN_DEPTH2) & (np.abs(proj2) <= _VIEW2_BOX).all(axis=1)
        take = min(int(ok.sum()), n_in - have)
        idx = np.flatnonzero(ok)[:take]
        rows[have:have + take, 0:2] = uv[idx]
        rows[have:have + take, 2:4] = proj2[idx]
        have += take
    return rows if have >= n_in else None


def gen_scene(cfg: SceneConfig, index: int, tau: float = DEFAULT_TAU) -> SampleRecord:
    """Generate sample ``index`` of the dataset described by ``cfg``.

    Deterministic in ``(cfg.seed, index)``.  A draw whose noisy rows end up
    with fewer than 8 inlier labels (or whose pose leaves too few points
    visible in both views) is discarded and redrawn from the same stream;
    after 100 discards the sample is declared unreachable.
    """
    rng = _sample_rng(cfg.seed, index)
    n = cfg.n
    n_out = int(round(n * cfg.outlier_ratio))
    n_in = n - n_out

    for _ in range(MAX_RESAMPLES):
        axis = rng.normal(size=3)
        angle = np.radians(rng.uniform(0.0, cfg.max_rotation_deg))
        r = geometry.rotation_about_axis(axis, angle)
        t_dir = rng.normal(size=3)
        t_dir /= np.linalg.norm(t_dir)
        t_vec = t_dir * rng.uniform(_BASELINE_LO, 1.0) * cfg.max_baseline

        inlier_rows = _fill_inliers(rng, n_in, cfg, r, t_vec)
        if inlier_rows is None:
            continue
        outlier_rows = np.column_stack([
            rng.uniform(-_BOX, _BOX, size=(n_out, 2)),
            rng.uniform(-_BOX, _BOX, size=(n_out, 2)),
        ])
        coords = np.concatenate([inlier_rows, outlier_rows], axis=0)
        if cfg.noise_sigma > 0.0:
            coords = coords + rng.normal(0.0, cfg.noise_sigma, size=coords.shape)
        coords = coords[rng.permutation(n)]

        pose = geometry.Pose(r=r, t=t_dir)
        e = geometry.essential_from_pose(pose)
        labels = label(coords, e, tau)
        if int(labels.sum()) >= 8:
            return SampleRecord(coords=coords, labels=labels, e=e, pose=pose)
    raise GenerationExhaustedError(
        f"sample {index}: {MAX_RESAMPLES} draws without 8 labelled inliers")


def gen_dataset(cfg: SceneConfig, tau: float = DEFAULT_TAU) -> list[SampleRecord]:
    """All ``cfg.pairs`` samples, generated independently per index."""
    return [gen_scene(cfg, i, tau) for i in range(cfg.pairs)]


# --- binary dataset I/O ------------------------------------------------------

def write_dataset(path, records: list[SampleRecord]) -> None:
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<IQ", _VERSION, len(records)))
        for rec in records:
            n = rec.coords.shape[0]
            f.write(struct.pack("<I", n))
            f.write(np.ascontiguousarray(rec.e, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(rec.pose.r, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(rec.pose.t, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(rec.coords, dtype="<f8").tobytes())
            f.write(rec.labels.astype(np.uint8).tobytes())


def _read_exact(f, count: int) -> bytes:
    buf = f.read(count)
    if len(buf) != count:
        raise TruncatedFileError(f"wanted {count} bytes, got {len(buf)}")
    return buf


def read_dataset(path) -> list[SampleRecord]:
    with open(path, "rb") as f:
        magic = f.read(len(_MAGIC))
        if len(magic) < len(_MAGIC):
            raise TruncatedFileError("file shorter than magic")
        if magic != _MAGIC:
            raise BadMagicError(f"bad magic {magic!r}")
        version, count = struct.unpack("<IQ", _read_exact(f, 12))
        if version != _VERSION:
            raise VersionMismatchError(f"dataset version {version}, expected {_VERSION}")
        records = []
        for _ in range(count):
            (n,) = struct.unpack("<I", _read_exact(f, 4))
            e = np.frombuffer(_read_exact(f, 72), dtype="<f8").reshape(3, 3).copy()
            r = np.frombuffer(_read_exact(f, 72), dtype="<f8").reshape(3, 3).copy()
            t = np.frombuffer(_read_exact(f, 24), dtype="<f8").copy()
            coords = np.frombuffer(_read_exact(f, n * 32), dtype="<f8").reshape(n, 4).copy()
            labels = np.frombuffer(_read_exact(f, n), dtype=np.uint8) != 0
            records.append(SampleRecord(coords=coords, labels=labels, e=e,
                                        pose=geometry.Pose(r=r, t=t)))
    return records
