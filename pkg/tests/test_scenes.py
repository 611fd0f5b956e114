"""Tests for synthetic scene generation, labelling and the dataset file format."""
import numpy as np
import pytest

from epimatch import geometry as geo
from epimatch import scenes
from epimatch.errors import (
    BadMagicError,
    GenerationExhaustedError,
    TruncatedFileError,
    VersionMismatchError,
)
from epimatch.scenes import SceneConfig, gen_dataset, gen_scene, label, read_dataset, write_dataset


def test_scene_config_validation():
    with pytest.raises(ValueError):
        SceneConfig(n=7)  # eight-point needs 8 rows
    with pytest.raises(ValueError):
        SceneConfig(outlier_ratio=1.0)
    with pytest.raises(ValueError):
        SceneConfig(noise_sigma=-0.1)
    with pytest.raises(ValueError):
        SceneConfig(depth_range=(0.0, 5.0))
    with pytest.raises(ValueError):
        SceneConfig(depth_range=(10.0, 2.0))
    with pytest.raises(ValueError):
        SceneConfig(max_baseline=0.0)


def test_gen_scene_deterministic():
    cfg = SceneConfig(seed=11, pairs=1, n=32, outlier_ratio=0.5)
    a = gen_scene(cfg, 4)
    b = gen_scene(cfg, 4)
    np.testing.assert_array_equal(a.coords, b.coords)
    np.testing.assert_array_equal(a.labels, b.labels)
    np.testing.assert_array_equal(a.e, b.e)
    np.testing.assert_array_equal(a.pose.r, b.pose.r)
    np.testing.assert_array_equal(a.pose.t, b.pose.t)


def test_gen_scene_different_indices_differ():
    cfg = SceneConfig(seed=11, pairs=2, n=32)
    a = gen_scene(cfg, 0)
    b = gen_scene(cfg, 1)
    assert not np.array_equal(a.coords, b.coords)


def test_noise_free_scene_all_inliers():
    cfg = SceneConfig(seed=2, pairs=1, n=24, outlier_ratio=0.0, noise_sigma=0.0)
    rec = gen_scene(cfg, 0)
    assert rec.labels.all()
    assert geo.residuals(rec.coords, rec.e).max() < 1e-12


def test_scene_invariants():
    cfg = SceneConfig(seed=9, pairs=1, n=64, outlier_ratio=0.5)
    rec = gen_scene(cfg, 3)
    assert rec.coords.shape == (64, 4)
    assert np.abs(rec.coords).max() <= 10.0
    assert rec.labels.sum() >= 8
    # pose is a proper rigid motion with unit baseline direction
    np.testing.assert_allclose(rec.pose.r.T @ rec.pose.r, np.eye(3), atol=1e-9)
    assert np.linalg.det(rec.pose.r) == pytest.approx(1.0, abs=1e-9)
    assert np.linalg.norm(rec.pose.t) == pytest.approx(1.0, abs=1e-9)
    assert np.linalg.norm(rec.e) == pytest.approx(1.0, abs=1e-9)
    # stored E matches the stored pose
    e_pose = geo.essential_from_pose(rec.pose)
    assert min(np.linalg.norm(rec.e - e_pose), np.linalg.norm(rec.e + e_pose)) < 1e-12


def test_labels_match_threshold():
    cfg = SceneConfig(seed=21, pairs=1, n=48, outlier_ratio=0.5)
    rec = gen_scene(cfg, 0)
    recomputed = geo.residuals(rec.coords, rec.e) < scenes.DEFAULT_TAU
    np.testing.assert_array_equal(rec.labels, recomputed)


def test_label_tau_validation():
    coords = np.zeros((4, 4))
    with pytest.raises(ValueError):
        label(coords, np.eye(3), tau=0.0)


def test_label_infinite_tau_all_true(rng):
    coords = rng.uniform(-1, 1, (10, 4))
    e = rng.standard_normal((3, 3))
    assert label(coords, e, tau=np.inf).all()


def test_labels_reversal_invariant():
    cfg = SceneConfig(seed=13, pairs=1, n=40, outlier_ratio=0.4)
    rec = gen_scene(cfg, 2)
    rev = label(geo.reverse(rec.coords), rec.e.T)
    np.testing.assert_array_equal(rec.labels, rev)


def test_inlier_fraction_near_configured_ratio():
    # outliers occasionally land under tau by chance, so the measured
    # fraction sits a little above 1 - ratio
    cfg = SceneConfig(seed=17, pairs=100, n=512, outlier_ratio=0.5,
                      noise_sigma=1e-3)
    fracs = [gen_scene(cfg, i).labels.mean() for i in range(100)]
    mean = float(np.mean(fracs))
    assert 0.45 <= mean <= 0.60, mean


def test_generation_exhausted():
    cfg = SceneConfig(seed=0, pairs=1, n=16, outlier_ratio=0.5, noise_sigma=1e-3)
    with pytest.raises(GenerationExhaustedError):
        gen_scene(cfg, 0, tau=1e-300)


# ------------------------------------------------------------ file format ----

def test_dataset_round_trip(tmp_path):
    cfg = SceneConfig(seed=3, pairs=10, n=16, outlier_ratio=0.3)
    records = gen_dataset(cfg)
    path = tmp_path / "d.c2vd"
    write_dataset(path, records)
    back = read_dataset(path)
    assert len(back) == 10
    for a, b in zip(records, back):
        np.testing.assert_array_equal(a.coords, b.coords)
        np.testing.assert_array_equal(a.labels, b.labels)
        np.testing.assert_array_equal(a.e, b.e)
        np.testing.assert_array_equal(a.pose.r, b.pose.r)
        np.testing.assert_array_equal(a.pose.t, b.pose.t)


def test_dataset_write_is_deterministic(tmp_path):
    cfg = SceneConfig(seed=3, pairs=3, n=16)
    records = gen_dataset(cfg)
    p1 = tmp_path / "a.c2vd"
    p2 = tmp_path / "b.c2vd"
    write_dataset(p1, records)
    write_dataset(p2, records)
    assert p1.read_bytes() == p2.read_bytes()


def test_dataset_empty_list(tmp_path):
    path = tmp_path / "empty.c2vd"
    write_dataset(path, [])
    assert read_dataset(path) == []


def test_dataset_bad_magic(tmp_path):
    path = tmp_path / "bad.c2vd"
    write_dataset(path, [])
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(BadMagicError):
        read_dataset(path)


def test_dataset_version_mismatch(tmp_path):
    path = tmp_path / "ver.c2vd"
    write_dataset(path, [])
    raw = bytearray(path.read_bytes())
    raw[4:8] = (99).to_bytes(4, "little")
    path.write_bytes(bytes(raw))
    with pytest.raises(VersionMismatchError):
        read_dataset(path)


def test_dataset_truncated(tmp_path):
    cfg = SceneConfig(seed=3, pairs=2, n=16)
    path = tmp_path / "cut.c2vd"
    write_dataset(path, gen_dataset(cfg))
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 20])
    with pytest.raises(TruncatedFileError):
        read_dataset(path)
