"""Smoke tests for the python bindings against the C++ core."""

import numpy as np
import pytest

import xfuse


def test_softmax_rows_sums_to_one():
    x = np.random.RandomState(0).randn(5, 4).astype(np.float32)
    y = xfuse.softmax_rows(x)
    assert y.shape == (5, 4)
    np.testing.assert_allclose(y.sum(axis=1), np.ones(5), atol=1e-6)
    assert (y > 0).all()


def test_kl_divergence_identity_and_ln2():
    p = np.array([[0.5, 0.5]], dtype=np.float32)
    assert xfuse.kl_divergence(p, p) == pytest.approx(0.0, abs=1e-9)
    q = np.array([[1.0, 0.0]], dtype=np.float32)
    assert xfuse.kl_divergence(q, p) == pytest.approx(np.log(2.0), rel=1e-5)


def test_scene_generation_is_deterministic():
    spec = xfuse.DomainShiftSpec()
    a = xfuse.generate_scene(7, spec, 0, 5, 32, 32, 256, 0)
    b = xfuse.generate_scene(7, spec, 0, 5, 32, 32, 256, 0)
    np.testing.assert_array_equal(a.image, b.image)
    np.testing.assert_array_equal(a.points, b.points)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert a.image.shape == (32, 32, 3)
    assert a.points.shape == (256, 3)
    assert a.labels.min() >= 0 and a.labels.max() < 5


def test_scene_points_project_to_their_pixels():
    spec = xfuse.DomainShiftSpec()
    scene = xfuse.generate_scene(3, spec, 0, 5, 32, 32, 256, 0)
    proj = xfuse.default_projection(32, 32)
    idx = xfuse.project_points(scene.points, proj, 32, 32)
    np.testing.assert_array_equal(np.asarray(idx), scene.pixel_index)


def test_scene_file_round_trip(tmp_path):
    spec = xfuse.DomainShiftSpec()
    spec.gamma = 2.2
    scene = xfuse.generate_scene(5, spec, 1, 5, 16, 16, 96, 9)
    path = str(tmp_path / "scene.xfus")
    xfuse.write_scene(scene, path)
    loaded = xfuse.read_scene(path)
    np.testing.assert_array_equal(scene.image, loaded.image)
    np.testing.assert_array_equal(scene.points, loaded.points)
    assert loaded.scene_id == 9
    assert loaded.domain_tag == 1


def test_voxelize_counts():
    pts = np.array([[0.0, 0, 0], [0.01, 0, 0], [0.06, 0, 0]], dtype=np.float32)
    cells, occupied = xfuse.voxelize(pts, 0.05)
    assert occupied == 2
    assert cells[0] == cells[1]
    assert cells[0] != cells[2]
    with pytest.raises(ValueError):
        xfuse.voxelize(pts, 0.0)


def test_style_transfer_2d_beta_zero_is_identity():
    rng = np.random.RandomState(1)
    src = rng.rand(16, 16, 3).astype(np.float32)
    tgt = rng.rand(16, 16, 3).astype(np.float32)
    out = xfuse.style_transfer_2d(src, tgt, 0.0)
    np.testing.assert_allclose(out, src, atol=1e-6)
    swapped = xfuse.style_transfer_2d(src, tgt, 1.0)
    np.testing.assert_allclose(swapped, tgt, atol=1e-6)


def test_style_transfer_3d_matches_density():
    rng = np.random.RandomState(2)
    src = rng.rand(50, 3).astype(np.float32) * 4
    tgt = rng.rand(80, 3).astype(np.float32) * 9
    out = xfuse.style_transfer_3d(src, tgt)
    assert xfuse.point_cloud_density(out) == pytest.approx(
        xfuse.point_cloud_density(tgt), rel=1e-5
    )


def test_memorized_attention_residual_identity():
    rng = np.random.RandomState(3)
    f = rng.randn(6, 4).astype(np.float32)
    key = rng.randn(3, 4).astype(np.float32)
    value = np.zeros((3, 4), dtype=np.float32)
    out = xfuse.memorized_attention(f, key, value)
    np.testing.assert_array_equal(out, f)


def test_flop_counts_and_ratio():
    matmul, norm, total = xfuse.count_flops("memorized", 2048, 16, 32)
    assert matmul == 4 * 2048 * 16 * 32
    dense_matmul, _, _ = xfuse.count_flops("dense_self", 2048, 0, 32)
    assert dense_matmul // matmul == 128
    assert total == matmul + norm


def test_class_weights_log_smoothing():
    w = xfuse.class_weights([10, 10, 10, 10, 10])
    assert w[0] == pytest.approx(1.0 / np.log(1.22), rel=1e-5)
    w0 = xfuse.class_weights([5, 0, 5])
    assert w0[1] == pytest.approx(1.0 / np.log(1.02), rel=1e-5)


def test_ensemble_and_miou():
    p2d = np.array([[4.0, 0.0, 0.0]], dtype=np.float32)
    p3d = np.array([[0.0, 0.5, 0.0]], dtype=np.float32)
    assert xfuse.ensemble_xm(p2d, p3d) == [0]
    miou, per_class = xfuse.miou([0, 1, 1], [0, 1, 0], 3)
    assert per_class[0] == pytest.approx(0.5)
    assert per_class[1] == pytest.approx(0.5)
    assert miou == pytest.approx(0.5)
