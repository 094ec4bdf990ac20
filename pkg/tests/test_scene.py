"""Scene construction, preprocessing invariants, PLY I/O, spatial queries,
and the chi-squared confidence quantile."""
import struct

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.spatial.transform import Rotation

from splatcone.scene import (
    PreprocessOptions,
    Scene,
    SceneError,
    chi2_confidence,
    rotation_from_quat,
)
from splatcone.sceneio import load_ply, load_scene_dump, save_ply, save_scene_dump
from splatcone.synthetic import SyntheticSpec, make_synthetic_scene


def _write_ply(path, rows, props=None, fmt="binary_little_endian"):
    props = props or ["x", "y", "z", "scale_0", "scale_1", "scale_2",
                      "rot_0", "rot_1", "rot_2", "rot_3", "opacity"]
    header = (
        f"ply\nformat {fmt} 1.0\nelement vertex {len(rows)}\n"
        + "".join(f"property float {p}\n" for p in props)
        + "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        for row in rows:
            fh.write(struct.pack(f"<{len(props)}f", *row))


def _fixture_rows():
    # three handcrafted splats: stored scales are logs, opacity is a logit
    return [
        # identity rotation, unit scales, opacity logit 0 -> 0.5
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
        # rotated anisotropic splat, high opacity
        [1.0, 2.0, 3.0, np.log(0.5), np.log(0.2), np.log(0.8),
         0.9, 0.1, -0.3, 0.2, 3.0],
        # another pose, moderate opacity
        [-2.0, 0.5, 1.0, np.log(0.3), np.log(0.3), np.log(1.2),
         0.5, 0.5, 0.5, 0.5, 1.0],
    ]


def test_rotation_matches_scipy_oracle():
    rng = np.random.default_rng(1)
    q = rng.normal(size=(50, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    ours = rotation_from_quat(q)
    # scipy uses scalar-last ordering
    theirs = Rotation.from_quat(q[:, [1, 2, 3, 0]]).as_matrix()
    np.testing.assert_allclose(ours, theirs, atol=1e-12)


def test_load_ply_fixture_inv_cov_matches_dense_oracle(tmp_path):
    path = tmp_path / "three.ply"
    _write_ply(path, _fixture_rows())
    scene = load_ply(path, PreprocessOptions(opacity_min=0.0))
    assert len(scene) == 3
    for i, row in enumerate(_fixture_rows()):
        q = np.array(row[6:10], dtype=np.float64)
        q32 = q.astype(np.float32).astype(np.float64)
        q32 /= np.linalg.norm(q32)
        R = Rotation.from_quat(q32[[1, 2, 3, 0]]).as_matrix()
        s = np.exp(np.array(row[3:6], dtype=np.float32).astype(np.float64))
        Sigma = R @ np.diag(s) @ np.diag(s) @ R.T
        A_expected = np.linalg.inv(Sigma)
        np.testing.assert_allclose(scene.inv_cov[i], A_expected, rtol=1e-10, atol=1e-13)
        # whitening consistency L^T L = A
        L = scene.whitening[i]
        np.testing.assert_allclose(L.T @ L, scene.inv_cov[i], rtol=1e-10, atol=1e-14)


def test_load_ply_sigmoid_opacity_and_filter(tmp_path):
    path = tmp_path / "three.ply"
    _write_ply(path, _fixture_rows())
    scene = load_ply(path, PreprocessOptions(opacity_min=0.0))
    assert scene.opacities[0] == pytest.approx(0.5)
    # opacity_min = 0.6 discards the logit-0 splat
    scene2 = load_ply(path, PreprocessOptions(opacity_min=0.6))
    assert len(scene2) == 2


def test_load_ply_unit_scale_identity(tmp_path):
    path = tmp_path / "one.ply"
    _write_ply(path, [_fixture_rows()[0]])
    scene = load_ply(path, PreprocessOptions(opacity_min=0.0))
    np.testing.assert_allclose(scene.scales[0], 1.0)
    np.testing.assert_allclose(scene.inv_cov[0], np.eye(3), atol=1e-12)


def test_load_ply_error_reporting(tmp_path):
    bad = tmp_path / "bad.ply"
    bad.write_bytes(b"not a ply at all\n")
    with pytest.raises(SceneError, match="magic"):
        load_ply(bad)

    ascii_ply = tmp_path / "ascii.ply"
    ascii_ply.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 0\nend_header\n")
    with pytest.raises(SceneError, match="binary_little_endian"):
        load_ply(ascii_ply)

    missing = tmp_path / "missing.ply"
    _write_ply(missing, [[0.0] * 10], props=["x", "y", "z", "scale_0", "scale_1",
                                             "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"])
    with pytest.raises(SceneError, match="opacity"):
        load_ply(missing)

    nonfinite = tmp_path / "nan.ply"
    rows = _fixture_rows()
    rows[1][0] = np.nan
    _write_ply(nonfinite, rows)
    with pytest.raises(SceneError, match="property 'x' at splat index 1"):
        load_ply(nonfinite)

    allfiltered = tmp_path / "filtered.ply"
    _write_ply(allfiltered, [_fixture_rows()[0]])
    with pytest.raises(SceneError, match="zero splats"):
        load_ply(allfiltered, PreprocessOptions(opacity_min=0.9))


def test_extra_properties_ignored(tmp_path):
    props = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "scale_0", "scale_1",
             "scale_2", "rot_0", "rot_1", "rot_2", "rot_3", "opacity"]
    row = [0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.3, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0]
    path = tmp_path / "extras.ply"
    _write_ply(path, [row], props=props)
    scene = load_ply(path)
    assert len(scene) == 1
    np.testing.assert_allclose(scene.scales[0], 1.0)


def test_degenerate_quaternion_rejected_with_warning():
    means = np.zeros((2, 3))
    means[1, 0] = 5.0
    quats = np.array([[1.0, 0, 0, 0], [1e-12, 0, 0, 0]])
    scales = np.full((2, 3), 0.5)
    opac = np.array([0.9, 0.9])
    with pytest.warns(RuntimeWarning, match="quaternion"):
        scene = Scene.from_arrays(means, quats, scales, opac)
    assert len(scene) == 1


def test_whitening_and_covariance_identity_synthetic():
    spec = SyntheticSpec(pattern="clutter", count=500, anisotropy_range=(1.0, 10.0))
    scene = make_synthetic_scene(spec, seed=3)
    R = rotation_from_quat(scene.quats)
    S = scene.scales
    Sigma = np.einsum("nij,nj,nkj->nik", R, S * S, R)
    # L Sigma L^T = I
    L = scene.whitening
    prod = np.einsum("nij,njk,nlk->nil", L, Sigma, L)
    np.testing.assert_allclose(prod, np.broadcast_to(np.eye(3), prod.shape),
                               rtol=1e-8, atol=1e-8)
    # inv_cov equals the dense inverse of Sigma
    A_dense = np.linalg.inv(Sigma)
    np.testing.assert_allclose(scene.inv_cov, A_dense, rtol=1e-7, atol=1e-9)


def test_eigenvalue_cap_by_scale_clamp():
    opts = PreprocessOptions(scale_min=0.05, scale_max=10.0)
    spec = SyntheticSpec(pattern="clutter", count=300, scale_range=(0.001, 0.3),
                         anisotropy_range=(1.0, 50.0))
    scene = make_synthetic_scene(spec, seed=9, opts=opts)
    eigs = np.linalg.eigvalsh(scene.inv_cov)
    assert eigs.max() <= 1.0 / 0.05**2 * (1 + 1e-9)
    assert (eigs > 0).all()
    ratio = scene.scales.max(axis=1) / scene.scales.min(axis=1)
    assert (ratio <= scene.options.anisotropy_cap * (1 + 1e-12)).all()


def test_ply_round_trip_float32(tmp_path):
    spec = SyntheticSpec(pattern="clutter", count=200, anisotropy_range=(1.0, 5.0))
    scene = make_synthetic_scene(spec, seed=11)
    path = tmp_path / "dump.ply"
    save_ply(path, scene)
    opts = PreprocessOptions(opacity_min=0.0, scale_min=scene.options.scale_min,
                             scale_max=scene.options.scale_max)
    back = load_ply(path, opts)
    assert len(back) == len(scene)
    np.testing.assert_allclose(back.means, scene.means, rtol=1e-6, atol=1e-5)
    np.testing.assert_allclose(back.scales, scene.scales, rtol=1e-5)
    # quaternions match up to float32 rounding (normalization preserved)
    dots = np.abs(np.einsum("ni,ni->n", back.quats, scene.quats))
    np.testing.assert_allclose(dots, 1.0, atol=1e-7)
    np.testing.assert_allclose(back.opacities, scene.opacities, atol=1e-5)


def test_scene_dump_round_trip(tmp_path):
    scene = make_synthetic_scene(SyntheticSpec(pattern="ring", count=150), seed=2)
    path = tmp_path / "scene.npz"
    save_scene_dump(path, scene)
    back = load_scene_dump(path)
    np.testing.assert_array_equal(back.means, scene.means)
    np.testing.assert_array_equal(back.scales, scene.scales)
    # renormalizing unit quaternions can wobble the last ulp
    np.testing.assert_allclose(back.quats, scene.quats, rtol=0, atol=5e-16)
    np.testing.assert_array_equal(back.opacities, scene.opacities)
    assert back.confidence == scene.confidence


def test_synthetic_single_unit_sphere():
    scene = make_synthetic_scene(SyntheticSpec(pattern="single", count=1,
                                               scale_range=(1.0, 1.0)), seed=0)
    assert len(scene) == 1
    np.testing.assert_array_equal(scene.means[0], 0.0)
    np.testing.assert_allclose(scene.inv_cov[0], np.eye(3), atol=1e-12)


def test_synthetic_determinism():
    spec = SyntheticSpec(pattern="ring", count=1000)
    a = make_synthetic_scene(spec, seed=42)
    b = make_synthetic_scene(spec, seed=42)
    np.testing.assert_array_equal(a.means, b.means)
    np.testing.assert_array_equal(a.quats, b.quats)
    np.testing.assert_array_equal(a.scales, b.scales)
    np.testing.assert_array_equal(a.opacities, b.opacities)


def test_synthetic_invariant_audit_clutter():
    spec = SyntheticSpec(pattern="clutter", count=5000, anisotropy_range=(1.0, 10.0))
    scene = make_synthetic_scene(spec, seed=42)
    assert len(scene) == 5000
    assert (scene.scales > 0).all()
    eigs = np.linalg.eigvalsh(scene.inv_cov)
    assert (eigs > 0).all()
    ratio = scene.scales.max(axis=1) / scene.scales.min(axis=1)
    assert (ratio <= scene.options.anisotropy_cap * (1 + 1e-12)).all()
    qn = np.linalg.norm(scene.quats, axis=1)
    np.testing.assert_allclose(qn, 1.0, atol=1e-9)


def test_synthetic_bad_spec():
    with pytest.raises(SceneError):
        make_synthetic_scene(SyntheticSpec(count=0), seed=1)
    with pytest.raises(SceneError):
        make_synthetic_scene(SyntheticSpec(scale_range=(2.0, 1.0)), seed=1)
    with pytest.raises(SceneError):
        make_synthetic_scene(SyntheticSpec(pattern="spiral"), seed=1)


def test_query_nearby_trivial():
    scene = make_synthetic_scene(SyntheticSpec(pattern="single", count=1,
                                               scale_range=(1.0, 1.0)), seed=0)
    assert scene.query_nearby(np.array([10.0, 0, 0]), 5.0).size == 0
    assert scene.query_nearby(np.array([3.0, 0, 0]), 5.0).tolist() == [0]
    with pytest.raises(SceneError):
        scene.query_nearby(np.zeros(3), -1.0)


def test_query_nearby_matches_linear_scan():
    scene = make_synthetic_scene(SyntheticSpec(pattern="clutter", count=1000), seed=5)
    rng = np.random.default_rng(8)
    for _ in range(100):
        p = rng.uniform(-12, 12, size=3)
        radius = rng.uniform(0.5, 8.0)
        got = set(scene.query_nearby(p, radius).tolist())
        want = set(np.nonzero(np.linalg.norm(scene.means - p, axis=1) <= radius)[0].tolist())
        assert got == want


def test_chi2_confidence_against_integration_oracle():
    def density(x, k):
        from scipy.special import gamma
        return x ** (k / 2 - 1) * np.exp(-x / 2) / (2 ** (k / 2) * gamma(k / 2))

    for q in (0.5, 0.9, 0.99):
        v = chi2_confidence(3, q)
        integral, _ = quad(density, 0.0, v, args=(3,))
        assert integral == pytest.approx(q, abs=1e-9)
    # the default confidence level used for scenes
    assert chi2_confidence(3, 0.99) == pytest.approx(11.3449, abs=1e-4)
    assert chi2_confidence(3, 0.9) < chi2_confidence(3, 0.99)


def test_chi2_confidence_validation():
    with pytest.raises(SceneError):
        chi2_confidence(0, 0.5)
    with pytest.raises(SceneError):
        chi2_confidence(3, 1.0)
    with pytest.raises(SceneError):
        chi2_confidence(3, 0.0)


def test_scene_arrays_read_only():
    scene = make_synthetic_scene(SyntheticSpec(pattern="single", count=1), seed=0)
    with pytest.raises(ValueError):
        scene.means[0, 0] = 1.0
