"""Grid containers, stencils, sampling, resampling, and VF32 round trips."""

import numpy as np
import pytest

from smokestyle import fields as F
from smokestyle.fields import (
    ScalarField3,
    SoftMask,
    VectorField3,
    compose_velocity,
    curl,
    divergence,
    gradient,
    load_vf32,
    resample_to,
    sample_trilinear,
    save_vf32,
    soft_mask_from_density,
)


# --- oracles -----------------------------------------------------------------

def diff_oracle(f, axis, h):
    """Scalar-loop version of the derivative stencil."""
    out = np.zeros_like(f)
    n = f.shape[axis]
    f = np.moveaxis(f, axis, 0)
    o = np.moveaxis(out, axis, 0)
    for i in range(n):
        if i == 0:
            o[i] = (f[1] - f[0]) / h
        elif i == n - 1:
            o[i] = (f[-1] - f[-2]) / h
        else:
            o[i] = (f[i + 1] - f[i - 1]) / (2 * h)
    return out


def gradient_oracle(phi, h):
    return np.stack([diff_oracle(phi, a, h) for a in range(3)], axis=-1)


def curl_oracle(p, h):
    px, py, pz = p[..., 0], p[..., 1], p[..., 2]
    return np.stack([
        diff_oracle(pz, 1, h) - diff_oracle(py, 2, h),
        diff_oracle(px, 2, h) - diff_oracle(pz, 0, h),
        diff_oracle(py, 0, h) - diff_oracle(px, 1, h),
    ], axis=-1)


def trilinear_oracle(data, p):
    """Pointwise trilinear interpolation with explicit corner loop."""
    nx, ny, nz = data.shape
    g = [min(max(c, 0.0), n - 1.0) for c, n in zip(p, data.shape)]
    i0 = [min(int(np.floor(c)), n - 2) for c, n in zip(g, data.shape)]
    f = [c - i for c, i in zip(g, i0)]
    acc = 0.0
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                w = ((f[0] if dx else 1 - f[0]) * (f[1] if dy else 1 - f[1])
                     * (f[2] if dz else 1 - f[2]))
                acc += w * data[i0[0] + dx, i0[1] + dy, i0[2] + dz]
    return acc


# --- containers --------------------------------------------------------------

def test_scalar_field_shape_guard():
    with pytest.raises(ValueError):
        ScalarField3(np.zeros((4, 4)))


def test_vector_field_shape_guard():
    with pytest.raises(ValueError):
        VectorField3(np.zeros((4, 4, 4)))


def test_soft_mask_rejects_out_of_range():
    with pytest.raises(ValueError):
        SoftMask(np.full((3, 3, 3), 1.5))


def test_vector_components_are_views():
    v = VectorField3.zeros((3, 4, 5))
    v.x[...] = 2.0
    assert np.all(v.data[..., 0] == 2.0)
    assert np.all(v.data[..., 1:] == 0.0)


# --- stencils vs oracle ------------------------------------------------------

def test_gradient_matches_loop_oracle():
    rng = np.random.default_rng(11)
    phi = rng.standard_normal((6, 7, 8))
    got = gradient(ScalarField3(phi, 0.4)).data
    np.testing.assert_allclose(got, gradient_oracle(phi, 0.4), atol=1e-13)


def test_curl_matches_loop_oracle():
    rng = np.random.default_rng(12)
    psi = rng.standard_normal((6, 5, 7, 3))
    got = curl(VectorField3(psi, 0.7)).data
    np.testing.assert_allclose(got, curl_oracle(psi, 0.7), atol=1e-13)


def test_divergence_matches_sum_of_diffs():
    rng = np.random.default_rng(13)
    v = rng.standard_normal((5, 6, 4, 3))
    want = sum(diff_oracle(v[..., a], a, 0.3) for a in range(3))
    got = divergence(VectorField3(v, 0.3)).data
    np.testing.assert_allclose(got, want, atol=1e-13)


def test_gradient_exact_on_linear_field():
    # central and one-sided stencils are both exact for affine functions
    x, y, z = F.cell_centers((5, 6, 7), 0.5)
    phi = 2.0 * x - 3.0 * y + 0.25 * z + 1.0
    g = gradient(ScalarField3(phi, 0.5)).data
    np.testing.assert_allclose(g[..., 0], 2.0, atol=1e-12)
    np.testing.assert_allclose(g[..., 1], -3.0, atol=1e-12)
    np.testing.assert_allclose(g[..., 2], 0.25, atol=1e-12)


def test_min_grid_size_enforced():
    with pytest.raises(ValueError, match="grid too small for stencil"):
        gradient(ScalarField3(np.zeros((2, 5, 5))))
    with pytest.raises(ValueError, match="grid too small for stencil"):
        divergence(VectorField3(np.zeros((5, 5, 2, 3))))
    with pytest.raises(ValueError, match="grid too small for stencil"):
        curl(VectorField3(np.zeros((5, 2, 5, 3))))


@pytest.mark.parametrize("dims", [(3, 3, 3), (8, 5, 6), (16, 16, 16)])
def test_div_curl_identity(dims):
    rng = np.random.default_rng(21)
    psi = VectorField3(rng.standard_normal(dims + (3,)), 0.37)
    d = divergence(curl(psi)).data
    scale = np.abs(psi.data).max() / psi.spacing
    assert np.abs(d).max() <= 1e-12 * scale


@pytest.mark.parametrize("dims", [(3, 3, 3), (7, 9, 4)])
def test_curl_grad_identity(dims):
    rng = np.random.default_rng(22)
    phi = ScalarField3(rng.standard_normal(dims), 0.11)
    c = curl(gradient(phi)).data
    scale = np.abs(phi.data).max() / phi.spacing
    assert np.abs(c).max() <= 1e-12 * scale


def test_stencil_transposes_are_exact_adjoints():
    # <D u, v> == <u, D^T v> for random u, v
    rng = np.random.default_rng(23)
    u = rng.standard_normal((5, 6, 7))
    for axis in range(3):
        v = rng.standard_normal((5, 6, 7))
        lhs = np.vdot(F._diff(u, axis, 0.4), v)
        rhs = np.vdot(u, F._diff_transpose(v, axis, 0.4))
        assert abs(lhs - rhs) < 1e-10


def test_gradient_transpose_adjoint_identity():
    rng = np.random.default_rng(24)
    phi = ScalarField3(rng.standard_normal((6, 5, 4)), 0.9)
    cot = VectorField3(rng.standard_normal((6, 5, 4, 3)), 0.9)
    lhs = np.vdot(gradient(phi).data, cot.data)
    rhs = np.vdot(phi.data, F.gradient_transpose(cot).data)
    assert abs(lhs - rhs) < 1e-10


def test_curl_transpose_adjoint_identity():
    rng = np.random.default_rng(25)
    psi = VectorField3(rng.standard_normal((4, 6, 5, 3)), 1.3)
    cot = VectorField3(rng.standard_normal((4, 6, 5, 3)), 1.3)
    lhs = np.vdot(curl(psi).data, cot.data)
    rhs = np.vdot(psi.data, F.curl_transpose(cot).data)
    assert abs(lhs - rhs) < 1e-10


# --- compose_velocity --------------------------------------------------------

def test_compose_velocity_blend():
    rng = np.random.default_rng(31)
    phi = ScalarField3(rng.standard_normal((5, 5, 5)), 0.5)
    psi = VectorField3(rng.standard_normal((5, 5, 5, 3)), 0.5)
    v = compose_velocity(phi, psi, 0.25)
    want = 0.25 * gradient(phi).data + 0.75 * curl(psi).data
    np.testing.assert_allclose(v.data, want, atol=1e-13)


def test_compose_velocity_pure_cases():
    rng = np.random.default_rng(32)
    phi = ScalarField3(rng.standard_normal((5, 5, 5)))
    psi = VectorField3(rng.standard_normal((5, 5, 5, 3)))
    np.testing.assert_allclose(compose_velocity(phi, psi, 1.0).data, gradient(phi).data)
    np.testing.assert_allclose(compose_velocity(phi, psi, 0.0).data, curl(psi).data)


def test_compose_velocity_divergence_free_when_lam_zero():
    rng = np.random.default_rng(33)
    phi = ScalarField3(rng.standard_normal((9, 8, 7)), 0.25)
    psi = VectorField3(rng.standard_normal((9, 8, 7, 3)), 0.25)
    v = compose_velocity(phi, psi, 0.0)
    scale = np.abs(psi.data).max() / psi.spacing
    assert np.abs(divergence(v).data).max() <= 1e-12 * scale


def test_compose_velocity_mask_and_guards():
    rng = np.random.default_rng(34)
    phi = ScalarField3(rng.standard_normal((5, 5, 5)))
    psi = VectorField3(rng.standard_normal((5, 5, 5, 3)))
    mask = SoftMask(rng.uniform(size=(5, 5, 5)))
    v = compose_velocity(phi, psi, 0.5, mask)
    want = compose_velocity(phi, psi, 0.5).data * mask.data[..., None]
    np.testing.assert_allclose(v.data, want)
    with pytest.raises(ValueError):
        compose_velocity(phi, psi, 1.5)
    with pytest.raises(ValueError, match="mismatch"):
        compose_velocity(phi, VectorField3.zeros((4, 5, 5)), 0.5)


def test_compose_velocity_adjoint_identity():
    rng = np.random.default_rng(35)
    phi = ScalarField3(rng.standard_normal((5, 6, 4)), 0.8)
    psi = VectorField3(rng.standard_normal((5, 6, 4, 3)), 0.8)
    mask = SoftMask(rng.uniform(size=(5, 6, 4)), 0.8)
    cot = VectorField3(rng.standard_normal((5, 6, 4, 3)), 0.8)
    v = compose_velocity(phi, psi, 0.3, mask)
    gphi, gpsi = F.compose_velocity_adjoint(cot, 0.3, mask)
    lhs = np.vdot(v.data, cot.data)
    rhs = np.vdot(phi.data, gphi.data) + np.vdot(psi.data, gpsi.data)
    assert abs(lhs - rhs) < 1e-10


# --- trilinear sampling ------------------------------------------------------

def test_sample_trilinear_matches_oracle():
    rng = np.random.default_rng(41)
    data = rng.standard_normal((6, 7, 5))
    fld = ScalarField3(data, 0.5)
    pts = rng.uniform(-0.5, 3.5, size=(40, 3))
    for p in pts:
        g = p / 0.5 - 0.5
        assert sample_trilinear(fld, p) == pytest.approx(trilinear_oracle(data, g), abs=1e-12)


def test_sample_trilinear_hits_cell_centers():
    rng = np.random.default_rng(42)
    data = rng.standard_normal((4, 4, 4))
    fld = ScalarField3(data, 2.0)
    assert sample_trilinear(fld, (1.0, 3.0, 5.0)) == pytest.approx(data[0, 1, 2])


def test_sample_trilinear_clamps_outside():
    data = np.arange(27, dtype=float).reshape(3, 3, 3)
    fld = ScalarField3(data, 1.0)
    assert sample_trilinear(fld, (-50, -50, -50)) == pytest.approx(data[0, 0, 0])
    assert sample_trilinear(fld, (50, 50, 50)) == pytest.approx(data[-1, -1, -1])


def test_trilinear_scatter_is_transpose_of_gather():
    rng = np.random.default_rng(43)
    data = rng.standard_normal((5, 6, 4))
    gx = rng.uniform(0, 4, size=30)
    gy = rng.uniform(0, 5, size=30)
    gz = rng.uniform(0, 3, size=30)
    vals = rng.standard_normal(30)
    lhs = np.dot(F.trilinear(data, gx, gy, gz), vals)
    out = np.zeros_like(data)
    F.trilinear_scatter(out, gx, gy, gz, vals)
    rhs = np.vdot(data, out)
    assert abs(lhs - rhs) < 1e-12


def test_trilinear_coord_grad_matches_fd():
    rng = np.random.default_rng(44)
    data = rng.standard_normal((6, 6, 6))
    gx = rng.uniform(0.6, 4.2, size=20)
    gy = rng.uniform(0.6, 4.2, size=20)
    gz = rng.uniform(0.6, 4.2, size=20)
    dgx, dgy, dgz = F.trilinear_coord_grad(data, gx, gy, gz)
    eps = 1e-6
    fdx = (F.trilinear(data, gx + eps, gy, gz) - F.trilinear(data, gx - eps, gy, gz)) / (2 * eps)
    fdy = (F.trilinear(data, gx, gy + eps, gz) - F.trilinear(data, gx, gy - eps, gz)) / (2 * eps)
    fdz = (F.trilinear(data, gx, gy, gz + eps) - F.trilinear(data, gx, gy, gz - eps)) / (2 * eps)
    np.testing.assert_allclose(dgx, fdx, atol=1e-6)
    np.testing.assert_allclose(dgy, fdy, atol=1e-6)
    np.testing.assert_allclose(dgz, fdz, atol=1e-6)


def test_corner_extrema_bound_interpolant():
    rng = np.random.default_rng(45)
    data = rng.standard_normal((5, 5, 5))
    gx = rng.uniform(0, 4, size=50)
    gy = rng.uniform(0, 4, size=50)
    gz = rng.uniform(0, 4, size=50)
    vals = F.trilinear(data, gx, gy, gz)
    lo, hi = F.corner_extrema(data, gx, gy, gz)
    assert np.all(vals >= lo - 1e-12)
    assert np.all(vals <= hi + 1e-12)


# --- resampling --------------------------------------------------------------

def test_resample_identity_dims_copies():
    rng = np.random.default_rng(51)
    fld = ScalarField3(rng.standard_normal((6, 6, 6)), 0.5)
    out = resample_to(fld, (6, 6, 6), "trilinear_down")
    np.testing.assert_array_equal(out.data, fld.data)
    assert out.data is not fld.data


def test_resample_rejects_bad_mode_and_dims():
    fld = ScalarField3.zeros((4, 4, 4))
    with pytest.raises(ValueError):
        resample_to(fld, (4, 4, 4), "nearest")
    with pytest.raises(ValueError):
        resample_to(fld, (1, 4, 4), "trilinear_down")


def test_resample_preserves_world_extent():
    fld = ScalarField3.zeros((8, 8, 8), spacing=0.5)
    out = resample_to(fld, (4, 4, 4), "trilinear_down")
    assert out.spacing == pytest.approx(1.0)
    assert out.dims[0] * out.spacing == pytest.approx(fld.dims[0] * fld.spacing)


def test_downsample_constant_is_exact():
    fld = ScalarField3(np.full((9, 9, 9), 3.25), 1.0)
    out = resample_to(fld, (5, 5, 5), "trilinear_down")
    np.testing.assert_allclose(out.data, 3.25, atol=1e-13)


def test_downsample_preserves_linear_ramp():
    x, y, z = F.cell_centers((12, 12, 12), 1.0)
    fld = ScalarField3(0.5 * x + 2.0 * y - z, 1.0)
    out = resample_to(fld, (6, 6, 6), "trilinear_down")
    xo, yo, zo = F.cell_centers((6, 6, 6), out.spacing)
    np.testing.assert_allclose(out.data, 0.5 * xo + 2.0 * yo - zo, atol=1e-12)


def test_tricubic_upsample_hits_source_centers():
    # with an odd integer upsampling factor every source center is a target
    # center, where the Catmull-Rom weights collapse to (0, 1, 0, 0)
    rng = np.random.default_rng(52)
    src = rng.standard_normal((4, 4, 4))
    out = resample_to(ScalarField3(src, 1.0), (12, 12, 12), "tricubic_up")
    np.testing.assert_allclose(out.data[1::3, 1::3, 1::3], src, atol=1e-12)


def test_tricubic_upsample_clamped_to_source_range():
    rng = np.random.default_rng(53)
    src = np.abs(rng.standard_normal((5, 5, 5)))
    out = resample_to(ScalarField3(src, 1.0), (11, 13, 12), "tricubic_up")
    assert out.data.min() >= src.min() - 1e-12
    assert out.data.max() <= src.max() + 1e-12


def test_resample_vector_field_componentwise():
    rng = np.random.default_rng(54)
    v = VectorField3(rng.standard_normal((6, 6, 6, 3)), 1.0)
    out = resample_to(v, (3, 3, 3), "trilinear_down")
    for a in range(3):
        comp = resample_to(ScalarField3(v.data[..., a], 1.0), (3, 3, 3), "trilinear_down")
        np.testing.assert_allclose(out.data[..., a], comp.data)


# --- soft mask ---------------------------------------------------------------

def blur_oracle(binary, sigma):
    """Direct dense 3D convolution with the zero-padded Gaussian kernel."""
    k = F.gaussian_kernel(sigma)
    r = len(k) // 2
    padded = np.pad(binary, r, mode="constant")
    out = np.zeros_like(binary)
    nx, ny, nz = binary.shape
    for i in range(nx):
        for j in range(ny):
            for l in range(nz):
                block = padded[i:i + 2 * r + 1, j:j + 2 * r + 1, l:l + 2 * r + 1]
                out[i, j, l] = np.einsum("abc,a,b,c->", block, k, k, k)
    return out


def test_soft_mask_matches_dense_convolution_oracle():
    rng = np.random.default_rng(61)
    d = ScalarField3(rng.uniform(size=(7, 6, 8)), 0.5)
    got = soft_mask_from_density(d, threshold=0.5, blur_radius=0.8)
    want = np.clip(blur_oracle((d.data > 0.5).astype(float), 0.8), 0.0, 1.0)
    np.testing.assert_allclose(got.data, want, atol=1e-12)
    assert isinstance(got, SoftMask)
    assert got.spacing == d.spacing


def test_soft_mask_zero_blur_is_indicator():
    rng = np.random.default_rng(62)
    d = ScalarField3(rng.uniform(size=(5, 5, 5)))
    got = soft_mask_from_density(d, threshold=0.4, blur_radius=0.0)
    np.testing.assert_array_equal(got.data, (d.data > 0.4).astype(float))


def test_soft_mask_interior_of_large_blob_saturates():
    d = ScalarField3.zeros((16, 16, 16))
    d.data[4:12, 4:12, 4:12] = 1.0
    m = soft_mask_from_density(d, threshold=0.5, blur_radius=1.0)
    assert m.data[8, 8, 8] == pytest.approx(1.0, abs=1e-3)
    assert m.data[0, 0, 0] == pytest.approx(0.0, abs=1e-9)


def test_soft_mask_rejects_bad_params():
    d = ScalarField3.zeros((4, 4, 4))
    with pytest.raises(ValueError):
        soft_mask_from_density(d, threshold=0.0, blur_radius=1.0)
    with pytest.raises(ValueError):
        soft_mask_from_density(d, threshold=0.5, blur_radius=-1.0)


# --- VF32 files --------------------------------------------------------------

def test_vf32_scalar_roundtrip(tmp_path):
    rng = np.random.default_rng(71)
    fld = ScalarField3(rng.standard_normal((4, 5, 6)).astype(np.float32).astype(np.float64), 0.25)
    p = tmp_path / "d.vf32"
    save_vf32(p, fld)
    back = load_vf32(p)
    assert isinstance(back, ScalarField3)
    assert back.dims == (4, 5, 6)
    assert back.spacing == pytest.approx(0.25)
    np.testing.assert_array_equal(back.data, fld.data)


def test_vf32_vector_roundtrip(tmp_path):
    rng = np.random.default_rng(72)
    v = VectorField3(rng.standard_normal((3, 4, 5, 3)).astype(np.float32).astype(np.float64), 1.5)
    p = tmp_path / "v.vf32"
    save_vf32(p, v)
    back = load_vf32(p)
    assert isinstance(back, VectorField3)
    np.testing.assert_array_equal(back.data, v.data)


def test_vf32_layout_x_fastest(tmp_path):
    # byte-level check: the flat payload must walk x first, then y, then z
    fld = ScalarField3(np.arange(2 * 3 * 4, dtype=float).reshape(4, 3, 2, order="F").transpose(0, 1, 2), 1.0)
    data = np.zeros((4, 3, 2))
    c = 0.0
    for k in range(2):
        for j in range(3):
            for i in range(4):
                data[i, j, k] = c
                c += 1.0
    fld = ScalarField3(data, 1.0)
    p = tmp_path / "lay.vf32"
    save_vf32(p, fld)
    raw = np.frombuffer(p.read_bytes()[28:], dtype="<f4")
    np.testing.assert_array_equal(raw, np.arange(24, dtype=np.float32))


def test_vf32_header_fields(tmp_path):
    fld = ScalarField3.zeros((4, 5, 6), spacing=0.5)
    p = tmp_path / "h.vf32"
    save_vf32(p, fld)
    raw = p.read_bytes()
    assert raw[:4] == b"VF32"
    info = F.read_vf32_header(p)
    assert info == {"version": 1, "channels": 1, "dims": (4, 5, 6),
                    "spacing": pytest.approx(0.5)}


def test_vf32_rejects_garbage(tmp_path):
    p = tmp_path / "bad.vf32"
    p.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(ValueError, match="magic"):
        load_vf32(p)
    q = tmp_path / "short.vf32"
    save_vf32(q, ScalarField3.zeros((4, 4, 4)))
    q.write_bytes(q.read_bytes()[:-8])
    with pytest.raises(ValueError, match="truncated"):
        load_vf32(q)


def test_vf32_write_is_atomic(tmp_path):
    p = tmp_path / "a.vf32"
    save_vf32(p, ScalarField3.zeros((3, 3, 3)))
    first = p.read_bytes()
    save_vf32(p, ScalarField3(np.ones((3, 3, 3))))
    assert p.read_bytes() != first
    assert list(tmp_path.iterdir()) == [p]  # no stray temp files
