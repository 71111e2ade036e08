"""Cell-centered 3D grids and the discrete vector calculus built on them.

All fields live on collocated, cell-centered uniform grids: the center of
cell (i, j, k) sits at ((i+0.5)h, (j+0.5)h, (k+0.5)h) in world units, where
h is the grid spacing.  Derivative stencils are central differences on
interior cells and one-sided first-order differences on boundary faces.
Because every per-axis difference operator acts on its own axis only, any
two of them commute exactly, which makes div(curl(psi)) and curl(grad(phi))
vanish to roundoff.  The stylization velocity composition relies on that.

Arrays are indexed data[x, y, z]; vector fields carry a trailing component
axis of size 3.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import convolve1d

from smokestyle._util import atomic_write


@dataclass
class ScalarField3:
    """Scalar samples on a cell-centered uniform grid."""

    data: np.ndarray
    spacing: float = 1.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ValueError(f"scalar field data must be 3D, got shape {self.data.shape}")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @classmethod
    def zeros(cls, dims, spacing: float = 1.0) -> "ScalarField3":
        return cls(np.zeros(tuple(dims)), spacing)

    def copy(self) -> "ScalarField3":
        return replace(self, data=self.data.copy())


@dataclass
class VectorField3:
    """Three collocated scalar components on the same grid as ScalarField3.

    The component axis is the trailing one: data[x, y, z, 0..2] for the
    x, y, z components.
    """

    data: np.ndarray
    spacing: float = 1.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 4 or self.data.shape[3] != 3:
            raise ValueError(f"vector field data must have shape (nx, ny, nz, 3), got {self.data.shape}")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape[:3]

    @property
    def x(self) -> np.ndarray:
        return self.data[..., 0]

    @property
    def y(self) -> np.ndarray:
        return self.data[..., 1]

    @property
    def z(self) -> np.ndarray:
        return self.data[..., 2]

    @classmethod
    def zeros(cls, dims, spacing: float = 1.0) -> "VectorField3":
        return cls(np.zeros(tuple(dims) + (3,)), spacing)

    def copy(self) -> "VectorField3":
        return replace(self, data=self.data.copy())


@dataclass
class SoftMask(ScalarField3):
    """ScalarField3 restricted to values in [0, 1]."""

    def __post_init__(self):
        super().__post_init__()
        if self.data.size and (self.data.min() < -1e-12 or self.data.max() > 1 + 1e-12):
            raise ValueError("soft mask values must lie in [0, 1]")
        np.clip(self.data, 0.0, 1.0, out=self.data)

    @classmethod
    def ones(cls, dims, spacing: float = 1.0) -> "SoftMask":
        return cls(np.ones(tuple(dims)), spacing)


def check_same_dims(*fields) -> tuple[int, int, int]:
    """Raise unless all given fields share dims; returns the common dims."""
    dims = fields[0].dims
    for f in fields[1:]:
        if f.dims != dims:
            raise ValueError(f"dimension mismatch: {f.dims} vs {dims}")
    return dims


def _check_stencil_dims(dims):
    if min(dims) < 3:
        raise ValueError("grid too small for stencil")


def _axis_slice(ndim, axis, sl):
    idx = [slice(None)] * ndim
    idx[axis] = sl
    return tuple(idx)


def _diff(f: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Per-axis derivative: central interior, one-sided first order at faces."""
    nd = f.ndim
    out = np.empty_like(f)
    lo = _axis_slice(nd, axis, 0)
    lo1 = _axis_slice(nd, axis, 1)
    hi = _axis_slice(nd, axis, -1)
    hi1 = _axis_slice(nd, axis, -2)
    mid = _axis_slice(nd, axis, slice(1, -1))
    fwd = _axis_slice(nd, axis, slice(2, None))
    bwd = _axis_slice(nd, axis, slice(None, -2))
    out[mid] = (f[fwd] - f[bwd]) / (2.0 * h)
    out[lo] = (f[lo1] - f[lo]) / h
    out[hi] = (f[hi] - f[hi1]) / h
    return out


def _diff_transpose(g: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Exact transpose of _diff as a linear operator (adjoint stencil)."""
    nd = g.ndim
    out = np.zeros_like(g)
    sl = lambda s: _axis_slice(nd, axis, s)  # noqa: E731
    # boundary rows of _diff scatter into their two columns
    out[sl(0)] -= g[sl(0)] / h
    out[sl(1)] += g[sl(0)] / h
    out[sl(-2)] -= g[sl(-1)] / h
    out[sl(-1)] += g[sl(-1)] / h
    # interior central rows
    out[sl(slice(None, -2))] -= g[sl(slice(1, -1))] / (2.0 * h)
    out[sl(slice(2, None))] += g[sl(slice(1, -1))] / (2.0 * h)
    return out


def gradient(phi: ScalarField3) -> VectorField3:
    """Discrete gradient of a scalar potential."""
    _check_stencil_dims(phi.dims)
    h = phi.spacing
    out = np.stack([_diff(phi.data, a, h) for a in range(3)], axis=-1)
    return VectorField3(out, h)


def gradient_transpose(v: VectorField3) -> ScalarField3:
    """Adjoint of :func:`gradient`; maps a vector cotangent to scalar space."""
    h = v.spacing
    out = sum(_diff_transpose(v.data[..., a], a, h) for a in range(3))
    return ScalarField3(out, h)


def curl(psi: VectorField3) -> VectorField3:
    """Discrete curl of a vector potential (right-handed convention)."""
    _check_stencil_dims(psi.dims)
    h = psi.spacing
    px, py, pz = psi.data[..., 0], psi.data[..., 1], psi.data[..., 2]
    cx = _diff(pz, 1, h) - _diff(py, 2, h)
    cy = _diff(px, 2, h) - _diff(pz, 0, h)
    cz = _diff(py, 0, h) - _diff(px, 1, h)
    return VectorField3(np.stack([cx, cy, cz], axis=-1), h)


def curl_transpose(g: VectorField3) -> VectorField3:
    """Adjoint of :func:`curl`."""
    h = g.spacing
    gx, gy, gz = g.data[..., 0], g.data[..., 1], g.data[..., 2]
    tx = _diff_transpose(gy, 2, h) - _diff_transpose(gz, 1, h)
    ty = _diff_transpose(gz, 0, h) - _diff_transpose(gx, 2, h)
    tz = _diff_transpose(gx, 1, h) - _diff_transpose(gy, 0, h)
    return VectorField3(np.stack([tx, ty, tz], axis=-1), h)


def divergence(v: VectorField3) -> ScalarField3:
    """Discrete divergence of a vector field."""
    _check_stencil_dims(v.dims)
    h = v.spacing
    out = sum(_diff(v.data[..., a], a, h) for a in range(3))
    return ScalarField3(out, h)


def compose_velocity(phi: ScalarField3, psi: VectorField3, lam: float,
                     mask: ScalarField3 | None = None) -> VectorField3:
    """Mix the curl-free and divergence-free parts of the stylization velocity.

    Returns mask * (lam * grad(phi) + (1 - lam) * curl(psi)), with the mask
    applied componentwise.  mask=None means no masking.

    With lam = 0 and no mask the result is divergence-free to roundoff; with
    lam = 1 it is curl-free, both by the commuting-stencil identities.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must lie in [0, 1]")
    check_same_dims(phi, psi)
    v = np.zeros(phi.dims + (3,))
    if lam != 0.0:
        v += lam * gradient(phi).data
    if lam != 1.0:
        v += (1.0 - lam) * curl(psi).data
    if mask is not None:
        check_same_dims(phi, mask)
        v *= mask.data[..., None]
    return VectorField3(v, phi.spacing)


def compose_velocity_adjoint(grad_v: VectorField3, lam: float,
                             mask: ScalarField3 | None = None
                             ) -> tuple[ScalarField3, VectorField3]:
    """Backpropagate a velocity cotangent to the two potentials."""
    g = grad_v.data
    if mask is not None:
        g = g * mask.data[..., None]
    gv = VectorField3(g, grad_v.spacing)
    gphi = gradient_transpose(gv)
    gphi.data *= lam
    gpsi = curl_transpose(gv)
    gpsi.data *= 1.0 - lam
    return gphi, gpsi


# ---------------------------------------------------------------------------
# Trilinear sampling
# ---------------------------------------------------------------------------

def _tri_setup(shape, gx, gy, gz):
    """Clamp grid coordinates and split into base indices plus fractions."""
    nx, ny, nz = shape
    gx = np.clip(gx, 0.0, nx - 1.0)
    gy = np.clip(gy, 0.0, ny - 1.0)
    gz = np.clip(gz, 0.0, nz - 1.0)
    i0 = np.minimum(np.floor(gx).astype(np.intp), max(nx - 2, 0))
    j0 = np.minimum(np.floor(gy).astype(np.intp), max(ny - 2, 0))
    k0 = np.minimum(np.floor(gz).astype(np.intp), max(nz - 2, 0))
    fx = gx - i0
    fy = gy - j0
    fz = gz - k0
    return i0, j0, k0, fx, fy, fz


def _tri_corners(data, i0, j0, k0):
    i1 = np.minimum(i0 + 1, data.shape[0] - 1)
    j1 = np.minimum(j0 + 1, data.shape[1] - 1)
    k1 = np.minimum(k0 + 1, data.shape[2] - 1)
    return (data[i0, j0, k0], data[i1, j0, k0], data[i0, j1, k0], data[i1, j1, k0],
            data[i0, j0, k1], data[i1, j0, k1], data[i0, j1, k1], data[i1, j1, k1])


def _tri_weights(fx, fy, fz):
    wx0, wy0, wz0 = 1.0 - fx, 1.0 - fy, 1.0 - fz
    return (wx0 * wy0 * wz0, fx * wy0 * wz0, wx0 * fy * wz0, fx * fy * wz0,
            wx0 * wy0 * fz, fx * wy0 * fz, wx0 * fy * fz, fx * fy * fz)


def trilinear(data: np.ndarray, gx, gy, gz) -> np.ndarray:
    """Trilinear interpolation of data at grid-space coordinates (clamped)."""
    i0, j0, k0, fx, fy, fz = _tri_setup(data.shape, gx, gy, gz)
    c = _tri_corners(data, i0, j0, k0)
    w = _tri_weights(fx, fy, fz)
    return sum(ci * wi for ci, wi in zip(c, w))


def trilinear_coord_grad(data: np.ndarray, gx, gy, gz) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Derivative of the trilinear interpolant w.r.t. each grid coordinate."""
    i0, j0, k0, fx, fy, fz = _tri_setup(data.shape, gx, gy, gz)
    c000, c100, c010, c110, c001, c101, c011, c111 = _tri_corners(data, i0, j0, k0)
    wx0, wy0, wz0 = 1.0 - fx, 1.0 - fy, 1.0 - fz
    dgx = ((c100 - c000) * wy0 * wz0 + (c110 - c010) * fy * wz0
           + (c101 - c001) * wy0 * fz + (c111 - c011) * fy * fz)
    dgy = ((c010 - c000) * wx0 * wz0 + (c110 - c100) * fx * wz0
           + (c011 - c001) * wx0 * fz + (c111 - c101) * fx * fz)
    dgz = ((c001 - c000) * wx0 * wy0 + (c101 - c100) * fx * wy0
           + (c011 - c010) * wx0 * fy + (c111 - c110) * fx * fy)
    return dgx, dgy, dgz


def trilinear_scatter(out: np.ndarray, gx, gy, gz, values: np.ndarray) -> None:
    """Transpose of :func:`trilinear`: accumulate values into the 8 corners."""
    i0, j0, k0, fx, fy, fz = _tri_setup(out.shape, gx, gy, gz)
    i1 = np.minimum(i0 + 1, out.shape[0] - 1)
    j1 = np.minimum(j0 + 1, out.shape[1] - 1)
    k1 = np.minimum(k0 + 1, out.shape[2] - 1)
    w = _tri_weights(fx, fy, fz)
    idx = ((i0, j0, k0), (i1, j0, k0), (i0, j1, k0), (i1, j1, k0),
           (i0, j0, k1), (i1, j0, k1), (i0, j1, k1), (i1, j1, k1))
    for (ii, jj, kk), wi in zip(idx, w):
        np.add.at(out, (ii, jj, kk), wi * values)


def corner_extrema(data: np.ndarray, gx, gy, gz) -> tuple[np.ndarray, np.ndarray]:
    """Min and max over the 8 cells surrounding each sample position."""
    i0, j0, k0, _, _, _ = _tri_setup(data.shape, gx, gy, gz)
    c = _tri_corners(data, i0, j0, k0)
    lo = c[0].copy()
    hi = c[0].copy()
    for ci in c[1:]:
        np.minimum(lo, ci, out=lo)
        np.maximum(hi, ci, out=hi)
    return lo, hi


def world_to_grid(pos: np.ndarray, spacing: float) -> np.ndarray:
    """World position -> continuous grid coordinate (cell centers at integers)."""
    return np.asarray(pos, dtype=np.float64) / spacing - 0.5


def cell_centers(dims, spacing: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """World-space coordinates of every cell center, as three (nx,ny,nz) arrays."""
    ax = [(np.arange(n) + 0.5) * spacing for n in dims]
    return tuple(np.meshgrid(*ax, indexing="ij"))


def sample_trilinear(fld: ScalarField3, pos) -> float:
    """Trilinear sample at a world-space point; outside positions clamp."""
    g = world_to_grid(np.asarray(pos, dtype=np.float64), fld.spacing)
    return float(trilinear(fld.data, g[0], g[1], g[2]))


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

def _target_coords(n_src: int, n_dst: int):
    # extent-preserving map between cell-centered grids
    return (np.arange(n_dst) + 0.5) * (n_src / n_dst) - 0.5


def resample_trilinear(data: np.ndarray, new_dims) -> np.ndarray:
    """Trilinear resampling onto new_dims, preserving the world extent."""
    coords = [_target_coords(n, m) for n, m in zip(data.shape, new_dims)]
    gx, gy, gz = np.meshgrid(*coords, indexing="ij")
    return trilinear(data, gx, gy, gz)


def _catmull_rom_weights(t: np.ndarray) -> tuple[np.ndarray, ...]:
    t2 = t * t
    t3 = t2 * t
    w0 = 0.5 * (-t3 + 2.0 * t2 - t)
    w1 = 0.5 * (3.0 * t3 - 5.0 * t2 + 2.0)
    w2 = 0.5 * (-3.0 * t3 + 4.0 * t2 + t)
    w3 = 0.5 * (t3 - t2)
    return w0, w1, w2, w3


def _resample_tricubic(data: np.ndarray, new_dims) -> np.ndarray:
    """Separable Catmull-Rom resampling with edge-clamped taps."""
    out = data
    for axis in range(3):
        out = _cubic_axis(out, axis, data.shape[axis], new_dims[axis])
    return out


def _cubic_axis(arr: np.ndarray, axis: int, n_src: int, n_dst: int) -> np.ndarray:
    g = _target_coords(n_src, n_dst)
    base = np.floor(g).astype(np.intp)
    t = g - base
    ws = _catmull_rom_weights(t)
    moved = np.moveaxis(arr, axis, 0)
    acc = np.zeros((n_dst,) + moved.shape[1:])
    for off, w in zip((-1, 0, 1, 2), ws):
        idx = np.clip(base + off, 0, n_src - 1)
        acc += w.reshape((-1,) + (1,) * (arr.ndim - 1)) * moved[idx]
    return np.moveaxis(acc, 0, axis)


def resample_to(fld, new_dims, mode: str):
    """Resample a field to new_dims.

    mode "trilinear_down" samples the source trilinearly at the target cell
    centers; "tricubic_up" uses Catmull-Rom interpolation and clamps the
    result to the source min/max so overshoot cannot create values (negative
    densities in particular) outside the source range.  Identical dims return
    a copy.  The world extent is preserved: spacing rescales by the ratio of
    the leading-axis cell counts.
    """
    new_dims = tuple(int(n) for n in new_dims)
    if any(n < 2 for n in new_dims):
        raise ValueError("new_dims must be at least 2 per axis")
    if mode not in ("trilinear_down", "tricubic_up"):
        raise ValueError(f"unknown resample mode {mode!r}")
    if new_dims == tuple(fld.dims):
        return fld.copy()
    new_spacing = fld.spacing * fld.dims[0] / new_dims[0]
    if isinstance(fld, VectorField3):
        comps = [_resample_component(fld.data[..., a], new_dims, mode) for a in range(3)]
        return VectorField3(np.stack(comps, axis=-1), new_spacing)
    out = _resample_component(fld.data, new_dims, mode)
    return type(fld)(out, new_spacing)


def _resample_component(data: np.ndarray, new_dims, mode: str) -> np.ndarray:
    if mode == "trilinear_down":
        return resample_trilinear(data, new_dims)
    out = _resample_tricubic(data, new_dims)
    np.clip(out, data.min(), data.max(), out=out)
    return out


# ---------------------------------------------------------------------------
# Soft mask extraction
# ---------------------------------------------------------------------------

def soft_mask_from_density(d: ScalarField3, threshold: float, blur_radius: float) -> SoftMask:
    """Indicator of d > threshold, softened by a separable Gaussian blur.

    blur_radius is the Gaussian standard deviation in cells; zero-padding is
    used at the domain boundary so the mask also decays there.
    """
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    if blur_radius < 0:
        raise ValueError("blur_radius must be non-negative")
    mask = (d.data > threshold).astype(np.float64)
    if blur_radius > 0:
        kernel = gaussian_kernel(blur_radius)
        for axis in range(3):
            mask = convolve1d(mask, kernel, axis=axis, mode="constant", cval=0.0)
    np.clip(mask, 0.0, 1.0, out=mask)
    return SoftMask(mask, d.spacing)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1D Gaussian taps truncated at 4 sigma."""
    radius = max(int(np.ceil(4.0 * sigma)), 1)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


# ---------------------------------------------------------------------------
# VF32 volume files
# ---------------------------------------------------------------------------

_VF32_MAGIC = b"VF32"
_VF32_VERSION = 1


def save_vf32(path, fld) -> None:
    """Write a scalar or vector field as a VF32 volume file (atomically).

    Layout: magic "VF32", u32 version, u32 channels (1 or 3), u32 nx ny nz,
    f32 spacing, then channels full volumes of little-endian f32 with the x
    index varying fastest.  Vector fields store the x, y, z component
    volumes back to back.
    """
    channels = 3 if isinstance(fld, VectorField3) else 1
    nx, ny, nz = fld.dims
    header = _VF32_MAGIC + struct.pack("<IIIIIf", _VF32_VERSION, channels, nx, ny, nz, fld.spacing)
    if channels == 1:
        payload = fld.data.ravel(order="F").astype("<f4").tobytes()
    else:
        payload = b"".join(fld.data[..., a].ravel(order="F").astype("<f4").tobytes()
                           for a in range(3))
    atomic_write(path, header + payload)


def read_vf32_header(path) -> dict:
    with open(path, "rb") as fh:
        head = fh.read(28)
    if len(head) < 28 or head[:4] != _VF32_MAGIC:
        raise ValueError(f"{path}: not a VF32 file (bad magic)")
    version, channels, nx, ny, nz, spacing = struct.unpack("<IIIIIf", head[4:28])
    if version != _VF32_VERSION:
        raise ValueError(f"{path}: unsupported VF32 version {version}")
    if channels not in (1, 3):
        raise ValueError(f"{path}: VF32 channels must be 1 or 3, got {channels}")
    return {"version": version, "channels": channels, "dims": (nx, ny, nz), "spacing": spacing}


def load_vf32(path):
    """Read a VF32 file back into a ScalarField3 or VectorField3."""
    info = read_vf32_header(path)
    channels = info["channels"]
    nx, ny, nz = info["dims"]
    count = channels * nx * ny * nz
    with open(path, "rb") as fh:
        fh.seek(28)
        raw = np.fromfile(fh, dtype="<f4", count=count)
    if raw.size != count:
        raise ValueError(f"{path}: truncated VF32 payload")
    vols = raw.astype(np.float64).reshape(channels, -1)
    grids = [v.reshape((nx, ny, nz), order="F") for v in vols]
    if channels == 1:
        return ScalarField3(np.ascontiguousarray(grids[0]), info["spacing"])
    return VectorField3(np.ascontiguousarray(np.stack(grids, axis=-1)), info["spacing"])
