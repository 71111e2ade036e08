"""Differentiable orthographic smoke renderer and camera machinery.

The camera is orthographic and parameterized by two angles: an elevation
about the x axis and an azimuth about the y axis.  Rendering first resamples
the density onto a grid of the same dimensions whose z axis coincides with
the view direction (view_align), then integrates each (x, y) voxel column
into one pixel: sample k's contribution is attenuated by the transmittance
through everything farther along the column,

    tau_k = exp(-gamma * step * sum_{m>k} d_m),   I = step * sum_k d_k * tau_k.

The suffix sum is exclusive (a sample does not absorb itself), which keeps
the derivative simple and makes a single occupied voxel render to exactly
step * density.  Both stages carry exact analytic adjoints.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from smokestyle._util import atomic_write
from smokestyle.fields import (
    ScalarField3,
    cell_centers,
    trilinear,
    trilinear_scatter,
    world_to_grid,
)


@dataclass
class CameraPose:
    """Orthographic view direction: elevation and azimuth in degrees.

    look_at is the world-space rotation pivot; None means the domain center.
    """

    theta1: float = 0.0
    theta2: float = 0.0
    look_at: tuple | None = None

    def __post_init__(self):
        if not (math.isfinite(self.theta1) and math.isfinite(self.theta2)):
            raise ValueError("camera angles must be finite")


@dataclass
class RenderConfig:
    """Absorption strength, optional image dims, and integration step."""

    gamma: float = 1.0
    height: int | None = None
    width: int | None = None
    step: float | None = None

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        for n in (self.height, self.width):
            if n is not None and n < 1:
                raise ValueError("image dims must be >= 1")


@dataclass
class GrayImage:
    """Row-major grayscale raster; row index follows the grid's y axis.

    Rendered and file-loaded images are non-negative; the same container
    also carries image-space gradients, which are signed.
    """

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError(f"image data must be 2D, got shape {self.data.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def total(self) -> float:
        return float(self.data.sum())


def _cos_sin_deg(angle: float) -> tuple[float, float]:
    # exact values at quarter turns so axis-aligned poses resample exactly
    if angle % 90.0 == 0.0:
        q = int(angle // 90.0) % 4
        return ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))[q]
    r = math.radians(angle)
    return math.cos(r), math.sin(r)


def rotation_matrix(theta1: float, theta2: float) -> np.ndarray:
    """Elevation about x composed with azimuth about y (degrees)."""
    c1, s1 = _cos_sin_deg(theta1)
    c2, s2 = _cos_sin_deg(theta2)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, c1, -s1], [0.0, s1, c1]])
    ry = np.array([[c2, 0.0, s2], [0.0, 1.0, 0.0], [-s2, 0.0, c2]])
    return rx @ ry


def domain_center(dims, spacing: float) -> np.ndarray:
    return 0.5 * spacing * np.asarray(dims, dtype=np.float64)


def density_centroid(d: ScalarField3) -> np.ndarray:
    """Density-weighted center of mass; domain center for an empty field."""
    total = d.data.sum()
    if total <= 0:
        return domain_center(d.dims, d.spacing)
    x, y, z = cell_centers(d.dims, d.spacing)
    return np.array([float((d.data * c).sum() / total) for c in (x, y, z)])


@dataclass
class ResampleTape:
    """Grid-space source coordinates of one view_align call."""

    gx: np.ndarray
    gy: np.ndarray
    gz: np.ndarray
    source_dims: tuple


def view_align(d: ScalarField3, pose: CameraPose):
    """Resample the density onto a grid whose z axis is the view direction.

    The aligned grid has the same dims and spacing as the input and is
    centered on look_at; each of its cell centers is rotated about look_at
    by the pose's rotation and the source density is sampled there
    trilinearly (clamped outside).  Centering the box on look_at is what
    keeps a centroid-tracking camera framing the smoke identically when the
    density translates.
    """
    pivot = np.asarray(pose.look_at, dtype=np.float64) if pose.look_at is not None \
        else domain_center(d.dims, d.spacing)
    rot = rotation_matrix(pose.theta1, pose.theta2)
    x, y, z = cell_centers(d.dims, d.spacing)
    box_center = domain_center(d.dims, d.spacing)
    off = np.stack([x - box_center[0], y - box_center[1], z - box_center[2]], axis=-1)
    src = off @ rot.T + pivot
    gx = world_to_grid(src[..., 0], d.spacing)
    gy = world_to_grid(src[..., 1], d.spacing)
    gz = world_to_grid(src[..., 2], d.spacing)
    tape = ResampleTape(gx, gy, gz, tuple(d.dims))
    return ScalarField3(trilinear(d.data, gx, gy, gz), d.spacing), tape


def view_align_adjoint(tape: ResampleTape, grad_aligned: np.ndarray) -> np.ndarray:
    """Scatter an aligned-grid cotangent back to the unrotated grid."""
    if tape.gx.shape != grad_aligned.shape:
        raise ValueError("stale tape: aligned dims do not match gradient")
    out = np.zeros(tape.source_dims)
    trilinear_scatter(out, tape.gx, tape.gy, tape.gz, grad_aligned)
    return out


def _resolve_image_dims(cfg: RenderConfig, dims) -> tuple[int, int]:
    h = cfg.height if cfg.height is not None else dims[1]
    w = cfg.width if cfg.width is not None else dims[0]
    if (h, w) != (dims[1], dims[0]):
        raise ValueError(
            f"image dims ({h}, {w}) must match the aligned grid face ({dims[1]}, {dims[0]}); "
            "one pixel per voxel column")
    return h, w


def _transmittance(d: np.ndarray, gamma: float, step: float) -> np.ndarray:
    # exclusive suffix sum of density along z (axis 2)
    suffix = np.flip(np.cumsum(np.flip(d, axis=2), axis=2), axis=2) - d
    return np.exp(-gamma * step * suffix)


def render(d_aligned: ScalarField3, cfg: RenderConfig) -> GrayImage:
    """Integrate the view-aligned density into a grayscale image.

    Column k = 0 is nearest the camera; attenuation accumulates toward the
    far side of the volume.  With gamma = 0 the image is the plain
    step-scaled column sum.
    """
    if d_aligned.data.min() < -1e-12:
        raise ValueError("negative density passed to render")
    _resolve_image_dims(cfg, d_aligned.dims)
    step = cfg.step if cfg.step is not None else d_aligned.spacing
    tau = _transmittance(d_aligned.data, cfg.gamma, step)
    img = step * (d_aligned.data * tau).sum(axis=2)
    return GrayImage(img.T)  # (W, H) -> (H, W): rows follow y


def render_adjoint(tape: ResampleTape, d_aligned: ScalarField3, cfg: RenderConfig,
                   image_grad: GrayImage) -> ScalarField3:
    """Exact gradient of render composed with the view_align scatter.

    dI/dd_k = step * (tau_k - gamma*step*P_k) with P_k the exclusive prefix
    sum of d*tau: the sample's own attenuated emission plus the absorption
    it applies to everything nearer the camera.  The result lives on the
    unrotated grid.
    """
    dims = tuple(d_aligned.dims)
    if tape.gx.shape != dims:
        raise ValueError("stale tape: aligned dims do not match density")
    if image_grad.shape != (dims[1], dims[0]):
        raise ValueError(f"image gradient shape {image_grad.shape} does not match grid face")
    step = cfg.step if cfg.step is not None else d_aligned.spacing
    tau = _transmittance(d_aligned.data, cfg.gamma, step)
    dtau = d_aligned.data * tau
    prefix = np.cumsum(dtau, axis=2) - dtau
    per_cell = step * (tau - cfg.gamma * step * prefix)
    grad_aligned = per_cell * image_grad.data.T[..., None]
    return ScalarField3(view_align_adjoint(tape, grad_aligned), d_aligned.spacing)


def poisson_sample_views(center: CameraPose, range1: float, range2: float,
                         n: int, min_dist: float, seed: int) -> list:
    """Poisson-disk poses by dart throwing in the angle rectangle.

    Candidates are drawn uniformly in [theta1 +- range1] x [theta2 +- range2]
    and rejected when closer than min_dist to an accepted pose.  If n poses
    do not fit within 10*n*100 attempts the radius is halved and sampling
    restarts, so the call always terminates.  Deterministic under seed.
    """
    if n < 1:
        raise ValueError("need at least one view")
    if range1 <= 0 or range2 <= 0:
        raise ValueError("view ranges must be positive")
    rng = np.random.default_rng(seed)
    budget = 10 * n * 100
    radius = float(min_dist)
    while True:
        accepted: list[tuple[float, float]] = []
        for _ in range(budget):
            t1 = center.theta1 + rng.uniform(-range1, range1)
            t2 = center.theta2 + rng.uniform(-range2, range2)
            if all((t1 - a) ** 2 + (t2 - b) ** 2 >= radius * radius for a, b in accepted):
                accepted.append((t1, t2))
                if len(accepted) == n:
                    return [CameraPose(a, b, center.look_at) for a, b in accepted]
        radius *= 0.5


# ---------------------------------------------------------------------------
# PGM image files
# ---------------------------------------------------------------------------

def save_pgm(path, img: GrayImage, bits: int = 8) -> None:
    """Write a binary PGM (P5), 8- or 16-bit, clamping values to [0, 1].

    Image row 0 follows the grid's y origin (bottom of the rendered frame),
    so rows are flipped on write; load_pgm flips them back.
    """
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    maxval = (1 << bits) - 1
    scaled = np.round(np.clip(img.data, 0.0, 1.0) * maxval)
    h, w = img.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    raster = np.flipud(scaled).astype(">u2" if bits == 16 else "u1").tobytes()
    atomic_write(path, header + raster)


def load_pgm(path) -> GrayImage:
    """Read a binary PGM back to floats in [0, 1] (rows un-flipped)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    # header: magic, width, height, maxval -- whitespace separated, # comments
    tokens = []
    pos = 2
    while len(tokens) < 3:
        m = re.match(rb"\s*(#[^\n]*\n|\S+)", raw[pos:])
        if m is None:
            raise ValueError(f"{path}: truncated PGM header")
        tok = m.group(1)
        pos += m.end()
        if not tok.startswith(b"#"):
            tokens.append(tok)
    w, h, maxval = (int(t) for t in tokens)
    pos += 1  # single whitespace byte after maxval
    dtype = ">u2" if maxval > 255 else "u1"
    count = w * h
    need = count * (2 if maxval > 255 else 1)
    if len(raw) - pos < need:
        raise ValueError(f"{path}: truncated PGM raster")
    pix = np.frombuffer(raw, dtype=dtype, count=count, offset=pos)
    data = np.flipud(pix.reshape(h, w)).astype(np.float64) / maxval
    return GrayImage(data)
