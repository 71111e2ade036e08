"""Optimization driver: single-frame and sequence stylization.

One iteration composes the stylization velocity from its two potentials,
transports the density with a differentiable semi-Lagrangian step, renders a
handful of Poisson-sampled views, scores them with the feature losses, and
backpropagates to the potentials.  Updates are preconditioned by a 3D
Laplacian-pyramid normalization (boosting low-frequency structure) and
applied with a fixed step size.  Frames are stylized coarse-to-fine; a
sequence additionally aligns each frame's result to its neighbors through
the simulation velocities and blends them inside a temporal window.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from smokestyle.fields import (
    ScalarField3,
    SoftMask,
    VectorField3,
    compose_velocity,
    compose_velocity_adjoint,
    resample_to,
    resample_trilinear,
    soft_mask_from_density,
)
from smokestyle.render import (
    CameraPose,
    RenderConfig,
    density_centroid,
    poisson_sample_views,
    render,
    render_adjoint,
    rotation_matrix,
    view_align,
)
from smokestyle.features import LossWeights, combined_loss
from smokestyle.transport import (
    VelocitySequence,
    advect_adjoint,
    advect_maccormack,
    advect_sl,
    align_velocity,
    blend_window,
    window_weights,
)


@dataclass
class StylizeConfig:
    """Every knob of the optimization; mirrors the run-config file keys."""

    lam: float = 0.0               # 0 = divergence-free, 1 = curl-free
    eta: float = 0.002
    iters_per_scale: int = 20
    scales: int = 2
    scale_factor: float = 1.8
    lap_levels: int = 3
    views_per_frame: int = 9
    view_range1: float = 5.0
    view_range2: float = 10.0
    view_min_dist: float = 2.0
    gamma: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    window: int = 0
    omega: str = "gaussian"
    seed: int = 0
    mask_threshold: float = 0.0    # 0 disables masking
    mask_blur: float = 1.0
    style_layers: str = "L1,L2,L3"
    sequence_sweeps: int = 1
    align_space: str = "velocity"  # or "gradient"

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if self.scale_factor <= 1.0:
            raise ValueError("scale_factor must exceed 1")
        for name in ("iters_per_scale", "scales", "lap_levels", "views_per_frame",
                     "sequence_sweeps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.window < 0:
            raise ValueError("window must be >= 0")
        if self.omega not in ("gaussian", "uniform"):
            raise ValueError("omega must be 'gaussian' or 'uniform'")
        if self.align_space not in ("velocity", "gradient"):
            raise ValueError("align_space must be 'velocity' or 'gradient'")
        if self.gamma < 0 or self.mask_threshold < 0 or self.mask_blur < 0:
            raise ValueError("gamma, mask_threshold, mask_blur must be non-negative")

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta)

    def style_layer_names(self) -> tuple:
        return tuple(s.strip() for s in self.style_layers.split(",") if s.strip())

    @staticmethod
    def parse_file(path) -> dict:
        """Raw key/value pairs of a config file (#-comments, blank lines ok)."""
        values = {}
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected 'key = value'")
                key, val = (s.strip() for s in line.split("=", 1))
                values[key] = val
        return values

    @classmethod
    def from_file(cls, path) -> "StylizeConfig":
        return cls.from_dict(cls.parse_file(path))

    @classmethod
    def from_dict(cls, values: dict) -> "StylizeConfig":
        kwargs = {}
        for key, val in values.items():
            key = {"lambda": "lam", "w": "window"}.get(key, key)
            if key not in cls.__dataclass_fields__:
                raise ValueError(f"unknown config key {key!r}")
            f = cls.__dataclass_fields__[key]
            if f.type == "int":
                kwargs[key] = int(val)
            elif f.type == "float":
                kwargs[key] = float(val)
            else:
                kwargs[key] = str(val)
        return cls(**kwargs)


@dataclass
class FrameState:
    """Per-frame optimization variables at the current scale."""

    index: int
    phi: ScalarField3
    psi: VectorField3
    mask: SoftMask | None
    look_at: tuple


def scale_dims(dims, factor: float, level: int) -> tuple:
    """Grid dims after dividing by factor^level (truncated, floor of 3)."""
    return tuple(max(3, int(n / factor**level)) for n in dims)


def make_mask(d: ScalarField3, cfg: StylizeConfig) -> SoftMask | None:
    if cfg.mask_threshold <= 0:
        return None
    return soft_mask_from_density(d, cfg.mask_threshold, cfg.mask_blur)


def initial_state(d: ScalarField3, cfg: StylizeConfig, index: int = 0,
                  dims=None) -> FrameState:
    """Zero potentials (and mask/centroid caches) for a density frame."""
    look_at = tuple(density_centroid(d))
    ds = d if dims is None or tuple(dims) == tuple(d.dims) \
        else resample_to(d, dims, "trilinear_down")
    return FrameState(
        index=index,
        phi=ScalarField3.zeros(ds.dims, ds.spacing),
        psi=VectorField3.zeros(ds.dims, ds.spacing),
        mask=make_mask(ds, cfg),
        look_at=look_at,
    )


def _view_seed(cfg: StylizeConfig, scale: int, iteration: int):
    # deliberately frame-independent: identical frames must stylize identically
    return np.random.SeedSequence(entropy=cfg.seed, spawn_key=(scale, iteration))


def single_frame_gradients(d: ScalarField3, state: FrameState, net, p_c, p_s,
                           cfg: StylizeConfig, view_seed=None):
    """One full forward/adjoint sweep; returns (dphi, dpsi, loss).

    The returned fields are descent directions (negated loss gradients), so
    step_potentials can add them.  Views are Poisson-sampled around the
    cached centroid; their gradient contributions are summed in view order.
    """
    v = compose_velocity(state.phi, state.psi, cfg.lam, state.mask)
    d_star, adv_tape = advect_sl(d, v, 1.0)
    np.clip(d_star.data, 0.0, None, out=d_star.data)  # guard fp dust for render
    if view_seed is None:
        view_seed = _view_seed(cfg, 0, 0)
    poses = poisson_sample_views(
        CameraPose(0.0, 0.0, state.look_at), cfg.view_range1, cfg.view_range2,
        cfg.views_per_frame, cfg.view_min_dist, view_seed)
    rcfg = RenderConfig(gamma=cfg.gamma)
    weights = cfg.loss_weights()
    total = 0.0
    g_dstar = np.zeros_like(d.data)
    for pose in poses:
        aligned, rtape = view_align(d_star, pose)
        img = render(aligned, rcfg)
        loss_v, img_grad = combined_loss(net, img, p_c, p_s, weights)
        total += loss_v
        g_dstar += render_adjoint(rtape, aligned, rcfg, img_grad).data
    _, g_vel = advect_adjoint(adv_tape, d, v, 1.0,
                              ScalarField3(g_dstar, d.spacing))
    gphi, gpsi = compose_velocity_adjoint(g_vel, cfg.lam, state.mask)
    gphi.data *= -1.0
    gpsi.data *= -1.0
    return gphi, gpsi, total


def _lap_split(band: np.ndarray):
    lo_dims = tuple(max(2, (n + 1) // 2) for n in band.shape)
    lo = resample_trilinear(band, lo_dims)
    hi = band - resample_trilinear(lo, band.shape)
    return lo, hi


def _lap_normalize_component(grad: np.ndarray, levels: int) -> np.ndarray:
    bands = []
    cur = grad
    for _ in range(levels - 1):
        cur, hi = _lap_split(cur)
        bands.append(hi)
    bands.append(cur)  # residual low-pass band
    out = bands[-1] / (np.abs(bands[-1]).mean() + 1e-7)
    for hi in reversed(bands[:-1]):
        out = resample_trilinear(out, hi.shape) + hi / (np.abs(hi).mean() + 1e-7)
    return out


def lap_normalize(grad, levels: int):
    """Per-band gradient normalization on a 3D Laplacian pyramid.

    Each band is divided by (mean |band| + 1e-7) before recombination, which
    amplifies low-frequency structure relative to a plain normalized
    gradient.  levels = 1 degenerates to whole-gradient normalization.
    Vector fields are processed per component.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    max_levels = max(1, int(np.log2(min(grad.dims))))
    if levels > max_levels:
        warnings.warn(
            f"grid {tuple(grad.dims)} too small for {levels} pyramid levels; "
            f"using {max_levels}", stacklevel=2)
        levels = max_levels
    if isinstance(grad, VectorField3):
        comps = [_lap_normalize_component(grad.data[..., a], levels) for a in range(3)]
        return VectorField3(np.stack(comps, axis=-1), grad.spacing)
    return ScalarField3(_lap_normalize_component(grad.data, levels), grad.spacing)


def step_potentials(state: FrameState, dphi: ScalarField3, dpsi: VectorField3,
                    cfg: StylizeConfig) -> FrameState:
    """Fixed-step update of both potentials with normalized directions."""
    if tuple(dphi.dims) != tuple(state.phi.dims):
        raise ValueError("gradient dims do not match state potentials")
    if cfg.eta == 0.0:
        return replace(state, phi=state.phi.copy(), psi=state.psi.copy())
    nphi = lap_normalize(dphi, cfg.lap_levels)
    npsi = lap_normalize(dpsi, cfg.lap_levels)
    return replace(
        state,
        phi=ScalarField3(state.phi.data + cfg.eta * nphi.data, state.phi.spacing),
        psi=VectorField3(state.psi.data + cfg.eta * npsi.data, state.psi.spacing),
    )


def stylize_frame(d: ScalarField3, net, p_c, p_s, cfg: StylizeConfig,
                  index: int = 0, initial: FrameState | None = None,
                  on_iteration=None):
    """Coarse-to-fine single-frame optimization.

    Runs iters_per_scale iterations on each rung of the scale ladder
    (coarsest first), upsampling the potentials tricubically between rungs
    and restarting each rung from the original density.  Returns
    (phi, psi, d_star) where d_star is the MacCormack transport of d by the
    final composed velocity.  on_iteration(scale_idx, iter_idx, loss) is
    called after each iteration when given.
    """
    if d.data.min() < 0:
        raise ValueError("density must be non-negative")
    state = initial
    for scale_idx in range(cfg.scales - 1, -1, -1):
        dims = scale_dims(d.dims, cfg.scale_factor, scale_idx)
        d_s = resample_to(d, dims, "trilinear_down") if dims != tuple(d.dims) else d.copy()
        np.clip(d_s.data, 0.0, None, out=d_s.data)
        if state is None:
            state = initial_state(d, cfg, index=index, dims=dims)
        elif tuple(state.phi.dims) != dims:
            state = replace(
                state,
                phi=resample_to(state.phi, dims, "tricubic_up"),
                psi=resample_to(state.psi, dims, "tricubic_up"),
                mask=make_mask(d_s, cfg),
            )
        for it in range(cfg.iters_per_scale):
            dphi, dpsi, loss = single_frame_gradients(
                d_s, state, net, p_c, p_s, cfg,
                view_seed=_view_seed(cfg, scale_idx, it))
            state = step_potentials(state, dphi, dpsi, cfg)
            if on_iteration is not None:
                on_iteration(scale_idx, it, loss)
    v = compose_velocity(state.phi, state.psi, cfg.lam, state.mask)
    d_star = advect_maccormack(d, v, 1.0)
    return state.phi, state.psi, d_star


def _align_scalar(f: ScalarField3, seq: VelocitySequence, i: int, j: int) -> ScalarField3:
    """align_velocity's chaining applied to a scalar field."""
    out = f.copy()
    if i < j:
        for k in range(i, j):
            out, _ = advect_sl(out, seq[k], seq.dt)
    else:
        for k in range(i - 1, j - 1, -1):
            neg = VectorField3(-seq[k].data, seq[k].spacing)
            out, _ = advect_sl(out, neg, seq.dt)
    return out


def _window_indices(t: int, n: int, w: int):
    lo, hi = max(0, t - w), min(n - 1, t + w)
    idx = list(range(lo, hi + 1))
    offsets = [i - t for i in idx]
    return idx, offsets


def stylize_sequence(densities: list, seq: VelocitySequence, net, p_c, p_s,
                     cfg: StylizeConfig, on_frame=None) -> list:
    """Time-coherent stylization of a density sequence.

    Phase 1 stylizes every frame independently; phase 2 expresses each
    neighbor's stylization velocity in the current frame's coordinates
    (chained advection through the simulation velocities) and blends inside
    the +-window with normalized weights; phase 3 transports each input
    frame by its blended velocity.  align_space = "gradient" instead aligns
    and blends the per-iteration potential gradients inside a joint
    optimization loop.  sequence_sweeps > 1 repeats phases 1-2 warm-started
    from the blended potentials at full resolution.
    """
    n = len(densities)
    if n == 0:
        raise ValueError("empty density sequence")
    if len(seq) not in (n, n - 1):
        raise ValueError(
            f"length mismatch: {n} density frames need {n - 1} (or {n}) velocity frames, "
            f"got {len(seq)}")
    dims0 = tuple(densities[0].dims)
    for d in densities:
        if tuple(d.dims) != dims0:
            raise ValueError("density frames disagree on dims")
    if cfg.align_space == "gradient":
        return _stylize_sequence_gradient_mode(densities, seq, net, p_c, p_s, cfg)

    states = [None] * n
    for sweep in range(cfg.sequence_sweeps):
        sweep_cfg = cfg if sweep == 0 else replace(cfg, scales=1)
        results = []
        for t, d in enumerate(densities):
            phi, psi, _ = stylize_frame(d, net, p_c, p_s, sweep_cfg, index=t,
                                        initial=states[t])
            results.append((phi, psi))
            if on_frame is not None:
                on_frame(sweep, t)
        velocities = []
        for t, (phi, psi) in enumerate(results):
            mask = make_mask(densities[t], cfg)
            velocities.append(compose_velocity(phi, psi, cfg.lam, mask))
        blended = []
        for t in range(n):
            idx, offsets = _window_indices(t, n, cfg.window)
            aligned = [align_velocity(velocities[i], seq, i, t) for i in idx]
            omega = window_weights(offsets, cfg.window, cfg.omega)
            blended.append(blend_window(aligned, omega))
        if sweep + 1 < cfg.sequence_sweeps:
            # warm-start the next sweep from temporally blended potentials
            states = []
            for t in range(n):
                idx, offsets = _window_indices(t, n, cfg.window)
                omega = window_weights(offsets, cfg.window, cfg.omega)
                phis = [_align_scalar(results[i][0], seq, i, t) for i in idx]
                psis = [align_velocity(results[i][1], seq, i, t) for i in idx]
                phi_b = ScalarField3(sum(w * f.data for w, f in zip(omega, phis)),
                                     phis[0].spacing)
                psi_b = blend_window(psis, omega)
                states.append(FrameState(t, phi_b, psi_b, make_mask(densities[t], cfg),
                                         tuple(density_centroid(densities[t]))))
    return [advect_maccormack(d, v, 1.0) for d, v in zip(densities, blended)]


def _resample_sequence(seq: VelocitySequence, dims) -> VelocitySequence:
    if len(seq) == 0 or tuple(seq[0].dims) == tuple(dims):
        return seq
    return VelocitySequence(
        [resample_to(u, dims, "trilinear_down") for u in seq.frames], seq.dt)


def _stylize_sequence_gradient_mode(densities, seq, net, p_c, p_s, cfg):
    """Joint loop that aligns and blends potential gradients across frames."""
    n = len(densities)
    states = [initial_state(d, cfg, index=t,
                            dims=scale_dims(d.dims, cfg.scale_factor, cfg.scales - 1))
              for t, d in enumerate(densities)]
    for scale_idx in range(cfg.scales - 1, -1, -1):
        dims = scale_dims(densities[0].dims, cfg.scale_factor, scale_idx)
        ds = []
        for d in densities:
            d_s = resample_to(d, dims, "trilinear_down") if dims != tuple(d.dims) else d.copy()
            np.clip(d_s.data, 0.0, None, out=d_s.data)
            ds.append(d_s)
        if tuple(states[0].phi.dims) != dims:
            states = [replace(s,
                              phi=resample_to(s.phi, dims, "tricubic_up"),
                              psi=resample_to(s.psi, dims, "tricubic_up"),
                              mask=make_mask(ds[t], cfg))
                      for t, s in enumerate(states)]
        seq_s = _resample_sequence(seq, dims)
        for it in range(cfg.iters_per_scale):
            grads = [single_frame_gradients(ds[t], states[t], net, p_c, p_s, cfg,
                                            view_seed=_view_seed(cfg, scale_idx, it))
                     for t in range(n)]
            for t in range(n):
                idx, offsets = _window_indices(t, n, cfg.window)
                omega = window_weights(offsets, cfg.window, cfg.omega)
                dphis = [_align_scalar(grads[i][0], seq_s, i, t) for i in idx]
                dpsis = [align_velocity(grads[i][1], seq_s, i, t) for i in idx]
                dphi = ScalarField3(sum(w * f.data for w, f in zip(omega, dphis)),
                                    dphis[0].spacing)
                dpsi = blend_window(dpsis, omega)
                states[t] = step_potentials(states[t], dphi, dpsi, cfg)
    out = []
    for t, d in enumerate(densities):
        v = compose_velocity(states[t].phi, states[t].psi, cfg.lam, states[t].mask)
        out.append(advect_maccormack(d, v, 1.0))
    return out


# ---------------------------------------------------------------------------
# Temporal coherence metric
# ---------------------------------------------------------------------------

def _bilinear2d(img: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    h, w = img.shape
    rows = np.clip(rows, 0.0, h - 1.0)
    cols = np.clip(cols, 0.0, w - 1.0)
    r0 = np.minimum(rows.astype(np.intp), h - 2) if h > 1 else np.zeros_like(rows, dtype=np.intp)
    c0 = np.minimum(cols.astype(np.intp), w - 2) if w > 1 else np.zeros_like(cols, dtype=np.intp)
    fr = rows - r0
    fc = cols - c0
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    return ((1 - fr) * (1 - fc) * img[r0, c0] + (1 - fr) * fc * img[r0, c1]
            + fr * (1 - fc) * img[r1, c0] + fr * fc * img[r1, c1])


def temporal_flicker_metric(frames: list, seq: VelocitySequence, poses) -> float:
    """Mean squared residual between each frame and its motion-warped successor.

    For every adjacent pair, frame t's image is warped by the depth-averaged,
    view-projected simulation velocity and compared to frame t+1; the metric
    averages the squared pixel differences over all pairs.  Lower means the
    rendered sequence moves with the simulation instead of flickering.
    """
    if len(frames) < 2:
        raise ValueError("need at least two frames")
    if isinstance(poses, CameraPose):
        poses = [poses] * len(frames)
    if len(poses) < len(frames) - 1:
        raise ValueError("need a pose per frame pair")
    if len(seq) < len(frames) - 1:
        raise ValueError("need a velocity field per frame pair")
    total = 0.0
    for t in range(len(frames) - 1):
        pose = poses[t]
        u = seq[t]
        rot = rotation_matrix(pose.theta1, pose.theta2)
        # world velocity expressed in view coordinates, resampled per component
        u_view_world = np.tensordot(u.data, rot, axes=([3], [0]))  # R^T applied
        comp_aligned = []
        for a in range(2):  # only x, y displace pixels
            comp, _ = view_align(ScalarField3(u_view_world[..., a], u.spacing), pose)
            comp_aligned.append(comp.data.mean(axis=2))  # depth average
        dx = comp_aligned[0].T * seq.dt / u.spacing  # (H, W) pixel units
        dy = comp_aligned[1].T * seq.dt / u.spacing
        h, w = frames[t].data.shape
        rows, cols = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float),
                                 indexing="ij")
        warped = _bilinear2d(frames[t].data, rows - dy, cols - dx)
        total += float(((frames[t + 1].data - warped) ** 2).mean())
    return total / (len(frames) - 1)
