"""Optimization loop, Laplacian normalization, sequences, flicker metric."""

import numpy as np
import pytest

from smokestyle.fields import (
    ScalarField3,
    SoftMask,
    VectorField3,
    compose_velocity,
    divergence,
    resample_trilinear,
)
from smokestyle.features import (
    LayerSpec,
    init_random,
    style_params_from_image,
)
from smokestyle.render import CameraPose, GrayImage, RenderConfig, render, view_align
from smokestyle.stylize import (
    FrameState,
    StylizeConfig,
    _lap_split,
    _view_seed,
    initial_state,
    lap_normalize,
    make_mask,
    scale_dims,
    single_frame_gradients,
    step_potentials,
    stylize_frame,
    stylize_sequence,
    temporal_flicker_metric,
)
from smokestyle.transport import VelocitySequence


def tiny_net(seed=0):
    layers = [
        LayerSpec("c1", "conv", kh=3, kw=3, cin=1, cout=4, stride=1),
        LayerSpec("c1_relu", "relu"),
        LayerSpec("c2", "conv", kh=3, kw=3, cin=4, cout=6, stride=1),
        LayerSpec("c2_relu", "relu"),
    ]
    return init_random(layers, seed=seed)


def blob(dims, spacing=1.0, sigma_frac=0.18, amp=1.0):
    ax = [(np.arange(n) + 0.5) * spacing for n in dims]
    x, y, z = np.meshgrid(*ax, indexing="ij")
    c = [0.5 * n * spacing for n in dims]
    s = sigma_frac * dims[0] * spacing
    r2 = (x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2
    return ScalarField3(amp * np.exp(-r2 / (2 * s * s)), spacing)


def stripes_image(h, w, period=4):
    i, j = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    return GrayImage(0.5 + 0.5 * np.sin(2 * np.pi * (i + j) / period))


def tiny_cfg(**kw):
    base = dict(eta=0.05, iters_per_scale=3, scales=1, views_per_frame=1,
                view_min_dist=0.5, gamma=0.5, alpha=0.0, beta=1.0,
                lap_levels=2, style_layers="c1,c2", seed=3)
    base.update(kw)
    return StylizeConfig(**base)


def style_for(net, dims, cfg):
    img = stripes_image(dims[1], dims[0])
    return style_params_from_image(net, img, layers=cfg.style_layer_names())


# --- config ------------------------------------------------------------------

def test_config_defaults_valid():
    cfg = StylizeConfig()
    assert cfg.lam == 0.0
    assert cfg.scale_factor == pytest.approx(1.8)
    assert cfg.style_layer_names() == ("L1", "L2", "L3")


@pytest.mark.parametrize("bad", [
    dict(lam=1.5), dict(eta=-1.0), dict(scale_factor=1.0), dict(scales=0),
    dict(window=-1), dict(omega="triangular"), dict(align_space="pixels"),
    dict(iters_per_scale=0), dict(gamma=-0.1),
])
def test_config_rejects_bad_values(bad):
    with pytest.raises(ValueError):
        StylizeConfig(**bad)


def test_config_from_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text(
        "# stylization settings\n"
        "lambda = 0.25\n"
        "eta = 0.01\n"
        "iters_per_scale = 5\n"
        "omega = uniform\n"
        "w = 2\n"
        "style_layers = L1,L2\n")
    cfg = StylizeConfig.from_file(p)
    assert cfg.lam == 0.25
    assert cfg.eta == 0.01
    assert cfg.iters_per_scale == 5
    assert cfg.omega == "uniform"
    assert cfg.window == 2
    assert cfg.style_layer_names() == ("L1", "L2")


def test_config_file_errors(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("eta 0.01\n")
    with pytest.raises(ValueError, match="key = value"):
        StylizeConfig.from_file(p)
    q = tmp_path / "unknown.cfg"
    q.write_text("warp_factor = 9\n")
    with pytest.raises(ValueError, match="unknown config key"):
        StylizeConfig.from_file(q)


def test_scale_dims_coarse_to_fine_ladder():
    assert scale_dims((200, 300, 200), 1.8, 0) == (200, 300, 200)
    assert scale_dims((200, 300, 200), 1.8, 1) == (111, 166, 111)
    assert scale_dims((200, 300, 200), 1.8, 2) == (61, 92, 61)
    assert scale_dims((32, 32, 32), 1.8, 1) == (17, 17, 17)
    assert scale_dims((4, 4, 4), 1.8, 3) == (3, 3, 3)  # floor at stencil minimum


# --- lap_normalize -----------------------------------------------------------

def test_lap_normalize_single_level_is_plain_normalization():
    rng = np.random.default_rng(1)
    g = ScalarField3(rng.standard_normal((8, 8, 8)))
    out = lap_normalize(g, 1)
    want = g.data / (np.abs(g.data).mean() + 1e-7)
    np.testing.assert_allclose(out.data, want, atol=1e-13)


def test_lap_normalize_zero_is_zero():
    out = lap_normalize(ScalarField3.zeros((8, 8, 8)), 3)
    np.testing.assert_array_equal(out.data, 0.0)


def test_lap_pyramid_perfect_reconstruction():
    # recombining the raw bands (no normalization) must reproduce the input
    rng = np.random.default_rng(2)
    x = rng.standard_normal((12, 10, 14))
    bands = []
    cur = x
    for _ in range(2):
        cur, hi = _lap_split(cur)
        bands.append(hi)
    recon = cur
    for hi in reversed(bands):
        recon = resample_trilinear(recon, hi.shape) + hi
    np.testing.assert_allclose(recon, x, atol=1e-12)


def test_lap_normalize_reduces_levels_with_warning():
    g = ScalarField3(np.random.default_rng(3).standard_normal((4, 4, 4)))
    with pytest.warns(UserWarning, match="too small"):
        out = lap_normalize(g, 6)
    assert out.dims == (4, 4, 4)


def test_lap_normalize_vector_componentwise():
    rng = np.random.default_rng(4)
    v = VectorField3(rng.standard_normal((8, 8, 8, 3)))
    out = lap_normalize(v, 2)
    for a in range(3):
        comp = lap_normalize(ScalarField3(v.data[..., a]), 2)
        np.testing.assert_allclose(out.data[..., a], comp.data)


# --- step_potentials ---------------------------------------------------------

def test_step_zero_gradients_leave_state():
    state = initial_state(blob((8, 8, 8)), tiny_cfg())
    new = step_potentials(state, ScalarField3.zeros((8, 8, 8)),
                          VectorField3.zeros((8, 8, 8)), tiny_cfg())
    np.testing.assert_array_equal(new.phi.data, 0.0)
    np.testing.assert_array_equal(new.psi.data, 0.0)


def test_step_is_linear_in_eta():
    rng = np.random.default_rng(5)
    cfg1 = tiny_cfg(eta=0.1)
    cfg2 = tiny_cfg(eta=0.2)
    state = initial_state(blob((8, 8, 8)), cfg1)
    dphi = ScalarField3(rng.standard_normal((8, 8, 8)))
    dpsi = VectorField3(rng.standard_normal((8, 8, 8, 3)))
    once = step_potentials(step_potentials(state, dphi, dpsi, cfg1), dphi, dpsi, cfg1)
    twice = step_potentials(state, dphi, dpsi, cfg2)
    np.testing.assert_allclose(once.phi.data, twice.phi.data, atol=1e-12)
    np.testing.assert_allclose(once.psi.data, twice.psi.data, atol=1e-12)


def test_step_magnitude_scale_invariant():
    # normalization makes the applied step independent of gradient magnitude
    rng = np.random.default_rng(6)
    cfg = tiny_cfg(eta=0.01, lap_levels=3)
    state = initial_state(blob((16, 16, 16)), cfg)
    raw = rng.standard_normal((16, 16, 16))
    rawv = rng.standard_normal((16, 16, 16, 3))
    small = step_potentials(state, ScalarField3(raw), VectorField3(rawv), cfg)
    big = step_potentials(state, ScalarField3(1e6 * raw), VectorField3(1e6 * rawv), cfg)
    np.testing.assert_allclose(big.phi.data, small.phi.data, rtol=1e-4, atol=1e-7)
    np.testing.assert_allclose(big.psi.data, small.psi.data, rtol=1e-4, atol=1e-7)
    step = np.abs(small.phi.data - state.phi.data)
    assert 0.1 * cfg.eta <= step.max() <= 20 * cfg.eta  # eta sets the scale


def test_step_dims_mismatch():
    cfg = tiny_cfg()
    state = initial_state(blob((8, 8, 8)), cfg)
    with pytest.raises(ValueError, match="dims"):
        step_potentials(state, ScalarField3.zeros((6, 6, 6)),
                        VectorField3.zeros((6, 6, 6)), cfg)


# --- single_frame_gradients --------------------------------------------------

def test_gradients_zero_under_zero_mask():
    cfg = tiny_cfg()
    d = blob((8, 8, 8))
    net = tiny_net()
    p_s = style_for(net, d.dims, cfg)
    state = initial_state(d, cfg)
    state.mask = SoftMask(np.zeros((8, 8, 8)))
    dphi, dpsi, loss = single_frame_gradients(d, state, net, None, p_s, cfg)
    np.testing.assert_array_equal(dphi.data, 0.0)
    np.testing.assert_array_equal(dpsi.data, 0.0)
    assert loss >= 0


def test_gradients_zero_when_style_already_matches():
    cfg = tiny_cfg(beta=1.0, alpha=0.0)
    d = blob((8, 8, 8))
    net = tiny_net()
    state = initial_state(d, cfg)
    # render the exact view the optimizer will sample and use its own
    # statistics as the style target: residual and gradients must vanish
    from smokestyle.render import poisson_sample_views
    [pose] = poisson_sample_views(CameraPose(0, 0, state.look_at),
                                  cfg.view_range1, cfg.view_range2, 1,
                                  cfg.view_min_dist, _view_seed(cfg, 0, 0))
    aligned, _ = view_align(d, pose)
    img = render(aligned, RenderConfig(gamma=cfg.gamma))
    p_s = style_params_from_image(net, img, layers=cfg.style_layer_names())
    dphi, dpsi, loss = single_frame_gradients(d, state, net, None, p_s, cfg,
                                              view_seed=_view_seed(cfg, 0, 0))
    assert loss == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(dphi.data, 0.0, atol=1e-12)
    np.testing.assert_allclose(dpsi.data, 0.0, atol=1e-12)


def test_gradients_match_finite_differences():
    cfg = tiny_cfg(lam=0.3, gamma=0.4, seed=11)
    d = blob((8, 8, 8), amp=0.8)
    net = tiny_net(seed=1)
    p_s = style_for(net, d.dims, cfg)
    state = initial_state(d, cfg)
    rng = np.random.default_rng(7)
    state.phi.data[:] = 0.05 * rng.standard_normal((8, 8, 8))
    state.psi.data[:] = 0.05 * rng.standard_normal((8, 8, 8, 3))
    seed = _view_seed(cfg, 0, 0)
    dphi, dpsi, _ = single_frame_gradients(d, state, net, None, p_s, cfg, view_seed=seed)

    def loss_now():
        return single_frame_gradients(d, state, net, None, p_s, cfg, view_seed=seed)[2]

    def central(arr, idx):
        eps = 1e-6
        old = arr[idx]
        arr[idx] = old + eps
        fp = loss_now()
        arr[idx] = old - eps
        fm = loss_now()
        arr[idx] = old
        return (fp - fm) / (2 * eps)

    # probe the largest-magnitude entries so relative comparison is meaningful;
    # returned values are descent directions, so analytic = -dphi etc.
    worst = 0.0
    flat = np.argsort(np.abs(dphi.data), axis=None)[-4:]
    for f in flat:
        idx = np.unravel_index(f, dphi.data.shape)
        fd = central(state.phi.data, idx)
        denom = max(abs(fd), abs(dphi.data[idx]), 1e-12)
        worst = max(worst, abs(-dphi.data[idx] - fd) / denom)
    flat = np.argsort(np.abs(dpsi.data), axis=None)[-4:]
    for f in flat:
        idx = np.unravel_index(f, dpsi.data.shape)
        fd = central(state.psi.data, idx)
        denom = max(abs(fd), abs(dpsi.data[idx]), 1e-12)
        worst = max(worst, abs(-dpsi.data[idx] - fd) / denom)
    assert worst < 1e-4


# --- stylize_frame -----------------------------------------------------------

def test_stylize_frame_eta_zero_is_exact_identity():
    cfg = tiny_cfg(eta=0.0, scales=2, iters_per_scale=2)
    d = blob((12, 12, 12))
    net = tiny_net()
    p_s = style_for(net, d.dims, cfg)
    phi, psi, d_star = stylize_frame(d, net, None, p_s, cfg)
    np.testing.assert_array_equal(phi.data, 0.0)
    np.testing.assert_array_equal(psi.data, 0.0)
    np.testing.assert_array_equal(d_star.data, d.data)  # bitwise


def test_stylize_frame_reduces_loss():
    cfg = tiny_cfg(eta=0.05, iters_per_scale=8, scales=1, views_per_frame=2,
                   view_min_dist=0.5, gamma=0.3, seed=5)
    d = blob((12, 12, 12), amp=1.2)
    net = tiny_net(seed=2)
    p_s = style_for(net, d.dims, cfg)
    losses = []
    phi, psi, _ = stylize_frame(d, net, None, p_s, cfg,
                                on_iteration=lambda s, i, l: losses.append(l))
    assert len(losses) == 8
    # rescore initial and final states under the same fixed views
    probe = _view_seed(cfg, 0, 0)
    state0 = initial_state(d, cfg)
    before = single_frame_gradients(d, state0, net, None, p_s, cfg, view_seed=probe)[2]
    state1 = FrameState(0, phi, psi, state0.mask, state0.look_at)
    after = single_frame_gradients(d, state1, net, None, p_s, cfg, view_seed=probe)[2]
    assert after < before


def test_stylize_frame_multiscale_runs_and_upsamples():
    cfg = tiny_cfg(eta=0.2, iters_per_scale=2, scales=2, seed=8)
    d = blob((12, 12, 12))
    net = tiny_net()
    p_s = style_for(net, d.dims, cfg)
    calls = []
    phi, psi, d_star = stylize_frame(d, net, None, p_s, cfg,
                                     on_iteration=lambda s, i, l: calls.append((s, i)))
    assert calls == [(1, 0), (1, 1), (0, 0), (0, 1)]
    assert phi.dims == (12, 12, 12)
    assert psi.dims == (12, 12, 12)
    assert d_star.dims == (12, 12, 12)
    assert np.abs(phi.data).max() > 0 or np.abs(psi.data).max() > 0


def test_stylize_frame_deterministic():
    cfg = tiny_cfg(eta=0.3, iters_per_scale=3, seed=21)
    d = blob((10, 10, 10))
    net = tiny_net(seed=3)
    p_s = style_for(net, d.dims, cfg)
    a = stylize_frame(d, net, None, p_s, cfg)
    b = stylize_frame(d, net, None, p_s, cfg)
    np.testing.assert_array_equal(a[0].data, b[0].data)
    np.testing.assert_array_equal(a[2].data, b[2].data)


def test_stylize_frame_divergence_free_velocity_each_iteration():
    # lam = 0, no mask: composed velocity stays divergence-free throughout
    cfg = tiny_cfg(lam=0.0, eta=0.3, iters_per_scale=1, seed=13)
    d = blob((10, 10, 10))
    net = tiny_net(seed=4)
    p_s = style_for(net, d.dims, cfg)
    state = initial_state(d, cfg)
    for it in range(5):
        dphi, dpsi, _ = single_frame_gradients(d, state, net, None, p_s, cfg,
                                               view_seed=_view_seed(cfg, 0, it))
        state = step_potentials(state, dphi, dpsi, cfg)
        v = compose_velocity(state.phi, state.psi, 0.0)
        vmax = np.abs(v.data).max()
        if vmax > 0:
            div = divergence(v).data[1:-1, 1:-1, 1:-1]
            assert np.abs(div).max() <= 1e-10 * vmax / v.spacing


def test_make_mask_disabled_by_zero_threshold():
    d = blob((8, 8, 8))
    assert make_mask(d, tiny_cfg(mask_threshold=0.0)) is None
    m = make_mask(d, tiny_cfg(mask_threshold=0.1, mask_blur=1.0))
    assert m is not None
    assert 0.0 <= m.data.min() and m.data.max() <= 1.0


# --- stylize_sequence --------------------------------------------------------

def zero_seq(dims, n, spacing=1.0):
    return VelocitySequence([VectorField3.zeros(dims, spacing) for _ in range(n)])


def test_sequence_window_zero_matches_per_frame():
    cfg = tiny_cfg(eta=0.3, iters_per_scale=2, window=0, seed=9)
    d0 = blob((8, 8, 8))
    d1 = blob((8, 8, 8), amp=0.7)
    seq = zero_seq((8, 8, 8), 1)
    outs = stylize_sequence([d0, d1], seq, tiny_net(), None,
                            style_for(tiny_net(), d0.dims, cfg), cfg)
    net = tiny_net()
    p_s = style_for(net, d0.dims, cfg)
    for t, d in enumerate([d0, d1]):
        _, _, want = stylize_frame(d, net, None, p_s, cfg, index=t)
        np.testing.assert_allclose(outs[t].data, want.data, atol=1e-12)


def test_sequence_identical_frames_zero_velocity_identical_outputs():
    cfg = tiny_cfg(eta=0.3, iters_per_scale=2, window=1, seed=10)
    d = blob((8, 8, 8))
    frames = [d.copy() for _ in range(3)]
    seq = zero_seq((8, 8, 8), 2)
    net = tiny_net()
    outs = stylize_sequence(frames, seq, net, None, style_for(net, d.dims, cfg), cfg)
    for t in range(1, 3):
        np.testing.assert_allclose(outs[t].data, outs[0].data, atol=1e-12)


def test_sequence_length_mismatch():
    cfg = tiny_cfg()
    d = blob((8, 8, 8))
    net = tiny_net()
    p_s = style_for(net, d.dims, cfg)
    with pytest.raises(ValueError, match="length mismatch"):
        stylize_sequence([d, d.copy()], zero_seq((8, 8, 8), 5), net, None, p_s, cfg)


def test_sequence_gradient_mode_runs():
    cfg = tiny_cfg(eta=0.3, iters_per_scale=2, window=1, align_space="gradient",
                   seed=12)
    d0 = blob((8, 8, 8))
    d1 = blob((8, 8, 8), amp=0.9)
    seq = zero_seq((8, 8, 8), 1)
    net = tiny_net()
    outs = stylize_sequence([d0, d1], seq, net, None, style_for(net, d0.dims, cfg), cfg)
    assert len(outs) == 2
    assert all(o.dims == (8, 8, 8) for o in outs)
    assert not np.array_equal(outs[0].data, d0.data)


def test_sequence_multiple_sweeps_run():
    cfg = tiny_cfg(eta=0.2, iters_per_scale=2, window=1, sequence_sweeps=2, seed=14)
    d0 = blob((8, 8, 8))
    d1 = blob((8, 8, 8), amp=0.8)
    seq = zero_seq((8, 8, 8), 1)
    net = tiny_net()
    outs = stylize_sequence([d0, d1], seq, net, None, style_for(net, d0.dims, cfg), cfg)
    assert len(outs) == 2


# --- temporal_flicker_metric -------------------------------------------------

def test_flicker_zero_for_static_scene():
    img = stripes_image(8, 8)
    frames = [GrayImage(img.data.copy()) for _ in range(3)]
    seq = zero_seq((8, 8, 8), 2)
    m = temporal_flicker_metric(frames, seq, CameraPose())
    assert m == 0.0


def test_flicker_scales_quadratically_with_residual():
    base = stripes_image(8, 8)
    seq = zero_seq((8, 8, 8), 1)
    metrics = []
    for eps in (0.01, 0.02):
        bumped = GrayImage(base.data.copy())
        bumped.data[3, 3] += eps
        metrics.append(temporal_flicker_metric([base, bumped], seq, CameraPose()))
    assert metrics[0] == pytest.approx(0.01**2 / 64)
    assert metrics[1] == pytest.approx(4 * metrics[0])


def test_flicker_warp_tracks_uniform_motion():
    # frame 1 = frame 0 shifted one pixel in +x; velocity says so: metric ~ 0
    rng = np.random.default_rng(15)
    a = np.zeros((8, 8))
    a[2:6, 2:6] = rng.uniform(0.5, 1.0, (4, 4))
    b = np.roll(a, 1, axis=1)  # +x is the column axis
    vel = VectorField3.zeros((8, 8, 8))
    vel.data[..., 0] = 1.0
    seq = VelocitySequence([vel])
    moved = temporal_flicker_metric([GrayImage(a), GrayImage(b)], seq, CameraPose())
    static = temporal_flicker_metric([GrayImage(a), GrayImage(b)],
                                     zero_seq((8, 8, 8), 1), CameraPose())
    assert moved < 1e-20
    assert static > 1e-4


def test_flicker_needs_two_frames():
    with pytest.raises(ValueError, match="two frames"):
        temporal_flicker_metric([stripes_image(4, 4)], zero_seq((4, 4, 4), 1),
                                CameraPose())
