"""Finite-difference verification of every analytic gradient path.

Each check builds a small random instance, evaluates a scalar probe
functional, and compares the analytic gradient's largest entries against
central differences.  run_all returns per-component max relative errors;
the CLI turns them into the gradcheck exit status.  The corrupt argument
scales one component's analytic result so tests can prove the harness
actually catches a broken adjoint.
"""

from __future__ import annotations

import numpy as np

from smokestyle.features import (
    ContentParams,
    LayerSpec,
    LossWeights,
    StyleParams,
    chain_from_convs,
    combined_loss,
    forward,
    gram,
    init_random,
)
from smokestyle.fields import ScalarField3, VectorField3
from smokestyle.render import (
    CameraPose,
    GrayImage,
    RenderConfig,
    render,
    render_adjoint,
    view_align,
)
from smokestyle.stylize import StylizeConfig, _view_seed, initial_state, single_frame_gradients
from smokestyle.transport import advect_adjoint, advect_sl

THRESHOLD = 1e-4
COMPONENTS = ("render_adjoint", "advect_adjoint", "loss_backward",
              "potential_gradients")


def _max_rel(analytic: np.ndarray, loss_at, store: np.ndarray,
             n_probes: int = 6) -> float:
    """Central-difference check of the largest-magnitude analytic entries.

    loss_at() re-evaluates the probe functional after this helper perturbs
    store (the array being differentiated) in place.
    """
    eps = 1e-6
    order = np.argsort(np.abs(analytic), axis=None)[-n_probes:]
    gmax = max(float(np.abs(analytic).max()), 1e-12)
    worst = 0.0
    for f in order:
        idx = np.unravel_index(f, analytic.shape)
        old = store[idx]
        store[idx] = old + eps
        fp = loss_at()
        store[idx] = old - eps
        fm = loss_at()
        store[idx] = old
        fd = (fp - fm) / (2 * eps)
        denom = max(abs(fd), abs(analytic[idx]), 1e-6 * gmax)
        worst = max(worst, abs(analytic[idx] - fd) / denom)
    return worst


def _tamper(g: np.ndarray, corrupt: bool) -> np.ndarray:
    return g * 1.02 if corrupt else g


def _check_render(seed: int, corrupt: bool) -> float:
    rng = np.random.default_rng([seed, 0])
    d = ScalarField3(rng.uniform(0.1, 1.0, (7, 6, 8)), 0.9)
    pose = CameraPose(rng.uniform(-40, 40), rng.uniform(-40, 40))
    cfg = RenderConfig(gamma=0.7)
    cot = rng.standard_normal((6, 7))  # image is (ny, nx)

    def loss_at():
        aligned, _ = view_align(d, pose)
        return float((cot * render(aligned, cfg).data).sum())

    aligned, tape = view_align(d, pose)
    g = render_adjoint(tape, aligned, cfg, GrayImage(cot)).data.copy()
    return _max_rel(_tamper(g, corrupt), loss_at, d.data)


def _check_advect(seed: int, corrupt: bool) -> float:
    rng = np.random.default_rng([seed, 1])
    d = ScalarField3(rng.standard_normal((6, 7, 6)), 0.8)
    vel = VectorField3(rng.uniform(-0.5, 0.5, (6, 7, 6, 3)), 0.8)
    cot = rng.standard_normal((6, 7, 6))
    dt = 0.7

    def loss_at():
        return float((cot * advect_sl(d, vel, dt)[0].data).sum())

    out, tape = advect_sl(d, vel, dt)
    gd, gv = advect_adjoint(tape, d, vel, dt, ScalarField3(cot, 0.8))
    err_d = _max_rel(_tamper(gd.data.copy(), corrupt), loss_at, d.data)
    err_v = _max_rel(_tamper(gv.data.copy(), corrupt), loss_at, vel.data)
    return max(err_d, err_v)


def _loss_net(seed: int):
    convs = [LayerSpec("f1", "conv", kh=3, kw=3, cin=1, cout=3),
             LayerSpec("f2", "conv", kh=3, kw=3, cin=3, cout=4),
             LayerSpec("f3", "conv", kh=3, kw=3, cin=4, cout=5)]
    return init_random(chain_from_convs(convs), seed=seed)


def _check_loss(seed: int, corrupt: bool) -> float:
    rng = np.random.default_rng([seed, 2])
    net = _loss_net(seed)
    img = rng.uniform(0.05, 1.0, (12, 12))
    other = forward(net, GrayImage(rng.uniform(0.05, 1.0, (12, 12))))
    p_c = ContentParams([("f3", other.by_name["f3"])])
    p_s = StyleParams([(n, gram(other.by_name[n])) for n in ("f1", "f3")])
    w = LossWeights(0.7, 1.3)

    def loss_at():
        return combined_loss(net, GrayImage(img), p_c, p_s, w)[0]

    _, g = combined_loss(net, GrayImage(img), p_c, p_s, w)
    return _max_rel(_tamper(g.data.copy(), corrupt), loss_at, img)


def _check_potentials(seed: int, corrupt: bool) -> float:
    rng = np.random.default_rng([seed, 3])
    n = 6
    ax = np.arange(n) + 0.5
    x, y, z = np.meshgrid(ax, ax, ax, indexing="ij")
    r2 = (x - n / 2) ** 2 + (y - n / 2) ** 2 + (z - n / 2) ** 2
    d = ScalarField3(np.exp(-r2 / (2 * 1.6**2)))
    convs = [LayerSpec("g1", "conv", kh=3, kw=3, cin=1, cout=3),
             LayerSpec("g2", "conv", kh=3, kw=3, cin=3, cout=4)]
    net = init_random(chain_from_convs(convs), seed=seed + 1)
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    stripes = GrayImage(0.5 + 0.5 * np.sin(2 * np.pi * (i + j) / 3.0))
    acts = forward(net, stripes)
    p_s = StyleParams([(nm, gram(acts.by_name[nm])) for nm in ("g1", "g2")])
    p_c = ContentParams([("g2", acts.by_name["g2"])])
    cfg = StylizeConfig(lam=0.35, eta=0.1, iters_per_scale=1, scales=1,
                        views_per_frame=1, view_min_dist=0.5, gamma=0.5,
                        alpha=0.3, beta=1.0, lap_levels=1,
                        style_layers="g1,g2", seed=seed)
    state = initial_state(d, cfg)
    state.phi.data[:] = 0.05 * rng.standard_normal((n, n, n))
    state.psi.data[:] = 0.05 * rng.standard_normal((n, n, n, 3))

    def loss_at():
        return single_frame_gradients(d, state, net, p_c, p_s, cfg,
                                      view_seed=_view_seed(cfg, 0, 0))[2]

    dphi, dpsi, _ = single_frame_gradients(d, state, net, p_c, p_s, cfg,
                                           view_seed=_view_seed(cfg, 0, 0))
    # returned fields are descent directions; the gradient is their negation
    err_p = _max_rel(_tamper(-dphi.data, corrupt), loss_at, state.phi.data)
    err_s = _max_rel(_tamper(-dpsi.data, corrupt), loss_at, state.psi.data)
    return max(err_p, err_s)


def run_all(seed: int = 0, corrupt: str | None = None) -> dict:
    """Max relative FD error per gradient component."""
    if corrupt is not None and corrupt not in COMPONENTS:
        raise ValueError(f"unknown gradcheck component {corrupt!r}")
    return {
        "render_adjoint": _check_render(seed, corrupt == "render_adjoint"),
        "advect_adjoint": _check_advect(seed, corrupt == "advect_adjoint"),
        "loss_backward": _check_loss(seed, corrupt == "loss_backward"),
        "potential_gradients": _check_potentials(seed, corrupt == "potential_gradients"),
    }
