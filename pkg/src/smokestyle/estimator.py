"""Scikit-learn style front door to the optimizer.

SmokeStylizer.fit learns a stylization velocity (through its two
potentials) for one density field; transform applies that velocity to any
density on the same grid.  Construction only records parameters, all
validation and work happens in fit, and fitted state lives in
trailing-underscore attributes -- the usual estimator contract, so
get_params/set_params/clone compose with sklearn tooling.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from smokestyle.features import (
    ContentParams,
    FeatureNetwork,
    StyleParams,
    init_random,
    load_weights,
    style_params_from_image,
)
from smokestyle.fields import ScalarField3, compose_velocity
from smokestyle.render import GrayImage, load_pgm
from smokestyle.stylize import StylizeConfig, make_mask, stylize_frame
from smokestyle.transport import advect_maccormack

# StylizeConfig fields mirrored one-to-one as constructor parameters.
_CONFIG_KEYS = (
    "lam", "eta", "iters_per_scale", "scales", "scale_factor", "lap_levels",
    "views_per_frame", "view_range1", "view_range2", "view_min_dist",
    "gamma", "alpha", "beta", "mask_threshold", "mask_blur", "style_layers",
    "seed",
)


class SmokeStylizer(BaseEstimator, TransformerMixin):
    """Learns a transport velocity whose advected renders match a style.

    Parameters mirror StylizeConfig plus three inputs: weights (a
    FeatureNetwork, a path to an NSTW file, or None for the default
    orthogonally initialized mini-net), style (a StyleParams, a grayscale
    exemplar as GrayImage/2D array, or a PGM path), and content (a
    ContentParams or None).  spacing applies when densities arrive as bare
    arrays.

    After fit: phi_, psi_, mask_, velocity_, losses_ (list of
    (scale, iteration, loss)), network_, style_params_, dims_.
    """

    def __init__(self, weights=None, style=None, content=None, spacing=1.0,
                 lam=0.0, eta=0.002, iters_per_scale=20, scales=2,
                 scale_factor=1.8, lap_levels=3, views_per_frame=9,
                 view_range1=5.0, view_range2=10.0, view_min_dist=2.0,
                 gamma=1.0, alpha=1.0, beta=1.0, mask_threshold=0.0,
                 mask_blur=1.0, style_layers="L1,L2,L3", seed=0):
        self.weights = weights
        self.style = style
        self.content = content
        self.spacing = spacing
        self.lam = lam
        self.eta = eta
        self.iters_per_scale = iters_per_scale
        self.scales = scales
        self.scale_factor = scale_factor
        self.lap_levels = lap_levels
        self.views_per_frame = views_per_frame
        self.view_range1 = view_range1
        self.view_range2 = view_range2
        self.view_min_dist = view_min_dist
        self.gamma = gamma
        self.alpha = alpha
        self.beta = beta
        self.mask_threshold = mask_threshold
        self.mask_blur = mask_blur
        self.style_layers = style_layers
        self.seed = seed

    # -- input plumbing -----------------------------------------------------

    def _as_field(self, X) -> ScalarField3:
        if isinstance(X, ScalarField3):
            return X
        arr = np.asarray(X, dtype=float)
        if arr.ndim != 3:
            raise ValueError(f"expected a 3D density, got shape {arr.shape}")
        return ScalarField3(arr, self.spacing)

    def _config(self) -> StylizeConfig:
        return StylizeConfig(**{k: getattr(self, k) for k in _CONFIG_KEYS})

    def _resolve_network(self) -> FeatureNetwork:
        if self.weights is None:
            return init_random()
        if isinstance(self.weights, FeatureNetwork):
            return self.weights
        return load_weights(self.weights)

    def _resolve_style(self, net: FeatureNetwork, cfg: StylizeConfig):
        style = self.style
        if style is None or isinstance(style, StyleParams):
            return style
        if isinstance(style, (str, bytes)) or hasattr(style, "__fspath__"):
            style = load_pgm(style)
        if isinstance(style, np.ndarray):
            style = GrayImage(np.asarray(style, dtype=float))
        if isinstance(style, GrayImage):
            return style_params_from_image(net, style, cfg.style_layer_names())
        raise TypeError(f"cannot interpret style of type {type(style).__name__}")

    # -- estimator contract -------------------------------------------------

    def fit(self, X, y=None):
        """Optimize the potentials for density X; y is ignored."""
        d = self._as_field(X)
        cfg = self._config()
        net = self._resolve_network()
        style_params = self._resolve_style(net, cfg)
        content = self.content
        if content is not None and not isinstance(content, ContentParams):
            raise TypeError("content must be a ContentParams or None")
        if style_params is None and content is None:
            raise ValueError("nothing to optimize: provide style and/or content")
        losses: list[tuple[int, int, float]] = []
        phi, psi, _ = stylize_frame(
            d, net, content, style_params, cfg,
            on_iteration=lambda s, i, l: losses.append((s, i, l)))
        self.network_ = net
        self.style_params_ = style_params
        self.phi_ = phi
        self.psi_ = psi
        self.mask_ = make_mask(d, cfg)
        self.velocity_ = compose_velocity(phi, psi, cfg.lam, self.mask_)
        self.losses_ = losses
        self.dims_ = tuple(d.dims)
        return self

    def transform(self, X):
        """Advect X by the learned velocity (MacCormack, one unit step)."""
        check_is_fitted(self, "velocity_")
        d = self._as_field(X)
        if tuple(d.dims) != self.dims_:
            raise ValueError(f"density dims {tuple(d.dims)} do not match "
                             f"fitted dims {self.dims_}")
        out = advect_maccormack(d, self.velocity_, 1.0)
        return out if isinstance(X, ScalarField3) else out.data
