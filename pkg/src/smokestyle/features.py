"""Convolutional feature network and the content/style/combined losses.

A small fixed chain of plain-numpy layers stands in for a large pretrained
classifier: four 3x3 convolutions (named L1..L4, channels 16/32/64/128,
stride 1) with relu after each and 2x2 maxpools between the middle pairs.
Activations are (H, W, C); conv weights are (cout, kh, kw, cin).  The
forward pass keeps every intermediate activation so the backward pass can
inject loss seeds at any named layer and chain them back to an image-space
gradient.

Weights travel in NSTW files, which store only the conv layers; the
relu/maxpool chain is reconstructed on load (relu after every conv, a
maxpool after each conv except the first and last).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from smokestyle._util import atomic_write
from smokestyle.render import GrayImage

NSTW_MAGIC = b"NSTW"
NSTW_VERSION = 1
DEFAULT_STYLE_LAYERS = ("L1", "L2", "L3")


@dataclass
class LayerSpec:
    """One layer of the chain: conv, relu, or maxpool."""

    name: str
    kind: str
    kh: int = 0
    kw: int = 0
    cin: int = 0
    cout: int = 0
    stride: int = 1
    same_pad: bool = True
    window: int = 2

    def __post_init__(self):
        if self.kind not in ("conv", "relu", "maxpool"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv":
            if self.kh < 1 or self.kw < 1 or self.cin < 1 or self.cout < 1:
                raise ValueError(f"bad conv geometry in layer {self.name!r}")
            if self.same_pad and (self.kh % 2 == 0 or self.kw % 2 == 0):
                raise ValueError("same padding requires odd kernel dims")
            if self.stride < 1:
                raise ValueError("conv stride must be >= 1")
        if self.kind == "maxpool" and (self.window < 1 or self.stride < 1):
            raise ValueError("bad maxpool geometry")


def mini_net_layers(in_channels: int = 1) -> list:
    """The default conv/relu/pool chain (stride-1 first conv)."""
    chans = (16, 32, 64, 128)
    convs = []
    cin = in_channels
    for i, cout in enumerate(chans):
        convs.append(LayerSpec(f"L{i + 1}", "conv", kh=3, kw=3, cin=cin, cout=cout, stride=1))
        cin = cout
    return chain_from_convs(convs)


def chain_from_convs(convs: list) -> list:
    """Insert relu after every conv and maxpools between the middle pairs.

    For convs 1..n the pools follow convs 2..n-1, which reproduces the
    default chain for n = 4 and degrades gracefully for shorter files.
    """
    n = len(convs)
    layers = []
    for i, c in enumerate(convs):
        layers.append(c)
        layers.append(LayerSpec(f"{c.name}_relu", "relu"))
        if 1 <= i < n - 1:
            layers.append(LayerSpec(f"{c.name}_pool", "maxpool", window=2, stride=2))
    return layers


@dataclass
class FeatureNetwork:
    """Layer chain plus conv weights and input normalization constants.

    Input images are grayscale; forward replicates them across the first
    conv's input channels and normalizes as (I - mean) / scale.
    """

    layers: list
    weights: dict = field(default_factory=dict)
    mean: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.scale == 0:
            raise ValueError("scale must be nonzero")
        convs = self.conv_layers()
        if not convs:
            raise ValueError("network needs at least one conv layer")
        if convs[0].stride != 1:
            raise ValueError("first conv layer must have stride 1")
        chan = convs[0].cin
        for c in convs:
            if c.cin != chan:
                raise ValueError(
                    f"layer {c.name!r} expects {c.cin} input channels but gets {chan}")
            chan = c.cout
            w, b = self.weights.get(c.name, (None, None))
            want = (c.cout, c.kh, c.kw, c.cin)
            if w is None or w.shape != want or b.shape != (c.cout,):
                raise ValueError(f"layer {c.name!r}: weight shape mismatch (want {want})")
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise ValueError("duplicate layer names")

    def conv_layers(self) -> list:
        return [l for l in self.layers if l.kind == "conv"]

    @property
    def in_channels(self) -> int:
        return self.conv_layers()[0].cin

    def layer_names(self) -> list:
        return [l.name for l in self.layers]


def init_random(layers: list | None = None, seed: int = 0) -> FeatureNetwork:
    """Network with orthogonally initialized conv kernels and zero biases.

    Each conv's (cout, kh*kw*cin) matrix is the Q factor of a QR
    decomposition with signs fixed from R's diagonal, so the same seed
    always yields the same weights.
    """
    if layers is None:
        layers = mini_net_layers()
    rng = np.random.default_rng(seed)
    weights = {}
    for c in (l for l in layers if l.kind == "conv"):
        rows, cols = c.cout, c.kh * c.kw * c.cin
        a = rng.standard_normal((max(rows, cols), min(rows, cols)))
        q, r = np.linalg.qr(a)
        q = q * np.sign(np.diag(r))
        flat = q[:rows, :cols] if rows >= cols else q[:cols, :rows].T
        weights[c.name] = (flat.reshape(c.cout, c.kh, c.kw, c.cin).copy(),
                          np.zeros(c.cout))
    return FeatureNetwork(list(layers), weights)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

@dataclass
class Activations:
    """Everything forward computed, retained for the backward pass."""

    input_image: np.ndarray        # (H, W) raw grayscale
    normalized: np.ndarray         # (H, W, cin)
    outputs: list                  # per-layer output arrays, same order as net.layers
    by_name: dict                  # layer name -> output array
    pool_args: dict = field(default_factory=dict)  # maxpool name -> argmax indices


def _conv_pad(x: np.ndarray, spec: LayerSpec) -> np.ndarray:
    ph, pw = spec.kh // 2, spec.kw // 2
    if not spec.same_pad:
        return x
    return np.pad(x, ((ph, ph), (pw, pw), (0, 0)))


def _conv_out_dims(h: int, w: int, spec: LayerSpec) -> tuple[int, int]:
    if spec.same_pad:
        return -(-h // spec.stride), -(-w // spec.stride)
    return (h - spec.kh) // spec.stride + 1, (w - spec.kw) // spec.stride + 1


def conv_forward(x: np.ndarray, spec: LayerSpec, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    h, wd = x.shape[:2]
    if h < spec.kh or wd < spec.kw:
        raise ValueError(
            f"image {h}x{wd} too small for {spec.kh}x{spec.kw} kernel at layer {spec.name!r}")
    xp = _conv_pad(x, spec)
    ho, wo = _conv_out_dims(h, wd, spec)
    s = spec.stride
    out = np.tile(b, (ho, wo, 1))
    for a in range(spec.kh):
        for c in range(spec.kw):
            patch = xp[a:a + (ho - 1) * s + 1:s, c:c + (wo - 1) * s + 1:s, :]
            out += np.tensordot(patch, w[:, a, c, :], axes=([2], [1]))
    return out


def conv_backward_input(g: np.ndarray, x_shape, spec: LayerSpec, w: np.ndarray) -> np.ndarray:
    h, wd = x_shape[:2]
    xp_shape = (_conv_pad(np.empty(x_shape), spec)).shape if spec.same_pad else x_shape
    gpad = np.zeros(xp_shape)
    ho, wo = g.shape[:2]
    s = spec.stride
    for a in range(spec.kh):
        for c in range(spec.kw):
            gpad[a:a + (ho - 1) * s + 1:s, c:c + (wo - 1) * s + 1:s, :] += \
                np.tensordot(g, w[:, a, c, :], axes=([2], [0]))
    if spec.same_pad:
        ph, pw = spec.kh // 2, spec.kw // 2
        return gpad[ph:ph + h, pw:pw + wd, :]
    return gpad


def _pool_views(x: np.ndarray, spec: LayerSpec):
    h, w, c = x.shape
    k, s = spec.window, spec.stride
    if h < k or w < k:
        raise ValueError(f"image {h}x{w} too small for {k}x{k} pool at layer {spec.name!r}")
    ho, wo = (h - k) // s + 1, (w - k) // s + 1
    views = np.empty((ho, wo, c, k * k))
    for a in range(k):
        for b in range(k):
            views[..., a * k + b] = x[a:a + (ho - 1) * s + 1:s, b:b + (wo - 1) * s + 1:s, :]
    return views


def maxpool_forward(x: np.ndarray, spec: LayerSpec):
    views = _pool_views(x, spec)
    # np.argmax takes the first maximum: ties go to scan order over (a, b)
    arg = views.argmax(axis=3)
    out = np.take_along_axis(views, arg[..., None], axis=3)[..., 0]
    return out, arg


def maxpool_backward(g: np.ndarray, arg: np.ndarray, x_shape, spec: LayerSpec) -> np.ndarray:
    k, s = spec.window, spec.stride
    ho, wo, c = g.shape
    gi = np.zeros(x_shape)
    oi, oj, oc = np.meshgrid(np.arange(ho), np.arange(wo), np.arange(c), indexing="ij")
    ii = oi * s + arg // k
    jj = oj * s + arg % k
    np.add.at(gi, (ii, jj, oc), g)
    return gi


def forward(net: FeatureNetwork, img: GrayImage) -> Activations:
    """Run the chain on a grayscale image, retaining every activation."""
    x = np.asarray(img.data, dtype=np.float64)
    x0 = (np.repeat(x[:, :, None], net.in_channels, axis=2) - net.mean) / net.scale
    outputs = []
    by_name = {}
    cur = x0
    pool_args = {}
    for spec in net.layers:
        if spec.kind == "conv":
            w, b = net.weights[spec.name]
            cur = conv_forward(cur, spec, w, b)
        elif spec.kind == "relu":
            cur = np.maximum(cur, 0.0)
        else:
            cur, arg = maxpool_forward(cur, spec)
            pool_args[spec.name] = arg
        outputs.append(cur)
        by_name[spec.name] = cur
    return Activations(x, x0, outputs, by_name, pool_args)


def backward(net: FeatureNetwork, acts: Activations, seeds: dict) -> GrayImage:
    """Chain loss seeds (by layer name) back to an image-space gradient."""
    known = set(net.layer_names())
    for name in seeds:
        if name not in known:
            raise ValueError(f"seed for unknown layer {name!r}")
    if len(acts.outputs) != len(net.layers):
        raise ValueError("stale activations: layer count does not match network")
    g = np.zeros_like(acts.outputs[-1])
    for idx in range(len(net.layers) - 1, -1, -1):
        spec = net.layers[idx]
        out = acts.outputs[idx]
        if out.shape != g.shape:
            raise ValueError(f"stale activations at layer {spec.name!r}")
        if spec.name in seeds:
            seed = seeds[spec.name]
            if seed.shape != out.shape:
                raise ValueError(f"seed shape mismatch at layer {spec.name!r}")
            g = g + seed
        x_prev = acts.outputs[idx - 1] if idx > 0 else acts.normalized
        if spec.kind == "conv":
            w, _ = net.weights[spec.name]
            g = conv_backward_input(g, x_prev.shape, spec, w)
        elif spec.kind == "relu":
            g = g * (x_prev > 0.0)
        else:
            g = maxpool_backward(g, acts.pool_args[spec.name], x_prev.shape, spec)
    return GrayImage(g.sum(axis=2) / net.scale)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def gram(feat: np.ndarray) -> np.ndarray:
    """Channel co-activation matrix: G_mn = sum_i Fhat_mi Fhat_ni."""
    flat = feat.reshape(-1, feat.shape[2]).T  # (C, H*W)
    return flat @ flat.T


@dataclass
class ContentParams:
    """Per-layer target feature maps to match directly (semantic transfer)."""

    targets: list  # of (layer name, (H, W, C) array)

    def __post_init__(self):
        self.targets = [(n, np.asarray(t, dtype=np.float64)) for n, t in self.targets]
        for n, t in self.targets:
            if t.ndim != 3:
                raise ValueError(f"content target for {n!r} must be (H, W, C)")


@dataclass
class StyleParams:
    """Per-layer target Gram matrices (texture statistics)."""

    grams: list  # of (layer name, (C, C) array)

    def __post_init__(self):
        self.grams = [(n, np.asarray(g, dtype=np.float64)) for n, g in self.grams]
        for n, g in self.grams:
            if g.ndim != 2 or g.shape[0] != g.shape[1]:
                raise ValueError(f"style Gram for {n!r} must be square")
            if not np.allclose(g, g.T, atol=1e-8 * max(1.0, np.abs(g).max())):
                raise ValueError(f"style Gram for {n!r} must be symmetric")


def style_params_from_image(net: FeatureNetwork, img: GrayImage,
                            layers=DEFAULT_STYLE_LAYERS) -> StyleParams:
    """Precompute target Grams from a style exemplar image."""
    acts = forward(net, img)
    out = []
    for name in layers:
        if name not in acts.by_name:
            raise ValueError(f"unknown style layer {name!r}")
        out.append((name, gram(acts.by_name[name])))
    return StyleParams(out)


@dataclass
class LossWeights:
    """Relative weight of the content and style terms."""

    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("loss weights must be non-negative")
        if self.alpha == 0 and self.beta == 0:
            raise ValueError("at least one of alpha, beta must be positive")


def content_loss(acts: Activations, p_c: ContentParams):
    """Mean-squared feature residual per layer; returns (loss, seeds)."""
    total = 0.0
    seeds = {}
    for name, target in p_c.targets:
        feat = acts.by_name.get(name)
        if feat is None:
            raise ValueError(f"unknown content layer {name!r}")
        if feat.shape != target.shape:
            raise ValueError(
                f"content target dims mismatch at {name!r}: {target.shape} vs {feat.shape}")
        resid = feat - target
        n = resid.size
        total += float((resid**2).sum() / n)
        seeds[name] = 2.0 * resid / n
    return total, seeds


def style_loss(acts: Activations, p_s: StyleParams):
    """Normalized squared Gram residual per layer; returns (loss, seeds)."""
    total = 0.0
    seeds = {}
    for name, target in p_s.grams:
        feat = acts.by_name.get(name)
        if feat is None:
            raise ValueError(f"unknown style layer {name!r}")
        c = feat.shape[2]
        if target.shape != (c, c):
            raise ValueError(
                f"style Gram dims mismatch at {name!r}: {target.shape} vs ({c}, {c})")
        npos = feat.shape[0] * feat.shape[1]
        g = gram(feat)
        resid = g - target
        total += float((resid**2).sum() / (4.0 * c**2 * npos**2))
        flat = feat.reshape(-1, c).T           # (C, N)
        seed_flat = (resid @ flat) / (c**2 * npos**2)
        seeds[name] = seed_flat.T.reshape(feat.shape)
    return total, seeds


def combined_loss(net: FeatureNetwork, img: GrayImage,
                  p_c: ContentParams | None, p_s: StyleParams | None,
                  w: LossWeights):
    """Intensity-weighted sum of content and style losses and its gradient.

    loss = sigma * (alpha*Lc + beta*Ls) with sigma the total image
    intensity; the gradient carries both the chained network term and the
    product-rule term from sigma's dependence on every pixel.
    """
    if img.data.min() < -1e-12:
        raise ValueError("combined_loss expects a non-negative image")
    acts = forward(net, img)
    sigma = float(img.data.sum())
    inner = 0.0
    seeds: dict[str, np.ndarray] = {}

    def add_seeds(new, factor):
        for name, s in new.items():
            cur = seeds.get(name)
            seeds[name] = factor * s if cur is None else cur + factor * s

    if p_c is not None and w.alpha != 0:
        lc, sc = content_loss(acts, p_c)
        inner += w.alpha * lc
        add_seeds(sc, sigma * w.alpha)
    if p_s is not None and w.beta != 0:
        ls, ss = style_loss(acts, p_s)
        inner += w.beta * ls
        add_seeds(ss, sigma * w.beta)

    net_grad = backward(net, acts, seeds).data if seeds else np.zeros_like(img.data)
    grad = net_grad + inner  # d(sigma)/dI_ij = 1 at every pixel
    return sigma * inner, GrayImage(grad)


# ---------------------------------------------------------------------------
# NSTW weight files
# ---------------------------------------------------------------------------

def save_weights(path, net: FeatureNetwork) -> None:
    """Serialize the conv layers (only) to an NSTW file, atomically.

    Layout: magic "NSTW", u32 version, u32 conv count; per conv: u16 name
    length + utf8 name, u32 kh kw cin cout stride, kh*kw*cin*cout f32
    weights in output-major (cout, kh, kw, cin) C order, cout f32 biases;
    trailing f32 input mean and scale.
    """
    convs = net.conv_layers()
    parts = [NSTW_MAGIC, struct.pack("<II", NSTW_VERSION, len(convs))]
    for c in convs:
        w, b = net.weights[c.name]
        nm = c.name.encode("utf-8")
        parts.append(struct.pack("<H", len(nm)) + nm)
        parts.append(struct.pack("<IIIII", c.kh, c.kw, c.cin, c.cout, c.stride))
        parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        parts.append(np.asarray(b, dtype="<f4").tobytes())
    parts.append(struct.pack("<ff", net.mean, net.scale))
    atomic_write(path, b"".join(parts))


class _Reader:
    def __init__(self, path, label: str = "NSTW"):
        with open(path, "rb") as fh:
            self.buf = fh.read()
        self.pos = 0
        self.path = path
        self.label = label

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ValueError(f"{self.path}: truncated {self.label} file")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_nstw_header(path) -> list:
    """Conv-layer geometry of an NSTW file without loading the tensors."""
    r = _Reader(path)
    if r.take(4) != NSTW_MAGIC:
        raise ValueError(f"{path}: not an NSTW file (bad magic)")
    version, count = r.unpack("<II")
    if version != NSTW_VERSION:
        raise ValueError(f"{path}: unsupported NSTW version {version}")
    out = []
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        kh, kw, cin, cout, stride = r.unpack("<IIIII")
        out.append({"name": name, "kh": kh, "kw": kw, "cin": cin, "cout": cout,
                    "stride": stride})
        r.take(4 * (kh * kw * cin * cout + cout))
    return out


def load_weights(path) -> FeatureNetwork:
    """Read an NSTW file and rebuild the full conv/relu/pool chain."""
    r = _Reader(path)
    if r.take(4) != NSTW_MAGIC:
        raise ValueError(f"{path}: not an NSTW file (bad magic)")
    version, count = r.unpack("<II")
    if version != NSTW_VERSION:
        raise ValueError(f"{path}: unsupported NSTW version {version}")
    if count < 1:
        raise ValueError(f"{path}: NSTW file contains no layers")
    convs = []
    weights = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        kh, kw, cin, cout, stride = r.unpack("<IIIII")
        spec = LayerSpec(name, "conv", kh=kh, kw=kw, cin=cin, cout=cout, stride=stride)
        w = np.frombuffer(r.take(4 * kh * kw * cin * cout), dtype="<f4")
        b = np.frombuffer(r.take(4 * cout), dtype="<f4")
        weights[name] = (w.astype(np.float64).reshape(cout, kh, kw, cin), b.astype(np.float64))
        convs.append(spec)
    mean, scale = r.unpack("<ff")
    try:
        return FeatureNetwork(chain_from_convs(convs), weights, float(mean), float(scale))
    except ValueError as e:
        raise ValueError(f"{path}: {e}") from e


# ---------------------------------------------------------------------------
# NSTA activation files
# ---------------------------------------------------------------------------

NSTA_MAGIC = b"NSTA"


def save_activations(path, items) -> None:
    """Serialize named float arrays (layer activations) to an NSTA file.

    Layout: magic "NSTA", u32 array count; per array: u16 name length +
    utf8 name, u32 rank, rank u32 dims, f32 payload in C order.
    """
    items = list(items)
    parts = [NSTA_MAGIC, struct.pack("<I", len(items))]
    for name, arr in items:
        arr = np.asarray(arr, dtype=np.float64)
        nm = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nm)) + nm)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack("<" + "I" * arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    atomic_write(path, b"".join(parts))


def load_activations(path) -> list:
    """Read an NSTA file back as a list of (name, float64 array) pairs."""
    r = _Reader(path, "NSTA")
    if r.take(4) != NSTA_MAGIC:
        raise ValueError(f"{path}: not an NSTA file (bad magic)")
    (count,) = r.unpack("<I")
    out = []
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (rank,) = r.unpack("<I")
        dims = r.unpack("<" + "I" * rank) if rank else ()
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = np.frombuffer(r.take(4 * n), dtype="<f4")
        out.append((name, payload.astype(np.float64).reshape(dims)))
    return out
