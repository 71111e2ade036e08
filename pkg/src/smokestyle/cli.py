"""Command-line entry points: stylize, render, inspect, self-check.

Subcommands (exit codes: 0 success, 1 failed check, 2 input error):

  stylize-frame  optimize one density; write d_star/phi/psi + view renders
  stylize-seq    optimize a sequence with temporal blending
  render         render a density file to a PGM image
  make-mask      build the soft velocity mask from a density
  gradcheck      finite-difference verification of all analytic gradients
  info           print VF32/NSTW/NSTA file headers

Flags mirror the config-file keys and win over --config values.  Loss
telemetry goes to stdout as CSV; artifacts go to --out.  Every run is
deterministic under a fixed --seed; --threads 1 additionally pins the BLAS
pool so repeated runs produce byte-identical files.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import os
import sys
from dataclasses import dataclass, field, replace

from threadpoolctl import threadpool_limits

from smokestyle import gradcheck as _gradcheck
from smokestyle._util import atomic_write
from smokestyle.features import (
    ContentParams,
    init_random,
    load_activations,
    load_weights,
    read_nstw_header,
    style_params_from_image,
)
from smokestyle.fields import (
    ScalarField3,
    load_vf32,
    read_vf32_header,
    save_vf32,
    soft_mask_from_density,
)
from smokestyle.render import (
    CameraPose,
    RenderConfig,
    density_centroid,
    load_pgm,
    poisson_sample_views,
    render,
    save_pgm,
    view_align,
)
from smokestyle.stylize import (
    StylizeConfig,
    _view_seed,
    stylize_frame,
    stylize_sequence,
    temporal_flicker_metric,
)
from smokestyle.transport import (
    VelocitySequence,
    frame_filename,
    list_frame_files,
)


class CliError(Exception):
    """Input problem: exit code 2 with the message on stderr."""


@dataclass
class RunManifest:
    """Resolved inputs and outputs of one subcommand invocation."""

    subcommand: str
    density: str | None = None      # VF32 file, or frame dir for sequences
    velocity: str | None = None     # directory of frame_%04d.vf32
    weights: str | None = None      # NSTW file; None = built-in random net
    config: str | None = None
    out_dir: str = "."
    seed: int | None = None
    style: str | None = None        # PGM exemplar
    content: str | None = None      # NSTA target activations
    overrides: dict = field(default_factory=dict)
    compare_window: bool = False
    theta1: float = 0.0
    theta2: float = 0.0
    look_at: tuple | None = None
    step: float | None = None
    bits: int = 16
    corrupt: str | None = None
    paths: tuple = ()


def _require(path, what: str, directory: bool = False) -> str:
    if path is None:
        raise CliError(f"missing {what}")
    probe = os.path.isdir if directory else os.path.isfile
    if not probe(path):
        raise CliError(f"{what} not found: {path}")
    return path


def _out_dir(manifest: RunManifest) -> str:
    os.makedirs(manifest.out_dir, exist_ok=True)
    return manifest.out_dir


def build_config(manifest: RunManifest) -> StylizeConfig:
    values: dict = {}
    if manifest.config is not None:
        _require(manifest.config, "config file")
        values.update(StylizeConfig.parse_file(manifest.config))
    values.update(manifest.overrides)
    if manifest.seed is not None:
        values["seed"] = manifest.seed
    try:
        return StylizeConfig.from_dict(values)
    except ValueError as e:
        raise CliError(str(e)) from e


def _load_density(path) -> ScalarField3:
    f = load_vf32(path)
    if not isinstance(f, ScalarField3):
        raise CliError(f"{path}: expected a 1-channel density field")
    return f


def _load_network(manifest: RunManifest):
    if manifest.weights is None:
        return init_random()
    _require(manifest.weights, "weight file")
    return load_weights(manifest.weights)


def _load_targets(manifest: RunManifest, net, cfg: StylizeConfig):
    p_s = p_c = None
    if manifest.style is not None:
        _require(manifest.style, "style image")
        p_s = style_params_from_image(net, load_pgm(manifest.style),
                                      cfg.style_layer_names())
    if manifest.content is not None:
        _require(manifest.content, "content file")
        p_c = ContentParams(load_activations(manifest.content))
    if p_s is None and p_c is None:
        raise CliError("nothing to optimize: pass --style and/or --content")
    return p_c, p_s


def _loss_writer():
    w = csv.writer(sys.stdout)
    w.writerow(["iter", "scale", "loss"])
    return lambda scale, it, loss: w.writerow([it, scale, repr(loss)])


def _save_view_renders(out: str, tag_fields, cfg: StylizeConfig, look_at,
                       bits: int) -> None:
    poses = poisson_sample_views(
        CameraPose(0.0, 0.0, look_at), cfg.view_range1, cfg.view_range2,
        cfg.views_per_frame, cfg.view_min_dist, _view_seed(cfg, 0, 0))
    rcfg = RenderConfig(gamma=cfg.gamma)
    for i, pose in enumerate(poses):
        for tag, fld in tag_fields:
            aligned, _ = view_align(fld, pose)
            save_pgm(os.path.join(out, f"view_{i:02d}_{tag}.pgm"),
                     render(aligned, rcfg), bits=bits)


def cmd_stylize_frame(manifest: RunManifest) -> int:
    cfg = build_config(manifest)
    d = _load_density(_require(manifest.density, "density file"))
    net = _load_network(manifest)
    p_c, p_s = _load_targets(manifest, net, cfg)
    out = _out_dir(manifest)
    log = _loss_writer()
    phi, psi, d_star = stylize_frame(d, net, p_c, p_s, cfg,
                                     on_iteration=lambda s, i, l: log(s, i, l))
    save_vf32(os.path.join(out, "d_star.vf32"), d_star)
    save_vf32(os.path.join(out, "phi.vf32"), phi)
    save_vf32(os.path.join(out, "psi.vf32"), psi)
    _save_view_renders(out, (("before", d), ("after", d_star)), cfg,
                       tuple(density_centroid(d)), manifest.bits)
    return 0


def _load_density_frames(path) -> list:
    files = list_frame_files(_require(path, "density directory", directory=True))
    if not files:
        raise CliError(f"{path}: no frame_*.vf32 files")
    return [_load_density(p) for p in files]


def cmd_stylize_sequence(manifest: RunManifest) -> int:
    cfg = build_config(manifest)
    densities = _load_density_frames(manifest.density)
    _require(manifest.velocity, "velocity directory", directory=True)
    seq = VelocitySequence.from_dir(manifest.velocity)
    net = _load_network(manifest)
    p_c, p_s = _load_targets(manifest, net, cfg)
    out = _out_dir(manifest)
    outs = stylize_sequence(densities, seq, net, p_c, p_s, cfg)
    pose = CameraPose(0.0, 0.0)  # fixed camera so frames compare directly
    rcfg = RenderConfig(gamma=cfg.gamma)
    images = []
    for t, d_star in enumerate(outs):
        save_vf32(os.path.join(out, frame_filename(t)), d_star)
        aligned, _ = view_align(d_star, pose)
        images.append(render(aligned, rcfg))
        save_pgm(os.path.join(out, f"frame_{t:04d}.pgm"), images[t],
                 bits=manifest.bits)
    if manifest.compare_window:
        plain = stylize_sequence(densities, seq, net, p_c, p_s,
                                 replace(cfg, window=0))
        plain_images = [render(view_align(o, pose)[0], rcfg) for o in plain]
        rows = [("window", "flicker"),
                (0, repr(temporal_flicker_metric(plain_images, seq, pose))),
                (cfg.window, repr(temporal_flicker_metric(images, seq, pose)))]
        text = "".join(f"{a},{b}\n" for a, b in rows)
        atomic_write(os.path.join(out, "flicker.csv"), text.encode("ascii"))
    return 0


def cmd_render(manifest: RunManifest) -> int:
    d = _load_density(_require(manifest.density, "density file"))
    gamma = float(manifest.overrides.get("gamma", 1.0))
    pose = CameraPose(manifest.theta1, manifest.theta2, manifest.look_at)
    aligned, _ = view_align(d, pose)
    img = render(aligned, RenderConfig(gamma=gamma, step=manifest.step))
    out = _out_dir(manifest)
    save_pgm(os.path.join(out, "render.pgm"), img, bits=manifest.bits)
    return 0


def cmd_make_mask(manifest: RunManifest) -> int:
    cfg = build_config(manifest)
    if cfg.mask_threshold <= 0:
        raise CliError("mask threshold must be positive")
    d = _load_density(_require(manifest.density, "density file"))
    mask = soft_mask_from_density(d, cfg.mask_threshold, cfg.mask_blur)
    out = _out_dir(manifest)
    save_vf32(os.path.join(out, "mask.vf32"), mask)
    return 0


def cmd_gradcheck(manifest: RunManifest) -> int:
    seed = 0 if manifest.seed is None else manifest.seed
    try:
        results = _gradcheck.run_all(seed, manifest.corrupt)
    except ValueError as e:
        raise CliError(str(e)) from e
    for name, err in results.items():
        print(f"{name}: max relative error {err:.3e}")
    failing = [n for n, e in results.items() if not e < _gradcheck.THRESHOLD]
    if failing:
        print(f"FAIL: {', '.join(failing)} above {_gradcheck.THRESHOLD:g}")
        return 1
    print("OK: all gradients verified")
    return 0


def cmd_info(manifest: RunManifest) -> int:
    for path in manifest.paths:
        _require(path, "input file")
        with open(path, "rb") as fh:
            magic = fh.read(4)
        if magic == b"VF32":
            h = read_vf32_header(path)
            nx, ny, nz = h["dims"]
            print(f"{path}: VF32 v{h['version']}, dims {nx}x{ny}x{nz}, "
                  f"channels {h['channels']}, spacing {h['spacing']:g}")
        elif magic == b"NSTW":
            layers = read_nstw_header(path)
            desc = ", ".join(
                f"{l['name']}({l['kh']}x{l['kw']},{l['cin']}->{l['cout']},s{l['stride']})"
                for l in layers)
            print(f"{path}: NSTW, {len(layers)} convs: {desc}")
        elif magic == b"NSTA":
            items = load_activations(path)
            desc = ", ".join(f"{n}{tuple(a.shape)}" for n, a in items)
            print(f"{path}: NSTA, {len(items)} arrays: {desc}")
        else:
            raise CliError(f"{path}: unrecognized file format")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

_CONFIG_FLAGS = (
    ("--lambda", "lam", float), ("--eta", "eta", float),
    ("--iters-per-scale", "iters_per_scale", int), ("--scales", "scales", int),
    ("--scale-factor", "scale_factor", float), ("--lap-levels", "lap_levels", int),
    ("--views-per-frame", "views_per_frame", int),
    ("--view-range1", "view_range1", float), ("--view-range2", "view_range2", float),
    ("--view-min-dist", "view_min_dist", float), ("--gamma", "gamma", float),
    ("--alpha", "alpha", float), ("--beta", "beta", float),
    ("--window", "window", int), ("--omega", "omega", str),
    ("--mask-threshold", "mask_threshold", float), ("--mask-blur", "mask_blur", float),
    ("--style-layers", "style_layers", str),
    ("--sequence-sweeps", "sequence_sweeps", int),
    ("--align-space", "align_space", str),
)


def _parse_triple(text: str) -> tuple:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected x,y,z")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from e


def _add_common(p) -> None:
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--threads", type=int, default=None,
                   help="cap BLAS threads; 1 makes runs byte-reproducible")


def _add_config_flags(p) -> None:
    p.add_argument("--config", default=None, help="key = value settings file")
    for flag, key, typ in _CONFIG_FLAGS:
        p.add_argument(flag, dest=f"cfg_{key}", type=typ, default=None,
                       help=argparse.SUPPRESS)


def _add_inputs(p) -> None:
    p.add_argument("--weights", default=None, help="NSTW file (default: random net)")
    p.add_argument("--style", default=None, help="PGM style exemplar")
    p.add_argument("--content", default=None, help="NSTA content targets")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smokestyle",
        description="transport-based stylization of volumetric smoke")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("stylize-frame", help="optimize one density frame")
    p.add_argument("density", help="VF32 density file")
    _add_inputs(p)
    _add_config_flags(p)
    _add_common(p)
    p.add_argument("--bits", type=int, default=16, choices=(8, 16))
    p.set_defaults(func=cmd_stylize_frame)

    p = sub.add_parser("stylize-seq", help="optimize a density sequence")
    p.add_argument("density", help="directory of frame_%04d.vf32 densities")
    p.add_argument("--velocity", required=True,
                   help="directory of frame_%04d.vf32 simulation velocities")
    _add_inputs(p)
    _add_config_flags(p)
    _add_common(p)
    p.add_argument("--bits", type=int, default=16, choices=(8, 16))
    p.add_argument("--compare-window", action="store_true",
                   help="also run with w=0 and write flicker.csv")
    p.set_defaults(func=cmd_stylize_sequence)

    p = sub.add_parser("render", help="render a density file to render.pgm")
    p.add_argument("density", help="VF32 density file")
    p.add_argument("--theta1", type=float, default=0.0)
    p.add_argument("--theta2", type=float, default=0.0)
    p.add_argument("--look-at", type=_parse_triple, default=None)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--step", type=float, default=None)
    p.add_argument("--bits", type=int, default=16, choices=(8, 16))
    _add_common(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("make-mask", help="write the soft velocity mask")
    p.add_argument("density", help="VF32 density file")
    _add_config_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_make_mask)

    p = sub.add_parser("gradcheck", help="verify analytic gradients against FD")
    _add_common(p)
    p.add_argument("--corrupt", default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("info", help="print VF32/NSTW/NSTA headers")
    p.add_argument("paths", nargs="+")
    _add_common(p)
    p.set_defaults(func=cmd_info)

    return parser


def _manifest_from(args) -> RunManifest:
    overrides = {key: getattr(args, f"cfg_{key}")
                 for _, key, _t in _CONFIG_FLAGS
                 if getattr(args, f"cfg_{key}", None) is not None}
    if getattr(args, "gamma", None) is not None and args.subcommand == "render":
        overrides["gamma"] = args.gamma
    return RunManifest(
        subcommand=args.subcommand,
        density=getattr(args, "density", None),
        velocity=getattr(args, "velocity", None),
        weights=getattr(args, "weights", None),
        config=getattr(args, "config", None),
        out_dir=getattr(args, "out", "."),
        seed=getattr(args, "seed", None),
        style=getattr(args, "style", None),
        content=getattr(args, "content", None),
        overrides=overrides,
        compare_window=getattr(args, "compare_window", False),
        theta1=getattr(args, "theta1", 0.0),
        theta2=getattr(args, "theta2", 0.0),
        look_at=getattr(args, "look_at", None),
        step=getattr(args, "step", None),
        bits=getattr(args, "bits", 16),
        corrupt=getattr(args, "corrupt", None),
        paths=tuple(getattr(args, "paths", ())),
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    limit = (threadpool_limits(limits=args.threads)
             if getattr(args, "threads", None) else contextlib.nullcontext())
    try:
        with limit:
            return args.func(_manifest_from(args))
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
