"""Command-line entry point: ``tcdepth <command> ...``.

Every command prints line-oriented ``key=value`` records starting with a
``schema`` key; ``--table`` adds a human-readable table. Exit codes: 0 on
success, 1 for usage errors, 2 for data or format errors, 3 when a
gradient check fails.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import attention, fusion, gradients, losses, synth, tcm
from .dataset import load_manifest, write_image, write_pfm, write_sequence
from .errors import TcDepthError
from .geometry import relative_pose, warp_backward

SCHEMA = "tcdepth/1"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK_FAILED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return f"{v:.6f}" if v == 0 or abs(v) >= 1e-3 else f"{v:.6e}"
    return str(v)


def _record(out, command: str, **fields) -> None:
    out.write(" ".join([f"schema={SCHEMA}", f"command={command}"] + [f"{k}={_fmt(v)}" for k, v in fields.items()]) + "\n")


def _table(out, header: list[str], rows: list[list]) -> None:
    cells = [header] + [[_fmt(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    for j, r in enumerate(cells):
        out.write("  ".join(c.rjust(w) for c, w in zip(r, widths)) + "\n")
        if j == 0:
            out.write("  ".join("-" * w for w in widths) + "\n")


def _frame(seq, index: int, flag: str):
    if not 0 <= index < len(seq):
        raise UsageError(f"{flag} {index} is outside the sequence (0..{len(seq) - 1})")
    return seq[index]


def _pose(frame, use_est: bool):
    if use_est:
        if frame.est_pose is None:
            raise TcDepthError("manifest has no est_poses entry")
        return frame.est_pose
    return frame.gt_pose


# -- commands -------------------------------------------------------------------

def cmd_synth(args, out) -> int:
    scene = synth.preset_scene(args.scene, seed=args.seed)
    traj = synth.TrajectorySpec(args.trajectory, args.frames, args.step, seed=args.seed)
    k = synth.kitti_like_intrinsics(args.width, args.height)
    frames = synth.synthetic_sequence(scene, traj, k, args.width, args.height,
                                      noise=args.noise, noise_mode=args.noise_mode, noise_seed=args.seed)
    manifest = write_sequence(args.out, frames)
    _record(out, "synth", manifest=manifest, frames=len(frames), width=args.width, height=args.height,
            scene=args.scene, trajectory=args.trajectory, noise=args.noise, seed=args.seed)
    return EXIT_OK


def cmd_warp(args, out) -> int:
    seq = load_manifest(args.manifest)
    tgt, src = _frame(seq, args.target, "--target"), _frame(seq, args.source, "--source")
    pose = relative_pose(_pose(tgt, args.est_poses), _pose(src, args.est_poses))
    warped, ok = warp_backward(src.image, tgt.pred_depth, pose, tgt.intrinsics)
    err = np.abs(warped - tgt.image).mean(axis=-1)
    mae = float(err[ok].mean()) if ok.any() else float("nan")
    fields = dict(target=args.target, source=args.source, valid_fraction=float(ok.mean()), mae=mae)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        path = Path(args.out) / f"warp_{args.source:04d}_to_{args.target:04d}.png"
        write_image(path, np.where(ok[..., None], warped, 0.0))
        fields["image"] = path
    _record(out, "warp", **fields)
    return EXIT_OK


def cmd_losses(args, out) -> int:
    seq = load_manifest(args.manifest)
    t = args.target
    if not 1 <= t <= len(seq) - 2:
        raise UsageError(f"--target {t} needs a previous and a next frame (1..{len(seq) - 2})")
    frames = [seq[t - 1], seq[t], seq[t + 1]]
    cfg = losses.PhotometricConfig(alpha=args.alpha)
    weights = losses.LossWeights(args.lambda_s, args.lambda_geo, args.lambda_m)
    res = losses.triplet_losses([f.image for f in frames], [f.pred_depth for f in frames],
                                [_pose(f, args.est_poses) for f in frames], frames[1].intrinsics,
                                ref_depth=frames[1].gt_depth if args.reference_gt else None,
                                cfg=cfg, weights=weights, cycle_p=args.cycle_p)
    for name in losses.LOSS_NAMES:
        r = res.results[name]
        _record(out, "losses", target=t, term=name, value=r.scalar, coverage=r.coverage)
    _record(out, "losses", target=t, term="total", value=res.total,
            lambda_s=weights.lambda_s, lambda_geo=weights.lambda_geo, lambda_m=weights.lambda_m)
    if args.maps:
        root = Path(args.maps)
        root.mkdir(parents=True, exist_ok=True)
        for name in losses.LOSS_NAMES:
            write_pfm(root / f"loss_{name}_{t:04d}.pfm", res.results[name].map.astype(np.float32))
    if args.table:
        _table(out, ["term", "value", "coverage"],
               [[n, res.results[n].scalar, res.results[n].coverage] for n in losses.LOSS_NAMES]
               + [["total", res.total, ""]])
    return EXIT_OK


def _write_pgm(path: Path, grid: np.ndarray) -> None:
    g = np.asarray(grid, dtype=np.float64)
    top = g.max()
    img = np.round(255 * g / top) if top > 0 else np.zeros_like(g)
    Image.fromarray(img.astype(np.uint8)).save(path, format="PPM")


def cmd_attn(args, out) -> int:
    seq = load_manifest(args.manifest)
    f = _frame(seq, args.frame, "--frame")
    h, w = f.pred_depth.shape
    coarse_shape = (h // args.factor, w // args.factor)
    if coarse_shape[0] * args.factor != h or coarse_shape[1] * args.factor != w:
        raise UsageError(f"--factor {args.factor} does not divide the {w}x{h} frames")
    k = f.intrinsics.resized(1 / args.factor, 1 / args.factor)

    def coarse(frame):
        if not frame.pred_depth.valid.all():
            raise TcDepthError(f"frame {seq.frames.index(frame)} has invalid predicted depth")
        return (attention.downsample_mean(frame.pred_depth.values, coarse_shape),
                attention.downsample_mean(frame.image, coarse_shape))

    d, feat = coarse(f)
    cfg = attention.SpatialAttentionConfig(args.sigma, args.radius)
    a_sp = attention.spatial_attention(d, k, cfg)
    qu = coarse_shape[1] // 2 if args.query is None else args.query[0]
    qv = coarse_shape[0] // 2 if args.query is None else args.query[1]
    if not (0 <= qu < coarse_shape[1] and 0 <= qv < coarse_shape[0]):
        raise UsageError(f"--query {qu} {qv} is outside the {coarse_shape[1]}x{coarse_shape[0]} coarse grid")
    others = [i for i in range(max(0, args.frame - args.window), min(len(seq), args.frame + args.window + 1))
              if i != args.frame]
    if not others:
        raise UsageError("temporal attention needs at least one other frame in --window")
    keys = [coarse(seq[i])[1] for i in others]
    a_tm = attention.temporal_attention(feat, keys)
    row_sums = a_tm.weights.sum(axis=1)
    fields = dict(frame=args.frame, sigma=args.sigma, coarse_width=coarse_shape[1], coarse_height=coarse_shape[0],
                  query_u=qu, query_v=qv, key_frames=len(others),
                  spatial_asymmetry=float(np.abs(a_sp.weights - a_sp.weights.T).max()),
                  spatial_diag_min=float(np.diag(a_sp.weights).min()),
                  temporal_row_sum_dev=float(np.abs(row_sums - 1).max()))
    if args.out:
        root = Path(args.out)
        root.mkdir(parents=True, exist_ok=True)
        sp = root / f"spatial_{args.frame:04d}.pgm"
        tm = root / f"temporal_{args.frame:04d}.pgm"
        _write_pgm(sp, a_sp.row(qu, qv).reshape(coarse_shape))
        _write_pgm(tm, np.concatenate(np.split(a_tm.row(qu, qv), len(others)), axis=0).reshape(-1, coarse_shape[1]))
        fields.update(spatial_heatmap=sp, temporal_heatmap=tm)
    _record(out, "attn", **fields)
    return EXIT_OK


def cmd_tcm(args, out) -> int:
    seq = load_manifest(args.manifest)
    if any(k < 2 for k in args.frames):
        raise UsageError("--frames values must be at least 2")
    reports = tcm.tcm_sweep(seq.frames, args.frames, args.outlier_fraction, args.stride)
    for k in args.frames:
        r = reports[k]
        _record(out, "tcm", k=k, abs_err=r.abs_err, sq_err=r.sq_err, rmse=r.rmse, n_tracks=r.n_tracks,
                n_windows=r.n_windows, outlier_fraction=args.outlier_fraction)
    if args.table:
        header = [f"{m} k={k}" for k in args.frames for m in ("Abs Err", "Sq Err", "RMSE")]
        _table(out, header, [[v for k in args.frames for v in (reports[k].abs_err, reports[k].sq_err, reports[k].rmse)]])
    return EXIT_OK


def cmd_fuse(args, out) -> int:
    seq = load_manifest(args.manifest)
    _frame(seq, args.ref, "--ref")
    half = args.count // 2
    lo = max(0, min(args.ref - half, len(seq) - args.count))
    window = seq.frames[lo:lo + args.count]
    cloud = fusion.fuse_pointcloud(window, args.ref - lo, use_gt_pose=not args.est_poses, stride=args.stride,
                                   frame="world" if args.world else "reference")
    fusion.write_ply(cloud, args.out)
    _record(out, "fuse", ref=args.ref, first=lo, frames=len(window), stride=args.stride, points=len(cloud), ply=args.out)
    return EXIT_OK


def cmd_gradcheck(args, out) -> int:
    names = gradients.SUPPORTED if args.loss == "all" else (args.loss,)
    ok = True
    for name in names:
        r = gradients.check_gradient(name, args.size, args.seed, args.rel_step)
        ok &= r.passed
        _record(out, "gradcheck", loss=name, size=args.size, seed=args.seed, n_checked=r.n_checked,
                max_rel_err=r.max_rel_err, max_abs_err=r.max_abs_err, passed=r.passed)
    return EXIT_OK if ok else EXIT_CHECK_FAILED


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tcdepth", description="Temporally consistent depth toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_manifest(sp):
        sp.add_argument("--manifest", required=True, help="sequence manifest path")
        sp.add_argument("--est-poses", action="store_true", help="use est_poses instead of GT poses")
        sp.add_argument("--table", action="store_true", help="also print a human-readable table")
        return sp

    s = sub.add_parser("synth", help="render a synthetic sequence")
    s.add_argument("--out", required=True)
    s.add_argument("--scene", choices=synth.SCENE_PRESETS, default="street")
    s.add_argument("--trajectory", choices=("static", "translate-x", "translate-z", "arc"), default="translate-z")
    s.add_argument("--frames", type=int, default=5)
    s.add_argument("--step", type=float, default=0.5)
    s.add_argument("--width", type=int, default=320)
    s.add_argument("--height", type=int, default=96)
    s.add_argument("--noise", type=float, default=0.0, help="multiplicative noise amplitude on predictions")
    s.add_argument("--noise-mode", choices=("frame", "pixel"), default="frame")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = with_manifest(sub.add_parser("warp", help="backward-warp a source frame into a target frame"))
    s.add_argument("--target", type=int, required=True)
    s.add_argument("--source", type=int, required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_warp)

    s = with_manifest(sub.add_parser("losses", help="evaluate the training losses on a triplet"))
    s.add_argument("--target", type=int, default=1)
    s.add_argument("--alpha", type=float, default=0.85)
    s.add_argument("--lambda-s", type=float, default=1e-3)
    s.add_argument("--lambda-geo", type=float, default=0.1)
    s.add_argument("--lambda-m", type=float, default=1.0)
    s.add_argument("--cycle-p", type=float, default=0.7)
    s.add_argument("--reference-gt", action="store_true", help="use GT depth as the reference-loss target")
    s.add_argument("--maps", help="directory for per-pixel loss maps (PFM)")
    s.set_defaults(func=cmd_losses)

    s = with_manifest(sub.add_parser("attn", help="spatial and temporal attention heatmaps"))
    s.add_argument("--frame", type=int, default=0)
    s.add_argument("--sigma", type=float, default=1.0)
    s.add_argument("--radius", type=float)
    s.add_argument("--factor", type=int, default=4, help="block size from frame to coarse grid")
    s.add_argument("--window", type=int, default=1, help="key frames on each side of the query frame")
    s.add_argument("--query", type=int, nargs=2, metavar=("U", "V"))
    s.add_argument("--out")
    s.set_defaults(func=cmd_attn)

    s = with_manifest(sub.add_parser("tcm", help="temporal consistency metric"))
    s.add_argument("--frames", type=int, nargs="+", default=[3, 5, 7], help="window sizes k")
    s.add_argument("--outlier-fraction", type=float, default=0.2)
    s.add_argument("--stride", type=int, default=1)
    s.set_defaults(func=cmd_tcm)

    s = with_manifest(sub.add_parser("fuse", help="fuse predictions into a PLY point cloud"))
    s.add_argument("--ref", type=int, default=0)
    s.add_argument("--count", type=int, default=5, help="frames to fuse around --ref")
    s.add_argument("--stride", type=int, default=1)
    s.add_argument("--world", action="store_true", help="world instead of reference coordinates")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fuse)

    s = sub.add_parser("gradcheck", help="finite-difference check of analytic loss gradients")
    s.add_argument("--loss", choices=gradients.SUPPORTED + ("all",), default="all")
    s.add_argument("--size", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--rel-step", type=float, default=1e-3)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None, out=None, err=None) -> int:
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args, out)
    except UsageError as exc:
        err.write(f"usage error: {exc}\n")
        return EXIT_USAGE
    except (TcDepthError, OSError) as exc:
        err.write(f"error: {exc}\n")
        return EXIT_DATA
    except ValueError as exc:  # invalid option values rejected by constructors
        err.write(f"usage error: {exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
