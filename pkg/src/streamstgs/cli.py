"""stgs: train, encode, decode, render, serve, play, bench, gradcheck.

Exit codes: 0 ok, 2 usage error (argparse), 3 data/decode error.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np


def _cmd_train(args) -> int:
    from .scenes import SceneSpec, generate
    from .trainer import TrainConfig, evaluate_psnr, train_gop
    from .codec import encode_gop

    spec = SceneSpec.from_json(Path(args.scene_spec).read_text())
    scene = generate(spec, cache_dir=args.cache_dir)
    cfg = TrainConfig(iterations=args.iterations, coarse_iterations=args.coarse_iterations,
                      seed=args.seed, heldout_cameras=tuple(args.heldout))
    model, trainer, metrics = train_gop(scene, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "checkpoint.stgs").write_bytes(encode_gop(model, qp=0))
    (out / "weights.bin").write_bytes(model.field.to_bytes())
    with open(out / "metrics.jsonl", "w") as fh:
        for rec in metrics:
            fh.write(json.dumps(rec) + "\n")
    train_psnr = evaluate_psnr(model, scene, camera_indices=trainer.train_cameras)
    summary = {"train_psnr": train_psnr, "gaussians": model.gaussians.count}
    if args.heldout:
        summary["heldout_psnr"] = evaluate_psnr(model, scene, camera_indices=list(args.heldout))
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary))
    return 0


def _cmd_encode(args) -> int:
    from .codec import decode_gop
    from .scenes import SceneSpec, generate
    from .stream.packager import cameras_meta_from_scene, encode_scene_dir

    model = decode_gop(Path(args.checkpoint).read_bytes())
    cameras_meta = None
    if args.scene_spec:
        scene = generate(SceneSpec.from_json(Path(args.scene_spec).read_text()),
                         cache_dir=args.cache_dir)
        cameras_meta = cameras_meta_from_scene(scene)
    manifest = encode_scene_dir([model] * args.gops, args.out, qps=args.qp,
                                scene_id=args.scene_id, fps=args.fps,
                                cameras_meta=cameras_meta)
    print(f"encoded {manifest.gop_count} GOP(s) at QPs {[l.qp for l in manifest.qp_ladder]}")
    for lvl in manifest.qp_ladder:
        print(f"  qp{lvl.qp:02d}: {sum(lvl.sizes)} bytes total, {lvl.mean_frame_kb:.2f} KB/frame")
    return 0


def _cmd_decode(args) -> int:
    from .codec import decode_gop

    model = decode_gop(Path(args.segment).read_bytes())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.savez(out / "model.npz",
             positions=model.gaussians.positions, scales=model.gaussians.scales,
             rotations=model.gaussians.rotations, opacities=model.gaussians.opacities,
             base_colors=model.gaussians.base_colors, features=model.bank.features)
    (out / "weights.bin").write_bytes(model.field.to_bytes())
    print(f"decoded {model.gaussians.count} Gaussians, G={model.bank.gop_length}, "
          f"W={model.bank.window} -> {out}")
    return 0


def _cmd_render(args) -> int:
    from .render import render_model_frame, write_png
    from .stream.manifest import build_manifest
    from .stream.server import SceneService, parse_pose

    service = SceneService(args.scene_dir)
    manifest = service.manifest
    qp = args.qp if args.qp is not None else manifest.qp_ladder[0].qp
    model = service.model(args.gop, qp)
    cam = parse_pose(args.pose, manifest.cameras)
    img = render_model_frame(model, args.frame, cam)
    write_png(args.out, img)
    print(f"wrote {args.out} ({cam.width}x{cam.height}, gop {args.gop} frame {args.frame} qp {qp})")
    return 0


def _cmd_serve(args) -> int:
    from .stream.server import serve

    serve(args.scene_dir, args.bind, args.throttle_bytes_per_sec, args.viewer_dir)
    return 0


def _cmd_play(args) -> int:
    from .stream.client import client_play

    report = client_play(args.url, pinned_qp=args.pin_qp, max_gops=args.max_gops,
                         check_render=args.check_render, pose=args.pose,
                         report_path=args.report)
    print(f"played {len(report.entries)} GOP(s), stalls={report.stalls}, "
          f"ttff={report.ttff_ms:.1f} ms, qp trace={report.qp_trace()}")
    return 0


def _cmd_bench(args) -> int:
    import csv

    from .codec import decode_gop
    from .losses import ssim
    from .render import psnr, render_model_frame
    from .stream.server import SceneService, parse_pose

    service = SceneService(args.scene_dir)
    manifest = service.manifest
    pose = args.pose or f"0.0,0.3,{manifest.cameras.get('orbit_radius', 4.0)}"
    cam = parse_pose(pose, manifest.cameras)

    if args.reference:
        ref_model = decode_gop(Path(args.reference).read_bytes())
    else:
        ref_model = service.model(0, manifest.qp_ladder[0].qp)
    ref_img = render_model_frame(ref_model, args.frame, cam).rgb

    rows = []
    for lvl in manifest.qp_ladder:
        t0 = time.monotonic()
        model = decode_gop(service.segment_bytes(0, lvl.qp))
        decode_ms = (time.monotonic() - t0) * 1e3
        t0 = time.monotonic()
        rendered = render_model_frame(model, args.frame, cam)
        render_ms = (time.monotonic() - t0) * 1e3
        img = rendered.rgb
        rows.append({
            "qp": lvl.qp,
            "segment_bytes": lvl.sizes[0],
            "mean_frame_kb": round(lvl.mean_frame_kb, 3),
            "decode_ms": round(decode_ms, 2),
            "render_ms": round(render_ms, 2),
            "psnr_vs_ref": round(psnr(img, ref_img), 3),
            "ssim_vs_ref": round(float(ssim(img, ref_img)), 5),
            "culled_near": rendered.stats.culled_near,
            "splats_per_pixel": round(rendered.stats.mean_splats_per_pixel, 2),
        })
    writer = csv.DictWriter(sys.stdout, fieldnames=list(rows[0].keys()))
    writer.writeheader()
    writer.writerows(rows)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            w.writeheader()
            w.writerows(rows)
    return 0


def _cmd_gradcheck(args) -> int:
    from .trainer import grad_check

    report = grad_check(tolerance=args.tolerance, max_entries=args.entries, seed=args.seed)
    print(report)
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stgs", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one GOP on a synthetic scene")
    t.add_argument("--scene-spec", required=True, help="SceneSpec JSON file")
    t.add_argument("--out", required=True)
    t.add_argument("--iterations", type=int, default=2000)
    t.add_argument("--coarse-iterations", type=int, default=200)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--heldout", type=int, nargs="*", default=[])
    t.add_argument("--cache-dir", default=None)
    t.set_defaults(fn=_cmd_train)

    e = sub.add_parser("encode", help="encode a checkpoint into a scene directory")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--qp", type=int, action="append", default=None)
    e.add_argument("--gops", type=int, default=1)
    e.add_argument("--fps", type=float, default=30.0)
    e.add_argument("--scene-id", default="scene")
    e.add_argument("--scene-spec", default=None, help="scene spec for camera metadata")
    e.add_argument("--cache-dir", default=None)
    e.set_defaults(fn=_cmd_encode)

    d = sub.add_parser("decode", help="decode one segment to npz + weights")
    d.add_argument("--segment", required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(fn=_cmd_decode)

    r = sub.add_parser("render", help="render one frame from an encoded scene")
    r.add_argument("--scene-dir", required=True)
    r.add_argument("--gop", type=int, default=0)
    r.add_argument("--frame", type=int, required=True)
    r.add_argument("--qp", type=int, default=None)
    r.add_argument("--pose", required=True, help="'theta,phi,radius' or 16 w2c floats")
    r.add_argument("--out", required=True)
    r.set_defaults(fn=_cmd_render)

    s = sub.add_parser("serve", help="serve an encoded scene over HTTP")
    s.add_argument("--scene-dir", required=True)
    s.add_argument("--bind", default="127.0.0.1:8080")
    s.add_argument("--throttle-bytes-per-sec", type=float, default=None)
    s.add_argument("--viewer-dir", default=None)
    s.set_defaults(fn=_cmd_serve)

    pl = sub.add_parser("play", help="stream and play a scene")
    pl.add_argument("--url", required=True)
    pl.add_argument("--report", default=None)
    pl.add_argument("--pin-qp", type=int, default=None)
    pl.add_argument("--max-gops", type=int, default=None)
    pl.add_argument("--check-render", action="store_true")
    pl.add_argument("--pose", default=None, help="pose for --check-render comparisons")
    pl.set_defaults(fn=_cmd_play)

    b = sub.add_parser("bench", help="PSNR/SSIM/size/timing table per QP (CSV)")
    b.add_argument("--scene-dir", required=True)
    b.add_argument("--reference", default=None, help="reference segment (e.g. QP0 checkpoint)")
    b.add_argument("--frame", type=int, default=0)
    b.add_argument("--pose", default=None)
    b.add_argument("--out", default=None)
    b.set_defaults(fn=_cmd_bench)

    g = sub.add_parser("gradcheck", help="finite-difference check of every gradient group")
    g.add_argument("--tolerance", type=float, default=1e-3)
    g.add_argument("--entries", type=int, default=64)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(fn=_cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "qp", None) is None and args.command == "encode":
        args.qp = [16, 20, 24, 28, 32]
    try:
        return args.fn(args)
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:
        from .codec import DecodeError
        from .stream.manifest import ManifestError

        if isinstance(exc, (DecodeError, ManifestError, ValueError)):
            print(f"error: {exc}", file=sys.stderr)
            return 3
        raise


if __name__ == "__main__":
    sys.exit(main())
