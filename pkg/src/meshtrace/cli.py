"""``meshtrace`` command line: gen, track, meanshape, train, infer, eval.

Exit status is 0 on success, 2 for usage problems (bad flags, missing
inputs, malformed manifests or specs) and 1 for failures while working.
Errors are reported on stderr as one JSON line, for example::

    {"error":"ManifestError","exit":2,"message":"line 3, field 'box': ..."}
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional

from . import __version__
from .dataset import (
    FixtureSpec, atomic_write, canonical_json, canonical_meshes, crossing_spec, drifting_cube_spec,
    generate_suite, load_samples, read_manifest, read_pbm, rotating_suite, write_pbm,
)
from .errors import ConfigurationError, ManifestError, MeshTraceError, ObjParseError
from .meanshape import mean_shape
from .mesh import load_obj, save_obj
from .metrics import SPLITS, Detection, EvalConfig, GroundTruthObject, evaluate
from .pipeline import MODES, infer_clip
from .render import render
from .tracker import IOU_GATE, track_clip
from .train import Model, TrainConfig, load_checkpoint, log_csv, make_items, save_checkpoint, train

log = logging.getLogger("meshtrace")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def _emit(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _table(header, rows) -> str:
    cells = [list(map(str, header))] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"input not found: {path}")
    return p


def _clip_of(frame_id: str) -> str:
    return frame_id.rsplit(":", 1)[0] if ":" in frame_id else ""


def _read_jsonl(path: Path) -> List[dict]:
    out = []
    for n, line in enumerate(path.read_text("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"invalid JSON ({exc.msg})", lineno=n) from None
        if not isinstance(rec, dict):
            raise ManifestError("record must be a JSON object", lineno=n)
        out.append(rec)
    return out


def _training_means(clips, resolution, iso, faces) -> Dict[int, object]:
    per_class: Dict[int, list] = {}
    for c in clips:
        for _, (cid, m) in sorted(canonical_meshes(c).items()):
            per_class.setdefault(cid, []).append(m)
    return {cid: mean_shape(ms, resolution, iso, faces) for cid, ms in sorted(per_class.items())}


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    spec_path = _existing(args.spec)
    try:
        raw = json.loads(spec_path.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"spec is not valid JSON: {exc.msg}") from None
    seed = args.seed
    try:
        if "suite" in raw:
            kind = raw["suite"]
            if kind == "rotating":
                specs = rotating_suite(int(raw.get("n_clips", 10)), int(raw.get("length", 10)), seed,
                                       raw.get("prefix", "rot"))
            elif kind == "crossing":
                specs = [crossing_spec(int(raw.get("length", 20)), raw.get("prefix", "crossing"),
                                       tuple(raw.get("shot_transitions", ())))]
            elif kind == "drifting":
                specs = [drifting_cube_spec(int(raw.get("length", 8)), raw.get("prefix", "drift"))]
            else:
                raise UsageError(f"unknown suite {kind!r}")
        else:
            specs = [FixtureSpec.from_dict({**c, "seed": seed}) for c in raw.get("clips", [])]
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid fixture spec: {exc}") from None
    if not specs:
        raise UsageError("spec defines no clips")
    clips = generate_suite(specs, args.out, args.threads)
    rows = []
    for c in clips:
        n_inst = sum(len(f.instances) for f in c.frames)
        rows.append((c.clip_id, len(c.frames), n_inst, ",".join(map(str, c.shot_transitions)) or "-"))
    summary = [{"clip_id": r[0], "frames": r[1], "instances": r[2]} for r in rows]
    atomic_write(Path(args.out) / "summary.json", (canonical_json({"clips": summary}) + "\n").encode())
    _emit(_table(("clip", "frames", "instances", "shots"), rows))
    return 0


def cmd_track(args) -> int:
    records = _read_jsonl(_existing(args.detections))
    clips: Dict[str, Dict[str, list]] = {}
    order: Dict[str, List[str]] = {}
    shots: Dict[str, set] = {}
    dets = []
    for n, r in enumerate(records, start=1):
        for key in ("frame_id", "box", "class"):
            if key not in r:
                raise ManifestError("missing required field", field=key, lineno=n)
        fid = str(r["frame_id"])
        clip = _clip_of(fid)
        frames = clips.setdefault(clip, {})
        if fid not in frames:
            frames[fid] = []
            order.setdefault(clip, []).append(fid)
        try:
            d = Detection(tuple(r["box"]), int(r["class"]), float(r.get("score", 1.0)), frame_id=fid,
                          instance_id=n - 1)
        except (TypeError, ValueError) as exc:
            raise ManifestError(str(exc), field="box", lineno=n) from None
        frames[fid].append(d)
        dets.append(d)
        if r.get("shot_transition"):
            shots.setdefault(clip, set()).add(len(order[clip]) - 1)
    track_of: Dict[int, int] = {}
    for clip in sorted(clips):
        frames = [clips[clip][f] for f in order[clip]]
        for row in track_clip(frames, shots.get(clip, ()), args.iou_gate):
            for d in row:
                track_of[d.instance_id] = d.track_id
    out_lines = []
    for n, r in enumerate(records):
        rec = dict(r)
        rec["track_id"] = track_of[n]
        out_lines.append(canonical_json(rec))
    data = ("\n".join(out_lines) + "\n").encode() if out_lines else b""
    if args.out:
        atomic_write(args.out, data)
    rows = []
    for clip in sorted(clips):
        ids = {track_of[i] for i, r in enumerate(records) if _clip_of(str(r["frame_id"])) == clip}
        rows.append((clip or "-", len(order[clip]), len(ids)))
    _emit(_table(("clip", "frames", "tracks"), rows))
    return 0


def cmd_meanshape(args) -> int:
    clips = read_manifest(_existing(args.manifest))
    meshes = []
    for c in clips:
        for _, (cid, m) in sorted(canonical_meshes(c).items()):
            if cid == args.class_id:
                meshes.append(m)
    if not meshes:
        raise UsageError(f"no instances of class {args.class_id} in {args.manifest}")
    mesh = mean_shape(meshes, args.resolution, args.iso, args.faces)
    atomic_write(args.out, save_obj(mesh))
    _emit(_table(("class", "instances", "vertices", "faces"),
                 [(args.class_id, len(meshes), mesh.n_vertices, mesh.n_faces)]))
    return 0


def cmd_train(args) -> int:
    clips = read_manifest(_existing(args.manifest))
    cfg_dict = {}
    if args.config:
        try:
            cfg_dict = json.loads(_existing(args.config).read_text("utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config is not valid JSON: {exc.msg}") from None
    for key in ("stage1_steps", "stage2_steps", "n_samples", "lr", "clip_norm"):
        val = getattr(args, key)
        if val is not None:
            cfg_dict[key] = val
    cfg_dict["seed"] = args.seed
    try:
        cfg = TrainConfig.from_dict(cfg_dict)
    except TypeError as exc:
        raise UsageError(f"invalid training config: {exc}") from None
    means = _training_means(clips, args.resolution, args.iso, args.mean_faces)
    samples = [s for c in clips for row in load_samples(c) for s in row]
    items = make_items(samples, cfg.n_samples, cfg.seed)
    model = Model.init(means, items[0].feature.channels if items else 3, cfg)
    rows: list = []
    train(model, items, cfg, rows)
    model.meta["config"] = json.loads(json.dumps(cfg.to_dict()))
    atomic_write(args.out, save_checkpoint(model))
    if args.log:
        atomic_write(args.log, log_csv(rows))
    last = rows[-1] if rows else (0, 0, float("nan"), float("nan"), float("nan"), float("nan"))
    _emit(_table(("steps", "items", "classes", "final_total"),
                 [(len(rows), len(items), len(means), f"{last[5]:.6f}")]))
    return 0


def _predicted_mask(det, sample, size):
    return render([det.mesh], [sample.camera], size).ids == 0


def cmd_infer(args) -> int:
    clips = read_manifest(_existing(args.manifest))
    model = load_checkpoint(_existing(args.checkpoint).read_bytes())
    out = Path(args.out)
    lines = []
    rows = []
    for c in clips:
        frames = load_samples(c)
        preds = infer_clip(model, frames, args.mode, args.iou_gate, args.threads)
        for samples, dets in zip(frames, preds):
            for s, d in zip(samples, dets):
                stem = f"{c.clip_id}/{s.frame_index:05d}_{s.instance_id}"
                atomic_write(out / f"{stem}.obj", save_obj(d.mesh))
                atomic_write(out / f"{stem}_mask.pbm", write_pbm(_predicted_mask(d, s, c.image_size)))
                lines.append(canonical_json({
                    "frame_id": s.frame_id, "box": list(d.box), "class": d.class_id, "score": d.score,
                    "track_id": d.track_id, "instance_id": s.instance_id,
                    "mesh": f"{stem}.obj", "mask": f"{stem}_mask.pbm",
                }))
        rows.append((c.clip_id, len(frames), sum(len(p) for p in preds)))
    atomic_write(out / "predictions.jsonl", ("\n".join(lines) + "\n").encode() if lines else b"")
    _emit(_table(("clip", "frames", "predictions"), rows))
    return 0


def _load_gts(clips):
    gts = []
    lengths = {}
    for c in clips:
        lengths[c.clip_id] = len(c.frames)
        for fr in c.frames:
            for inst in fr.instances:
                if inst.box is None or not inst.visible:
                    continue
                gts.append(GroundTruthObject(
                    inst.box, inst.class_id, fr.frame_id, c.clip_id, inst.instance_id,
                    read_pbm((c.root / inst.amodal_mask).read_bytes()),
                    load_obj((c.root / inst.mesh).read_bytes()), inst.occlusion_rate))
    return gts, lengths


def _load_preds(path: Path):
    if path.is_dir() and (path / "predictions.jsonl").exists():
        path = path / "predictions.jsonl"
    if path.is_file() and path.name != "manifest.jsonl":
        base = path.parent
        preds = []
        for n, r in enumerate(_read_jsonl(path), start=1):
            for key in ("frame_id", "box", "class"):
                if key not in r:
                    raise ManifestError("missing required field", field=key, lineno=n)
            mask = read_pbm((base / r["mask"]).read_bytes()) if r.get("mask") else None
            mesh = load_obj((base / r["mesh"]).read_bytes()) if r.get("mesh") else None
            preds.append(Detection(tuple(r["box"]), int(r["class"]), float(r.get("score", 1.0)), mask, mesh,
                                   r["frame_id"], r.get("instance_id"), r.get("track_id")))
        return preds
    # a dataset: its ground truth used as predictions
    gts, _ = _load_gts(read_manifest(path))
    return [Detection(g.box, g.class_id, 1.0, g.mask, g.mesh, g.frame_id, g.instance_id) for g in gts]


def cmd_eval(args) -> int:
    preds = _load_preds(_existing(args.preds))
    gts, lengths = _load_gts(read_manifest(_existing(args.gts)))
    splits = tuple(s.strip() for s in args.splits.split(",") if s.strip())
    bad = [s for s in splits if s not in SPLITS]
    if bad or not splits:
        raise UsageError(f"unknown splits {bad}; choose from {','.join(SPLITS)}")
    cfg = EvalConfig(tau=args.tau, rescale_target=args.rescale_target, seed=args.seed, splits=splits,
                     clip_lengths=lengths, threads=args.threads, n_samples=args.samples)
    report = evaluate(preds, gts, cfg)
    if args.out:
        atomic_write(args.out, report.to_json().encode("utf-8") + b"\n")
    _emit(report.table())
    return 0


# ---------------------------------------------------------------------------
# parser


def _positive(kind):
    def parse(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
        if v <= 0:
            raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
        return v
    return parse


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for every random choice (default 0)")
    common.add_argument("--threads", type=_positive(int), default=1,
                        help="worker threads for data-parallel sections (default 1)")

    p = argparse.ArgumentParser(prog="meshtrace", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    g = sub.add_parser("gen", parents=[common], help="render a fixture dataset")
    g.add_argument("spec", help='JSON spec: {"suite": "rotating"|"crossing"|"drifting", ...} or {"clips": [...]}')
    g.add_argument("--out", required=True, help="dataset root to write")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("track", parents=[common], help="assign track ids to detections")
    t.add_argument("detections", help="JSON lines with frame_id, box, class, score")
    t.add_argument("--iou-gate", type=_positive(float), default=IOU_GATE, help="IoU gate (default 0.5)")
    t.add_argument("--out", help="tracked detections (JSON lines)")
    t.set_defaults(func=cmd_track)

    m = sub.add_parser("meanshape", parents=[common], help="build a class mean mesh")
    m.add_argument("manifest", help="dataset root or manifest.jsonl")
    m.add_argument("--class", dest="class_id", type=int, required=True, help="class id")
    m.add_argument("--resolution", type=_positive(int), default=32, help="voxel grid resolution (default 32)")
    m.add_argument("--iso", type=float, default=0.5, help="occupancy threshold (default 0.5)")
    m.add_argument("--faces", type=_positive(int), default=4000, help="target face count (default 4000)")
    m.add_argument("--out", required=True, help="output OBJ")
    m.set_defaults(func=cmd_meanshape)

    tr = sub.add_parser("train", parents=[common], help="train rotation head and refinement stages")
    tr.add_argument("manifest", help="dataset root or manifest.jsonl")
    tr.add_argument("--config", help="JSON training config (keys of TrainConfig)")
    tr.add_argument("--stage1-steps", type=int, help="stage-1 SGD steps")
    tr.add_argument("--stage2-steps", type=int, help="stage-2 SGD steps")
    tr.add_argument("--n-samples", dest="n_samples", type=_positive(int), help="surface samples per loss")
    tr.add_argument("--lr", type=float, help="learning rate (default 0.02)")
    tr.add_argument("--clip-norm", type=_positive(float), help="global gradient-norm clip (default 1.0; a config file may set null to disable)")
    tr.add_argument("--resolution", type=_positive(int), default=32, help="mean-shape grid resolution")
    tr.add_argument("--iso", type=float, default=0.5, help="mean-shape occupancy threshold")
    tr.add_argument("--mean-faces", type=_positive(int), default=4000, help="mean-shape face budget")
    tr.add_argument("--log", help="CSV training log")
    tr.add_argument("--out", required=True, help="checkpoint file")
    tr.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", parents=[common], help="predict meshes for a dataset")
    i.add_argument("manifest", help="dataset root or manifest.jsonl")
    i.add_argument("--checkpoint", required=True, help="checkpoint from `train`")
    i.add_argument("--mode", choices=MODES, default="temporal", help="reference policy (default temporal)")
    i.add_argument("--iou-gate", type=_positive(float), default=IOU_GATE, help="IoU gate (default 0.5)")
    i.add_argument("--out", required=True, help="prediction directory")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", parents=[common], help="AP^box / AP^mask / AP^mesh report")
    e.add_argument("preds", help="predictions.jsonl (or its directory), or a dataset used as predictions")
    e.add_argument("gts", help="ground-truth dataset root or manifest.jsonl")
    e.add_argument("--tau", type=_positive(float), default=0.3, help="F1 distance threshold (default 0.3)")
    e.add_argument("--rescale-target", type=_positive(float), default=5.0,
                   help="longest ground-truth box edge after rescaling (default 5)")
    e.add_argument("--samples", type=_positive(int), default=10000, help="points per mesh for F1")
    e.add_argument("--splits", default=",".join(SPLITS), help="comma-separated splits")
    e.add_argument("--out", help="JSON report")
    e.set_defaults(func=cmd_eval)
    return p


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(canonical_json({"error": kind, "exit": code, "message": message}) + "\n")
    return code


def main(argv: Optional[List[str]] = None) -> int:
    level = os.environ.get("MESHTRACE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, ManifestError, ObjParseError, ConfigurationError, FileNotFoundError) as exc:
        return _fail(type(exc).__name__, str(exc), 2)
    except (MeshTraceError, ValueError, OSError) as exc:
        return _fail(type(exc).__name__, str(exc), 1)


if __name__ == "__main__":
    sys.exit(main())
