"""Clip-level inference: track detections, pick references, refine meshes."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from typing import List, Sequence

from .dataset import Sample
from .metrics import Detection
from .refine import refine_pipeline, select_reference, rotation_head
from .tracker import IOU_GATE, NO_MATCH, associate
from .train import Model

MODES = ("temporal", "mean")


def _predict_one(model: Model, sample: Sample, det: Detection, link):
    rot = None if link else rotation_head(sample.feature, model.rotation)
    ref = select_reference(det, link, model.mean_shapes, rot)
    return refine_pipeline(sample.feature, ref, sample.camera, model.stages)


def infer_clip(model: Model, frames: Sequence[Sequence[Sample]], mode: str = "temporal",
               gate: float = IOU_GATE, threads: int = 1) -> List[List[Detection]]:
    """Predict a mesh for every sample of every frame.

    Detections are the samples' boxes (score 1). In ``temporal`` mode a
    tracked object is refined from its previous-frame prediction; in
    ``mean`` mode every object starts from the rotated class mean. Shot
    transitions reset tracking. Objects within a frame are independent and
    may be refined in parallel; results keep input order.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    out: List[List[Detection]] = []
    prev: List[Detection] = []
    next_id = 0
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for t, samples in enumerate(frames):
            dets = [Detection(s.box, s.class_id, 1.0, frame_id=s.frame_id, instance_id=s.instance_id)
                    for s in samples]
            reset = t == 0 or not prev or any(s.shot_transition for s in samples)
            links = [NO_MATCH] * len(dets) if reset else associate(dets, prev, gate)
            if mode == "mean":
                refs = [NO_MATCH] * len(dets)
            else:
                refs = links
            args = list(zip(samples, dets, refs))
            if pool is None:
                meshes = [_predict_one(model, s, d, r) for s, d, r in args]
            else:
                meshes = list(pool.map(lambda a: _predict_one(model, *a), args))
            frame_out = []
            for d, link, m in zip(dets, links, meshes):
                if link is NO_MATCH:
                    tid, next_id = next_id, next_id + 1
                else:
                    tid = link.track_id
                frame_out.append(replace(d, mesh=m, track_id=tid))
            out.append(frame_out)
            prev = frame_out
    finally:
        if pool is not None:
            pool.shutdown()
    return out
