"""Frame-by-frame violation engine and the video-level report.

Per frame: confidence and area filters, instance grouping, trapezium
prediction, rider assignment, triple-riding flag, helmet status, tracking.
A video's violation counts are unique confirmed tracks whose violation
persisted for at least ``violation_min_frames`` frames.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .association import (AssociationMode, Instance, assign_headgear, assign_riders, extract_roi,
                          group_riders)
from .config import EngineConfig
from .geometry import Rect, Trapezium
from .records import HEADGEAR, FrameRecord
from .regressors import AmodalRegressor, EnclosingTrapeziumModel, amodal_fill
from .synth import min_area_trapezium
from .tracker import Tracker, TrackInput

log = logging.getLogger(__name__)

COLORS = {
    "helmet_violation": "red",
    "helmet": "green",
    "triple_riding": "orange",
    "instance": "yellow",
    "motorcycle": "purple",
    "rider": "blue",
}

COUNTING_RULE = ("unique confirmed tracks with the violation present in at least "
                 "violation_min_frames confirmed frames")


def _r(v: float) -> float:
    return round(float(v), 6)


def _box(r: Rect | None):
    return None if r is None else [_r(v) for v in r.as_list()]


@dataclass
class InstanceOutput:
    instance: int
    moto: Rect
    trapezium: Trapezium
    trapezium_source: str
    riders: list[Rect]
    headgear: list[str]
    triple: bool
    helmet_violation: bool
    roi: Rect | None
    track_id: int | None = None

    def to_dict(self) -> dict:
        return {
            "instance": self.instance,
            "moto": _box(self.moto),
            "trapezium": [_r(v) for v in self.trapezium.as_list()],
            "trapezium_source": self.trapezium_source,
            "riders": [_box(r) for r in self.riders],
            "headgear": list(self.headgear),
            "triple": self.triple,
            "helmet_violation": self.helmet_violation,
            "roi": _box(self.roi),
            "track_id": self.track_id,
        }


@dataclass
class FrameOutput:
    frame: int
    video: str
    instances: list[InstanceOutput] = field(default_factory=list)
    headgear: list[dict] = field(default_factory=list)  # {"cls", "box", "track_id"}
    unassigned_riders: list[Rect] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "frame": self.frame,
            "video": self.video,
            "instances": [i.to_dict() for i in self.instances],
            "headgear": [{"cls": h["cls"], "box": _box(h["box"]), "track_id": h["track_id"]}
                         for h in self.headgear],
            "unassigned_riders": [_box(r) for r in self.unassigned_riders],
        }


@dataclass
class ViolationReport:
    triple_riding_count: int
    helmet_violation_rider_count: int
    helmet_violation_instance_count: int
    evidence: dict
    settings: dict

    def to_dict(self) -> dict:
        return {
            "triple_riding_count": self.triple_riding_count,
            "helmet_violation_rider_count": self.helmet_violation_rider_count,
            "helmet_violation_instance_count": self.helmet_violation_instance_count,
            "evidence": self.evidence,
            "settings": self.settings,
        }

    def counts(self) -> dict:
        return {k: getattr(self, k) for k in
                ("triple_riding_count", "helmet_violation_rider_count", "helmet_violation_instance_count")}


def frame_spans(frames: Sequence[int]) -> list[list[int]]:
    spans: list[list[int]] = []
    for f in frames:
        if spans and f == spans[-1][1] + 1:
            spans[-1][1] = f
        else:
            spans.append([f, f])
    return spans


class ViolationEngine:
    """Stateful processor for one video stream."""

    def __init__(self, trap_model=None, cfg: EngineConfig | None = None,
                 amodal_model: AmodalRegressor | None = None):
        self.cfg = cfg or EngineConfig()
        self.trap_model = trap_model if trap_model is not None else EnclosingTrapeziumModel()
        self.amodal_model = amodal_model
        self.mode = AssociationMode(self.cfg.association_mode)
        self.tracker = Tracker(self.cfg.tracker_config())
        self.sources: set[str] = set()
        self.n_frames = 0
        self.n_fallback_trapezia = 0

    def _filter(self, rec: FrameRecord) -> FrameRecord:
        dets = [d for d in rec.detections
                if d.score >= self.cfg.score_threshold and d.box.area >= self.cfg.min_box_area]
        rec = FrameRecord(rec.frame, rec.w, rec.h, dets, rec.source, rec.instances, rec.video)
        if self.amodal_model is not None:
            rec = amodal_fill([rec], self.amodal_model, self.cfg.amodal_iou_threshold,
                              self.cfg.min_box_area)[0]
        return rec

    def analyse_frame(self, rec: FrameRecord) -> tuple[FrameOutput, list[Instance], list[Rect]]:
        """Per-frame stages without tracking."""
        cfg = self.cfg
        rec = self._filter(rec)
        motos = [d.box for d in rec.detections if d.cls == "motorcycle"]
        riders = [d.box for d in rec.detections if d.cls == "rider"]
        heads = [(d.box, d.cls) for d in rec.detections if d.cls in HEADGEAR]
        instances = group_riders(motos, riders)
        preds = self.trap_model.predict_many(
            [(inst.moto, [riders[j] for j in inst.candidates]) for inst in instances], rec.w, rec.h)
        sources = []
        for inst, pred in zip(instances, preds):
            if isinstance(pred, Exception):
                self.n_fallback_trapezia += 1
                log.debug("frame %s instance %s: %s; using enclosing trapezium", rec.frame, inst.id, pred)
                pred = min_area_trapezium([inst.moto, *(riders[j] for j in inst.candidates)])
                sources.append("fallback")
            else:
                sources.append(getattr(self.trap_model, "kind", "model"))
            inst.trapezium = pred
        max_d = cfg.euclidean_max_distance or None
        assign_riders(instances, riders, self.mode, max_distance=max_d,
                      rect_from_trapezium=cfg.rect_instance_source == "trapezium")
        out = FrameOutput(rec.frame, rec.video)
        assigned = set()
        for inst, src in zip(instances, sources):
            roi = extract_roi(inst, riders, rec.w, rec.h, cfg.roi_pad)
            # The helmet detector only sees the instance crop.
            in_roi = [] if roi is None else [h for h in heads if _center_in(h[0], roi)]
            assign_headgear(inst, riders, in_roi, cfg.headgear_iou_gate)
            assigned.update(inst.assigned)
            out.instances.append(InstanceOutput(
                inst.id, inst.moto, inst.trapezium, src, [riders[j] for j in inst.assigned],
                list(inst.headgear), inst.triple_flag, inst.helmet_violation, roi))
        out.headgear = [{"cls": c, "box": b, "track_id": None} for b, c in heads]
        out.unassigned_riders = [r for j, r in enumerate(riders) if j not in assigned]
        return out, instances, riders

    def process_frame(self, rec: FrameRecord) -> FrameOutput:
        out, _, _ = self.analyse_frame(rec)
        if rec.source:
            self.sources.add(rec.source)
        self.n_frames += 1
        inst_in = [TrackInput(i.moto, {"violation": i.triple, "helmet_violation": i.helmet_violation},
                              i.trapezium) for i in out.instances]
        head_in = {c: [] for c in HEADGEAR}
        head_idx = {c: [] for c in HEADGEAR}
        for k, h in enumerate(out.headgear):
            head_in[h["cls"]].append(TrackInput(h["box"], {"violation": h["cls"] == "no_helmet"}))
            head_idx[h["cls"]].append(k)
        results = self.tracker.step(rec.frame, {"instance": inst_in, **head_in})
        for res in results:
            if res.cls == "instance":
                out.instances[res.det_index].track_id = res.track_id
            else:
                out.headgear[head_idx[res.cls][res.det_index]]["track_id"] = res.track_id
        return out

    def run(self, records: Iterable[FrameRecord]) -> list[FrameOutput]:
        return [self.process_frame(r) for r in records]

    def finalize(self) -> ViolationReport:
        need = self.cfg.violation_min_frames
        tracks = [t for t in self.tracker.all_tracks() if t.ever_confirmed]
        triple = [t for t in tracks if t.cls == "instance" and t.violation_frames >= need]
        helmet_inst = [t for t in tracks if t.cls == "instance" and t.helmet_violation_frames >= need]
        no_helmet = [t for t in tracks if t.cls == "no_helmet" and t.violation_frames >= need]
        evidence = {
            "triple_riding": [{"track_id": t.track_id, "frames": frame_spans(t.evidence)} for t in triple],
            "helmet_violation_rider": [{"track_id": t.track_id, "frames": frame_spans(t.evidence)}
                                       for t in no_helmet],
            "helmet_violation_instance": [{"track_id": t.track_id, "frames": frame_spans(t.helmet_evidence)}
                                          for t in helmet_inst],
        }
        settings = {
            "counting_rule": COUNTING_RULE,
            "association_mode": self.mode.value,
            "rect_instance_source": self.cfg.rect_instance_source,
            "min_hits": self.cfg.min_hits,
            "max_age": self.cfg.max_age,
            "iou_gate": self.cfg.iou_gate,
            "violation_min_frames": need,
            "score_threshold": self.cfg.score_threshold,
            "frames": self.n_frames,
            "confirmed_tracks": {p: sum(t.cls == p for t in tracks) for p in ("instance", "helmet", "no_helmet")},
            "detector_sources": sorted(self.sources),
            "trapezium_fallbacks": self.n_fallback_trapezia,
        }
        return ViolationReport(len(triple), len(no_helmet), len(helmet_inst), evidence, settings)


def _center_in(r: Rect, roi: Rect) -> bool:
    cx, cy = r.center
    return roi.x1 <= cx <= roi.x2 and roi.y1 <= cy <= roi.y2


def process_video(records: Iterable[FrameRecord], trap_model=None, cfg: EngineConfig | None = None,
                  amodal_model=None) -> tuple[list[FrameOutput], ViolationReport]:
    engine = ViolationEngine(trap_model, cfg, amodal_model)
    outputs = engine.run(records)
    return outputs, engine.finalize()


def emit_overlay(outputs: Iterable[FrameOutput]) -> list[dict]:
    """Render-ready shape records per frame, coloured by role and violation."""
    records = []
    for out in outputs:
        shapes = []
        for inst in out.instances:
            shapes.append({"kind": "trapezium", "points": [_r(v) for v in inst.trapezium.as_list()],
                           "color": COLORS["triple_riding"] if inst.triple else COLORS["instance"],
                           "track_id": inst.track_id, "label": "triple_riding" if inst.triple else "instance"})
            shapes.append({"kind": "rect", "box": _box(inst.moto), "color": COLORS["motorcycle"],
                           "track_id": inst.track_id, "label": "motorcycle"})
            for r in inst.riders:
                shapes.append({"kind": "rect", "box": _box(r), "color": COLORS["rider"],
                               "track_id": None, "label": "rider"})
        for h in out.headgear:
            key = "helmet_violation" if h["cls"] == "no_helmet" else "helmet"
            shapes.append({"kind": "rect", "box": _box(h["box"]), "color": COLORS[key],
                           "track_id": h["track_id"], "label": h["cls"]})
        records.append({"frame": out.frame, "video": out.video, "shapes": shapes})
    return records


def dumps_overlay(records: Iterable[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def parse_overlay(text: str) -> list[dict]:
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def write_report(path, report: ViolationReport) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
