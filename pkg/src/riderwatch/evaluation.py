"""Violation-identification scoring and count accuracy.

Both granularities are available: frame-level matching of violating shapes
against ground truth, and track-level matching of counted tracks against
ground-truth object ids.
"""
from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

from .association import AssociationMode
from .config import EngineConfig
from .geometry import shape_iou
from .pipeline import FrameOutput, ViolationReport, process_video
from .records import FrameRecord, split_videos
from .synth import ground_truth_counts

CATEGORIES = ("triple_riding", "helmet_violation_rider", "helmet_violation_instance")
COUNT_KEYS = {
    "triple_riding": "triple_riding_count",
    "helmet_violation_rider": "helmet_violation_rider_count",
    "helmet_violation_instance": "helmet_violation_instance_count",
}


@dataclass
class MatchResult:
    tp: int
    fp: int
    fn: int
    pairs: list[tuple[int, int, float]] = field(default_factory=list)  # (pred, gt, iou)

    def __add__(self, other: "MatchResult") -> "MatchResult":
        return MatchResult(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, [])


def match_violations(preds: Sequence[tuple], gts: Sequence[tuple], iou_threshold: float = 0.5) -> MatchResult:
    """Greedy one-to-one matching by descending IOU.

    Items are ``(shape, label)`` where shape is a Rect or Trapezium. A pair
    can match only when labels agree and IOU reaches ``iou_threshold``.
    """
    cands = []
    for i, (ps, pl) in enumerate(preds):
        for j, (gs, gl) in enumerate(gts):
            if pl != gl:
                continue
            iou = shape_iou(ps, gs)
            if iou >= iou_threshold and iou > 0.0:
                cands.append((-iou, i, j))
    cands.sort()
    used_p, used_g, pairs = set(), set(), []
    for neg, i, j in cands:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        pairs.append((i, j, -neg))
    tp = len(pairs)
    return MatchResult(tp, len(preds) - tp, len(gts) - tp, pairs)


class PRF(NamedTuple):
    precision: float
    recall: float
    f_score: float
    precision_defined: bool = True
    recall_defined: bool = True


def prf(tp: int, fp: int, fn: int) -> PRF:
    """Precision, recall and their harmonic mean; undefined ratios are 0 and flagged."""
    p_ok, r_ok = tp + fp > 0, tp + fn > 0
    p = tp / (tp + fp) if p_ok else 0.0
    r = tp / (tp + fn) if r_ok else 0.0
    return PRF(p, r, f_from_pr(p, r), p_ok, r_ok)


def f_from_pr(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2.0 * p * r / (p + r)


def _counts(report) -> dict:
    if isinstance(report, ViolationReport):
        return report.counts()
    return {k: int(report[k]) for k in COUNT_KEYS.values()}


def count_accuracy(report, gt_report) -> dict:
    """Per-category count differences between two reports (or count dicts)."""
    pred, gt = _counts(report), _counts(gt_report)
    out = {}
    for cat, key in COUNT_KEYS.items():
        err = pred[key] - gt[key]
        rel = abs(err) / gt[key] if gt[key] else (0.0 if err == 0 else None)
        out[cat] = {"pred": pred[key], "gt": gt[key], "error": err, "abs_error": abs(err), "rel_error": rel}
    return out


def missing_rider_rate(gt_frames: Sequence[FrameRecord], det_frames: Sequence[FrameRecord],
                       iou_threshold: float = 0.5) -> float:
    """Fraction of ground-truth rider boxes left unmatched by detected riders."""
    total = missed = 0
    for g, d in zip(gt_frames, det_frames):
        gts = [(x.box, "rider") for x in g.of_class("rider")]
        preds = [(x.box, "rider") for x in d.of_class("rider")]
        m = match_violations(preds, gts, iou_threshold)
        total += len(gts)
        missed += m.fn
    return missed / total if total else 0.0


def frame_violations(out: FrameOutput) -> dict[str, list[tuple]]:
    """Violating shapes of one processed frame, keyed by category."""
    res = {c: [] for c in CATEGORIES}
    for inst in out.instances:
        if inst.triple:
            res["triple_riding"].append((inst.moto, "triple_riding"))
        if inst.helmet_violation:
            res["helmet_violation_instance"].append((inst.moto, "helmet_violation_instance"))
        for r, status in zip(inst.riders, inst.headgear):
            if status == "no_helmet":
                res["helmet_violation_rider"].append((r, "helmet_violation_rider"))
    return res


def gt_violations(rec: FrameRecord) -> dict[str, list[tuple]]:
    res = {c: [] for c in CATEGORIES}
    motos = {d.instance_id: d.box for d in rec.of_class("motorcycle")}
    riders = {d.obj_id: d.box for d in rec.of_class("rider")}
    for lab in rec.instances:
        if lab.triple:
            res["triple_riding"].append((motos[lab.instance_id], "triple_riding"))
        if lab.helmet_violation:
            res["helmet_violation_instance"].append((motos[lab.instance_id], "helmet_violation_instance"))
    for d in rec.of_class("no_helmet"):
        if d.rider_id in riders:
            res["helmet_violation_rider"].append((riders[d.rider_id], "helmet_violation_rider"))
    return res


def frame_level(gt_frames: Sequence[FrameRecord], outputs: Sequence[FrameOutput],
                iou_threshold: float = 0.5) -> dict[str, MatchResult]:
    totals = {c: MatchResult(0, 0, 0) for c in CATEGORIES}
    by_frame = {o.frame: o for o in outputs}
    for g in gt_frames:
        out = by_frame.get(g.frame)
        pv = frame_violations(out) if out else {c: [] for c in CATEGORIES}
        gv = gt_violations(g)
        for c in CATEGORIES:
            totals[c] = totals[c] + match_violations(pv[c], gv[c], iou_threshold)
    return totals


def _vote(gt_frames, outputs, iou_threshold) -> dict[int, int]:
    """Ground-truth object id behind each track id, by majority over frames."""
    votes: dict[int, Counter] = defaultdict(Counter)
    by_frame = {o.frame: o for o in outputs}
    for g in gt_frames:
        out = by_frame.get(g.frame)
        if out is None:
            continue
        motos = [(d.box, d.instance_id) for d in g.of_class("motorcycle")]
        heads = [(d.box, d.obj_id) for d in g.of_class("helmet", "no_helmet")]
        tracked = [(i.moto, i.track_id, motos) for i in out.instances]
        tracked += [(h["box"], h["track_id"], heads) for h in out.headgear]
        for box, tid, pool in tracked:
            if tid is None or not pool:
                continue
            iou, oid = max((shape_iou(box, b), oid) for b, oid in pool)
            if iou >= iou_threshold:
                votes[tid][oid] += 1
    return {tid: min(c.items(), key=lambda kv: (-kv[1], kv[0]))[0] for tid, c in votes.items()}


def track_level(gt_frames: Sequence[FrameRecord], outputs: Sequence[FrameOutput], report: ViolationReport,
                iou_threshold: float = 0.5) -> dict[str, MatchResult]:
    """Counted tracks against ground-truth violating objects of one video."""
    owner = _vote(gt_frames, outputs, iou_threshold)
    gt_ids = {c: set() for c in CATEGORIES}
    for rec in gt_frames:
        for lab in rec.instances:
            if lab.triple:
                gt_ids["triple_riding"].add(lab.instance_id)
            if lab.helmet_violation:
                gt_ids["helmet_violation_instance"].add(lab.instance_id)
        gt_ids["helmet_violation_rider"].update(d.obj_id for d in rec.of_class("no_helmet"))
    out = {}
    for c in CATEGORIES:
        hit = set()
        for ev in report.evidence[c]:
            oid = owner.get(ev["track_id"])
            if oid in gt_ids[c] and oid not in hit:
                hit.add(oid)
        n_pred = len(report.evidence[c])
        out[c] = MatchResult(len(hit), n_pred - len(hit), len(gt_ids[c]) - len(hit))
    return out


def _score_block(results: dict[str, MatchResult]) -> dict:
    block = {}
    for c, m in results.items():
        s = prf(m.tp, m.fp, m.fn)
        block[c] = {"tp": m.tp, "fp": m.fp, "fn": m.fn, "precision": s.precision, "recall": s.recall,
                    "f_score": s.f_score, "precision_defined": s.precision_defined,
                    "recall_defined": s.recall_defined}
    return block


def evaluate(gt_frames: Sequence[FrameRecord], det_frames: Sequence[FrameRecord], trap_model=None,
             cfg: EngineConfig | None = None, amodal_model=None) -> dict:
    """Scores document for one association mode over every video in the streams."""
    cfg = cfg or EngineConfig()
    thr = cfg.match_iou_threshold
    frame_tot = {c: MatchResult(0, 0, 0) for c in CATEGORIES}
    track_tot = {c: MatchResult(0, 0, 0) for c in CATEGORIES}
    videos = {}
    gt_by_video = {v[0].video: v for v in split_videos(list(gt_frames))}
    for dets in split_videos(list(det_frames)):
        key = dets[0].video
        gts = gt_by_video.get(key, [])
        outputs, report = process_video(dets, trap_model, cfg, amodal_model)
        for c, m in frame_level(gts, outputs, thr).items():
            frame_tot[c] = frame_tot[c] + m
        for c, m in track_level(gts, outputs, report, thr).items():
            track_tot[c] = track_tot[c] + m
        videos[key] = {"pred": report.counts(), "gt": ground_truth_counts(gts)}
    return {
        "mode": cfg.association_mode,
        "iou_threshold": thr,
        "tracker": cfg.tracker_config().__dict__,
        "frame_level": _score_block(frame_tot),
        "track_level": _score_block(track_tot),
        "videos": videos,
    }


def evaluate_modes(gt_frames, det_frames, trap_model=None, cfg: EngineConfig | None = None,
                   modes: Sequence[str] | None = None, amodal_model=None) -> dict[str, dict]:
    """Ablation over association modes with everything else fixed."""
    cfg = cfg or EngineConfig()
    modes = modes or [m.value for m in AssociationMode]
    out = {}
    for m in modes:
        mcfg = EngineConfig(**{**cfg.as_dict(), "association_mode": AssociationMode(m).value})
        out[AssociationMode(m).value] = evaluate(gt_frames, det_frames, trap_model, mcfg, amodal_model)
    return out
