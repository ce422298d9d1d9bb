"""Synthetic driving scenes with exact labels, and the minimum-area trapezium fit.

The label trapezium of a driving instance is the minimum-area trapezium with
vertical sides at the instance's horizontal extent that contains every box
corner. Its top and bottom edges are independent two-variable linear programs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .geometry import Rect, Trapezium
from .records import Detection, FrameRecord, InstanceLabel


class GenerationError(ValueError):
    """The requested scene does not fit in the frame."""


def _support_line(xs: np.ndarray, ys: np.ndarray, xm: float) -> tuple[float, float]:
    """Highest value at ``xm`` of a line y = a + b (x - xm) with y(xs) <= ys.

    Vertices of the feasible region are lines through two constraint points;
    the horizontal line through the lowest point covers single-active-constraint
    optima. Ties prefer the flattest line. Returns (a, b).
    """
    scale = max(1.0, float(np.max(np.abs(ys))), float(np.max(np.abs(xs))))
    tol = 1e-9 * scale
    cand_a = [float(ys.min())]
    cand_b = [0.0]
    i, j = np.triu_indices(len(xs), k=1)
    dx = xs[j] - xs[i]
    ok = np.abs(dx) > 1e-12
    i, j, dx = i[ok], j[ok], dx[ok]
    if len(i):
        b = (ys[j] - ys[i]) / dx
        a = ys[i] + b * (xm - xs[i])
        line_at = a[:, None] + b[:, None] * (xs[None, :] - xm)
        feasible = np.all(line_at <= ys[None, :] + tol, axis=1)
        cand_a.extend(a[feasible].tolist())
        cand_b.extend(b[feasible].tolist())
    cand_a = np.asarray(cand_a)
    cand_b = np.asarray(cand_b)
    best = cand_a.max()
    near = np.flatnonzero(cand_a >= best - tol)
    k = near[np.lexsort((cand_b[near], np.abs(cand_b[near])))[0]]
    return float(cand_a[k]), float(cand_b[k])


def min_area_trapezium(boxes: Sequence[Rect]) -> Trapezium:
    if not boxes:
        raise ValueError("need at least one box")
    left = min(b.x1 for b in boxes)
    right = max(b.x2 for b in boxes)
    xm = (left + right) / 2.0
    xs = np.array([x for b in boxes for x in (b.x1, b.x2)], dtype=np.float64)
    tops = np.array([b.y1 for b in boxes for _ in (0, 1)], dtype=np.float64)
    bottoms = np.array([b.y2 for b in boxes for _ in (0, 1)], dtype=np.float64)
    a_top, b_top = _support_line(xs, tops, xm)
    # Bottom edge: mirror y so "below every bottom corner" becomes an upper-support problem.
    a_bot, b_bot = _support_line(xs, -bottoms, xm)
    a_bot, b_bot = -a_bot, -b_bot
    return Trapezium.from_sides(
        left, right,
        a_top + b_top * (left - xm), a_top + b_top * (right - xm),
        a_bot + b_bot * (right - xm), a_bot + b_bot * (left - xm),
    )


@dataclass
class SceneConfig:
    frame_w: int = 1920
    frame_h: int = 1080
    n_instances: int = 3
    rider_count_probs: tuple = (0.2, 0.45, 0.2, 0.1, 0.05)  # P(1 rider) .. P(5 riders)
    no_helmet_prob: float = 0.3
    occlusion_prob: float = 0.0
    jitter: float = 0.0  # px stddev per coordinate
    false_positive_rate: float = 0.0  # expected spurious boxes per frame
    false_negative_rate: float = 0.0  # per box per frame
    velocity_range: tuple = (-3.0, 3.0)  # px/frame, both axes
    n_frames: int = 1
    seed: int = 0
    scale_range: tuple = (0.9, 1.5)
    crowding: float = 0.0  # 0: instances never touch; 1: heavy horizontal overlap
    overlap_range: tuple = (0.2, 0.45)  # neighbour overlap at full crowding, fraction of the narrower width
    rider_noise: float = 0.05  # uniform rider-box jitter around the head-box rule, fraction of size
    video: str = ""

    def __post_init__(self):
        probs = [self.no_helmet_prob, self.occlusion_prob, self.false_negative_rate, self.crowding]
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValueError("probabilities must lie in [0, 1]")
        if len(self.rider_count_probs) != 5 or any(p < 0 for p in self.rider_count_probs):
            raise ValueError("rider_count_probs needs 5 non-negative entries")
        if sum(self.rider_count_probs) <= 0:
            raise ValueError("rider_count_probs must not be all zero")
        if self.frame_w <= 0 or self.frame_h <= 0 or self.n_frames <= 0 or self.n_instances < 0:
            raise ValueError("dimensions and counts must be positive")
        if not 0.0 <= self.overlap_range[0] <= self.overlap_range[1] < 1.0:
            raise ValueError("overlap_range must be an ordered pair in [0, 1)")
        if self.jitter < 0 or self.false_positive_rate < 0:
            raise ValueError("noise levels must be non-negative")


def rider_from_head(head: Rect) -> Rect:
    """Geometric rule relating a head box to its rider's full box."""
    hw, hh = head.width, head.height
    return Rect(head.x1 - 1.5 * hw, head.y1, head.x2 + 1.5 * hw, head.y1 + 5.0 * hh)


@dataclass
class _Instance:
    moto: Rect
    riders: list[Rect]
    heads: list[Rect]
    head_cls: list[str]
    vx: float
    vy: float

    def boxes(self) -> list[Rect]:
        return [self.moto, *self.riders, *self.heads]

    def extent(self) -> Rect:
        return Rect.bounding(self.boxes())


def _shifted(r: Rect, dx: float, dy: float) -> Rect:
    return Rect(round(r.x1 + dx, 2), round(r.y1 + dy, 2), round(r.x2 + dx, 2), round(r.y2 + dy, 2))


def _make_instance(rng: np.random.Generator, cfg: SceneConfig, s: float) -> _Instance:
    """Instance laid out with its motorcycle's top-left corner at the origin.

    ``oblique`` in [-1, 1] models the viewing angle: an oblique view stretches
    the motorcycle horizontally and seats the riders over one end of it.
    """
    oblique = rng.uniform(-1.0, 1.0)
    mw = 150.0 * s * (1.0 + 1.6 * abs(oblique)) * rng.uniform(0.9, 1.1)
    mh = 170.0 * s * rng.uniform(0.9, 1.1)
    moto = Rect(0.0, 0.0, mw, mh)
    probs = np.asarray(cfg.rider_count_probs, dtype=np.float64)
    n = int(rng.choice(5, p=probs / probs.sum())) + 1
    hw = 36.0 * s * rng.uniform(0.95, 1.05)
    hh = 36.0 * s * rng.uniform(0.95, 1.05)
    step = hw * rng.uniform(0.7, 1.2) * np.sign(oblique or 1.0)
    # Riders further along an oblique view appear staggered vertically as well.
    lean = hh * rng.uniform(0.3, 1.0) * abs(oblique) * rng.choice((-1.0, 1.0))
    seat = mh * rng.uniform(0.5, 0.65)
    group_cx = mw * (0.5 - 0.36 * oblique)
    riders, heads, cls = [], [], []
    for i in range(n):
        cx = group_cx + (i - (n - 1) / 2.0) * step
        bottom = seat + (i - (n - 1) / 2.0) * lean
        head = Rect(cx - hw / 2.0, bottom - 5.0 * hh, cx + hw / 2.0, bottom - 4.0 * hh)
        ideal = rider_from_head(head)
        jit = rng.uniform(-cfg.rider_noise, cfg.rider_noise, size=4)
        rider = Rect(
            ideal.x1 + jit[0] * ideal.width, ideal.y1 + jit[1] * ideal.height,
            ideal.x2 + jit[2] * ideal.width, ideal.y2 + jit[3] * ideal.height,
        )
        riders.append(rider)
        heads.append(head)
        cls.append("no_helmet" if rng.random() < cfg.no_helmet_prob else "helmet")
    vx, vy = rng.uniform(*cfg.velocity_range, size=2)
    return _Instance(moto, riders, heads, cls, float(vx), float(vy))


def _layout(rng: np.random.Generator, cfg: SceneConfig) -> list[_Instance]:
    smin, smax = cfg.scale_range
    insts = [_make_instance(rng, cfg, float(rng.uniform(smin, smax))) for _ in range(cfg.n_instances)]
    span = cfg.n_frames - 1
    margin = 10.0
    # Vertical placement: nearer (larger) instances sit lower in the frame.
    placed_y = []
    for inst in insts:
        ext = inst.extent()
        depth = (inst.moto.height / 170.0 - smin) / max(smax - smin, 1e-9)
        bottom = cfg.frame_h * (0.6 + 0.3 * float(np.clip(depth, 0.0, 1.0))) + rng.uniform(-30.0, 30.0)
        dy = bottom - inst.moto.y2
        top_room = ext.y1 + dy - margin
        bot_room = cfg.frame_h - margin - (ext.y2 + dy)
        if top_room < 0 or bot_room < 0:
            dy = min(max(dy, margin - ext.y1), cfg.frame_h - margin - ext.y2)
            top_room = ext.y1 + dy - margin
            bot_room = cfg.frame_h - margin - (ext.y2 + dy)
            if top_room < 0 or bot_room < 0:
                raise GenerationError("instance taller than the frame")
        if span > 0:
            travel = inst.vy * span
            limit = bot_room if travel > 0 else top_room
            if abs(travel) > limit:
                inst.vy = float(np.sign(inst.vy) * limit / span)
        placed_y.append(dy)
    # Horizontal placement over swept extents; crowding lets neighbours overlap.
    widths = []
    for inst in insts:
        ext = inst.extent()
        widths.append(ext.width + abs(inst.vx) * span)
    gaps = []
    for k in range(1, len(insts)):
        base = rng.uniform(20.0, 80.0)
        overlap = rng.uniform(*cfg.overlap_range) * min(insts[k - 1].extent().width, insts[k].extent().width)
        gaps.append((1.0 - cfg.crowding) * base - cfg.crowding * overlap)
    needed = sum(widths) + sum(gaps) + 2 * margin
    if needed > cfg.frame_w:
        raise GenerationError(f"{cfg.n_instances} instances need {needed:.0f}px > frame width {cfg.frame_w}")
    x = margin + rng.uniform(0.0, cfg.frame_w - needed)
    order = rng.permutation(len(insts))
    insts = [insts[k] for k in order]
    placed_y = [placed_y[k] for k in order]
    widths = [widths[k] for k in order]
    out = []
    for k, inst in enumerate(insts):
        ext = inst.extent()
        sweep_left = min(0.0, inst.vx * span)
        dx = x - sweep_left - ext.x1
        dy = placed_y[k]
        out.append(_Instance(
            _shifted(inst.moto, dx, dy),
            [_shifted(r, dx, dy) for r in inst.riders],
            [_shifted(h, dx, dy) for h in inst.heads],
            inst.head_cls, inst.vx, inst.vy,
        ))
        x += widths[k] + (gaps[k] if k < len(gaps) else 0.0)
    return out


_LAYOUT_ATTEMPTS = 25


class SyntheticStreams(NamedTuple):
    ground_truth: list[FrameRecord]
    detections: list[FrameRecord]


def _jitter(rng, r: Rect, sigma: float, w: int, h: int) -> Rect | None:
    if sigma > 0:
        d = rng.normal(0.0, sigma, size=4)
        x1, y1, x2, y2 = r.x1 + d[0], r.y1 + d[1], r.x2 + d[2], r.y2 + d[3]
        if not (x1 < x2 and y1 < y2):
            return None
        r = Rect(round(x1, 2), round(y1, 2), round(x2, 2), round(y2, 2))
    return r.clip_to(w, h)


def generate(cfg: SceneConfig) -> SyntheticStreams:
    """Ground-truth and noised detection streams for one seeded scene/video.

    Detections keep the generator's object ids (``id``, ``instance_id``,
    ``rider_id``) so results can be scored; spurious boxes carry none. The
    engine never reads these fields.
    """
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    lay_rng = np.random.default_rng(seeds[0])
    noise_rng = np.random.default_rng(seeds[1])
    for attempt in range(_LAYOUT_ATTEMPTS):
        try:
            insts = _layout(lay_rng, cfg)
            break
        except GenerationError:
            if attempt == _LAYOUT_ATTEMPTS - 1:
                raise
    occluded = set()
    next_id = 0
    ids = []
    for i, inst in enumerate(insts):
        moto_id = next_id
        rider_ids = list(range(moto_id + 1, moto_id + 1 + len(inst.riders)))
        head_ids = list(range(rider_ids[-1] + 1, rider_ids[-1] + 1 + len(inst.heads)))
        next_id = head_ids[-1] + 1
        ids.append((moto_id, rider_ids, head_ids))
        for rid in rider_ids:
            if noise_rng.random() < cfg.occlusion_prob:
                occluded.add(rid)

    gt_frames, det_frames = [], []
    W, H = cfg.frame_w, cfg.frame_h
    for t in range(cfg.n_frames):
        gt_dets, dets, labels = [], [], []
        for i, inst in enumerate(insts):
            moto_id, rider_ids, head_ids = ids[i]
            dx, dy = inst.vx * t, inst.vy * t
            moto = _shifted(inst.moto, dx, dy)
            riders = [_shifted(r, dx, dy) for r in inst.riders]
            heads = [_shifted(hd, dx, dy) for hd in inst.heads]
            items = [Detection("motorcycle", moto, 1.0, moto_id, i)]
            items += [Detection("rider", r, 1.0, rid, i) for r, rid in zip(riders, rider_ids)]
            items += [Detection(c, hd, 1.0, hid, i, rid)
                      for hd, c, hid, rid in zip(heads, inst.head_cls, head_ids, rider_ids)]
            gt_dets.extend(items)
            n_no = sum(c == "no_helmet" for c in inst.head_cls)
            labels.append(InstanceLabel(i, min_area_trapezium([moto, *riders]), len(riders),
                                        len(riders) >= 3, n_no))
            for d in items:
                drop = noise_rng.random() < cfg.false_negative_rate
                score = round(float(noise_rng.uniform(0.5, 1.0)), 3)
                box = _jitter(noise_rng, d.box, cfg.jitter, W, H)
                if drop or box is None or (d.cls == "rider" and d.obj_id in occluded):
                    continue
                dets.append(Detection(d.cls, box, score, d.obj_id, d.instance_id, d.rider_id))
        n_fp = noise_rng.poisson(cfg.false_positive_rate) if cfg.false_positive_rate > 0 else 0
        for _ in range(n_fp):
            cls = ("motorcycle", "rider", "helmet", "no_helmet")[int(noise_rng.integers(4))]
            bw, bh = noise_rng.uniform(40.0, 200.0, size=2)
            x1 = noise_rng.uniform(0.0, W - bw)
            y1 = noise_rng.uniform(0.0, H - bh)
            box = Rect(round(x1, 2), round(y1, 2), round(x1 + bw, 2), round(y1 + bh, 2))
            dets.append(Detection(cls, box, round(float(noise_rng.uniform(0.25, 0.7)), 3)))
        gt_frames.append(FrameRecord(t, W, H, gt_dets, "synthetic", labels, cfg.video))
        det_frames.append(FrameRecord(t, W, H, dets, "synthetic", [], cfg.video))
    return SyntheticStreams(gt_frames, det_frames)


def generate_corpus(cfg: SceneConfig, n_scenes: int) -> SyntheticStreams:
    """Concatenate ``n_scenes`` independently seeded scenes, one ``video`` key each."""
    gt, det = [], []
    children = np.random.SeedSequence(cfg.seed).spawn(n_scenes)
    for k, child in enumerate(children):
        sub_seed = int(child.generate_state(1, dtype=np.uint64)[0])
        sub = SceneConfig(**{**cfg.__dict__, "seed": sub_seed, "video": f"{cfg.video or 'scene'}{k:05d}"})
        streams = generate(sub)
        gt.extend(streams.ground_truth)
        det.extend(streams.detections)
    return SyntheticStreams(gt, det)


def ground_truth_counts(gt_frames: Sequence[FrameRecord]) -> dict:
    """Unique violation counts of one video's ground truth."""
    triple, helmet_inst, no_helmet_riders = set(), set(), set()
    for rec in gt_frames:
        for lab in rec.instances:
            if lab.triple:
                triple.add(lab.instance_id)
            if lab.helmet_violation:
                helmet_inst.add(lab.instance_id)
        for d in rec.detections:
            if d.cls == "no_helmet":
                no_helmet_riders.add(d.obj_id)
    return {
        "triple_riding_count": len(triple),
        "helmet_violation_rider_count": len(no_helmet_riders),
        "helmet_violation_instance_count": len(helmet_inst),
    }
