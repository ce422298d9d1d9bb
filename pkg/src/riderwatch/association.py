"""Per-frame driving-instance assembly, rider counting and helmet status assignment."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import Rect, Trapezium, intersection_area, rect_iou, trap_rect_iou

TIE_EPS = 1e-12


class AssociationMode(str, Enum):
    EUCLIDEAN = "euclidean_baseline"
    MOTO_BOX = "moto_box_iou"
    RECT_INSTANCE = "rect_instance_iou"
    TRAPEZIUM = "trapezium_iou"


@dataclass
class Instance:
    """One motorcycle with its riders; rider fields are indices into the frame's rider list."""

    id: int
    moto: Rect
    candidates: list[int]
    trapezium: Trapezium | None = None
    assigned: list[int] = field(default_factory=list)
    headgear: list[str] = field(default_factory=list)  # parallel to ``assigned``
    helmet_violation: bool = False

    @property
    def triple_flag(self) -> bool:
        return flag_triple(self)


def group_riders(motos: Sequence[Rect], riders: Sequence[Rect]) -> list[Instance]:
    """One instance per motorcycle, with every rider box that intersects it as a candidate.

    Instance ids follow a canonical ordering of the motorcycle boxes, so
    they do not depend on detection order.
    """
    order = sorted(range(len(motos)), key=lambda k: motos[k].as_list())
    out = []
    for new_id, k in enumerate(order):
        m = motos[k]
        cands = [j for j, r in enumerate(riders) if intersection_area(m, r) > 0.0]
        out.append(Instance(new_id, m, cands))
    return out


def instance_rect(inst: Instance, riders: Sequence[Rect], from_trapezium: bool = True) -> Rect:
    """Axis-aligned instance box.

    By default this is the hull of the instance trapezium, i.e. the rectangle a
    box-shaped instance model trained on the same labels would produce. With
    ``from_trapezium=False`` (or no trapezium) it spans the motorcycle and
    every candidate rider, neighbours' riders included.
    """
    if from_trapezium and inst.trapezium is not None:
        return inst.trapezium.bounding_rect()
    return Rect.bounding([inst.moto, *(riders[j] for j in inst.candidates)])


def affinity(mode: AssociationMode, inst: Instance, rider: Rect, riders: Sequence[Rect],
             rect_from_trapezium: bool = True) -> float:
    if mode is AssociationMode.TRAPEZIUM:
        if inst.trapezium is None:
            raise ValueError(f"instance {inst.id} has no trapezium")
        return trap_rect_iou(inst.trapezium, rider)
    if mode is AssociationMode.RECT_INSTANCE:
        return rect_iou(instance_rect(inst, riders, rect_from_trapezium), rider)
    if mode is AssociationMode.MOTO_BOX:
        return rect_iou(inst.moto, rider)
    # Negated distance so that "maximise affinity" holds for every mode.
    (mx, my), (rx, ry) = inst.moto.center, rider.center
    return -math.hypot(mx - rx, my - ry)


def assign_riders(instances: list[Instance], riders: Sequence[Rect], mode: AssociationMode | str,
                  max_distance: float | None = None, rect_from_trapezium: bool = True) -> list[Instance]:
    """Give each rider to the candidate instance with the best affinity.

    Riders with zero IOU affinity, or beyond ``max_distance`` in the
    euclidean baseline, stay unassigned. Ties go to the larger rider/motorcycle
    intersection, then the lower instance id. Updates ``instances`` in place.
    """
    mode = AssociationMode(mode)
    for inst in instances:
        inst.assigned = []
    owners: dict[int, list[Instance]] = {}
    for inst in instances:
        for j in inst.candidates:
            owners.setdefault(j, []).append(inst)
    for j, cands in owners.items():
        r = riders[j]
        best, best_key = None, None
        for inst in cands:
            a = affinity(mode, inst, r, riders, rect_from_trapezium)
            if mode is AssociationMode.EUCLIDEAN:
                if max_distance is not None and -a > max_distance:
                    continue
            elif a <= 0.0:
                continue
            key = (a, intersection_area(inst.moto, r), -inst.id)
            if best is None or _better(key, best_key):
                best, best_key = inst, key
        if best is not None:
            best.assigned.append(j)
    for inst in instances:
        inst.assigned.sort()
    return instances


def _better(key, best) -> bool:
    if abs(key[0] - best[0]) > TIE_EPS:
        return key[0] > best[0]
    if abs(key[1] - best[1]) > TIE_EPS:
        return key[1] > best[1]
    return key[2] > best[2]


def flag_triple(inst: Instance) -> bool:
    return len(inst.assigned) >= 3


def extract_roi(inst: Instance, riders: Sequence[Rect], frame_w: float, frame_h: float,
                pad: float = 0.10) -> Rect | None:
    """Helmet-detector crop: motorcycle width, from the highest rider top to the motorcycle bottom.

    Each dimension grows by ``pad`` about the centre, then the box is clipped
    to the frame. None when no rider is assigned.
    """
    if not inst.assigned:
        return None
    top = min(inst.moto.y1, min(riders[j].y1 for j in inst.assigned))
    base = Rect(inst.moto.x1, top, inst.moto.x2, inst.moto.y2)
    cx, cy = base.center
    grown = Rect.from_center(cx, cy, base.width * (1.0 + pad), base.height * (1.0 + pad))
    return grown.clip_to(frame_w, frame_h)


def assign_headgear(inst: Instance, riders: Sequence[Rect], headgear: Sequence[tuple[Rect, str]],
                    iou_gate: float = 0.02) -> list[str]:
    """Status per assigned rider from head boxes: helmet, no_helmet or unknown.

    Head boxes and riders are paired one-to-one, maximising total IoU over
    pairs above ``iou_gate``. Sets ``inst.headgear`` and ``inst.helmet_violation``.
    """
    status = ["unknown"] * len(inst.assigned)
    if inst.assigned and headgear:
        iou = np.array([[rect_iou(box, riders[j]) for j in inst.assigned] for box, _ in headgear])
        weights = np.where(iou > iou_gate, iou, 0.0)
        rows, cols = linear_sum_assignment(weights, maximize=True)
        for r, c in zip(rows, cols):
            if weights[r, c] > 0.0:
                status[c] = headgear[r][1]
    inst.headgear = status
    inst.helmet_violation = "no_helmet" in status
    return status
