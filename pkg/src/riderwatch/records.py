"""Frame records and their line-delimited JSON encoding.

A detection stream line looks like::

    {"frame": 0, "w": 1920, "h": 1080,
     "detections": [{"cls": "rider", "box": [x1, y1, x2, y2], "score": 0.9}]}

Ground-truth lines add ``id``/``instance_id``/``rider_id`` on detections and an
``instances`` list with the label trapezium and violation flags.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .geometry import InvalidTrapeziumError, Rect, Trapezium

CLASSES = ("motorcycle", "rider", "helmet", "no_helmet")
HEADGEAR = ("helmet", "no_helmet")


class RecordError(ValueError):
    """A malformed input line; ``line`` is 1-based."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class Detection:
    cls: str
    box: Rect
    score: float = 1.0
    obj_id: int | None = None
    instance_id: int | None = None
    rider_id: int | None = None

    def to_dict(self) -> dict:
        d = {"cls": self.cls, "box": _fmt_box(self.box), "score": self.score}
        if self.obj_id is not None:
            d["id"] = self.obj_id
        if self.instance_id is not None:
            d["instance_id"] = self.instance_id
        if self.rider_id is not None:
            d["rider_id"] = self.rider_id
        return d


@dataclass(frozen=True)
class InstanceLabel:
    instance_id: int
    trapezium: Trapezium | None  # None when the stored label is not a valid trapezium
    n_riders: int
    triple: bool
    no_helmet_riders: int

    @property
    def helmet_violation(self) -> bool:
        return self.no_helmet_riders > 0

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "trapezium": [float(v) for v in self.trapezium.as_list()] if self.trapezium else None,
            "n_riders": self.n_riders,
            "triple": self.triple,
            "no_helmet_riders": self.no_helmet_riders,
        }


@dataclass
class FrameRecord:
    frame: int
    w: int
    h: int
    detections: list[Detection] = field(default_factory=list)
    source: str = ""
    instances: list[InstanceLabel] = field(default_factory=list)
    video: str = ""

    def of_class(self, *classes: str) -> list[Detection]:
        return [d for d in self.detections if d.cls in classes]

    def to_dict(self) -> dict:
        d = {"frame": self.frame, "w": self.w, "h": self.h,
             "detections": [det.to_dict() for det in self.detections]}
        if self.source:
            d["source"] = self.source
        if self.video:
            d["video"] = self.video
        if self.instances:
            d["instances"] = [inst.to_dict() for inst in self.instances]
        return d


def _fmt_box(r: Rect) -> list[float]:
    return [float(v) for v in r.as_list()]


def _parse_detection(d: dict, w: int, h: int) -> Detection | None:
    cls = d.get("cls")
    if cls not in CLASSES:
        raise ValueError(f"unknown class {cls!r}")
    box = d.get("box")
    if not isinstance(box, list) or len(box) != 4:
        raise ValueError("box must be a list of 4 numbers")
    x1, y1, x2, y2 = (float(v) for v in box)
    score = float(d.get("score", 1.0))
    if not 0.0 <= score <= 1.0:
        raise ValueError(f"score {score} outside [0, 1]")
    if not (x1 < x2 and y1 < y2):
        raise ValueError(f"empty box {box}")
    rect = Rect(x1, y1, x2, y2).clip_to(w, h)
    if rect is None:
        return None
    return Detection(cls, rect, score, d.get("id"), d.get("instance_id"), d.get("rider_id"))


def _parse_trapezium(values) -> Trapezium | None:
    if values is None:
        return None
    try:
        return Trapezium.from_list(values)
    except InvalidTrapeziumError:
        return None


def parse_record(obj: dict) -> FrameRecord:
    if not isinstance(obj, dict):
        raise ValueError("record must be an object")
    try:
        frame = int(obj["frame"])
        w, h = int(obj["w"]), int(obj["h"])
        raw = obj["detections"]
    except KeyError as e:
        raise ValueError(f"missing field {e.args[0]!r}") from None
    if w <= 0 or h <= 0:
        raise ValueError("frame dimensions must be positive")
    if not isinstance(raw, list):
        raise ValueError("detections must be a list")
    dets = [det for det in (_parse_detection(d, w, h) for d in raw) if det is not None]
    instances = [
        InstanceLabel(int(i["instance_id"]), _parse_trapezium(i.get("trapezium")), int(i["n_riders"]),
                      bool(i["triple"]), int(i["no_helmet_riders"]))
        for i in obj.get("instances", [])
    ]
    return FrameRecord(frame, w, h, dets, str(obj.get("source", "")), instances, str(obj.get("video", "")))


def iter_records(lines: Iterable[str], errors: list | None = None) -> Iterator[FrameRecord]:
    """Parse JSONL lines. Bad lines raise, or are collected into ``errors`` and skipped."""
    last: tuple[str, int] | None = None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = parse_record(json.loads(line))
            if last is not None and last[0] == rec.video and rec.frame <= last[1]:
                raise ValueError(f"frame {rec.frame} does not follow frame {last[1]}")
        except (ValueError, TypeError) as e:
            err = RecordError(str(e), lineno)
            if errors is None:
                raise err from None
            errors.append(err)
            continue
        last = (rec.video, rec.frame)
        yield rec


def read_records(path, errors: list | None = None) -> list[FrameRecord]:
    with open(path) as fh:
        return list(iter_records(fh, errors))


def dumps_record(rec: FrameRecord) -> str:
    return json.dumps(rec.to_dict(), sort_keys=True)


def write_records(path, records: Iterable[FrameRecord]) -> None:
    Path(path).write_text("".join(dumps_record(r) + "\n" for r in records))


def split_videos(records: list[FrameRecord]) -> list[list[FrameRecord]]:
    """Group a concatenated stream into consecutive runs of the same ``video`` key."""
    videos: list[list[FrameRecord]] = []
    for rec in records:
        if not videos or rec.video != videos[-1][-1].video:
            videos.append([])
        videos[-1].append(rec)
    return videos
