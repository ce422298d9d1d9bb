import json

import pytest

from riderwatch.config import EngineConfig
from riderwatch.geometry import Rect
from riderwatch.pipeline import (COLORS, ViolationEngine, dumps_overlay, emit_overlay, frame_spans, parse_overlay,
                                 process_video)
from riderwatch.records import Detection, FrameRecord
from riderwatch.synth import SceneConfig, generate, ground_truth_counts, rider_from_head

W, H = 1920, 1080


def _bike(x0, classes, y0=500.0):
    """Motorcycle at ``x0`` with one rider per headgear class, heads 40 px apart."""
    moto = Rect(x0, y0, x0 + 260, y0 + 180)
    dets = [Detection("motorcycle", moto, 0.9)]
    for k, cls in enumerate(classes):
        head = Rect(x0 + 70 + 40 * k, y0 - 150, x0 + 106 + 40 * k, y0 - 114)
        dets.append(Detection("rider", rider_from_head(head), 0.9))
        dets.append(Detection(cls, head, 0.9))
    return dets


def _video(bikes, n_frames=10, speed=2.0):
    frames = []
    for f in range(n_frames):
        dets = []
        for x0, classes in bikes:
            dets.extend(_bike(x0 + speed * f, classes))
        frames.append(FrameRecord(f, W, H, dets, "test"))
    return frames


def test_triple_instance_is_flagged_and_tracked():
    outs, report = process_video(_video([(300, ["helmet"] * 3)]))
    assert all(len(o.instances) == 1 and o.instances[0].triple for o in outs)
    ids = {o.instances[0].track_id for o in outs}
    assert len(ids) == 1
    assert report.triple_riding_count == 1
    assert report.evidence["triple_riding"][0]["frames"] == [[2, 9]]


def test_finalize_matches_constructed_ground_truth():
    bikes = [(100, ["no_helmet", "helmet", "helmet"]),
             (700, ["helmet", "helmet", "helmet"]),
             (1300, ["no_helmet", "no_helmet"])]
    _, report = process_video(_video(bikes, n_frames=12))
    assert report.counts() == {"triple_riding_count": 2, "helmet_violation_rider_count": 3,
                               "helmet_violation_instance_count": 2}


def test_empty_frames_age_tracks():
    eng = ViolationEngine()
    eng.run(_video([(300, ["helmet", "helmet"])], n_frames=3))
    out = eng.process_frame(FrameRecord(3, W, H, []))
    assert out.instances == [] and out.headgear == []
    assert all(t.misses == 1 for t in eng.tracker.pools["instance"])


def test_low_score_and_small_boxes_ignored():
    dets = _bike(300, ["helmet"] * 3)
    weak = [Detection(d.cls, d.box, 0.2) if d.cls == "rider" else d for d in dets]
    out = ViolationEngine().process_frame(FrameRecord(0, W, H, weak))
    assert out.instances[0].riders == [] and not out.instances[0].triple
    tiny = FrameRecord(0, W, H, [Detection("motorcycle", Rect(0, 0, 20, 20))])
    assert ViolationEngine().process_frame(tiny).instances == []


def test_no_violations_give_zero_report():
    _, report = process_video(_video([(300, ["helmet", "helmet"])]))
    assert report.counts() == {"triple_riding_count": 0, "helmet_violation_rider_count": 0,
                               "helmet_violation_instance_count": 0}
    _, empty = process_video([])
    assert empty.counts() == report.counts()


def test_short_violation_is_not_counted():
    frames = _video([(300, ["helmet"] * 3)], n_frames=4)
    _, report = process_video(frames, cfg=EngineConfig(violation_min_frames=3))
    assert report.triple_riding_count == 0  # confirmed at frame 2, two flagged frames
    _, loose = process_video(frames, cfg=EngineConfig(violation_min_frames=1, min_hits=1))
    assert loose.triple_riding_count == 1


def test_run_is_deterministic():
    s = generate(SceneConfig(n_instances=3, n_frames=30, jitter=1.5, false_positive_rate=0.3,
                             false_negative_rate=0.05, seed=5))
    a_out, a_rep = process_video(s.detections)
    b_out, b_rep = process_video(s.detections)
    assert json.dumps(a_rep.to_dict(), sort_keys=True) == json.dumps(b_rep.to_dict(), sort_keys=True)
    assert dumps_overlay(emit_overlay(a_out)) == dumps_overlay(emit_overlay(b_out))


def test_overlay_colours_and_round_trip():
    outs, _ = process_video(_video([(300, ["no_helmet", "helmet", "helmet"])], n_frames=1))
    (rec,) = emit_overlay(outs)
    traps = [s for s in rec["shapes"] if s["kind"] == "trapezium"]
    assert [s["color"] for s in traps] == [COLORS["triple_riding"]] == ["orange"]
    colors = sorted(s["color"] for s in rec["shapes"] if s["kind"] == "rect")
    assert colors == sorted(["purple", "blue", "blue", "blue", "red", "green", "green"])
    empty = emit_overlay(process_video([FrameRecord(0, W, H, [])])[0])
    assert empty == [{"frame": 0, "video": "", "shapes": []}]
    text = dumps_overlay(emit_overlay(outs))
    assert parse_overlay(text) == emit_overlay(outs)
    assert dumps_overlay(parse_overlay(text)) == text


def test_counts_bounded_by_confirmed_tracks_and_tracking_off_is_upper_bound():
    for seed in range(4):
        s = generate(SceneConfig(n_instances=4, n_frames=40, jitter=2.0, false_positive_rate=0.5,
                                 false_negative_rate=0.1, seed=seed))
        _, rep = process_video(s.detections)
        conf = rep.settings["confirmed_tracks"]
        assert rep.triple_riding_count <= conf["instance"]
        assert rep.helmet_violation_instance_count <= conf["instance"]
        assert rep.helmet_violation_rider_count <= conf["no_helmet"]
        _, raw = process_video(s.detections, cfg=EngineConfig(violation_min_frames=1, min_hits=1))
        for k, v in rep.counts().items():
            assert v <= raw.counts()[k]


def test_noiseless_video_matches_generator_counts():
    for seed in range(3):
        s = generate(SceneConfig(n_instances=3, n_frames=30, no_helmet_prob=0.4, seed=seed))
        _, rep = process_video(s.detections)
        assert rep.counts() == ground_truth_counts(s.ground_truth)


def test_frame_spans():
    assert frame_spans([]) == []
    assert frame_spans([1, 2, 3, 7, 9, 10]) == [[1, 3], [7, 7], [9, 10]]


def test_report_settings_describe_rule():
    _, rep = process_video(_video([(300, ["helmet"])], n_frames=2))
    assert rep.settings["violation_min_frames"] == 3
    assert rep.settings["detector_sources"] == ["test"]
    assert "violation_min_frames" in rep.settings["counting_rule"]


def test_frames_must_increase():
    eng = ViolationEngine()
    eng.process_frame(FrameRecord(5, W, H, []))
    with pytest.raises(ValueError):
        eng.process_frame(FrameRecord(5, W, H, []))
