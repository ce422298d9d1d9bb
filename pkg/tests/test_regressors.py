import itertools

import numpy as np
import pytest

from riderwatch.geometry import InvalidTrapeziumError, Rect, Trapezium, rect_iou
from riderwatch.records import Detection, FrameRecord, InstanceLabel
from riderwatch.regressors import (AmodalRegressor, EnclosingTrapeziumModel, TrapeziumParams,
                                   TrapeziumRegressor, amodal_fill, augment_trapezium_trainset,
                                   build_amodal_pairs, build_trapezium_trainset, fit_params, pack_input,
                                   reconstruct)
from riderwatch.synth import SceneConfig, generate, generate_corpus, min_area_trapezium

W, H = 1920, 1080


def test_pack_input_padding():
    moto = Rect(100, 200, 300, 400)
    riders = [Rect(120, 100, 200, 350), Rect(180, 90, 260, 330)]
    v = pack_input(moto, riders, W, H)
    assert v.shape == (24,)
    assert np.count_nonzero(v[:12]) == 12
    assert not v[12:].any()
    assert np.allclose(v[:4], [100 / W, 200 / H, 300 / W, 400 / H])
    empty = pack_input(moto, [], W, H)
    assert not empty[4:].any()


def test_pack_input_drops_smallest_overlap_and_ignores_order():
    moto = Rect(0, 100, 600, 300)
    # Intersection areas grow with k.
    riders = [Rect(10 + 90 * k, 200 - 10 * k, 60 + 90 * k, 400) for k in range(6)]
    smallest = min(riders, key=lambda r: (r.y2 - max(r.y1, 100)) * r.width)
    v = pack_input(moto, riders, W, H)
    for perm in itertools.islice(itertools.permutations(riders), 0, 720, 37):
        assert np.array_equal(pack_input(moto, list(perm), W, H), v)
    packed = {tuple(np.round(v[4 + 4 * k: 8 + 4 * k] * [W, H, W, H], 6)) for k in range(5)}
    assert tuple(smallest.as_list()) not in packed


def test_fit_params_worked_example():
    t = Trapezium(((0, 0), (3, -1), (3, 3), (0, 2)))
    p = fit_params(t, Rect(0, 0, 3, 2))
    assert (p.W, p.dTL, p.dTR, p.dBR, p.dBL) == pytest.approx((3, 0, -1, 1, 0))
    assert (p.X, p.Y) == pytest.approx((5 / 3, 1.0))


def test_fit_params_of_moto_rect():
    m = Rect(10, 20, 50, 90)
    p = fit_params(Trapezium.from_rect(m), m)
    assert (p.dTL, p.dTR, p.dBR, p.dBL) == (0, 0, 0, 0)
    assert (p.X, p.Y, p.W) == pytest.approx((30, 55, 40))
    assert reconstruct(p, m) == Trapezium.from_rect(m)


def test_reconstruct_rejects_crossed():
    m = Rect(0, 0, 10, 10)
    with pytest.raises(InvalidTrapeziumError):
        reconstruct(TrapeziumParams(5, 5, 10, 0, 0, 0, -12), m)
    with pytest.raises(InvalidTrapeziumError):
        reconstruct(TrapeziumParams(5, 5, -1, 0, 0, 0, 0), m)


def test_reconstruct_reports_y_residual():
    t = Trapezium(((0, 0), (3, -1), (3, 3), (0, 2)))
    m = Rect(0, 0, 3, 2)
    p = fit_params(t, m)
    out, res = reconstruct(p, m, return_residual=True)
    assert res == pytest.approx(0.0, abs=1e-12)
    bumped = TrapeziumParams(p.X, p.Y + 0.5, p.W, p.dTL, p.dTR, p.dBR, p.dBL)
    assert reconstruct(bumped, m, return_residual=True)[1] == pytest.approx(0.5)


def test_build_trainset_counts_and_skips():
    streams = generate(SceneConfig(n_instances=2, seed=4))
    rec = streams.ground_truth[0]
    X, Y, skipped = build_trapezium_trainset([rec])
    assert X.shape == (2, 24) and Y.shape == (2, 7) and skipped == 0
    for row, lab in zip(Y, rec.instances):
        moto = next(d.box for d in rec.detections if d.cls == "motorcycle" and d.instance_id == lab.instance_id)
        back = reconstruct(TrapeziumParams.from_array(row).denormalized(rec.w, rec.h), moto)
        assert np.allclose(back.as_list(), lab.trapezium.as_list(), atol=1e-9)
    broken = FrameRecord(rec.frame, rec.w, rec.h, rec.detections, rec.source,
                         [InstanceLabel(0, None, 1, False, 0), rec.instances[1]])
    assert build_trapezium_trainset([broken])[2] == 1


def test_augmentation_keeps_labels_consistent():
    streams = generate_corpus(SceneConfig(n_instances=3, seed=2), 5)
    X, Y, _ = build_trapezium_trainset(streams.ground_truth)
    Xa, Ya = augment_trapezium_trainset(X, Y, copies=3, seed=1)
    assert Xa.shape == (4 * len(X), 24)
    assert np.array_equal(Xa[:len(X)], X)
    for x, y in zip(Xa, Ya):
        moto = Rect(x[0] * W, x[1] * H, x[2] * W, x[3] * H)
        riders = [Rect(*(x[4 + 4 * k: 8 + 4 * k] * [W, H, W, H])) for k in range(5) if x[4 + 4 * k: 8 + 4 * k].any()]
        assert (x >= 0).all() and (x <= 1).all()
        assert np.array_equal(x, pack_input(moto, riders, W, H)) or np.allclose(x, pack_input(moto, riders, W, H))
        trap = reconstruct(TrapeziumParams.from_array(y).denormalized(W, H), moto)
        assert trap.left == pytest.approx(moto.x1) or trap.left <= moto.x1 + 1e-6


def test_trapezium_regressor_memorizes_one_instance():
    boxes = [Rect(500, 500, 800, 700), Rect(520, 380, 640, 640), Rect(580, 360, 700, 620)]
    trap = min_area_trapezium(boxes)
    x = pack_input(boxes[0], boxes[1:], W, H)
    y = fit_params(trap, boxes[0]).normalized(W, H).as_array()
    X, Y = np.tile(x, (4, 1)), np.tile(y, (4, 1))
    model = TrapeziumRegressor(learning_rate=0.01, epochs=400, batch_size=4).fit(X, Y)
    pred = model.predict_trapezium(boxes[0], boxes[1:], W, H)
    err = np.abs(np.subtract(pred.vertices, trap.vertices)).max()
    assert err < 1.0


def test_trapezium_regressor_batch_order_and_untrained(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.uniform(0.1, 0.9, size=(40, 24))
    Y = rng.normal(scale=0.01, size=(40, 7))
    Y[:, 2] = 0.1
    model = TrapeziumRegressor(hidden_layer_sizes=(8, 4), epochs=2, learning_rate=0.01).fit(X, Y)
    items = [(Rect(100 + 50 * k, 500, 300 + 50 * k, 700), []) for k in range(5)]
    batch = model.predict_many(items, W, H)
    for item, b in zip(items, batch):
        single = model.predict_many([item], W, H)[0]
        assert type(single) is type(b)
        if not isinstance(b, Exception):
            assert np.allclose(single.as_list(), b.as_list(), rtol=0, atol=1e-9)
    model.save(tmp_path / "m.json")
    again = TrapeziumRegressor.load(tmp_path / "m.json")
    assert np.array_equal(again.predict(X), model.predict(X))
    with pytest.raises(ValueError):
        AmodalRegressor.load(tmp_path / "m.json")


def test_zero_net_prediction_is_flagged():
    model = TrapeziumRegressor(hidden_layer_sizes=(4,), epochs=1).fit(np.zeros((3, 24)) + 0.5, np.zeros((3, 7)))
    out = model.predict_many([(Rect(0, 0, 10, 10), [])], W, H)[0]
    assert isinstance(out, InvalidTrapeziumError)


def test_enclosing_model_is_drop_in():
    m = EnclosingTrapeziumModel()
    boxes = [Rect(0, 10, 4, 20), Rect(4, 0, 8, 20)]
    assert m.predict_trapezium(boxes[0], boxes[1:], W, H) == min_area_trapezium(boxes)


def _amodal_corpus(seed, n):
    return generate_corpus(SceneConfig(n_instances=3, seed=seed), n).ground_truth


def test_amodal_pairs_and_fit():
    recs = _amodal_corpus(0, 60)
    X, Y = build_amodal_pairs(recs)
    assert X.shape[1] == 4 and len(X) == len(Y) > 0
    model = AmodalRegressor(learning_rate=0.05, epochs=150, seed=1).fit(X, Y)
    test = _amodal_corpus(1, 20)
    Xt, Yt = build_amodal_pairs(test)
    pred = model.predict(Xt)
    ious = [rect_iou(Rect(*p), Rect(*t)) for p, t in zip(pred * [W, H, W, H], Yt * [W, H, W, H])]
    assert np.mean(ious) > 0.8
    again = AmodalRegressor(learning_rate=0.05, epochs=150, seed=1).fit(X, Y)
    assert np.array_equal(again.predict(Xt), pred)


def test_amodal_single_pair_memorized():
    x = np.array([[0.4, 0.3, 0.42, 0.33]])
    y = np.array([[0.37, 0.3, 0.45, 0.46]])
    model = AmodalRegressor(learning_rate=0.05, epochs=300, batch_size=1).fit(np.repeat(x, 2, 0), np.repeat(y, 2, 0))
    assert model.loss_curve_[-1] < 1e-6


class _FixedAmodal:
    """Predicts the head-box rule exactly."""

    def predict_rects(self, heads, w, h):
        return [Rect(b.x1 - 1.5 * b.width, b.y1, b.x2 + 1.5 * b.width, b.y1 + 5 * b.height) for b in heads]


def _frame(dets):
    return FrameRecord(0, W, H, dets)


def test_amodal_fill_rules():
    head = Rect(500, 300, 540, 340)
    rider = Rect(440, 300, 600, 500)
    full = _frame([Detection("helmet", head), Detection("rider", rider)])
    assert amodal_fill([full], _FixedAmodal())[0].detections == full.detections
    missing = _frame([Detection("no_helmet", head, 0.8)])
    out = amodal_fill([missing], _FixedAmodal())[0]
    riders = out.of_class("rider")
    assert len(riders) == 1 and riders[0].box == rider and riders[0].score == 0.8
    tiny = _frame([Detection("helmet", Rect(10, 10, 20, 20))])
    assert amodal_fill([tiny], _FixedAmodal())[0].detections == []


def test_amodal_fill_never_removes_and_adds_at_most_one_per_head():
    recs = generate_corpus(SceneConfig(n_instances=3, occlusion_prob=0.3, seed=9), 10).detections
    filled = amodal_fill(recs, _FixedAmodal())
    for before, after in zip(recs, filled):
        kept = [d for d in before.detections if d.box.area >= 900]
        assert after.detections[:len(kept)] == kept
        assert len(after.detections) - len(kept) <= len(before.of_class("helmet", "no_helmet"))


def test_amodal_fill_restores_rider_between_overlapping_neighbours():
    heads = [Rect(500 + 40 * k, 300, 540 + 40 * k, 340) for k in range(3)]
    riders = [_FixedAmodal().predict_rects([h], W, H)[0] for h in heads]
    dets = [Detection("helmet", h) for h in heads] + [Detection("rider", riders[0]), Detection("rider", riders[2])]
    out = amodal_fill([_frame(dets)], _FixedAmodal())[0]
    added = out.detections[len(dets):]
    assert [d.box for d in added] == [riders[1]]
