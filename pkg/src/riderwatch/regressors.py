"""Trapezium box regressor and amodal rider-box regressor.

Both regressors read and write coordinates normalised by the frame size.
Internally each estimator whitens its inputs and standardises its targets
with statistics fitted on the training set.
"""
from __future__ import annotations

import logging
from dataclasses import astuple, dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .dense_net import DenseNet, TrainConfig, load_checkpoint, save_checkpoint, train
from .geometry import InvalidTrapeziumError, Rect, Trapezium, centroid, intersection_area, rect_iou
from .records import HEADGEAR, Detection, FrameRecord
from .synth import min_area_trapezium

log = logging.getLogger(__name__)

MAX_RIDERS = 5
N_INPUTS = 4 + 4 * MAX_RIDERS
N_OUTPUTS = 7
MIN_BOX_AREA = 900.0


def pack_input(moto: Rect, riders: Sequence[Rect], frame_w: float, frame_h: float) -> np.ndarray:
    """Motorcycle box followed by up to five rider boxes, zero padded.

    Riders go in order of decreasing overlap with the motorcycle; the rider
    box itself breaks ties so the packing does not depend on input order.
    """
    scale = np.array([frame_w, frame_h, frame_w, frame_h], dtype=np.float64)
    ranked = sorted(riders, key=lambda r: (-intersection_area(moto, r), r.as_list()))
    out = np.zeros(N_INPUTS)
    out[:4] = np.asarray(moto.as_list()) / scale
    for k, r in enumerate(ranked[:MAX_RIDERS]):
        out[4 + 4 * k: 8 + 4 * k] = np.asarray(r.as_list()) / scale
    return out


@dataclass(frozen=True)
class TrapeziumParams:
    X: float
    Y: float
    W: float
    dTL: float
    dTR: float
    dBR: float
    dBL: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)

    @classmethod
    def from_array(cls, v) -> "TrapeziumParams":
        return cls(*(float(x) for x in v))

    def normalized(self, frame_w: float, frame_h: float) -> "TrapeziumParams":
        return TrapeziumParams(self.X / frame_w, self.Y / frame_h, self.W / frame_w,
                               self.dTL / frame_h, self.dTR / frame_h, self.dBR / frame_h, self.dBL / frame_h)

    def denormalized(self, frame_w: float, frame_h: float) -> "TrapeziumParams":
        return TrapeziumParams(self.X * frame_w, self.Y * frame_h, self.W * frame_w,
                               self.dTL * frame_h, self.dTR * frame_h, self.dBR * frame_h, self.dBL * frame_h)


def fit_params(trap: Trapezium, moto: Rect) -> TrapeziumParams:
    (_, ytl), (_, ytr), (_, ybr), (_, ybl) = trap.vertices
    X, Y = centroid(trap.vertices)
    return TrapeziumParams(X, Y, trap.right - trap.left,
                           ytl - moto.y1, ytr - moto.y1, ybr - moto.y2, ybl - moto.y2)


def reconstruct(params: TrapeziumParams, moto: Rect, return_residual: bool = False):
    """Trapezium from centroid-x, width and corner offsets.

    The offsets fix both side heights, which fixes where the centroid sits
    between the sides, so the left side is recovered exactly from X. Y is
    redundant and only reported as the residual ``|Y - centroid_y|`` when
    ``return_residual`` is set. Raises InvalidTrapeziumError for a crossed
    or degenerate result.
    """
    if not params.W > 0:
        raise InvalidTrapeziumError(f"non-positive width {params.W}")
    ytl, ytr = moto.y1 + params.dTL, moto.y1 + params.dTR
    ybr, ybl = moto.y2 + params.dBR, moto.y2 + params.dBL
    hl, hr = ybl - ytl, ybr - ytr
    if not (hl > 0 and hr > 0):
        raise InvalidTrapeziumError(f"crossed sides (heights {hl}, {hr})")
    # Centroid of a trapezium with vertical sides, as a fraction of the width.
    frac = (hl + 2.0 * hr) / (3.0 * (hl + hr))
    left = params.X - frac * params.W
    trap = Trapezium.from_sides(left, left + params.W, ytl, ytr, ybr, ybl)
    if return_residual:
        return trap, abs(params.Y - trap.centroid[1])
    return trap


def _find_moto(rec: FrameRecord, instance_id: int) -> Detection | None:
    for d in rec.detections:
        if d.cls == "motorcycle" and d.instance_id == instance_id:
            return d
    return None


def intersecting(moto: Rect, riders: Sequence[Rect]) -> list[Rect]:
    return [r for r in riders if intersection_area(moto, r) > 0.0]


def build_trapezium_trainset(records: Sequence[FrameRecord]) -> tuple[np.ndarray, np.ndarray, int]:
    """One (input, normalised-params) sample per labelled driving instance.

    The input holds every rider box in the frame that intersects the
    motorcycle, as the engine sees it at inference time, including riders of
    neighbouring instances. Returns (X, Y, n_skipped).
    """
    xs, ys = [], []
    skipped = 0
    for rec in records:
        riders = [d.box for d in rec.detections if d.cls == "rider"]
        for lab in rec.instances:
            moto = _find_moto(rec, lab.instance_id)
            if moto is None or lab.trapezium is None:
                skipped += 1
                continue
            try:
                params = fit_params(lab.trapezium, moto.box)
            except ValueError:
                skipped += 1
                continue
            xs.append(pack_input(moto.box, intersecting(moto.box, riders), rec.w, rec.h))
            ys.append(params.normalized(rec.w, rec.h).as_array())
    if not xs:
        return np.zeros((0, N_INPUTS)), np.zeros((0, N_OUTPUTS)), skipped
    return np.vstack(xs), np.vstack(ys), skipped


def augment_trapezium_trainset(X: np.ndarray, Y: np.ndarray, copies: int, seed: int = 0,
                               flip: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Append ``copies`` randomly shifted (and possibly mirrored) versions of each sample.

    Works in normalised coordinates: shifts keep every box inside the unit
    frame, and mirroring swaps the left and right corner offsets. Empty rider
    slots stay zero.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    rng = np.random.default_rng(seed)
    boxes = X.reshape(len(X), -1, 4)
    used = np.any(boxes != 0.0, axis=2)
    xs_out, ys_out = [X], [Y]
    for _ in range(copies):
        b = boxes.copy()
        y = Y.copy()
        if flip:
            mirror = rng.random(len(X)) < 0.5
            m = mirror[:, None] & used
            x1 = b[..., 0].copy()
            b[..., 0] = np.where(m, 1.0 - b[..., 2], b[..., 0])
            b[..., 2] = np.where(m, 1.0 - x1, b[..., 2])
            y[mirror, 0] = 1.0 - y[mirror, 0]
            y[mirror, 3], y[mirror, 4] = Y[mirror, 4], Y[mirror, 3]
            y[mirror, 5], y[mirror, 6] = Y[mirror, 6], Y[mirror, 5]
        big = np.where(used[..., None], b, np.nan)
        lo_x = np.nanmin(big[..., [0, 2]], axis=(1, 2))
        hi_x = np.nanmax(big[..., [0, 2]], axis=(1, 2))
        lo_y = np.nanmin(big[..., [1, 3]], axis=(1, 2))
        hi_y = np.nanmax(big[..., [1, 3]], axis=(1, 2))
        dx = rng.uniform(-lo_x, 1.0 - hi_x)
        dy = rng.uniform(-lo_y, 1.0 - hi_y)
        b[..., [0, 2]] += np.where(used[..., None], dx[:, None, None], 0.0)
        b[..., [1, 3]] += np.where(used[..., None], dy[:, None, None], 0.0)
        y[:, 0] += dx
        y[:, 1] += dy
        xs_out.append(b.reshape(len(X), -1))
        ys_out.append(y)
    return np.vstack(xs_out), np.vstack(ys_out)


class _Whitener:
    """Affine decorrelation (ZCA whitening) fitted on training data.

    Box coordinates are strongly correlated (x1 and x2 of one box move
    together), which makes plain gradient descent crawl; whitening removes
    that conditioning problem. Directions with negligible variance are left
    unscaled.
    """

    def __init__(self, X: np.ndarray, eps: float = 1e-10):
        self.mean = X.mean(axis=0)
        cov = np.cov(X - self.mean, rowvar=False).reshape(X.shape[1], X.shape[1])
        vals, vecs = np.linalg.eigh(cov)
        keep = vals > eps * max(float(vals.max()), 1e-300)
        scale = np.where(keep, 1.0 / np.sqrt(np.where(keep, vals, 1.0)), 1.0)
        self.fwd_mat = (vecs * scale) @ vecs.T
        self.inv_mat = (vecs / scale) @ vecs.T

    def fwd(self, X):
        return (X - self.mean) @ self.fwd_mat

    def inv(self, Z):
        return Z @ self.inv_mat + self.mean

    def to_dict(self):
        return {"mean": self.mean.tolist(), "fwd": self.fwd_mat.tolist(), "inv": self.inv_mat.tolist()}

    @classmethod
    def from_dict(cls, d):
        obj = cls.__new__(cls)
        obj.mean = np.asarray(d["mean"], dtype=np.float64)
        obj.fwd_mat = np.asarray(d["fwd"], dtype=np.float64)
        obj.inv_mat = np.asarray(d["inv"], dtype=np.float64)
        return obj


class _Standardizer(_Whitener):
    """Per-column centring and scaling."""

    def __init__(self, X: np.ndarray):
        self.mean = X.mean(axis=0)
        std = X.std(axis=0)
        std = np.where(std > 1e-12, std, 1.0)
        self.fwd_mat = np.diag(1.0 / std)
        self.inv_mat = np.diag(std)


class _NetRegressor(BaseEstimator, RegressorMixin):
    """Dense regressor on whitened inputs and standardised targets; subclasses fix topology defaults."""

    kind = "dense"

    def _train_config(self) -> TrainConfig:
        return TrainConfig(self.learning_rate, self.epochs, self.batch_size, self.seed,
                           self.lr_decay_factor, self.decay_every)

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        y = y.reshape(len(y), -1)
        self.x_scaler_ = _Whitener(X)
        self.y_scaler_ = _Standardizer(y)
        net = DenseNet.init([X.shape[1], *self.hidden_layer_sizes, y.shape[1]], self.activation, self.seed)
        result = train(net, self.x_scaler_.fwd(X), self.y_scaler_.fwd(y), self._train_config())
        self.net_ = result.net
        self.loss_curve_ = result.loss_history
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "net_")
        X = check_array(X)
        return self.y_scaler_.inv(self.net_.forward(self.x_scaler_.fwd(X)))

    def save(self, path) -> None:
        check_is_fitted(self, "net_")
        meta = {"kind": self.kind, "params": self.get_params(), "x_scaler": self.x_scaler_.to_dict(),
                "y_scaler": self.y_scaler_.to_dict()}
        meta["params"]["hidden_layer_sizes"] = list(self.hidden_layer_sizes)
        save_checkpoint(path, self.net_, meta)

    @classmethod
    def load(cls, path):
        net, meta = load_checkpoint(path)
        if meta.get("kind") != cls.kind:
            raise ValueError(f"{path} holds a {meta.get('kind')!r} model, not {cls.kind!r}")
        params = dict(meta["params"])
        params["hidden_layer_sizes"] = tuple(params["hidden_layer_sizes"])
        obj = cls(**params)
        obj.net_ = net
        obj.x_scaler_ = _Whitener.from_dict(meta["x_scaler"])
        obj.y_scaler_ = _Standardizer.from_dict(meta["y_scaler"])
        obj.n_features_in_ = net.layer_sizes[0]
        obj.loss_curve_ = []
        return obj


class TrapeziumRegressor(_NetRegressor):
    """24 packed box coordinates -> 7 normalised trapezium parameters."""

    kind = "trapezium"

    def __init__(self, hidden_layer_sizes=(512, 256), activation="tanh", learning_rate=0.001,
                 epochs=200, batch_size=32, lr_decay_factor=10.0, decay_every=0, seed=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.activation = activation
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_decay_factor = lr_decay_factor
        self.decay_every = decay_every
        self.seed = seed

    def predict_trapezium(self, moto: Rect, riders: Sequence[Rect], frame_w, frame_h) -> Trapezium:
        return self.predict_many([(moto, riders)], frame_w, frame_h)[0]

    def predict_many(self, items, frame_w, frame_h) -> list:
        """Trapezia for [(moto, riders), ...]; an InvalidTrapeziumError instance marks a failed decode."""
        if not items:
            return []
        X = np.vstack([pack_input(m, rs, frame_w, frame_h) for m, rs in items])
        out = []
        for (moto, _), row in zip(items, self.predict(X)):
            params = TrapeziumParams.from_array(row).denormalized(frame_w, frame_h)
            try:
                out.append(reconstruct(params, moto))
            except InvalidTrapeziumError as e:
                out.append(e)
        return out


class EnclosingTrapeziumModel(BaseEstimator):
    """Drop-in for TrapeziumRegressor that returns the minimum-area trapezium of the boxes."""

    kind = "enclosing"

    def fit(self, X=None, y=None):
        return self

    def predict_trapezium(self, moto: Rect, riders: Sequence[Rect], frame_w, frame_h) -> Trapezium:
        return min_area_trapezium([moto, *riders])

    def predict_many(self, items, frame_w, frame_h) -> list:
        return [self.predict_trapezium(m, rs, frame_w, frame_h) for m, rs in items]


def predict_trapezium(model, moto: Rect, riders: Sequence[Rect], frame_w, frame_h) -> Trapezium:
    return model.predict_trapezium(moto, riders, frame_w, frame_h)


class AmodalRegressor(_NetRegressor):
    """Head (helmet/no-helmet) box -> full rider box, both normalised by frame size."""

    kind = "amodal"

    def __init__(self, hidden_layer_sizes=(16, 64), activation="relu", learning_rate=0.001,
                 epochs=200, batch_size=32, lr_decay_factor=10.0, decay_every=0, seed=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.activation = activation
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_decay_factor = lr_decay_factor
        self.decay_every = decay_every
        self.seed = seed

    def predict_rects(self, heads: Sequence[Rect], frame_w, frame_h) -> list[Rect | None]:
        if not heads:
            return []
        scale = np.array([frame_w, frame_h, frame_w, frame_h], dtype=np.float64)
        X = np.vstack([np.asarray(h.as_list()) / scale for h in heads])
        out = []
        for row in self.predict(X) * scale:
            x1, y1, x2, y2 = (float(v) for v in row)
            out.append(Rect(x1, y1, x2, y2).clip_to(frame_w, frame_h) if x1 < x2 and y1 < y2 else None)
        return out


def build_amodal_pairs(records: Sequence[FrameRecord]) -> tuple[np.ndarray, np.ndarray]:
    """(head, rider) box pairs, normalised, for every head whose rider box is labelled."""
    xs, ys = [], []
    for rec in records:
        scale = np.array([rec.w, rec.h, rec.w, rec.h], dtype=np.float64)
        riders = {d.obj_id: d.box for d in rec.detections if d.cls == "rider" and d.obj_id is not None}
        for d in rec.detections:
            if d.cls in HEADGEAR and d.rider_id in riders:
                xs.append(np.asarray(d.box.as_list()) / scale)
                ys.append(np.asarray(riders[d.rider_id].as_list()) / scale)
    if not xs:
        return np.zeros((0, 4)), np.zeros((0, 4))
    return np.vstack(xs), np.vstack(ys)


def train_amodal(records: Sequence[FrameRecord], **params) -> AmodalRegressor:
    X, Y = build_amodal_pairs(records)
    if len(X) == 0:
        raise ValueError("no head/rider pairs to train on")
    return AmodalRegressor(**params).fit(X, Y)


def area_filter(dets: Sequence[Detection], min_area: float = MIN_BOX_AREA) -> list[Detection]:
    return [d for d in dets if d.box.area >= min_area]


def amodal_fill(records: Sequence[FrameRecord], model: AmodalRegressor, iou_threshold: float = 0.1,
                min_area: float = MIN_BOX_AREA) -> list[FrameRecord]:
    """Add one predicted rider box for each head box whose rider is missing.

    Predicted rider boxes and detected rider boxes are paired one-to-one,
    maximising total IoU over pairs above ``iou_threshold``; a head left
    unpaired has lost its rider. Pairing matters because riders on one
    motorcycle overlap each other heavily. Boxes smaller than ``min_area``
    are dropped before anything else.
    """
    out = []
    for rec in records:
        dets = area_filter(rec.detections, min_area)
        heads = [d for d in dets if d.cls in HEADGEAR]
        riders = [d.box for d in dets if d.cls == "rider"]
        preds = model.predict_rects([h.box for h in heads], rec.w, rec.h) if heads else []
        paired = set()
        if heads and riders:
            iou = np.array([[rect_iou(p, r) if p is not None else 0.0 for r in riders] for p in preds])
            weights = np.where(iou > iou_threshold, iou, 0.0)
            rows, cols = linear_sum_assignment(weights, maximize=True)
            paired = {int(r) for r, c in zip(rows, cols) if weights[r, c] > 0.0}
        added = []
        for k, (head, pred) in enumerate(zip(heads, preds)):
            if pred is None or k in paired:
                continue
            added.append(Detection("rider", pred, head.score, head.rider_id, head.instance_id))
        if added:
            log.debug("frame %s: %d rider boxes completed from head boxes", rec.frame, len(added))
        out.append(FrameRecord(rec.frame, rec.w, rec.h, dets + added, rec.source, rec.instances, rec.video))
    return out
