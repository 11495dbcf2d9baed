"""AssistNet assembly, dataset splitting, training, and checkpoints.

The classifier is a small conv stack whose filter counts decrease with
depth (32 -> 16 -> 8), followed by a 64-wide hidden dense layer and a
sigmoid output giving P(runway). Labels: taxiway = 0, runway = 1, and a
probability of exactly 0.5 routes to runway.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .errors import (
    BadMagic,
    DecodeFailure,
    DegenerateCrop,
    MalformedHeader,
    ModelLoadFailure,
    NoHorizon,
    NonFiniteLoss,
    ShapeMismatch,
    TooFewItems,
    TruncatedPayload,
)
from .imaging import ImageRGB, decode_ppm, resize_bilinear, augment
from .roi import crop_below_horizon, detect_horizon

CATEGORIES = ("taxiway", "runway")  # index = class label
CHECKPOINT_MAGIC = b"ASNT1"


@dataclass
class DatasetItem:
    path: str
    category: str
    image: ImageRGB | None = field(default=None, repr=False, compare=False)

    @property
    def label(self) -> int:
        return CATEGORIES.index(self.category)


@dataclass
class SplitDataset:
    train: list[DatasetItem]
    validation: list[DatasetItem]
    test: list[DatasetItem]


@dataclass
class TrainConfig:
    """Training knobs; input presets: 96x54 (default), 150x150, 400x225."""

    input_width: int = 96
    input_height: int = 54
    epochs: int = 20
    batch_size: int = 16
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    rotation_range: float = 15.0
    brightness_lo: float = 0.7
    brightness_hi: float = 1.3
    seed: int = 0
    roi_precrop: bool = True

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)


@dataclass
class Metrics:
    accuracy: float
    confusion: list[list[int]]  # rows truth (taxiway, runway), cols prediction
    precision: dict[str, float]
    recall: dict[str, float]
    history: dict[str, list[float]] = field(default_factory=dict)


def load_corpus(root: str | Path) -> list[DatasetItem]:
    """Directory-format ingestion: manifest.json if present, else dir scan."""
    root = Path(root)
    manifest = root / "manifest.json"
    items = []
    if manifest.exists():
        obj = json.loads(manifest.read_text(encoding="utf-8"))
        for fr in obj["frames"]:
            items.append(DatasetItem(path=str(root / fr["frame"]), category=fr["category"]))
    else:
        for category in CATEGORIES:
            for p in sorted((root / category).glob("*.ppm")):
                items.append(DatasetItem(path=str(p), category=category))
    return items


def build_assistnet(input_h: int, input_w: int) -> nn.NetworkSpec:
    """Conv 32/16/8 with relu+pool, dense 64, sigmoid head; shape-checked."""
    layers = [
        nn.LayerSpec(nn.CONV, kernel_h=3, kernel_w=3, filters=32),
        nn.LayerSpec(nn.RELU),
        nn.LayerSpec(nn.POOL),
        nn.LayerSpec(nn.CONV, kernel_h=3, kernel_w=3, filters=16),
        nn.LayerSpec(nn.RELU),
        nn.LayerSpec(nn.POOL),
        nn.LayerSpec(nn.CONV, kernel_h=3, kernel_w=3, filters=8),
        nn.LayerSpec(nn.RELU),
        nn.LayerSpec(nn.POOL),
        nn.LayerSpec(nn.FLATTEN),
        nn.LayerSpec(nn.DENSE, units=64),
        nn.LayerSpec(nn.RELU),
        nn.LayerSpec(nn.DENSE, units=1),
        nn.LayerSpec(nn.SIGMOID),
    ]
    net = nn.NetworkSpec(input_shape=(input_h, input_w, 3), layers=layers)
    nn.infer_shapes(net.input_shape, net.layers)  # raises InputTooSmall early
    net.params = [[] for _ in layers]
    return net


def split_dataset(items: list[DatasetItem], seed: int) -> SplitDataset:
    """Stratified 70:20:10 split with a seeded shuffle per category.

    Global sizes are floor(0.7n) / floor(0.2n) / remainder; per-category
    counts follow largest-remainder quotas so each split's category mix
    matches the whole within one item.
    """
    n = len(items)
    if n < 10:
        raise TooFewItems(f"need at least 10 items, got {n}")
    rng = np.random.default_rng(seed)
    cats = sorted({it.category for it in items})
    by_cat = {c: [it for it in items if it.category == c] for c in cats}
    shuffled = {}
    for c in cats:
        idx = rng.permutation(len(by_cat[c]))
        shuffled[c] = [by_cat[c][i] for i in idx]

    n_train, n_val = int(0.7 * n), int(0.2 * n)

    def quotas(frac: float, target: int, available: dict[str, int]) -> dict[str, int]:
        exact = {c: frac * len(by_cat[c]) for c in cats}
        base = {c: min(int(exact[c]), available[c]) for c in cats}
        rem = target - sum(base.values())
        order = sorted(cats, key=lambda c: (-(exact[c] - int(exact[c])), c))
        while rem > 0:
            progressed = False
            for c in order:
                if rem > 0 and available[c] - base[c] > 0:
                    base[c] += 1
                    rem -= 1
                    progressed = True
            if not progressed:
                break
        return base

    avail = {c: len(by_cat[c]) for c in cats}
    train_q = quotas(0.7, n_train, avail)
    avail = {c: avail[c] - train_q[c] for c in cats}
    val_q = quotas(0.2, n_val, avail)

    train, val, test = [], [], []
    for c in cats:
        seq = shuffled[c]
        t, v = train_q[c], val_q[c]
        train.extend(seq[:t])
        val.extend(seq[t : t + v])
        test.extend(seq[t + v :])
    return SplitDataset(train=train, validation=val, test=test)


def _load_image(item: DatasetItem) -> ImageRGB:
    if item.image is None:
        try:
            raw = Path(item.path).read_bytes()
        except OSError as exc:
            raise DecodeFailure(f"{item.path}: {exc}") from exc
        try:
            item.image = decode_ppm(raw)
        except (MalformedHeader, TruncatedPayload) as exc:
            raise DecodeFailure(f"{item.path}: {exc}") from exc
    return item.image


def preprocess_item(
    item: DatasetItem,
    config: TrainConfig,
    rng: np.random.Generator | None = None,
    training: bool = False,
) -> np.ndarray:
    """Decode (cached), optional horizon pre-crop, resize, train-time augment.

    The evaluation path consumes no rng draws; the training path draws
    rotation then brightness, in that order.
    """
    img = _load_image(item)
    if config.roi_precrop:
        try:
            img, _ = crop_below_horizon(img, detect_horizon(img))
        except (NoHorizon, DegenerateCrop):
            pass
    img = resize_bilinear(img, config.input_width, config.input_height)
    if training:
        rot = float(rng.uniform(-config.rotation_range, config.rotation_range))
        bright = float(rng.uniform(config.brightness_lo, config.brightness_hi))
        img = augment(img, rot, bright)
    return img.data


def _forward_prob(net: nn.NetworkSpec, item: DatasetItem, config: TrainConfig) -> float:
    return nn.predict(net, preprocess_item(item, config, training=False))


def train(
    net: nn.NetworkSpec, split: SplitDataset, config: TrainConfig
) -> tuple[nn.NetworkSpec, Metrics]:
    """Mini-batch BCE + Adam training with per-epoch history.

    Batch gradients are averaged in fixed item order; one Adam step per
    batch. Uninitialized networks are seeded from config.seed.
    """
    if not any(net.params):
        nn.init_weights(net, config.seed)
    rng = np.random.default_rng(config.seed)
    params = nn.flat_params(net)
    state = nn.init_adam(params, lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    history: dict[str, list[float]] = {
        "train_loss": [],
        "train_accuracy": [],
        "val_loss": [],
        "val_accuracy": [],
    }
    items = split.train
    for _epoch in range(config.epochs):
        order = rng.permutation(len(items))
        losses = []
        correct = 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            grad_sum: list[np.ndarray] | None = None
            for idx in batch:
                item = items[int(idx)]
                x = preprocess_item(item, config, rng, training=True)
                prob, cache = nn.forward(net, x, keep_cache=True)
                loss, dpred = nn.bce_loss(prob, float(item.label))
                losses.append(loss)
                correct += int((prob >= 0.5) == bool(item.label))
                grads = nn.backward(net, cache, dpred / len(batch))
                flat = [a for g in grads for a in g]
                if grad_sum is None:
                    grad_sum = flat
                else:
                    for acc, g in zip(grad_sum, flat):
                        acc += g
            batch_loss = float(np.sum(losses[-len(batch) :]))
            if not np.isfinite(batch_loss):
                raise NonFiniteLoss(f"epoch {_epoch}: batch loss {batch_loss}")
            params, state = nn.adam_step(params, grad_sum, state)
            nn.set_flat_params(net, params)
        history["train_loss"].append(float(np.mean(losses)) if losses else 0.0)
        history["train_accuracy"].append(correct / max(1, len(items)))
        val_losses, val_correct = [], 0
        for item in split.validation:
            prob = _forward_prob(net, item, config)
            loss, _ = nn.bce_loss(prob, float(item.label))
            val_losses.append(loss)
            val_correct += int((prob >= 0.5) == bool(item.label))
        history["val_loss"].append(float(np.mean(val_losses)) if val_losses else 0.0)
        history["val_accuracy"].append(val_correct / max(1, len(split.validation)))
    metrics = evaluate(net, split.validation, config)
    metrics.history = history
    return net, metrics


def evaluate(net: nn.NetworkSpec, items: list[DatasetItem], config: TrainConfig) -> Metrics:
    """Deterministic forward passes; prediction = P(runway) >= 0.5."""
    cm = [[0, 0], [0, 0]]
    for item in items:
        prob = _forward_prob(net, item, config)
        cm[item.label][int(prob >= 0.5)] += 1
    return metrics_from_confusion(cm)


def metrics_from_confusion(cm: list[list[int]]) -> Metrics:
    total = sum(sum(row) for row in cm)
    accuracy = (cm[0][0] + cm[1][1]) / total if total else 0.0
    precision, recall = {}, {}
    for i, name in enumerate(CATEGORIES):
        col = cm[0][i] + cm[1][i]
        row = sum(cm[i])
        precision[name] = cm[i][i] / col if col else 0.0
        recall[name] = cm[i][i] / row if row else 0.0
    return Metrics(accuracy=accuracy, confusion=cm, precision=precision, recall=recall)


def save_checkpoint(net: nn.NetworkSpec, config: TrainConfig, seed: int) -> bytes:
    """Magic, little-endian JSON header length, JSON header, float32 params."""
    arrays = nn.flat_params(net)
    payload = b"".join(a.astype("<f4").tobytes() for a in arrays)
    header = {
        "layers": [asdict(l) for l in net.layers],
        "input_shape": list(net.input_shape),
        "config": config.to_dict(),
        "seed": seed,
        "param_bytes": len(payload),
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return CHECKPOINT_MAGIC + struct.pack("<I", len(blob)) + blob + payload


def load_checkpoint(data: bytes) -> tuple[nn.NetworkSpec, TrainConfig]:
    if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise BadMagic("not an AssistNet checkpoint")
    pos = len(CHECKPOINT_MAGIC)
    if len(data) < pos + 4:
        raise TruncatedPayload("missing header length")
    (hlen,) = struct.unpack("<I", data[pos : pos + 4])
    pos += 4
    blob = data[pos : pos + hlen]
    if len(blob) < hlen:
        raise TruncatedPayload("truncated JSON header")
    try:
        header = json.loads(blob.decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelLoadFailure(f"corrupt checkpoint header: {exc}") from exc
    pos += hlen
    layers = [nn.LayerSpec(**l) for l in header["layers"]]
    input_shape = tuple(header["input_shape"])
    shapes = nn.param_shapes(input_shape, layers)
    expected = sum(int(np.prod(s)) * 4 for group in shapes for s in group)
    if header["param_bytes"] != expected:
        raise ShapeMismatch(
            f"header says {header['param_bytes']} parameter bytes, layers need {expected}"
        )
    payload = data[pos : pos + expected]
    if len(payload) < expected:
        raise TruncatedPayload(f"expected {expected} parameter bytes, got {len(payload)}")
    flat = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    params: list[list[np.ndarray]] = []
    at = 0
    for group in shapes:
        arrs = []
        for s in group:
            size = int(np.prod(s))
            arrs.append(flat[at : at + size].reshape(s).copy())
            at += size
        params.append(arrs)
    net = nn.NetworkSpec(input_shape=input_shape, layers=layers, params=params)
    return net, TrainConfig.from_dict(header["config"])
