"""Missed-suture detection on before/after frame pairs.

Builds the synthetic pair dataset (stratified 80/10/10 split with the
configured class imbalance), trains a small convolutional pair classifier
on class-balanced batches with augmentation and early stopping, and
evaluates accuracy and F1 with the missed class as positive. A logistic
baseline on pixel differences and a rate-configurable simulated detector
(used inside procedure runs) share the same prediction interface.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch
from scipy import ndimage
from torch import nn

from .config import CameraConfig, VisionConfig
from .devices import Frame, Microcamera
from .errors import InvalidArgumentError, TrainingFailureError

CLASSES = ("success", "missed")  # index 1 (missed) is the positive class
LABEL_INDEX = {name: i for i, name in enumerate(CLASSES)}


@dataclass(frozen=True)
class FramePair:
    before: Frame
    after: Frame
    label: str | None = None

    def __post_init__(self):
        if self.before.pixels.shape != self.after.pixels.shape:
            raise InvalidArgumentError("before/after frames must match in size")
        if self.label is not None and self.label not in CLASSES:
            raise InvalidArgumentError(f"label must be one of {CLASSES}")


@dataclass
class DatasetSplit:
    train: list
    val: list
    test: list

    def class_counts(self, part: str) -> dict:
        pairs = getattr(self, part)
        counts = {name: 0 for name in CLASSES}
        for pair in pairs:
            counts[pair.label] += 1
        return counts


@dataclass(frozen=True)
class EvalMetrics:
    accuracy: float
    f1_missed: float
    confusion: dict  # tp, fp, fn, tn with missed as positive


def build_dataset(
    n_pairs: int,
    imbalance_ratio: float,
    rng_seed: int,
    camera_config: CameraConfig | None = None,
) -> DatasetSplit:
    """Generate labeled pairs via the microcamera and split them 80/10/10.

    imbalance_ratio is success:missed (3.0 gives the 3-to-1 mix). The split
    is stratified by class and deterministic for a fixed seed.
    """
    if n_pairs < 20:
        raise InvalidArgumentError("need at least 20 pairs")
    if imbalance_ratio <= 0:
        raise InvalidArgumentError("imbalance_ratio must be > 0")
    n_success = int(round(n_pairs * imbalance_ratio / (imbalance_ratio + 1.0)))
    n_missed = n_pairs - n_success
    if n_success == 0 or n_missed == 0:
        raise InvalidArgumentError("imbalance ratio leaves a class empty")

    rng = np.random.default_rng(np.random.SeedSequence([int(rng_seed), 0]))
    camera = Microcamera(camera_config or CameraConfig(), rng=rng)
    engaged_flags = np.zeros(n_pairs, dtype=bool)
    engaged_flags[:n_success] = True
    rng.shuffle(engaged_flags)

    pairs = []
    for i, engaged in enumerate(engaged_flags):
        site = (i % 8) + 1
        side = "right" if (i // 8) % 2 == 0 else "left"
        before = camera.capture(site, side, "before", None, suture_index=i)
        after = camera.capture(site, side, "after", bool(engaged), suture_index=i)
        pairs.append(FramePair(before=before, after=after,
                               label="success" if engaged else "missed"))

    split_rng = np.random.default_rng(np.random.SeedSequence([int(rng_seed), 1]))
    n_train = int(round(0.8 * n_pairs))
    n_val = int(round(0.1 * n_pairs))
    by_class = {name: [p for p in pairs if p.label == name] for name in CLASSES}
    for name in CLASSES:
        split_rng.shuffle(by_class[name])

    train: list = []
    val: list = []
    test: list = []
    # train quota per class, largest remainder
    quotas = {name: n_train * len(by_class[name]) / n_pairs for name in CLASSES}
    train_counts = {name: int(math.floor(q)) for name, q in quotas.items()}
    leftover = n_train - sum(train_counts.values())
    for name in sorted(CLASSES, key=lambda c: quotas[c] - math.floor(quotas[c]),
                       reverse=True)[:leftover]:
        train_counts[name] += 1
    remaining = {}
    for name in CLASSES:
        train.extend(by_class[name][: train_counts[name]])
        remaining[name] = by_class[name][train_counts[name]:]
    # val quota from the remainder, minority class favored on ties
    val_quotas = {name: n_val * len(by_class[name]) / n_pairs for name in CLASSES}
    val_counts = {name: int(math.floor(q)) for name, q in val_quotas.items()}
    leftover = n_val - sum(val_counts.values())
    order = sorted(
        CLASSES,
        key=lambda c: (val_quotas[c] - math.floor(val_quotas[c]), -len(by_class[c])),
        reverse=True,
    )
    for name in order[:leftover]:
        val_counts[name] += 1
    for name in CLASSES:
        val.extend(remaining[name][: val_counts[name]])
        test.extend(remaining[name][val_counts[name]:])

    split_rng.shuffle(train)
    split_rng.shuffle(val)
    split_rng.shuffle(test)
    return DatasetSplit(train=train, val=val, test=test)


def balanced_batches(
    pairs: Sequence[FramePair], batch_size: int, rng: np.random.Generator
) -> Iterator[list]:
    """One epoch of batches with exact class parity in every batch.

    The majority class is covered at least once per epoch; the minority
    class is resampled with replacement to fill its half of each batch.
    """
    if batch_size % 2 != 0 or batch_size < 2:
        raise InvalidArgumentError("batch_size must be even and >= 2")
    by_class = {name: [p for p in pairs if p.label == name] for name in CLASSES}
    if any(len(v) == 0 for v in by_class.values()):
        raise InvalidArgumentError("both classes must be present")
    minor_name, major_name = sorted(CLASSES, key=lambda c: len(by_class[c]))
    majors = list(by_class[major_name])
    minors = by_class[minor_name]
    order = rng.permutation(len(majors))
    half = batch_size // 2
    n_batches = math.ceil(len(majors) / half)
    for b in range(n_batches):
        chunk = [majors[i] for i in order[b * half : (b + 1) * half]]
        while len(chunk) < half:  # pad the final short chunk
            chunk.append(majors[int(rng.integers(0, len(majors)))])
        minor_pick = [minors[int(i)] for i in rng.integers(0, len(minors), size=half)]
        batch = chunk + minor_pick
        perm = rng.permutation(batch_size)
        yield [batch[i] for i in perm]


# -- augmentation -----------------------------------------------------------

def _augment_pair(before: np.ndarray, after: np.ndarray, rng: np.random.Generator):
    """Apply one shared geometric + photometric transform to both frames.

    Rotation, flips, affine translation, brightness/contrast jitter, and
    pixel dropout; identical geometry on both frames keeps the pair aligned
    and never changes the label.
    """
    b, a = before, after
    angle = float(rng.uniform(-12.0, 12.0))
    b = ndimage.rotate(b, angle, reshape=False, order=1, mode="nearest")
    a = ndimage.rotate(a, angle, reshape=False, order=1, mode="nearest")
    if rng.uniform() < 0.5:
        b, a = b[:, ::-1], a[:, ::-1]
    if rng.uniform() < 0.25:
        b, a = b[::-1, :], a[::-1, :]
    shift = rng.integers(-3, 4, size=2)
    b = np.roll(b, tuple(shift), axis=(0, 1))
    a = np.roll(a, tuple(shift), axis=(0, 1))
    gain = float(rng.uniform(0.8, 1.2))
    bias = float(rng.uniform(-0.1, 0.1))
    b = np.clip(b * gain + bias, 0.0, 1.0)
    a = np.clip(a * gain + bias, 0.0, 1.0)
    drop = rng.uniform(size=b.shape) < 0.03
    b = np.where(drop, 0.0, b)
    a = np.where(drop, 0.0, a)
    return np.ascontiguousarray(b), np.ascontiguousarray(a)


# -- models -----------------------------------------------------------------

class PairCnn(nn.Module):
    """Small two-channel convolutional classifier (a few thousand params)."""

    def __init__(self, dropout: float = 0.5):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(2, 8, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(8, 16, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(16, 16, 3, stride=2, padding=1), nn.ReLU(),
            nn.AdaptiveAvgPool2d(4),
        )
        self.head = nn.Sequential(
            nn.Flatten(), nn.Dropout(dropout), nn.Linear(16 * 16, 2)
        )

    def forward(self, x):
        return self.head(self.features(x))


class LogisticPair(nn.Module):
    """Baseline: logistic regression on block-pooled absolute pixel
    differences (position-tolerant, unlike raw per-pixel weights)."""

    def __init__(self, frame_size: int = 64, block: int = 8, dropout: float = 0.0):
        super().__init__()
        self.block = block
        self.pool = nn.AvgPool2d(block)
        n_features = (frame_size // block) ** 2
        self.linear = nn.Linear(n_features, 2)
        nn.init.zeros_(self.linear.weight)
        nn.init.zeros_(self.linear.bias)

    def forward(self, x):
        diff = torch.abs(x[:, 1:2] - x[:, 0:1])
        energy = self.pool(diff) * (self.block ** 2)  # summed |diff| per block
        return self.linear(energy.flatten(1))


_MODEL_FACTORIES = {"cnn": PairCnn, "logistic": LogisticPair}


def make_model(name: str, dropout: float = 0.5) -> nn.Module:
    try:
        factory = _MODEL_FACTORIES[name]
    except KeyError:
        raise InvalidArgumentError(f"unknown model {name!r}") from None
    if name == "cnn":
        return factory(dropout=dropout)
    return factory()


def _pairs_to_tensor(pairs: Sequence[FramePair], augment_rng=None) -> tuple:
    xs = np.empty((len(pairs), 2, *pairs[0].before.pixels.shape), dtype=np.float32)
    ys = np.empty(len(pairs), dtype=np.int64)
    for i, pair in enumerate(pairs):
        b, a = pair.before.pixels, pair.after.pixels
        if augment_rng is not None:
            b, a = _augment_pair(b, a, augment_rng)
        xs[i, 0] = b
        xs[i, 1] = a
        ys[i] = LABEL_INDEX[pair.label]
    return torch.from_numpy(xs), torch.from_numpy(ys)


@dataclass
class TrainResult:
    model: nn.Module
    curve: list  # per-epoch dicts: epoch, loss, val_loss, val_acc, val_f1
    best_epoch: int
    stopped_early: bool
    config: VisionConfig


def train(
    split: DatasetSplit,
    config: VisionConfig | None = None,
    rng_seed: int = 0,
    model: nn.Module | None = None,
) -> TrainResult:
    """Train on balanced batches; early-stop on a stale validation loss.

    Returns the checkpoint with the best validation loss and the per-epoch
    training curve.
    """
    cfg = config or VisionConfig()
    if not split.train or not split.val:
        raise InvalidArgumentError("split needs train and val pairs")
    torch.manual_seed(int(rng_seed))
    torch.set_num_threads(1)
    net = model if model is not None else make_model(cfg.model, cfg.dropout)
    optimizer = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)
    loss_fn = nn.CrossEntropyLoss()
    batch_rng = np.random.default_rng(np.random.SeedSequence([int(rng_seed), 2]))
    augment_rng = np.random.default_rng(np.random.SeedSequence([int(rng_seed), 3]))

    best_val = math.inf
    best_state = None
    best_epoch = -1
    curve = []
    stopped_early = False
    for epoch in range(cfg.max_epochs):
        net.train()
        epoch_loss = 0.0
        n_batches = 0
        for batch in balanced_batches(split.train, cfg.batch_size, batch_rng):
            xs, ys = _pairs_to_tensor(
                batch, augment_rng if cfg.augment else None
            )
            optimizer.zero_grad()
            logits = net(xs)
            loss = loss_fn(logits, ys)
            if not torch.isfinite(loss):
                raise TrainingFailureError(
                    f"loss diverged at epoch {epoch} (batch {n_batches})"
                )
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.detach())
            n_batches += 1
        val_metrics = evaluate(net, split.val)
        val_loss = _dataset_loss(net, split.val, loss_fn)
        curve.append({
            "epoch": epoch,
            "loss": epoch_loss / max(n_batches, 1),
            "val_loss": val_loss,
            "val_acc": val_metrics.accuracy,
            "val_f1": val_metrics.f1_missed,
        })
        if val_loss < best_val - cfg.early_stop_min_delta or best_state is None:
            best_val = val_loss
            best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in net.state_dict().items()}
        elif epoch - best_epoch >= cfg.patience:
            stopped_early = True
            break
    if best_state is not None:
        net.load_state_dict(best_state)
    net.eval()
    return TrainResult(model=net, curve=curve, best_epoch=best_epoch,
                       stopped_early=stopped_early, config=cfg)


def _dataset_loss(net: nn.Module, pairs: Sequence[FramePair], loss_fn) -> float:
    net.eval()
    with torch.no_grad():
        xs, ys = _pairs_to_tensor(pairs)
        return float(loss_fn(net(xs), ys))


def evaluate(model: nn.Module, pairs: Sequence[FramePair]) -> EvalMetrics:
    """Accuracy, F1 (missed positive), and confusion counts at argmax."""
    if not pairs:
        raise InvalidArgumentError("cannot evaluate on an empty pair list")
    if any(pair.label is None for pair in pairs):
        raise InvalidArgumentError("evaluation pairs must be labeled")
    model.eval()
    with torch.no_grad():
        xs, ys = _pairs_to_tensor(pairs)
        predicted = torch.argmax(model(xs), dim=1)
    y_true = ys.numpy()
    y_pred = predicted.numpy()
    positive = LABEL_INDEX["missed"]
    tp = int(np.sum((y_pred == positive) & (y_true == positive)))
    fp = int(np.sum((y_pred == positive) & (y_true != positive)))
    fn = int(np.sum((y_pred != positive) & (y_true == positive)))
    tn = int(np.sum((y_pred != positive) & (y_true != positive)))
    accuracy = (tp + tn) / len(pairs)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (2 * precision * recall / (precision + recall)) if precision + recall else 0.0
    return EvalMetrics(accuracy=accuracy, f1_missed=f1,
                       confusion={"tp": tp, "fp": fp, "fn": fn, "tn": tn})


def predict(model: nn.Module, before: Frame, after: Frame) -> tuple:
    """Argmax decision plus the normalized confidence of the chosen class."""
    if before.pixels.shape != after.pixels.shape:
        raise InvalidArgumentError("frame dimensions must match")
    model.eval()
    with torch.no_grad():
        x = np.stack([before.pixels, after.pixels]).astype(np.float32)[None]
        logits = model(torch.from_numpy(x))[0]
        probs = torch.softmax(logits, dim=0)
        index = int(torch.argmax(probs))
    return CLASSES[index], float(probs[index])


class SimulatedDetector:
    """Stand-in for the trained network inside procedure runs.

    Reads the renderer ground truth and flips it according to configured
    sensitivity (missed detected as missed) and specificity (success
    passed as success).
    """

    def __init__(self, sensitivity: float = 0.95, specificity: float = 0.98, rng=None):
        if not (0 <= sensitivity <= 1 and 0 <= specificity <= 1):
            raise InvalidArgumentError("rates must lie in [0, 1]")
        self.sensitivity = sensitivity
        self.specificity = specificity
        self.rng = rng if rng is not None else np.random.default_rng()

    def verdict(self, before: Frame, after: Frame) -> str:
        engaged = after.annotation.get("engaged")
        if engaged is None:
            raise InvalidArgumentError("after frame carries no ground truth")
        if engaged:
            return "success" if self.rng.uniform() < self.specificity else "missed"
        return "missed" if self.rng.uniform() < self.sensitivity else "success"


class TrainedDetector:
    """Adapter giving a trained model the runtime verdict interface."""

    def __init__(self, model: nn.Module):
        self.model = model

    def verdict(self, before: Frame, after: Frame) -> str:
        label, _ = predict(self.model, before, after)
        return label


# -- persistence --------------------------------------------------------------

MODEL_FORMAT_VERSION = 1


def save_model(path: Path, result: TrainResult, config_hash: str) -> None:
    payload = {
        "format_version": MODEL_FORMAT_VERSION,
        "model_kind": result.config.model,
        "dropout": result.config.dropout,
        "config_hash": config_hash,
        "state_dict": result.model.state_dict(),
        "best_epoch": result.best_epoch,
    }
    torch.save(payload, path)


def load_model(path: Path) -> tuple:
    payload = torch.load(path, weights_only=False)
    if payload.get("format_version") != MODEL_FORMAT_VERSION:
        raise InvalidArgumentError(f"unsupported model file version in {path}")
    model = make_model(payload["model_kind"], payload.get("dropout", 0.5))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload


def write_curve_csv(path: Path, curve: Sequence[dict]) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,loss,val_acc,val_f1\n")
        for row in curve:
            fh.write(f"{row['epoch']},{row['loss']:.6f},"
                     f"{row['val_acc']:.6f},{row['val_f1']:.6f}\n")


# -- dataset on disk -----------------------------------------------------------

def _write_pgm(path: Path, pixels: np.ndarray) -> None:
    data = np.clip(np.round(pixels * 255), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5 {data.shape[1]} {data.shape[0]} 255\n".encode())
        fh.write(data.tobytes())


def _read_pgm(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    header, _, body = raw.partition(b"\n")
    magic, width, height, maxval = header.split()
    if magic != b"P5":
        raise InvalidArgumentError(f"{path}: not a binary PGM file")
    data = np.frombuffer(body, dtype=np.uint8, count=int(width) * int(height))
    return data.reshape(int(height), int(width)).astype(np.float64) / float(int(maxval))


def save_dataset(split: DatasetSplit, out_dir: Path) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"version": 1, "parts": {}}
    for part in ("train", "val", "test"):
        entries = []
        for i, pair in enumerate(getattr(split, part)):
            before_name = f"{part}_{i:04d}_before.pgm"
            after_name = f"{part}_{i:04d}_after.pgm"
            _write_pgm(out_dir / before_name, pair.before.pixels)
            _write_pgm(out_dir / after_name, pair.after.pixels)
            entries.append({"before": before_name, "after": after_name,
                            "label": pair.label})
        manifest["parts"][part] = entries
    with open(out_dir / "pairs.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def load_dataset(in_dir: Path) -> DatasetSplit:
    in_dir = Path(in_dir)
    with open(in_dir / "pairs.json") as fh:
        manifest = json.load(fh)
    parts = {}
    for part, entries in manifest["parts"].items():
        pairs = []
        for entry in entries:
            before = Frame(pixels=_read_pgm(in_dir / entry["before"]),
                           annotation={"phase": "before", "engaged": None})
            after = Frame(
                pixels=_read_pgm(in_dir / entry["after"]),
                annotation={"phase": "after",
                            "engaged": entry["label"] == "success"},
            )
            pairs.append(FramePair(before=before, after=after, label=entry["label"]))
        parts[part] = pairs
    return DatasetSplit(train=parts.get("train", []), val=parts.get("val", []),
                        test=parts.get("test", []))
