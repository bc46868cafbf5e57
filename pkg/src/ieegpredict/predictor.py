"""Multi-scale CNN: architecture, class-weighted training, clip-level prediction.

The network sees one standardized spectrogram stack (channels x freq x
frames) per 1-minute segment. Three parallel paths run on the same input:

    1x1 reduce -> 3x3
    1x1 reduce -> 5x5
    3x3 max-pool -> 1x1

Their outputs are concatenated on the channel axis, flattened, and passed
through two ReLU fully connected layers and a single sigmoid unit. A clip's
probability is the maximum (or mean) over its segments.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autonn as nn
from .evalkit import SingleClassError, roc_auc
from .ieeg_io import Label
from .spectro import STD_FLOOR, SpectroTensor, Standardizer

log = logging.getLogger(__name__)

MODEL_FORMAT = "ieegpredict-model/1"


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ArchitectureConfig:
    conv_units: int = 64
    reduce_units: int | None = None  # width of the 1x1 reductions; defaults to conv_units
    fc_sizes: tuple[int, ...] = (124, 64)
    pool_size: int = 3
    standalone_1x1_branch: bool = False

    def __post_init__(self):
        object.__setattr__(self, "fc_sizes", tuple(int(s) for s in self.fc_sizes))
        if self.conv_units < 1 or (self.reduce_units is not None and self.reduce_units < 1):
            raise ValueError("conv unit counts must be positive")
        if not self.fc_sizes or any(s < 1 for s in self.fc_sizes):
            raise ValueError(f"fc_sizes must be positive, got {self.fc_sizes}")
        if self.pool_size < 1 or self.pool_size % 2 == 0:
            raise ValueError("pool_size must be odd")

    @property
    def reduce(self) -> int:
        return self.conv_units if self.reduce_units is None else self.reduce_units

    @property
    def n_branches(self) -> int:
        return 4 if self.standalone_1x1_branch else 3


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    class_weight_pos: float | None = None  # None: n_interictal / n_preictal of the training clips
    batch_size: int = 32
    epochs: int = 30
    validation_fraction: float = 0.1
    rng_seed: int = 0
    standardize_per_image: bool = False

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.class_weight_pos is not None and not self.class_weight_pos > 0:
            raise ValueError("class_weight_pos must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0 <= self.validation_fraction <= 0.5:
            raise ValueError("validation_fraction must lie in [0, 0.5]")


@dataclass
class ClipPrediction:
    clip_id: str
    segment_probs: np.ndarray
    clip_prob: float
    rule: str
    patient_id: str = ""
    label: Label = Label.UNLABELED

    @property
    def segment_probs_negative(self) -> np.ndarray:
        return 1.0 - self.segment_probs


# -- architecture ------------------------------------------------------------------


def _branch(name: str, *layers) -> tuple[str, nn.Sequential]:
    return name, nn.Sequential(*layers)


class MultiScaleNet(nn.Module):
    def __init__(self, arch: ArchitectureConfig, input_shape, rng: np.random.Generator | None):
        super().__init__()
        c, h, w = (int(s) for s in input_shape)
        self.arch = arch
        self.input_shape = (c, h, w)
        r, u = arch.reduce, arch.conv_units
        branches = [
            _branch("b3x3",
                    ("reduce", nn.Conv2D(c, r, 1, rng)), ("relu0", nn.ReLU()),
                    ("conv", nn.Conv2D(r, u, 3, rng)), ("relu1", nn.ReLU())),
            _branch("b5x5",
                    ("reduce", nn.Conv2D(c, r, 1, rng)), ("relu0", nn.ReLU()),
                    ("conv", nn.Conv2D(r, u, 5, rng)), ("relu1", nn.ReLU())),
            _branch("bpool",
                    ("pool", nn.MaxPool2D(arch.pool_size)),
                    ("conv", nn.Conv2D(c, u, 1, rng)), ("relu0", nn.ReLU())),
        ]
        if arch.standalone_1x1_branch:
            branches.insert(0, _branch("b1x1", ("conv", nn.Conv2D(c, u, 1, rng)), ("relu0", nn.ReLU())))
        self.children["block"] = nn.Parallel(*branches)
        self.children["flatten"] = nn.Flatten()
        n_in = self.concat_channels * h * w
        for i, n_out in enumerate(arch.fc_sizes):
            self.children[f"fc{i + 1}"] = nn.Dense(n_in, n_out, rng)
            self.children[f"fc{i + 1}_relu"] = nn.ReLU()
            n_in = n_out
        self.children["out"] = nn.Dense(n_in, 1, rng)

    @property
    def concat_channels(self) -> int:
        return self.arch.n_branches * self.arch.conv_units

    @property
    def flat_size(self) -> int:
        return self.concat_channels * self.input_shape[1] * self.input_shape[2]

    def block_output_shape(self) -> tuple[int, int, int]:
        return (self.concat_channels, self.input_shape[1], self.input_shape[2])

    def forward(self, x):
        """Logits, shape (N,)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise nn.ShapeError(f"input shape {x.shape[1:]} != model input {self.input_shape}")
        for layer in self.children.values():
            x = layer.forward(x)
        return x[:, 0]

    def backward(self, dlogits, input_grad: bool = True):
        dy = np.asarray(dlogits, dtype=np.float64)[:, None]
        layers = list(self.children.values())
        for k in range(len(layers) - 1, -1, -1):
            need = input_grad or k > 0
            dy = layers[k].backward(dy, input_grad=need)
        return dy

    def predict_proba(self, x, batch_size: int = 64) -> np.ndarray:
        x = np.asarray(x)
        out = np.empty(len(x))
        for start in range(0, len(x), batch_size):
            out[start:start + batch_size] = nn.sigmoid(
                self.forward(np.asarray(x[start:start + batch_size], dtype=np.float64))
            )
        return out


def build_model(arch: ArchitectureConfig, input_shape, rng_seed: int | None = 0) -> MultiScaleNet:
    """He-normal weights, zero biases; rng_seed=None gives all-zero parameters."""
    if len(input_shape) != 3 or any(int(s) < 1 for s in input_shape):
        raise ValueError(f"input_shape must be (channels, freq, frames), got {input_shape}")
    rng = None if rng_seed is None else np.random.default_rng(rng_seed)
    return MultiScaleNet(arch, input_shape, rng)


def forward(model: MultiScaleNet, batch) -> np.ndarray:
    """Preictal probability P1 for each (already standardized) tensor in batch."""
    if isinstance(batch, (list, tuple)) and batch and isinstance(batch[0], SpectroTensor):
        batch = np.stack([t.values for t in batch])
    return model.predict_proba(batch)


# -- datasets ------------------------------------------------------------------------


@dataclass
class SegmentSet:
    """Segment tensors stacked as float32 (N, C, F, T) plus their provenance."""

    x: np.ndarray
    labels: np.ndarray
    clip_ids: list[str]
    patient_ids: list[str]
    segment_index: np.ndarray

    def __len__(self):
        return len(self.labels)

    @classmethod
    def from_tensors(cls, tensors) -> "SegmentSet":
        tensors = list(tensors)
        if not tensors:
            raise ValueError("empty tensor list")
        return cls(
            x=np.stack([t.values for t in tensors]).astype(np.float32),
            labels=np.array([int(t.label) for t in tensors]),
            clip_ids=[t.clip_id for t in tensors],
            patient_ids=[t.patient_id for t in tensors],
            segment_index=np.array([t.segment_index for t in tensors]),
        )

    def subset(self, idx) -> "SegmentSet":
        idx = np.asarray(idx, dtype=int)
        return SegmentSet(
            self.x[idx],
            self.labels[idx],
            [self.clip_ids[i] for i in idx],
            [self.patient_ids[i] for i in idx],
            self.segment_index[idx],
        )

    def clip_keys(self) -> list[tuple[str, str]]:
        return list(zip(self.patient_ids, self.clip_ids))


def default_class_weight(labels) -> float:
    """n_interictal / n_preictal."""
    labels = np.asarray(labels)
    n_pos = int(np.count_nonzero(labels == Label.PREICTAL))
    n_neg = int(np.count_nonzero(labels == Label.INTERICTAL))
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("class weight needs both interictal and preictal examples")
    return n_neg / n_pos


def validation_split(data: SegmentSet, fraction: float) -> tuple[np.ndarray, np.ndarray]:
    """Indices (fit, validation): the last `fraction` of clips per patient and class.

    Clips keep their manifest order, so validation clips are the most recent
    ones; all segments of a clip fall on the same side.
    """
    if fraction == 0:
        return np.arange(len(data)), np.array([], dtype=int)
    clip_order: dict[tuple[str, str], list[int]] = {}
    for i, key in enumerate(data.clip_keys()):
        clip_order.setdefault(key, []).append(i)
    groups: dict[tuple[str, int], list[tuple[str, str]]] = {}
    for key, rows in clip_order.items():
        groups.setdefault((key[0], int(data.labels[rows[0]])), []).append(key)
    val_clips = set()
    for clips in groups.values():
        n_val = min(int(np.floor(fraction * len(clips) + 0.5)), len(clips) - 1)
        if n_val > 0:
            val_clips.update(clips[-n_val:])
    fit, val = [], []
    for key, rows in clip_order.items():
        (val if key in val_clips else fit).extend(rows)
    return np.array(sorted(fit), dtype=int), np.array(sorted(val), dtype=int)


def fit_standardizer_array(x: np.ndarray, per_image: bool = False) -> Standardizer:
    """Per-channel mean/std of a (N, C, F, T) stack, accumulated in float64."""
    n_ch = x.shape[1]
    if per_image:
        return Standardizer(np.zeros(n_ch), np.ones(n_ch), per_image=True)
    total = np.zeros(n_ch)
    for chunk in np.array_split(x, max(1, len(x) // 256)):
        total += chunk.astype(np.float64).sum(axis=(0, 2, 3))
    count = x.shape[0] * x.shape[2] * x.shape[3]
    mean = total / count
    sq = np.zeros(n_ch)
    for chunk in np.array_split(x, max(1, len(x) // 256)):
        c = chunk.astype(np.float64) - mean[None, :, None, None]
        sq += np.einsum("nchw,nchw->c", c, c)
    return Standardizer(mean, np.maximum(np.sqrt(sq / count), STD_FLOOR))


def standardize_array(s: Standardizer, x: np.ndarray) -> np.ndarray:
    """Standardized float32 copy of a (N, C, F, T) stack."""
    out = np.empty(x.shape, dtype=np.float32)
    for start in range(0, len(x), 256):
        chunk = x[start:start + 256].astype(np.float64)
        if s.per_image:
            mean = chunk.mean(axis=(2, 3), keepdims=True)
            std = np.maximum(chunk.std(axis=(2, 3), keepdims=True), STD_FLOOR)
        else:
            if len(s.mean) != x.shape[1]:
                raise ValueError(f"standardizer has {len(s.mean)} channels, data has {x.shape[1]}")
            mean = np.asarray(s.mean)[None, :, None, None]
            std = np.asarray(s.std)[None, :, None, None]
        out[start:start + 256] = (chunk - mean) / std
    return out


# -- training ----------------------------------------------------------------------------


@dataclass
class TrainedModel:
    net: MultiScaleNet
    standardizer: Standardizer
    class_weight: float
    meta: dict = field(default_factory=dict)

    @property
    def arch(self) -> ArchitectureConfig:
        return self.net.arch

    def predict_segments(self, x: np.ndarray) -> np.ndarray:
        return self.net.predict_proba(standardize_array(self.standardizer, x))


@dataclass
class HistoryRow:
    epoch: int
    train_loss: float
    val_auc: float | None
    val_loss: float | None = None

    def score(self):
        """Selection key: higher AUC wins, lower validation loss breaks ties."""
        return (self.val_auc, -self.val_loss)


def _mean_loss(net: MultiScaleNet, x, y, w_pos: float, batch_size: int) -> float:
    total = 0.0
    for start in range(0, len(x), batch_size):
        z = net.forward(np.asarray(x[start:start + batch_size], dtype=np.float64))
        loss, _ = nn.weighted_bce_with_logits(z, y[start:start + batch_size], w_pos)
        total += loss.sum()
    return total / len(x)


def _val_auc(net: MultiScaleNet, x, y) -> float | None:
    if len(y) == 0:
        return None
    try:
        return roc_auc(net.predict_proba(x), y).auc
    except SingleClassError:
        return None


def train(data, cfg: TrainConfig = TrainConfig(), arch: ArchitectureConfig = ArchitectureConfig(),
          progress=None) -> tuple[TrainedModel, list[HistoryRow]]:
    """Class-weighted BCE + Adam; keeps the epoch with the best validation AUC.

    ``data`` is a SegmentSet or a list of SpectroTensor with raw (dB) values;
    the standardizer is fitted on the non-validation part only. Row 0 of the
    history describes the untrained initialization.
    """
    if not isinstance(data, SegmentSet):
        data = SegmentSet.from_tensors(data)
    labels = data.labels
    if np.any((labels != Label.INTERICTAL) & (labels != Label.PREICTAL)):
        raise TrainingError("training data contains unlabeled segments")
    try:
        class_weight = cfg.class_weight_pos or default_class_weight(labels)
    except SingleClassError as exc:
        raise TrainingError(f"training data must contain both classes: {exc}") from None
    if len(np.unique(labels)) < 2:
        raise TrainingError("training data must contain both classes")

    fit_idx, val_idx = validation_split(data, cfg.validation_fraction)
    standardizer = fit_standardizer_array(data.x[fit_idx], cfg.standardize_per_image)
    x_fit = standardize_array(standardizer, data.x[fit_idx])
    y_fit = labels[fit_idx].astype(np.float64)
    x_val = standardize_array(standardizer, data.x[val_idx]) if len(val_idx) else data.x[:0]
    y_val = labels[val_idx]

    net = build_model(arch, data.x.shape[1:], cfg.rng_seed)
    rng = np.random.default_rng([cfg.rng_seed, 1])
    adam = nn.AdamState(lr=cfg.learning_rate)
    params = net.named_parameters()

    def val_loss():
        return _mean_loss(net, x_val, y_val, class_weight, cfg.batch_size) if len(y_val) else None

    history = [HistoryRow(0, _mean_loss(net, x_fit, y_fit, class_weight, cfg.batch_size),
                          _val_auc(net, x_val, y_val), val_loss())]
    best_row = history[0] if history[0].val_auc is not None else None
    best = copy.deepcopy(params)

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(x_fit))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = np.sort(order[start:start + cfg.batch_size])
            xb = x_fit[idx].astype(np.float64)
            yb = y_fit[idx]
            net.zero_grad()
            z = net.forward(xb)
            with np.errstate(invalid="ignore", over="ignore"):
                loss, dz = nn.weighted_bce_with_logits(z, yb, class_weight)
            if not np.all(np.isfinite(loss)):
                n_bad = int(np.count_nonzero(~np.isfinite(z)))
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch starting {start}: "
                    f"{n_bad} of {len(z)} logits non-finite"
                )
            net.backward(dz / len(idx), input_grad=False)
            nn.adam_step(params, net.named_gradients(), adam)
            total += loss.sum()
        row = HistoryRow(epoch, total / len(order), _val_auc(net, x_val, y_val), val_loss())
        history.append(row)
        log.info("epoch %d train_loss %.5f val_auc %s", epoch, row.train_loss, row.val_auc)
        if progress is not None:
            progress(row)
        if row.val_auc is not None and (best_row is None or row.score() > best_row.score()):
            best_row = row
            best = copy.deepcopy(params)

    # without a usable validation set the last epoch is kept
    if best_row is not None:
        for name, value in best.items():
            params[name][...] = value
    meta = {
        "best_epoch": best_row.epoch if best_row is not None else cfg.epochs,
        "best_val_auc": best_row.val_auc if best_row is not None else None,
        "n_fit": int(len(fit_idx)),
        "n_val": int(len(val_idx)),
    }
    return TrainedModel(net, standardizer, float(class_weight), meta), history


# -- clip-level prediction ---------------------------------------------------------------

RULES = ("max", "mean")


def aggregate(segment_probs, rule: str = "max") -> float:
    probs = np.asarray(segment_probs, dtype=np.float64)
    if rule == "max":
        return float(probs.max())
    if rule == "mean":
        return float(probs.mean())
    raise ValueError(f"unknown rule {rule!r}; choose from {RULES}")


def predict_clip(model: TrainedModel, segments, rule: str = "max",
                 n_segments: int = 10) -> ClipPrediction:
    """Clip probability from exactly n_segments tensors of one clip, in time order."""
    segments = sorted(segments, key=lambda t: t.segment_index)
    if len(segments) != n_segments:
        raise ValueError(f"expected {n_segments} segments, got {len(segments)}")
    if len({(t.patient_id, t.clip_id) for t in segments}) != 1:
        raise ValueError("segments come from more than one clip")
    x = np.stack([t.values for t in segments])
    probs = model.predict_segments(x)
    return ClipPrediction(segments[0].clip_id, probs, aggregate(probs, rule), rule,
                          segments[0].patient_id, segments[0].label)


def predict_clips(model: TrainedModel, data: SegmentSet, rule: str = "max") -> list[ClipPrediction]:
    """Clip predictions for every clip in data, grouped by (patient, clip id)."""
    probs = model.predict_segments(data.x)
    groups: dict[tuple[str, str], list[int]] = {}
    for i, key in enumerate(data.clip_keys()):
        groups.setdefault(key, []).append(i)
    out = []
    for (patient, clip), rows in groups.items():
        rows = sorted(rows, key=lambda i: data.segment_index[i])
        p = probs[rows]
        out.append(ClipPrediction(clip, p, aggregate(p, rule), rule, patient, Label(int(data.labels[rows[0]]))))
    return out


# -- serialization -------------------------------------------------------------------------


def model_to_json(model: TrainedModel, extra: dict | None = None) -> dict:
    arch = asdict(model.arch)
    arch["fc_sizes"] = list(arch["fc_sizes"])
    return {
        "format": MODEL_FORMAT,
        "architecture": arch,
        "input_shape": list(model.net.input_shape),
        "class_weight_pos": model.class_weight,
        "standardizer": model.standardizer.to_json(),
        "meta": {**model.meta, **(extra or {})},
        "params": [
            {"name": name, "shape": list(value.shape), "data": value.ravel().tolist()}
            for name, value in model.net.named_parameters().items()
        ],
    }


def save_model(model: TrainedModel, path, extra: dict | None = None) -> None:
    Path(path).write_text(json.dumps(model_to_json(model, extra)) + "\n")


class ModelFormatError(ValueError):
    pass


def model_from_json(doc: dict) -> TrainedModel:
    if doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"unsupported model format {doc.get('format')!r}")
    arch_doc = dict(doc["architecture"])
    arch_doc["fc_sizes"] = tuple(arch_doc["fc_sizes"])
    arch = ArchitectureConfig(**arch_doc)
    net = build_model(arch, doc["input_shape"], rng_seed=None)
    params = net.named_parameters()
    seen = set()
    for entry in doc["params"]:
        name = entry["name"]
        if name not in params:
            raise ModelFormatError(f"unexpected parameter {name!r}")
        shape = tuple(entry["shape"])
        if shape != params[name].shape:
            raise ModelFormatError(f"parameter {name!r} has shape {shape}, architecture needs {params[name].shape}")
        data = np.asarray(entry["data"], dtype=np.float64)
        if data.size != np.prod(shape):
            raise ModelFormatError(f"parameter {name!r} has {data.size} values for shape {shape}")
        params[name][...] = data.reshape(shape)
        seen.add(name)
    missing = set(params) - seen
    if missing:
        raise ModelFormatError(f"missing parameters: {sorted(missing)}")
    return TrainedModel(net, Standardizer.from_json(doc["standardizer"]),
                        float(doc["class_weight_pos"]), dict(doc.get("meta", {})))


def load_model(path) -> TrainedModel:
    return model_from_json(json.loads(Path(path).read_text()))
