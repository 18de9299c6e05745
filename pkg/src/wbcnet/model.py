"""The classifier network, its training loop, and checkpoint serialization.

The stack is three conv/ReLU/maxpool/dropout blocks followed by a flatten,
one or more 64-unit ReLU hidden layers, and a softmax output layer:

    Conv(3->32, 3x3, s1) -> ReLU -> MaxPool(2x2, s1) -> Dropout(0.2)
    Conv(32->64, 3x3, s2) -> ReLU -> MaxPool(2x2, s1) -> Dropout(0.2)
    Conv(64->64, 3x3, s1) -> ReLU -> MaxPool(2x2, s1) -> Dropout(0.2)
    Flatten -> Dense(64) -> ReLU -> Dense(n_classes) -> Softmax

All convolutions and pools use valid padding. The flatten order is
channel-major row-major ([C, H, W] in C order), which checkpoint portability
depends on. Checkpoints are little-endian binary: magic ``WBCN``, a u32
version, a length-prefixed JSON descriptor, then raw parameter blocks in
stack order.
"""

from __future__ import annotations

import json
import os
import struct
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import Dataset, batches
from .errors import ArchitectureError, DecodeError, FormatError, GeometryError, \
    InsufficientDataError, ShapeError
from .layers import Conv2D, Dense, Dropout, Flatten, MaxPool2D, ReLU, \
    _to_nchw, _to_nhwc, conv_output_hw, softmax
from .optim import AdamState, cross_entropy

CHECKPOINT_MAGIC = b"WBCN"
CHECKPOINT_VERSION = 1

_DROPOUT_STREAM = 3
_INIT_STREAM = 4


@dataclass(frozen=True)
class NetConfig:
    """Architecture hyperparameters; the default is the full-size classifier."""
    n_classes: int = 4
    in_channels: int = 3
    input_hw: tuple[int, int] = (100, 100)
    conv_filters: tuple[int, ...] = (32, 64, 64)
    conv_strides: tuple[int, ...] = (1, 2, 1)
    kernel_size: int = 3
    pool_size: int = 2
    pool_stride: int = 1
    dropout_rate: float = 0.2
    hidden_units: tuple[int, ...] = (64,)
    dtype: str = "float32"

    def np_dtype(self):
        return np.dtype(self.dtype)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    seconds: float


class WbcNet:
    """The convolutional classifier. Input contract: ``[3, H, W]`` per image."""

    def __init__(self, config: NetConfig = NetConfig(), seed: int = 0):
        if config.n_classes < 2:
            raise ValueError(f"need at least 2 classes, got {config.n_classes}")
        if len(config.conv_filters) != len(config.conv_strides):
            raise ValueError("conv_filters and conv_strides must have equal length")
        self.config = config
        self.seed = seed
        dtype = config.np_dtype()
        rng = np.random.default_rng([_INIT_STREAM, seed])

        h, w = config.input_hw
        channels = config.in_channels
        self.blocks: list[tuple[Conv2D, ReLU, MaxPool2D, Dropout]] = []
        for filters, stride in zip(config.conv_filters, config.conv_strides):
            conv = Conv2D(channels, filters, config.kernel_size, stride,
                          rng=rng, dtype=dtype)
            h, w = conv_output_hw(h, w, config.kernel_size, stride)
            pool = MaxPool2D(config.pool_size, config.pool_size, config.pool_stride)
            h, w = conv_output_hw(h, w, config.pool_size, config.pool_stride)
            if h < 1 or w < 1:
                raise GeometryError(f"input {config.input_hw} is too small for the "
                                    f"configured stack")
            self.blocks.append((conv, ReLU(), pool, Dropout(config.dropout_rate)))
            channels = filters
        self.flatten = Flatten()
        self.flat_features = channels * h * w
        self.hidden: list[tuple[Dense, ReLU]] = []
        in_features = self.flat_features
        for units in config.hidden_units:
            self.hidden.append((Dense(in_features, units, init="he", rng=rng, dtype=dtype),
                                ReLU()))
            in_features = units
        self.output = Dense(in_features, config.n_classes, init="glorot", rng=rng, dtype=dtype)

    # -- parameter plumbing ----------------------------------------------------

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        """(name, array) pairs in stack order; arrays are the live parameters."""
        params: list[tuple[str, np.ndarray]] = []
        for i, (conv, _, _, _) in enumerate(self.blocks):
            params.append((f"conv{i}.kernels", conv.kernels))
            params.append((f"conv{i}.bias", conv.bias))
        for i, (dense, _) in enumerate(self.hidden):
            params.append((f"hidden{i}.weights", dense.weights))
            params.append((f"hidden{i}.bias", dense.bias))
        params.append(("output.weights", self.output.weights))
        params.append(("output.bias", self.output.bias))
        return params

    def load_parameter_values(self, values: list[tuple[str, np.ndarray]]) -> None:
        own = dict(self.parameters())
        if [n for n, _ in values] != [n for n, _ in self.parameters()]:
            raise ArchitectureError("parameter names/order do not match this model")
        for name, arr in values:
            if own[name].shape != arr.shape:
                raise ArchitectureError(f"parameter {name} has shape {arr.shape}, "
                                        f"model expects {own[name].shape}")
            own[name][...] = arr

    def set_training(self, training: bool) -> None:
        for _, _, _, dropout in self.blocks:
            dropout.training = training

    # -- forward / backward ------------------------------------------------------

    def forward_logits(self, x: np.ndarray, *, training: bool = False,
                       rng: np.random.Generator | None = None) -> np.ndarray:
        if x.ndim != 4:
            raise ShapeError(f"expected [N, C, H, W] batch, got shape {x.shape}")
        expected = (self.config.in_channels, *self.config.input_hw)
        if x.shape[1:] != expected:
            raise ShapeError(f"expected images of shape {expected}, got {x.shape[1:]}")
        self.set_training(training)
        h = _to_nhwc(x.astype(self.config.np_dtype(), copy=False))
        for conv, act, pool, dropout in self.blocks:
            h = dropout.forward(pool.forward_nhwc(act.forward(conv.forward_nhwc(h))), rng)
        flat = self.flatten.forward(_to_nchw(h))
        for dense, act in self.hidden:
            flat = act.forward(dense.forward(flat))
        return self.output.forward(flat)

    def forward_proba(self, x: np.ndarray, *, training: bool = False,
                      rng: np.random.Generator | None = None) -> np.ndarray:
        return softmax(self.forward_logits(x, training=training, rng=rng))

    def backward_from_logits(self, grad_logits: np.ndarray) -> list[tuple[str, np.ndarray]]:
        """Backpropagate a logits gradient; returns grads aligned with parameters()."""
        grads: dict[str, np.ndarray] = {}
        g, gw, gb = self.output.backward(grad_logits)
        grads["output.weights"] = gw
        grads["output.bias"] = gb
        for i in range(len(self.hidden) - 1, -1, -1):
            dense, act = self.hidden[i]
            g, gw, gb = dense.backward(act.backward(g))
            grads[f"hidden{i}.weights"] = gw
            grads[f"hidden{i}.bias"] = gb
        g = _to_nhwc(self.flatten.backward(g))
        for i in range(len(self.blocks) - 1, -1, -1):
            conv, act, pool, dropout = self.blocks[i]
            g = pool.backward_nhwc(dropout.backward(g))
            g, gk, gb = conv.backward_nhwc(act.backward(g))
            grads[f"conv{i}.kernels"] = gk
            grads[f"conv{i}.bias"] = gb
        return [(name, grads[name]) for name, _ in self.parameters()]


def build(n_classes: int = 4, seed: int = 0, **config_overrides) -> WbcNet:
    """Construct the classifier with seeded initialization."""
    config = replace(NetConfig(), n_classes=n_classes, **config_overrides)
    return WbcNet(config, seed=seed)


def predict(model_or_checkpoint, image: np.ndarray) -> tuple[int, np.ndarray]:
    """Classify one ``[3, H, W]`` image; returns (class index, probability vector).

    Dropout runs in inference mode; argmax ties resolve to the lowest index.
    """
    model = model_or_checkpoint
    if isinstance(model_or_checkpoint, Checkpoint):
        model = model_from_checkpoint(model_or_checkpoint)
    expected = (model.config.in_channels, *model.config.input_hw)
    image = np.asarray(image)
    if image.shape != expected:
        raise ShapeError(f"expected image of shape {expected}, got {image.shape}")
    probs = model.forward_proba(image[np.newaxis], training=False)[0]
    return int(np.argmax(probs)), probs


# -- checkpointing ---------------------------------------------------------------


@dataclass
class Checkpoint:
    """Model parameters plus the descriptor needed to rebuild and verify them."""
    config: NetConfig
    class_names: list[str]
    params: list[tuple[str, np.ndarray]]
    epoch: int = 0
    train_loss: float = float("nan")
    val_loss: float = float("nan")
    seed: int = 0
    extra: dict = field(default_factory=dict)

    @staticmethod
    def from_model(model: WbcNet, class_names: list[str], *, epoch: int = 0,
                   train_loss: float = float("nan"), val_loss: float = float("nan"),
                   seed: int = 0) -> "Checkpoint":
        params = [(name, arr.copy()) for name, arr in model.parameters()]
        return Checkpoint(config=model.config, class_names=list(class_names),
                          params=params, epoch=epoch, train_loss=train_loss,
                          val_loss=val_loss, seed=seed)

    def apply_to(self, model: WbcNet) -> WbcNet:
        if model.config != self.config:
            raise ArchitectureError(
                f"checkpoint architecture {self.config} does not match model "
                f"architecture {model.config}")
        model.load_parameter_values(self.params)
        return model


def model_from_checkpoint(checkpoint: Checkpoint) -> WbcNet:
    model = WbcNet(checkpoint.config, seed=checkpoint.seed)
    model.load_parameter_values(checkpoint.params)
    return model


def save_checkpoint(checkpoint: Checkpoint, path) -> None:
    """Serialize a checkpoint; the write is atomic (temp file + rename)."""
    config = checkpoint.config
    descriptor = {
        "arch": asdict(config),
        "class_names": checkpoint.class_names,
        "params": [{"name": name, "shape": list(arr.shape)}
                   for name, arr in checkpoint.params],
        "meta": {
            "epoch": checkpoint.epoch,
            "train_loss": checkpoint.train_loss,
            "val_loss": checkpoint.val_loss,
            "seed": checkpoint.seed,
        },
    }
    desc_bytes = json.dumps(descriptor, sort_keys=True).encode("utf-8")
    dtype = np.dtype(config.dtype).newbyteorder("<")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(desc_bytes)))
        fh.write(desc_bytes)
        for _, arr in checkpoint.params:
            fh.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    """Parse and validate a checkpoint file; rejects corrupt or truncated data."""
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path} is not a checkpoint (bad magic)")
    if len(data) < 12:
        raise DecodeError(f"{path} truncated before descriptor")
    version = int(np.frombuffer(data, dtype="<u4", count=1, offset=4)[0])
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    desc_len = int(np.frombuffer(data, dtype="<u4", count=1, offset=8)[0])
    desc_end = 12 + desc_len
    if desc_end > len(data):
        raise DecodeError(f"{path} truncated inside descriptor")
    try:
        descriptor = json.loads(data[12:desc_end].decode("utf-8"))
        arch = dict(descriptor["arch"])
        for key in ("input_hw", "conv_filters", "conv_strides", "hidden_units"):
            arch[key] = tuple(arch[key])
        config = NetConfig(**arch)
        class_names = list(descriptor["class_names"])
        param_specs = [(p["name"], tuple(p["shape"])) for p in descriptor["params"]]
        meta = descriptor["meta"]
    except (KeyError, TypeError, ValueError, UnicodeDecodeError) as exc:
        raise DecodeError(f"{path} has a corrupt descriptor: {exc}") from exc
    dtype = np.dtype(config.dtype).newbyteorder("<")
    expected = desc_end + sum(int(np.prod(shape)) * dtype.itemsize
                              for _, shape in param_specs)
    if len(data) != expected:
        raise DecodeError(f"{path} payload is {len(data)} bytes, expected {expected}")
    params: list[tuple[str, np.ndarray]] = []
    offset = desc_end
    native = np.dtype(config.dtype)
    for name, shape in param_specs:
        count = int(np.prod(shape))
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
        params.append((name, np.ascontiguousarray(arr.astype(native)).reshape(shape)))
        offset += count * dtype.itemsize
    return Checkpoint(config=config, class_names=class_names, params=params,
                      epoch=int(meta["epoch"]), train_loss=float(meta["train_loss"]),
                      val_loss=float(meta["val_loss"]), seed=int(meta["seed"]))


# -- training loop -----------------------------------------------------------------


def evaluate_split(model: WbcNet, dataset: Dataset, split: str,
                   batch_size: int = 32) -> tuple[float, float, list[int], list[int]]:
    """Inference-mode loss and accuracy over a split, in dataset order.

    Returns (mean loss, accuracy, truths, predictions); (nan, nan, [], []) for
    an empty split.
    """
    members = dataset.subset(split)
    if not members:
        return float("nan"), float("nan"), [], []
    loss_sum = 0.0
    correct = 0
    truths: list[int] = []
    predictions: list[int] = []
    for start in range(0, len(members), batch_size):
        chunk = members[start:start + batch_size]
        inputs = np.stack([img.pixels for img in chunk])
        labels = np.array([img.label for img in chunk], dtype=np.int64)
        probs = model.forward_proba(inputs, training=False)
        loss_sum += cross_entropy(probs, labels).value * len(chunk)
        preds = np.argmax(probs, axis=1)
        correct += int((preds == labels).sum())
        truths.extend(int(v) for v in labels)
        predictions.extend(int(v) for v in preds)
    n = len(members)
    return loss_sum / n, correct / n, truths, predictions


def train(model: WbcNet, dataset: Dataset, *, epochs: int = 150, batch_size: int = 32,
          learning_rate: float = 1e-3, seed: int = 42, best_on: str = "val_loss",
          checkpoint_path=None, log=None) -> tuple[Checkpoint, list[EpochRecord]]:
    """Train with Adam, retaining the weights with the best monitored loss.

    Each epoch runs every training batch with dropout active, then measures
    validation loss/accuracy with dropout off. Whenever the monitored loss
    (validation loss by default) reaches a new minimum the best checkpoint is
    replaced, and written to ``checkpoint_path`` if given. If the dataset has
    no validation split the monitor falls back to training loss.
    """
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    if best_on not in ("val_loss", "train_loss"):
        raise ValueError(f"best_on must be 'val_loss' or 'train_loss', got {best_on!r}")
    if not dataset.subset("train"):
        raise InsufficientDataError("dataset has no training split")
    has_validation = bool(dataset.subset("validation"))
    monitor = best_on
    if monitor == "val_loss" and not has_validation:
        if log:
            log("no validation split; monitoring train_loss for best weights")
        monitor = "train_loss"

    optimizer = {name: AdamState(learning_rate=learning_rate)
                 for name, _ in model.parameters()}
    dropout_rng = np.random.default_rng([_DROPOUT_STREAM, seed])
    best_value = np.inf
    best: Checkpoint | None = None
    records: list[EpochRecord] = []

    for epoch in range(1, epochs + 1):
        started = time.perf_counter()
        loss_sum = 0.0
        correct = 0
        seen = 0
        for batch in batches(dataset, "train", batch_size, seed=seed, epoch=epoch):
            probs = model.forward_proba(batch.inputs, training=True, rng=dropout_rng)
            loss = cross_entropy(probs, batch.labels)
            grads = dict(model.backward_from_logits(loss.grad_logits))
            for name, param in model.parameters():
                optimizer[name].step(param, grads[name])
            n = len(batch.labels)
            loss_sum += loss.value * n
            correct += int((np.argmax(probs, axis=1) == batch.labels).sum())
            seen += n
        train_loss = loss_sum / seen
        train_acc = correct / seen
        val_loss, val_acc, _, _ = evaluate_split(model, dataset, "validation", batch_size)
        record = EpochRecord(epoch=epoch, train_loss=train_loss, train_acc=train_acc,
                             val_loss=val_loss, val_acc=val_acc,
                             seconds=time.perf_counter() - started)
        records.append(record)
        monitored = train_loss if monitor == "train_loss" else val_loss
        if monitored < best_value:
            best_value = monitored
            best = Checkpoint.from_model(model, dataset.class_names, epoch=epoch,
                                         train_loss=train_loss, val_loss=val_loss,
                                         seed=seed)
            if checkpoint_path is not None:
                save_checkpoint(best, checkpoint_path)
        if log:
            log(f"epoch {epoch}/{epochs} train_loss={train_loss:.4f} "
                f"train_acc={train_acc:.4f} val_loss={val_loss:.4f} "
                f"val_acc={val_acc:.4f} ({record.seconds:.1f}s)")

    if best is None:
        # monitored loss was never finite (e.g. all-nan); keep the final weights
        last = records[-1]
        best = Checkpoint.from_model(model, dataset.class_names, epoch=last.epoch,
                                     train_loss=last.train_loss, val_loss=last.val_loss,
                                     seed=seed)
        if checkpoint_path is not None:
            save_checkpoint(best, checkpoint_path)
    return best, records


def write_epoch_csv(records: list[EpochRecord], path, *, timing: bool = False) -> None:
    """Write `epoch,train_loss,train_acc,val_loss,val_acc,seconds` rows.

    Wall time varies between otherwise identical runs, so the seconds column
    is zeroed unless ``timing`` is requested; every other column is a pure
    function of the run configuration.
    """
    with open(path, "w", newline="") as fh:
        fh.write("epoch,train_loss,train_acc,val_loss,val_acc,seconds\n")
        for r in records:
            seconds = r.seconds if timing else 0.0
            fh.write(f"{r.epoch},{r.train_loss:.6f},{r.train_acc:.6f},"
                     f"{r.val_loss:.6f},{r.val_acc:.6f},{seconds:.3f}\n")
