"""Desk-scale CNN classifier with SGD training and epoch checkpointing.

The network is conv(3x3) - relu - maxpool, twice, then a dense layer to
class logits; the post-relu output of the second conv block is the named
activation used as the class-activation-mapping target.  Prediction
applies a softmax to the logits and breaks argmax ties toward the lowest
class index.

Training is plain SGD with momentum, single-threaded and reproducible:
the same seed and config give bit-identical parameters.  Checkpoints
snapshot the full parameter set plus the test accuracy at that epoch and
round-trip losslessly through the interchange container format.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from cose import autodiff as ad
from cose import interchange, transforms
from cose.autodiff import ComputeGraph, Tensor


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 30
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 32
    augment_prob: float = 0.5
    seed: int = 0


class MicroModel:
    """Small trainable CNN over (side, side, channels) inputs."""

    gradcam_layer = "conv2_relu"

    def __init__(self, input_side=32, channels=3, num_classes=3, conv_channels=(16, 32), seed=0, dtype=np.float32):
        self.input_side = int(input_side)
        self.channels = int(channels)
        self.num_classes = int(num_classes)
        self.conv_channels = tuple(int(c) for c in conv_channels)
        self.dtype = np.dtype(dtype)
        if self.input_side % 4:
            raise ValueError("input side must be divisible by 4 (two 2x2 pools)")

        c1, c2 = self.conv_channels
        side4 = self.input_side // 4
        rng = np.random.default_rng(seed)

        def he(shape, fan_in):
            return (rng.normal(size=shape) * np.sqrt(2.0 / fan_in)).astype(self.dtype)

        def glorot(shape):
            fan_in, fan_out = shape
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-lim, lim, size=shape).astype(self.dtype)

        self.params: dict[str, Tensor] = {
            "conv1_w": Tensor(he((3, 3, self.channels, c1), 9 * self.channels), requires_grad=True, dtype=self.dtype),
            "conv1_b": Tensor(np.zeros(c1, dtype=self.dtype), requires_grad=True, dtype=self.dtype),
            "conv2_w": Tensor(he((3, 3, c1, c2), 9 * c1), requires_grad=True, dtype=self.dtype),
            "conv2_b": Tensor(np.zeros(c2, dtype=self.dtype), requires_grad=True, dtype=self.dtype),
            "dense_w": Tensor(glorot((side4 * side4 * c2, self.num_classes)), requires_grad=True, dtype=self.dtype),
            "dense_b": Tensor(np.zeros(self.num_classes, dtype=self.dtype), requires_grad=True, dtype=self.dtype),
        }
        for name, t in self.params.items():
            t.name = name

    @property
    def input_shape(self):
        return (self.input_side, self.input_side, self.channels)

    def arch_config(self) -> dict:
        return {
            "input_side": self.input_side,
            "channels": self.channels,
            "num_classes": self.num_classes,
            "conv_channels": list(self.conv_channels),
        }

    def _fn(self, x):
        p = self.params
        # center [0, 1] inputs to [-1, 1]; constant-lr SGD needs zero-mean inputs
        x = ad.mul(ad.add(x, np.asarray(-0.5, dtype=self.dtype)), np.asarray(2.0, dtype=self.dtype))
        h = ad.relu(ad.conv2d(x, p["conv1_w"], p["conv1_b"], padding=1))
        h.name = "conv1_relu"
        h = ad.max_pool2d(h, 2)
        h = ad.relu(ad.conv2d(h, p["conv2_w"], p["conv2_b"], padding=1))
        h.name = self.gradcam_layer
        h = ad.max_pool2d(h, 2)
        h = ad.reshape(h, (h.shape[0], -1))
        logits = ad.dense(h, p["dense_w"], p["dense_b"])
        logits.name = "logits"
        return logits

    def graph(self) -> ComputeGraph:
        """Fresh compute graph over the shared (frozen) parameters; each
        saliency invocation owns one."""
        return ComputeGraph(self._fn, self.input_shape, dtype=self.dtype)

    def logits(self, images: np.ndarray) -> np.ndarray:
        g = self.graph()
        out = g.forward(np.asarray(images, dtype=self.dtype), requires_input_grad=False)
        return out.data

    def predict_batch(self, images: np.ndarray):
        logits = self.logits(images)
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        probs = e / e.sum(axis=1, keepdims=True)
        return logits.argmax(axis=1), probs

    def predict(self, image: np.ndarray):
        """(class index, probability vector); argmax ties go to the lowest index."""
        classes, probs = self.predict_batch(np.asarray(image)[None])
        return int(classes[0]), probs[0]

    # -- parameter snapshots --------------------------------------------

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, t in self.params.items():
            arr = np.asarray(state[name], dtype=self.dtype)
            if arr.shape != t.data.shape:
                raise ValueError(f"parameter {name}: shape {arr.shape} != {t.data.shape}")
            t.data = arr.copy()


def predict(model_or_checkpoint, image: np.ndarray):
    """Dispatching predict: accepts a MicroModel or a ModelCheckpoint."""
    model = model_or_checkpoint.to_model() if isinstance(model_or_checkpoint, ModelCheckpoint) else model_or_checkpoint
    return model.predict(image)


def accuracy(model: MicroModel, images: np.ndarray, labels: np.ndarray) -> float:
    classes, _ = model.predict_batch(images)
    return float((classes == np.asarray(labels)).mean())


@dataclass
class ModelCheckpoint:
    """Frozen parameters at a training epoch plus the recorded test accuracy."""

    epoch: int
    params: dict[str, np.ndarray]
    test_accuracy: float
    arch: dict = field(default_factory=dict)
    config_hash: str = ""

    def to_model(self) -> MicroModel:
        model = MicroModel(**self.arch) if self.arch else MicroModel()
        model.load_state(self.params)
        return model

    def save(self, path) -> None:
        meta = {
            "kind": "checkpoint",
            "epoch": self.epoch,
            "test_accuracy": self.test_accuracy,
            "arch": self.arch,
            "config_hash": self.config_hash,
        }
        interchange.write(path, self.params, meta)

    @classmethod
    def load(cls, path) -> "ModelCheckpoint":
        entries, meta = interchange.read(path)
        if meta.get("kind") != "checkpoint":
            raise ValueError(f"{path}: container is not a checkpoint")
        return cls(
            epoch=int(meta["epoch"]),
            params=dict(entries),
            test_accuracy=float(meta["test_accuracy"]),
            arch=meta.get("arch", {}),
            config_hash=meta.get("config_hash", ""),
        )


def config_hash(model: MicroModel, cfg: TrainConfig) -> str:
    doc = json.dumps({"arch": model.arch_config(), "train": vars(cfg)}, sort_keys=True)
    return hashlib.sha256(doc.encode()).hexdigest()[:16]


def train(model: MicroModel, data, epochs=None, checkpoint_epochs=(0, 1, 2, 5, 10, 20), cfg: TrainConfig | None = None):
    """SGD-with-momentum training loop with epoch checkpointing.

    Returns checkpoints at the requested epochs plus the final model
    state.  Checkpoint 0 is the untrained initialization.  Training
    images are augmented with the same transform suite used at
    evaluation time.  A non-finite loss aborts immediately.
    """
    cfg = cfg or TrainConfig()
    if epochs is not None:
        cfg.epochs = int(epochs)
    if cfg.epochs < 0:
        raise ValueError("epochs must be >= 0")
    bad = [e for e in checkpoint_epochs if not 0 <= e <= cfg.epochs]
    if bad:
        raise ValueError(f"checkpoint epochs {bad} outside [0, {cfg.epochs}]")

    train_images, train_labels = data.train()
    test_images, test_labels = data.test()
    mean_color = data.mean_color
    rng = np.random.default_rng(cfg.seed)
    chash = config_hash(model, cfg)
    wanted = set(checkpoint_epochs) | {cfg.epochs}

    def snapshot(epoch):
        return ModelCheckpoint(
            epoch=epoch,
            params=model.state(),
            test_accuracy=accuracy(model, test_images, test_labels),
            arch=model.arch_config(),
            config_hash=chash,
        )

    checkpoints = []
    if 0 in wanted:
        checkpoints.append(snapshot(0))

    graph = model.graph()
    velocity = {name: np.zeros_like(t.data) for name, t in model.params.items()}
    n_train = len(train_images)

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n_train)
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = train_images[idx].copy()
            for bi in range(len(batch)):
                if rng.random() < cfg.augment_prob:
                    spec = transforms.sample_transform(rng)
                    batch[bi] = transforms.apply_transform(spec, batch[bi], fill=mean_color)
            logits = graph.forward(batch.astype(model.dtype), requires_input_grad=False)
            loss = ad.cross_entropy(logits, train_labels[idx])
            if not np.isfinite(loss.data):
                raise TrainingDivergedError(f"non-finite loss {loss.data} at epoch {epoch}")
            ad.backprop(loss, np.asarray(1.0, dtype=model.dtype))
            for name, t in model.params.items():
                velocity[name] = cfg.momentum * velocity[name] - cfg.lr * t.grad
                t.data = t.data + velocity[name]
        if epoch in wanted:
            checkpoints.append(snapshot(epoch))

    checkpoints.sort(key=lambda c: c.epoch)
    return checkpoints
