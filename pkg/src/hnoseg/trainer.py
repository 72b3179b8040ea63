"""Training loop: normalization, augmentation, Adamax, cosine schedule, evaluation."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import IO, Optional, Sequence, Union

import numpy as np
from scipy import ndimage

from .models import Model, ModelConfig, build_network
from .objective import dice, pcc_loss
from .seeding import substream
from .storage import Checkpoint
from .synthdata import Dataset, Sample
from .tensor import Tape, Tensor, backward

AUGMENT_PROB = 0.8
MAX_ROTATION_DEG = 30.0
MAX_SHIFT = 0.2
SCALE_RANGE = (0.8, 1.2)
VAR_FLOOR = 1e-8


@dataclass
class TrainConfig:
    epochs: int = 60
    lr_max: float = 5e-3
    lr_min: float = 1e-3
    batch_size: int = 1
    seed: int = 0
    augment: bool = True
    eval_resolutions: tuple = (32, 64)
    val_every: int = 1

    def __post_init__(self):
        self.eval_resolutions = tuple(int(r) for r in self.eval_resolutions)
        self.validate()

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not 0 <= self.lr_min <= self.lr_max:
            raise ValueError(f"need 0 <= lr_min <= lr_max, got {self.lr_min}, {self.lr_max}")
        if self.batch_size != 1:
            raise ValueError("only batch size 1 is supported")
        if self.val_every < 0:
            raise ValueError("val_every must be >= 0")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["eval_resolutions"] = list(self.eval_resolutions)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


class TrainingDiverged(RuntimeError):
    pass


# -------------------------------------------------------------- preprocessing

def normalize_intensity(image: np.ndarray) -> np.ndarray:
    """Per-channel z-score; a constant channel maps to zeros."""
    image = np.asarray(image, dtype=np.float64)
    axes = tuple(range(1, image.ndim))
    mean = image.mean(axis=axes, keepdims=True)
    var = image.var(axis=axes, keepdims=True)
    return (image - mean) / np.sqrt(np.maximum(var, VAR_FLOOR))


def _affine(shape: Sequence[int], angle_deg: float, shift: Sequence[float], scale: float):
    """Output-to-input map for rotation about the last axis, then scale and shift."""
    c = (np.asarray(shape, dtype=float) - 1) / 2
    a = math.radians(angle_deg)
    rot = np.array([[math.cos(a), -math.sin(a), 0.0], [math.sin(a), math.cos(a), 0.0], [0.0, 0.0, 1.0]])
    # forward: p_out = scale * rot @ (p_in - c) + c + shift
    matrix = rot.T / scale
    offset = c - matrix @ (c + np.asarray(shift, dtype=float))
    return matrix, offset


def affine_resample(sample: Sample, angle_deg: float, shift: Sequence[float], scale: float) -> Sample:
    """Apply one explicit transform; shift is in voxels.

    Images use linear interpolation with the channel mean outside the volume;
    labels use nearest neighbour with zero outside.
    """
    shape = sample.image.shape[1:]
    matrix, offset = _affine(shape, angle_deg, shift, scale)
    image = np.stack([
        ndimage.affine_transform(ch, matrix, offset, order=1, mode="constant", cval=float(ch.mean()))
        for ch in sample.image])
    labels = np.stack([
        ndimage.affine_transform(ch, matrix, offset, order=0, mode="constant", cval=0.0)
        for ch in sample.labels])
    return dataclasses.replace(sample, image=image, labels=labels)


def augment(sample: Sample, rng: np.random.Generator) -> Sample:
    """With probability 0.8 apply a random axial rotation, shift and isotropic scale."""
    if rng.random() >= AUGMENT_PROB:
        return sample
    shape = np.asarray(sample.image.shape[1:], dtype=float)
    angle = rng.uniform(-MAX_ROTATION_DEG, MAX_ROTATION_DEG)
    shift = rng.uniform(-MAX_SHIFT, MAX_SHIFT, size=3) * shape
    scale = rng.uniform(*SCALE_RANGE)
    return affine_resample(sample, angle, shift, scale)


# ----------------------------------------------------------------- optimizer

@dataclass
class OptimizerState:
    m: dict
    u: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params: dict) -> "OptimizerState":
        return cls({k: np.zeros_like(np.asarray(v)) for k, v in params.items()},
                   {k: np.zeros_like(np.asarray(v)) for k, v in params.items()})


def adamax_step(params: dict, grads: dict, state: OptimizerState, lr: float):
    """One Adamax update; returns ``(new_params, new_state)`` without mutating inputs."""
    if set(params) != set(grads) or set(params) != set(state.m):
        raise KeyError("params, grads and optimizer state must share the same keys")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_u = {}, {}, {}
    for k, theta in params.items():
        g = np.asarray(grads[k])
        m = b1 * state.m[k] + (1 - b1) * g
        u = np.maximum(b2 * state.u[k], np.abs(g))
        new_p[k] = np.asarray(theta) - lr * m / ((1 - b1 ** t) * u + state.eps)
        new_m[k], new_u[k] = m, u
    return new_p, dataclasses.replace(state, m=new_m, u=new_u, t=t)


def cosine_lr(epoch: int, config: TrainConfig) -> float:
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    if config.epochs == 1:
        return config.lr_max
    frac = epoch / (config.epochs - 1)
    return config.lr_min + 0.5 * (config.lr_max - config.lr_min) * (1 + math.cos(math.pi * frac))


# --------------------------------------------------------------- train/eval

def loss_and_grads(model: Model, image: np.ndarray, labels: np.ndarray):
    names = list(model.params)
    with Tape() as tape:
        scores = model.forward(Tensor(image, dtype=model.dtype))
        loss = pcc_loss(scores, labels)
    g = backward(tape, loss, [model.params[n] for n in names])
    return float(loss.item()), {n: g[model.params[n]] for n in names}


@dataclass
class EvalResult:
    resolution: tuple
    per_label: np.ndarray
    mean: float
    per_sample: np.ndarray = field(repr=False, default=None)


def _samples_at(data, resolution, split: str) -> list:
    if isinstance(data, Dataset):
        if resolution is None or tuple(resolution) == tuple(data.resolution):
            return list(data.train if split == "train" else data.val)
        return data.rasterized(resolution, split)
    samples = list(data)
    if resolution is not None:
        for s in samples:
            if tuple(s.image.shape[1:]) != tuple(resolution):
                raise ValueError(f"sample at {s.image.shape[1:]} but evaluation asked for {tuple(resolution)}")
    return samples


def predict(model: Model, image: np.ndarray) -> np.ndarray:
    """Scores for one raw image (normalized here); no tape is recorded."""
    return model.forward(Tensor(normalize_intensity(image), dtype=model.dtype)).numpy()


def evaluate(model: Model, data: Union[Dataset, Sequence[Sample]],
             resolution: Optional[Union[int, Sequence[int]]] = None, split: str = "val") -> EvalResult:
    """Dice per label (averaged over samples) and its mean, at ``resolution``."""
    if isinstance(resolution, (int, np.integer)):
        resolution = (int(resolution),) * 3
    if resolution is not None:
        model.config.check_resolution(resolution)
    samples = _samples_at(data, resolution, split)
    if not samples:
        raise ValueError("nothing to evaluate")
    rows = []
    for s in samples:
        model.config.check_resolution(s.image.shape[1:])
        rows.append(dice(predict(model, s.image), s.labels))
    rows = np.array(rows)
    per_label = rows.mean(axis=0)
    res = tuple(resolution) if resolution is not None else tuple(samples[0].image.shape[1:])
    return EvalResult(res, per_label, float(per_label.mean()), rows)


def _emit(log: list, stream: Optional[IO[str]], record: dict) -> None:
    log.append(record)
    if stream is not None:
        stream.write(json.dumps(record) + "\n")
        stream.flush()


def train(model_config: ModelConfig, train_config: TrainConfig,
          dataset: Union[Dataset, Sequence[Sample]], log_stream: Optional[IO[str]] = None,
          dtype=np.float64, val: Optional[Sequence[Sample]] = None):
    """Train from scratch; returns ``(Checkpoint, log records)``.

    The step order, augmentation draws and initialization all derive from
    ``train_config.seed``, so two runs with equal inputs agree bitwise.
    """
    if isinstance(dataset, Dataset):
        samples, val = list(dataset.train), list(dataset.val) if val is None else list(val)
    else:
        samples, val = list(dataset), list(val or [])
    if not samples:
        raise ValueError("training set is empty")
    spatial = samples[0].image.shape[1:]
    model = build_network(model_config, seed=train_config.seed, resolution=spatial, dtype=dtype)
    prepared = [dataclasses.replace(s, image=normalize_intensity(s.image)) for s in samples]
    order_rng = substream(train_config.seed, "data")
    aug_rng = substream(train_config.seed, "augment")
    state = OptimizerState.zeros({k: t.numpy() for k, t in model.params.items()})
    log: list = []
    step = 0
    lr = train_config.lr_max
    for epoch in range(train_config.epochs):
        lr = cosine_lr(epoch, train_config)
        losses = []
        for idx in order_rng.permutation(len(prepared)):
            s = prepared[idx]
            if train_config.augment:
                s = augment(s, aug_rng)
            loss, grads = loss_and_grads(model, s.image, s.labels)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"loss is {loss} at epoch {epoch}, step {step}")
            params = {k: t.numpy() for k, t in model.params.items()}
            new_params, state = adamax_step(params, grads, state, lr)
            model.set_params(new_params)
            _emit(log, log_stream, {"kind": "step", "epoch": epoch, "step": step, "lr": lr, "loss": loss})
            losses.append(loss)
            step += 1
        record = {"kind": "epoch", "epoch": epoch, "step": step, "lr": lr, "loss": float(np.mean(losses))}
        if val and train_config.val_every and ((epoch + 1) % train_config.val_every == 0
                                              or epoch == train_config.epochs - 1):
            result = evaluate(model, val)
            record["val_dice"] = [float(v) for v in result.per_label]
            record["val_mean_dice"] = result.mean
        _emit(log, log_stream, record)
    meta = {"epochs_completed": train_config.epochs, "final_lr": lr, "seed": train_config.seed,
            "steps": step, "train_config": train_config.to_dict()}
    return Checkpoint.from_model(model, meta), log
