"""Epoch loop, evaluation and checkpoints."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import blocks as hb
from .data import Dataset
from .grad import run_backprop
from .htns import read_checkpoint, tensor_text, text_tensor, write_checkpoint
from .losses import cross_entropy_loss, l2_loss, label_histogram, mean_frequency_weights, metrics
from .optim import Optimizer, StepSchedule
from .tensor import NonFiniteError

log = logging.getLogger(__name__)

CSV_HEADER = "epoch,loss,global_acc,class_avg,lr,peak_activation_bytes"
EVAL_BATCH = 64
DTYPES = {"f64": np.float64, "f32": np.float32}


@dataclass
class TrainConfig:
    optimizer: str = "sgd"
    lr: float = 0.1
    momentum: float = 0.0
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # step decay: every `period` epochs, or at each milestone
    period: int | None = None
    milestones: tuple[int, ...] = ()
    factor: float = 0.1
    epochs: int = 1
    batch_size: int = 32
    loss: str = "cross_entropy"
    weighting: str = "none"
    seed: int = 0
    dtype: str = "f64"
    mode: str = "reversible"
    checkpoint_every: int = 0
    # rescale the whole gradient when its global L2 norm exceeds this
    clip_norm: float | None = None

    def __post_init__(self):
        self.milestones = tuple(int(m) for m in self.milestones)
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.loss not in ("cross_entropy", "l2"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.weighting not in ("none", "mean_frequency"):
            raise ValueError(f"unknown weighting {self.weighting!r}")
        if self.dtype not in DTYPES:
            raise ValueError(f"unknown dtype {self.dtype!r}")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive")
        if self.mode not in ("reversible", "stored"):
            raise ValueError(f"unknown mode {self.mode!r}")
        self.make_optimizer()
        self.schedule()

    def make_optimizer(self) -> Optimizer:
        return Optimizer(self.optimizer, self.lr, self.momentum, self.weight_decay,
                         self.beta1, self.beta2, self.eps)

    def schedule(self) -> StepSchedule:
        return StepSchedule(self.lr, self.factor, self.period, self.milestones)


# --- models ------------------------------------------------------------------


class HyperNet:
    """The leapfrog network behind the common model interface."""

    kind = "hyper"

    def __init__(self, spec: hb.NetworkSpec):
        self.spec = spec

    @property
    def task(self) -> str:
        return {"classifier": "classification", "segmenter": "segmentation",
                "regressor": "regression"}[self.spec.head]

    def init_params(self, rng, dtype=np.float64):
        return hb.init_params(self.spec, rng, dtype)

    def check_params(self, params):
        hb.check_params(self.spec, params)

    def forward(self, params, x):
        return hb.forward_network(x, self.spec, params)[0]

    def loss_and_grad(self, params, x, target, loss_fn, mode=None):
        r = run_backprop(self.spec, params, x, loss_fn, target, mode)
        return r.loss, r.grads, r.tape.meter.peak

    def to_json(self) -> str:
        d = asdict(self.spec)
        d["kind"] = self.kind
        return json.dumps(d, sort_keys=True)


def model_from_json(text: str):
    d = json.loads(text)
    kind = d.pop("kind")
    if kind == "hyper":
        if d.get("image_size") is not None:
            d["image_size"] = tuple(d["image_size"])
        return HyperNet(hb.NetworkSpec(**d))
    if kind == "resnet":
        from .baseline import ResNetBaseline, ResNetBaselineSpec

        return ResNetBaseline(ResNetBaselineSpec(**d))
    raise ValueError(f"unknown model kind {kind!r}")


# --- losses and evaluation ---------------------------------------------------


def make_loss(config: TrainConfig, weights: np.ndarray | None) -> Callable:
    if config.loss == "l2":
        return l2_loss
    return lambda out, t: cross_entropy_loss(out, t, weights)


def class_weights(config: TrainConfig, data: Dataset) -> np.ndarray | None:
    if config.loss != "cross_entropy" or config.weighting == "none":
        return None
    return mean_frequency_weights(label_histogram(data.y, data.classes))


def check_compatible(model, data: Dataset) -> None:
    if model.task != data.task:
        raise ValueError(f"model is a {model.task} network but the dataset is {data.task}")
    spec = model.spec
    if data.x.shape[1] != spec.input_channels:
        raise ValueError(f"dataset has {data.x.shape[1]} channels, model expects {spec.input_channels}")
    if data.task != "regression" and data.classes != spec.classes:
        raise ValueError(f"dataset has {data.classes} classes, model has {spec.classes}")


def predict(model, params, x: np.ndarray) -> np.ndarray:
    outs = [model.forward(params, x[i : i + EVAL_BATCH]) for i in range(0, len(x), EVAL_BATCH)]
    return np.concatenate(outs) if outs else np.zeros((0,))


def evaluate(model, params, data: Dataset, loss_fn: Callable) -> dict[str, float]:
    """Mean loss plus accuracy metrics, computed in fixed-size batches."""
    total, count = 0.0, 0
    preds = []
    for i in range(0, len(data), EVAL_BATCH):
        out = model.forward(params, data.x[i : i + EVAL_BATCH])
        t = data.y[i : i + EVAL_BATCH]
        total += loss_fn(out, t)[0] * len(t)
        count += len(t)
        if data.task != "regression":
            preds.append(np.argmax(out, axis=1))
    res = {"loss": total / max(count, 1)}
    if data.task == "regression":
        res.update(global_accuracy=math.nan, class_average_accuracy=math.nan)
    else:
        res.update(metrics(np.concatenate(preds), data.y, data.classes))
    return res


# --- checkpoints -------------------------------------------------------------


def save_checkpoint(path, model, params: dict, opt: Optimizer, config: TrainConfig,
                    epoch: int, weights: np.ndarray | None = None) -> None:
    t = dict(params)
    for k, v in opt.state.items():
        t[f"opt.{k}"] = v
    t["meta.model"] = text_tensor(model.to_json())
    t["meta.train"] = text_tensor(json.dumps(asdict(config), sort_keys=True))
    t["meta.epoch"] = np.array([epoch], dtype=np.float64)
    if weights is not None:
        t["loss.weights"] = np.asarray(weights, dtype=np.float64)
    write_checkpoint(path, t)


@dataclass
class Checkpoint:
    model: object
    params: dict
    opt_state: dict
    config: TrainConfig
    epoch: int
    weights: np.ndarray | None


def load_checkpoint(path) -> Checkpoint:
    t = read_checkpoint(path)
    try:
        model = model_from_json(tensor_text(t.pop("meta.model")))
        cfg = json.loads(tensor_text(t.pop("meta.train")))
        epoch = int(t.pop("meta.epoch")[0])
    except (KeyError, ValueError, TypeError) as e:
        raise ValueError(f"checkpoint {path} lacks valid metadata: {e}") from e
    config = TrainConfig(**cfg)
    weights = t.pop("loss.weights", None)
    opt_state = {k[4:]: v for k, v in t.items() if k.startswith("opt.")}
    params = {k: v for k, v in t.items() if not k.startswith("opt.")}
    model.check_params(params)
    return Checkpoint(model, params, opt_state, config, epoch, weights)


# --- the loop ----------------------------------------------------------------


@dataclass
class TrainResult:
    params: dict
    history: list[dict] = field(default_factory=list)
    val_history: list[dict] = field(default_factory=list)
    epoch: int = 0


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale ``grads`` in place to global norm at most ``max_norm``; returns the original norm."""
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
    if norm > max_norm:
        for g in grads.values():
            g *= max_norm / norm
    return norm


def _csv_row(epoch: int, loss: float, m: dict, lr: float, peak: int) -> str:
    return (f"{epoch},{loss!r},{m['global_accuracy']!r},{m['class_average_accuracy']!r},"
            f"{lr!r},{peak}")


def train_loop(model, config: TrainConfig, train: Dataset, val: Dataset | None = None,
               out_dir: str | Path | None = None, resume: Checkpoint | None = None) -> TrainResult:
    """Minibatch training; logs one CSV row per epoch and checkpoints to ``out_dir``.

    Metrics logged for an epoch are evaluated on the training set with the
    parameters at the end of that epoch.
    """
    check_compatible(model, train)
    dtype = DTYPES[config.dtype]
    x_all = train.x.astype(dtype, copy=False)
    opt = config.make_optimizer()
    sched = config.schedule()
    if resume is not None:
        params = {k: v.astype(dtype) for k, v in resume.params.items()}
        opt.state = {k: v.copy() for k, v in resume.opt_state.items()}
        start = resume.epoch
        weights = resume.weights
    else:
        params = model.init_params(np.random.default_rng(config.seed), dtype)
        start = 0
        weights = class_weights(config, train)
    loss_fn = make_loss(config, weights)

    out = Path(out_dir) if out_dir is not None else None
    files = {}
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        for key, name in (("train", "metrics.csv"), ("val", "val_metrics.csv")):
            if key == "val" and val is None:
                continue
            path = out / name
            fresh = resume is None or not path.exists()
            files[key] = open(path, "w" if fresh else "a", encoding="utf-8")
            if fresh:
                files[key].write(CSV_HEADER + "\n")

    result = TrainResult(params, epoch=start)
    n = len(train)
    try:
        for epoch in range(start, config.epochs):
            lr = sched.lr_at(epoch)
            order = np.random.default_rng([config.seed, epoch]).permutation(n)
            total, peak = 0.0, 0
            for i in range(0, n, config.batch_size):
                idx = np.sort(order[i : i + config.batch_size])
                loss, grads, pk = model.loss_and_grad(params, x_all[idx], train.y[idx], loss_fn, config.mode)
                if not math.isfinite(loss):
                    raise NonFiniteError(f"loss became {loss} at epoch {epoch}")
                if config.clip_norm is not None:
                    clip_gradients(grads, config.clip_norm)
                opt.step(params, grads, lr)
                total += loss * len(idx)
                peak = max(peak, pk)
            m = evaluate(model, params, train, loss_fn)
            row = {"epoch": epoch, **m, "eval_loss": m["loss"], "loss": total / n, "lr": lr,
                   "peak_activation_bytes": peak}
            result.history.append(row)
            if "train" in files:
                files["train"].write(_csv_row(epoch, total / n, m, lr, peak) + "\n")
                files["train"].flush()
            if val is not None:
                vm = evaluate(model, params, val, loss_fn)
                result.val_history.append({"epoch": epoch, "lr": lr, **vm})
                if "val" in files:
                    files["val"].write(_csv_row(epoch, vm["loss"], vm, lr, peak) + "\n")
                    files["val"].flush()
            log.info("epoch %d loss %.5f acc %.4f lr %g", epoch, total / n, m["global_accuracy"], lr)
            result.epoch = epoch + 1
            if out is not None and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
                save_checkpoint(out / "checkpoint.htns", model, params, opt, config, epoch + 1, weights)
    finally:
        for f in files.values():
            f.close()
    if out is not None:
        save_checkpoint(out / "checkpoint.htns", model, params, opt, config, result.epoch, weights)
    return result
