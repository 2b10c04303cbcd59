"""Non-reversible residual baseline for the pooling comparison.

Each block is ``y' = W y + f(y)`` with the symmetric layer ``f``; ``W`` is the
identity at constant width and zero when the width changes. Between levels
the state is coarsened either by WavePool (Haar transform then a learned 1x1
mix from 4c to 2c channels) or by a 2x2 average pool followed by a learned
1x1 map from c to 2c channels. Gradients use stored activations.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import blocks as hb
from .blocks import BlockParams, _sym_forward, _sym_vjp
from .tensor import NonFiniteError, _as_batch, _conv, _kernel_grad, check_finite
from .wavelet import haar_forward, wavepool_vjp


@dataclass
class ResNetBaselineSpec:
    input_channels: int = 3
    width: int = 3
    levels: int = 2
    blocks_per_level: int = 2
    classes: int = 10
    coarsening: str = "wavepool"  # or "avgpool"

    def __post_init__(self):
        if self.coarsening not in ("wavepool", "avgpool"):
            raise ValueError(f"unknown coarsening {self.coarsening!r}")
        if self.blocks_per_level < 1 or self.levels < 0:
            raise ValueError("need blocks_per_level >= 1 and levels >= 0")

    @property
    def head(self) -> str:
        return "classifier"


def resnet_step(y: np.ndarray, p: BlockParams, identity: bool = True) -> np.ndarray:
    """``W y + f(y)`` with ``W = I`` (``identity``) or ``W = 0``."""
    yb, single = _as_batch(y)
    if yb.shape[1] != p.K.shape[1]:
        raise ValueError(f"state has {yb.shape[1]} channels, kernel expects {p.K.shape[1]}")
    out, _, _ = _sym_forward(yb, p)
    if identity:
        out += yb
    check_finite(out, "resnet_step")
    return out[0] if single else out


def avgpool2(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"pooling needs even spatial dims, got {h}x{w}")
    return x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def avgpool2_vjp(g: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25


def param_shapes(spec: ResNetBaselineSpec) -> dict[str, tuple[int, ...]]:
    shapes = {"opening.K": (spec.width, spec.input_channels, 3, 3), "opening.b": (spec.width,)}
    c = spec.width
    for lvl in range(spec.levels + 1):
        for b in range(spec.blocks_per_level):
            shapes[f"level{lvl}.block{b}.K"] = (c, c, 3, 3)
            shapes[f"level{lvl}.block{b}.b"] = (c,)
        if lvl < spec.levels:
            fan = 4 * c if spec.coarsening == "wavepool" else c
            shapes[f"level{lvl}.pool.K"] = (2 * c, fan, 1, 1)
            c *= 2
    shapes["head.W"] = (spec.classes, c)
    shapes["head.b"] = (spec.classes,)
    return shapes


class ResNetBaseline:
    """Baseline network behind the same interface as ``train.HyperNet``."""

    kind = "resnet"
    task = "classification"

    def __init__(self, spec: ResNetBaselineSpec):
        self.spec = spec

    def init_params(self, rng, dtype=np.float64):
        params = {}
        for name, shape in param_shapes(self.spec).items():
            if name.endswith(".b"):
                params[name] = np.zeros(shape, dtype=dtype)
            else:
                bound = 1.0 / np.sqrt(np.prod(shape[1:]))
                params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
        return params

    def check_params(self, params):
        ref = param_shapes(self.spec)
        if set(ref) != set(params):
            raise ValueError("parameter names do not match the baseline spec")
        for k, s in ref.items():
            if params[k].shape != s:
                raise ValueError(f"{k}: expected shape {s}, got {params[k].shape}")

    def _layers(self):
        for lvl in range(self.spec.levels + 1):
            for b in range(self.spec.blocks_per_level):
                yield "block", f"level{lvl}.block{b}"
            if lvl < self.spec.levels:
                yield "pool", f"level{lvl}.pool"

    def _run(self, params, x, cache):
        y = _conv(x, params["opening.K"], params["opening.b"])
        for kind, name in self._layers():
            if cache is not None:
                cache.append(y)
            if kind == "block":
                f, _, _ = _sym_forward(y, BlockParams(params[f"{name}.K"], params[f"{name}.b"]))
                y = y + f
            elif self.spec.coarsening == "wavepool":
                y = _conv(haar_forward(y), params[f"{name}.K"])
            else:
                y = _conv(avgpool2(y), params[f"{name}.K"])
            if not np.isfinite(y).all():
                raise NonFiniteError(f"non-finite state after {name}")
        return y

    def forward(self, params, x):
        xb, single = _as_batch(x)
        y = self._run(params, xb, None)
        out = hb.classifier_head(y, params["head.W"], params["head.b"])
        return out[0] if single else out

    def loss_and_grad(self, params, x, target, loss_fn, mode=None):
        xb, _ = _as_batch(x)
        cache: list[np.ndarray] = []
        y = self._run(params, xb, cache)
        out = hb.classifier_head(y, params["head.W"], params["head.b"])
        loss, g_out = loss_fn(out, target)
        peak = sum(a.nbytes for a in cache) + y.nbytes + xb.nbytes
        g, dw, db = hb.classifier_head_vjp(y, params["head.W"], g_out)
        grads = {"head.W": dw, "head.b": db}
        layers = list(self._layers())
        for (kind, name), y_in in zip(reversed(layers), reversed(cache)):
            if kind == "block":
                p = BlockParams(params[f"{name}.K"], params[f"{name}.b"])
                _, z, cols = _sym_forward(y_in, p)
                gf, dk, dbb = _sym_vjp(cols, z, p, g)
                grads[f"{name}.K"], grads[f"{name}.b"] = dk, dbb
                g = g + gf
            elif self.spec.coarsening == "wavepool":
                g, grads[f"{name}.K"] = wavepool_vjp(y_in, params[f"{name}.K"], g)
            else:
                a = avgpool2(y_in)
                grads[f"{name}.K"] = _kernel_grad(a, g, 1)
                g = avgpool2_vjp(_conv(g, params[f"{name}.K"].transpose(1, 0, 2, 3)))
        grads["opening.K"] = _kernel_grad(xb, g, 3)
        grads["opening.b"] = g.sum(axis=(0, 2, 3))
        return float(loss), {k: grads[k] for k in params}, peak

    def to_json(self) -> str:
        d = asdict(self.spec)
        d["kind"] = self.kind
        return json.dumps(d, sort_keys=True)

    @property
    def input_channels(self):
        return self.spec.input_channels
