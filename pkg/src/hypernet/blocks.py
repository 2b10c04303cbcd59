"""Leapfrog blocks, wavelet level changes and network assembly.

One block maps the state pair ``(Y_{j-1}, Y_j)`` to ``(T Y_j, Y_{j+1})`` with

    Y_{j+1} = 2 T Y_j - T Y_{j-1} + f(T Y_j)
    f(u)    = -K^T relu(K u + b)

where ``T`` is the identity, the Haar transform (coarsening, channels x4) or
its inverse (refinement, channels /4). Given the output pair the input pair is
recovered exactly (up to rounding) by solving for ``T Y_{j-1}``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Literal

import numpy as np

from . import tensor as tc
from .tensor import NonFiniteError, _conv, _conv_adjoint, _kernel_grad, im2col
from .wavelet import haar_forward, haar_inverse

Transform = Literal[None, "down", "up"]


@dataclass
class BlockParams:
    K: np.ndarray
    b: np.ndarray


@dataclass
class StatePair:
    y_prev: np.ndarray
    y_curr: np.ndarray
    level: int = 0

    def __post_init__(self):
        if self.y_prev.shape != self.y_curr.shape:
            raise ValueError(f"state pair shapes differ: {self.y_prev.shape} vs {self.y_curr.shape}")


@dataclass
class NetworkSpec:
    input_channels: int = 3
    width: int = 3
    levels: int = 2
    blocks_per_level: int = 2
    head: Literal["classifier", "segmenter", "regressor"] = "classifier"
    classes: int = 10
    topology: Literal["down", "downup"] = "down"
    mode: Literal["reversible", "stored"] = "reversible"
    # classifier features: global average pool, or flatten the final state
    head_pool: Literal["gap", "flatten"] = "gap"
    image_size: tuple[int, int] | None = None

    def __post_init__(self):
        if self.blocks_per_level < 1:
            raise ValueError("blocks_per_level must be >= 1")
        if self.levels < 0:
            raise ValueError("levels must be >= 0")
        if min(self.input_channels, self.width) < 1:
            raise ValueError("channel counts must be positive")
        if self.head not in ("classifier", "segmenter", "regressor"):
            raise ValueError(f"unknown head {self.head!r}")
        if self.topology not in ("down", "downup"):
            raise ValueError(f"unknown topology {self.topology!r}")
        if self.mode not in ("reversible", "stored"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.head_pool not in ("gap", "flatten"):
            raise ValueError(f"unknown head_pool {self.head_pool!r}")
        if self.head_pool == "flatten" and self.image_size is None:
            raise ValueError("flatten head needs image_size")

    @property
    def depth(self) -> int:
        return len(block_plan(self))

    @property
    def out_channels(self) -> int:
        return 1 if self.head == "regressor" else self.classes


@dataclass(frozen=True)
class BlockInfo:
    name: str
    transform: Transform
    channels: int  # channel count seen by f, i.e. after the transform


def block_plan(spec: NetworkSpec) -> list[BlockInfo]:
    """Ordered blocks: per level ``bpl - 1`` plain steps then one level change."""
    bpl = spec.blocks_per_level
    plan = []
    c = spec.width
    if spec.levels == 0:
        for b in range(bpl):
            plan.append(BlockInfo(f"level0.block{b}", None, c))
        if spec.topology == "downup":
            for b in range(bpl):
                plan.append(BlockInfo(f"level1.block{b}", None, c))
        return plan
    for lvl in range(spec.levels):
        for b in range(bpl - 1):
            plan.append(BlockInfo(f"level{lvl}.block{b}", None, c))
        c *= 4
        plan.append(BlockInfo(f"level{lvl}.block{bpl - 1}", "down", c))
    if spec.topology == "downup":
        for lvl in range(spec.levels, 2 * spec.levels):
            for b in range(bpl - 1):
                plan.append(BlockInfo(f"level{lvl}.block{b}", None, c))
            c //= 4
            plan.append(BlockInfo(f"level{lvl}.block{bpl - 1}", "up", c))
    return plan


def final_state_shape(spec: NetworkSpec, h: int, w: int) -> tuple[int, int, int]:
    c = spec.width
    if spec.topology == "down":
        s = 2**spec.levels
        return c * 4**spec.levels, h // s, w // s
    return c, h, w


def param_shapes(spec: NetworkSpec) -> dict[str, tuple[int, ...]]:
    """Parameter names and shapes in their canonical order."""
    shapes = {"opening.K": (spec.width, spec.input_channels, 3, 3), "opening.b": (spec.width,)}
    for blk in block_plan(spec):
        shapes[f"{blk.name}.K"] = (blk.channels, blk.channels, 3, 3)
        shapes[f"{blk.name}.b"] = (blk.channels,)
    k = spec.out_channels
    if spec.head == "classifier":
        if spec.head_pool == "gap":
            feat = final_state_shape(spec, 1, 1)[0]
        else:
            feat = int(np.prod(final_state_shape(spec, *spec.image_size)))
        shapes["head.W"] = (k, feat)
    else:
        shapes["head.K"] = (k, final_state_shape(spec, 1, 1)[0], 1, 1)
    shapes["head.b"] = (k,)
    return shapes


def init_params(spec: NetworkSpec, rng: np.random.Generator, dtype=np.float64) -> dict[str, np.ndarray]:
    """Uniform(+-1/sqrt(fan_in)) weights and zero biases, drawn in canonical order."""
    params = {}
    for name, shape in param_shapes(spec).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            bound = 1.0 / np.sqrt(np.prod(shape[1:]))
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return params


def param_count(params: dict[str, np.ndarray]) -> int:
    return int(sum(v.size for v in params.values()))


def check_params(spec: NetworkSpec, params: dict[str, np.ndarray]) -> None:
    ref = param_shapes(spec)
    missing = ref.keys() - params.keys()
    extra = params.keys() - ref.keys()
    if missing or extra:
        raise ValueError(f"parameter set mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
    for name, shape in ref.items():
        if params[name].shape != shape:
            raise ValueError(f"{name}: expected shape {shape}, got {params[name].shape}")


def block_params(params: dict[str, np.ndarray], name: str) -> BlockParams:
    return BlockParams(params[f"{name}.K"], params[f"{name}.b"])


# --- symmetric layer ---------------------------------------------------------


def symmetric_layer(y: np.ndarray, p: BlockParams) -> np.ndarray:
    """``-K^T relu(K y + b)``; output has the shape of ``y``."""
    yb, single = tc._as_batch(y)
    if yb.shape[1] != p.K.shape[1]:
        raise ValueError(f"state has {yb.shape[1]} channels, kernel expects {p.K.shape[1]}")
    out, _, _ = _sym_forward(yb, p)
    tc.check_finite(out, "symmetric_layer")
    return out[0] if single else out


def _sym_forward(u: np.ndarray, p: BlockParams, cols: np.ndarray | None = None):
    # returns (f(u), pre-activation z, patch matrix of u)
    n, _, h, w = u.shape
    if cols is None:
        cols = im2col(u, p.K.shape[2])
    ch = p.K.shape[0]
    z = np.matmul(p.K.reshape(ch, -1), cols).reshape(n, ch, h, w)
    z += p.b.reshape(1, ch, 1, 1)
    out = _conv_adjoint(tc.relu(z), p.K)
    np.negative(out, out=out)
    return out, z, cols


# set by the gradient checker's self-test to perturb kernel gradients
_VJP_FAULT = 0.0


def _sym_vjp(u_cols: np.ndarray, z: np.ndarray, p: BlockParams, g: np.ndarray):
    """Gradients of ``<g, f(u)>`` w.r.t. ``u``, ``K`` and ``b``."""
    size = p.K.shape[2]
    g_cols = im2col(g, size)
    n, _, h, w = g.shape
    ch = p.K.shape[0]
    gz = np.matmul(p.K.reshape(ch, -1), g_cols).reshape(n, ch, h, w)
    np.negative(gz, out=gz)
    mask = z > 0
    gz *= mask
    r = z * mask
    c_in = p.K.shape[1]
    dk = np.tensordot(gz.reshape(n, ch, -1), u_cols, axes=([0, 2], [0, 2]))
    dk -= np.tensordot(r.reshape(n, ch, -1), g_cols, axes=([0, 2], [0, 2]))
    dk = dk.reshape(ch, c_in, size, size)
    if _VJP_FAULT:
        dk *= 1.0 + _VJP_FAULT
    db = gz.sum(axis=(0, 2, 3))
    gu = _conv_adjoint(gz, p.K)
    return gu, dk, db


# --- leapfrog step -----------------------------------------------------------


def apply_transform(x: np.ndarray, transform: Transform) -> np.ndarray:
    if transform is None:
        return x
    if transform == "down":
        return haar_forward(x)
    return haar_inverse(x)


def invert_transform(x: np.ndarray, transform: Transform) -> np.ndarray:
    # the Haar transform is orthonormal, so the inverse is also the adjoint
    if transform is None:
        return x
    if transform == "down":
        return haar_inverse(x)
    return haar_forward(x)


def leapfrog(prev: np.ndarray, curr: np.ndarray, p: BlockParams, transform: Transform):
    """Batched step; returns ``(T curr, next, z)``."""
    u = apply_transform(curr, transform)
    v = apply_transform(prev, transform)
    f, z, _ = _sym_forward(u, p)
    nxt = f
    nxt += 2.0 * u
    nxt -= v
    return u, nxt, z


def leapfrog_reverse(u: np.ndarray, nxt: np.ndarray, p: BlockParams, transform: Transform):
    """Invert :func:`leapfrog`; returns ``(prev, curr, z, cols)`` with f's internals."""
    f, z, cols = _sym_forward(u, p)
    v = f
    v += 2.0 * u
    v -= nxt
    return invert_transform(v, transform), invert_transform(u, transform), z, cols


def leapfrog_vjp(u_cols, z, p: BlockParams, transform: Transform, g_u: np.ndarray, g_next: np.ndarray):
    """Backpropagate through one step.

    ``g_u`` and ``g_next`` are the gradients on the output pair ``(T curr, next)``.
    Returns ``(g_prev, g_curr, dK, db)``.
    """
    gf, dk, db = _sym_vjp(u_cols, z, p, g_next)
    gu = gf
    gu += g_u
    gu += 2.0 * g_next
    g_curr = invert_transform(gu, transform)
    g_prev = invert_transform(-g_next, transform)
    return g_prev, g_curr, dk, db


def _check_transform(x: np.ndarray, transform: Transform, p: BlockParams) -> None:
    c, h, w = x.shape[-3:]
    if transform == "down":
        if h % 2 or w % 2:
            raise ValueError(f"coarsening needs even spatial dims, got {h}x{w}")
        c = 4 * c
    elif transform == "up":
        if c % 4:
            raise ValueError(f"refinement needs channels divisible by 4, got {c}")
        c //= 4
    if p.K.shape[1] != c:
        raise ValueError(f"block kernel expects {p.K.shape[1]} channels, transformed state has {c}")


def _public_step(s: StatePair, p: BlockParams, transform: Transform, dlevel: int) -> StatePair:
    _check_transform(s.y_curr, transform, p)
    prev, single = tc._as_batch(s.y_prev)
    curr, _ = tc._as_batch(s.y_curr)
    u, nxt, _ = leapfrog(prev, curr, p, transform)
    tc.check_finite(nxt, "hyper_step")
    if single:
        u, nxt = u[0], nxt[0]
    return StatePair(u, nxt, s.level + dlevel)


def _public_reverse(s: StatePair, p: BlockParams, transform: Transform, dlevel: int) -> StatePair:
    inverse = {None: None, "down": "up", "up": "down"}[transform]
    if p.K.shape[1] != s.y_curr.shape[-3]:
        raise ValueError(
            f"state has {s.y_curr.shape[-3]} channels, block kernel expects {p.K.shape[1]}"
        )
    if inverse is not None:
        # the recovered pair must be transformable back
        try:
            apply_transform(s.y_curr, inverse)
        except ValueError as e:
            raise ValueError(f"state shape {s.y_curr.shape} inconsistent with transform {transform!r}: {e}")
    u, single = tc._as_batch(s.y_prev)
    nxt, _ = tc._as_batch(s.y_curr)
    prev, curr, _, _ = leapfrog_reverse(u, nxt, p, transform)
    if single:
        prev, curr = prev[0], curr[0]
    return StatePair(prev, curr, s.level - dlevel)


def hyper_step(s: StatePair, p: BlockParams, coarsen: bool = False) -> StatePair:
    return _public_step(s, p, "down" if coarsen else None, 1 if coarsen else 0)


def hyper_reverse(s_next: StatePair, p: BlockParams, coarsen: bool = False) -> StatePair:
    return _public_reverse(s_next, p, "down" if coarsen else None, 1 if coarsen else 0)


def up_step(s: StatePair, p: BlockParams, refine: bool = False) -> StatePair:
    return _public_step(s, p, "up" if refine else None, -1 if refine else 0)


def up_reverse(s_next: StatePair, p: BlockParams, refine: bool = False) -> StatePair:
    return _public_reverse(s_next, p, "up" if refine else None, -1 if refine else 0)


# --- opening layer and heads -------------------------------------------------


def opening_layer(x: np.ndarray, k: np.ndarray, bias: np.ndarray | None = None) -> StatePair:
    """Lift the image to the working width; both leapfrog states start equal."""
    y = tc.conv2d(x, k, bias)
    return StatePair(y, y, 0)


def classifier_head(y: np.ndarray, Wc: np.ndarray, bc: np.ndarray, pool: str = "gap") -> np.ndarray:
    """Global-average-pool (or flatten) the state, then an affine map to logits."""
    yb, single = tc._as_batch(y)
    feat = yb.mean(axis=(2, 3)) if pool == "gap" else yb.reshape(yb.shape[0], -1)
    if Wc.shape[1] != feat.shape[1] or bc.shape != (Wc.shape[0],):
        raise ValueError(f"head weights {Wc.shape}/{bc.shape} do not match {feat.shape[1]} features")
    logits = feat @ Wc.T + bc
    return logits[0] if single else logits


def classifier_head_vjp(y: np.ndarray, Wc: np.ndarray, g: np.ndarray, pool: str = "gap"):
    """Batched gradients ``(g_y, dW, db)`` for upstream ``g`` of shape ``(n, k)``."""
    n, c, h, w = y.shape
    if pool == "gap":
        feat = y.mean(axis=(2, 3))
        gfeat = g @ Wc
        gy = np.broadcast_to((gfeat / (h * w))[:, :, None, None], y.shape).copy()
    else:
        feat = y.reshape(n, -1)
        gy = (g @ Wc).reshape(y.shape)
    return gy, g.T @ feat, g.sum(axis=0)


def dense_head(y: np.ndarray, k: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    if k.shape[2:] != (1, 1):
        raise ValueError(f"dense head needs a 1x1 kernel, got {k.shape}")
    return tc.conv2d(y, k, bias)


def dense_head_vjp(y: np.ndarray, k: np.ndarray, g: np.ndarray):
    gy = _conv(g, k.transpose(1, 0, 2, 3))
    dk = _kernel_grad(y, g, 1)
    return gy, dk, g.sum(axis=(0, 2, 3))


def apply_head(y: np.ndarray, spec: NetworkSpec, params: dict[str, np.ndarray]) -> np.ndarray:
    if spec.head == "classifier":
        return classifier_head(y, params["head.W"], params["head.b"], spec.head_pool)
    return _conv(y, params["head.K"], params["head.b"])


def head_vjp(y: np.ndarray, spec: NetworkSpec, params: dict[str, np.ndarray], g: np.ndarray):
    if spec.head == "classifier":
        gy, dw, db = classifier_head_vjp(y, params["head.W"], g, spec.head_pool)
        return gy, {"head.W": dw, "head.b": db}
    gy, dk, db = dense_head_vjp(y, params["head.K"], g)
    return gy, {"head.K": dk, "head.b": db}


# --- whole network -----------------------------------------------------------


def check_input(x: np.ndarray, spec: NetworkSpec) -> None:
    if x.ndim != 4:
        raise ValueError(f"expected a batch (n,c,h,w), got shape {x.shape}")
    if x.shape[1] != spec.input_channels:
        raise ValueError(f"input has {x.shape[1]} channels, network expects {spec.input_channels}")
    s = 2**spec.levels
    if x.shape[2] % s or x.shape[3] % s:
        raise ValueError(f"spatial dims {x.shape[2:]} not divisible by 2^{spec.levels}")


def iter_blocks(spec: NetworkSpec, params: dict[str, np.ndarray]) -> Iterator[tuple[BlockInfo, BlockParams]]:
    for blk in block_plan(spec):
        yield blk, block_params(params, blk.name)


def forward_network(x: np.ndarray, spec: NetworkSpec, params: dict[str, np.ndarray]):
    """Run the opening layer, every block and the head.

    Accepts one sample ``(c,h,w)`` or a batch. Returns ``(output, final StatePair)``;
    nothing but the running pair is kept alive.
    """
    xb, single = tc._as_batch(x)
    check_input(xb, spec)
    check_params(spec, params)
    y0 = _conv(xb, params["opening.K"], params["opening.b"])
    prev, curr, level = y0, y0, 0
    for blk, p in iter_blocks(spec, params):
        prev, curr, _ = leapfrog(prev, curr, p, blk.transform)
        if not np.isfinite(curr).all():
            raise NonFiniteError(f"non-finite state after block {blk.name}")
        level += {None: 0, "down": 1, "up": -1}[blk.transform]
    out = apply_head(curr, spec, params)
    tc.check_finite(out, "head")
    if single:
        return out[0], StatePair(prev[0], curr[0], level)
    return out, StatePair(prev, curr, level)
