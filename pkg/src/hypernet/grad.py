"""Gradient engines for the leapfrog network.

``backprop_stored`` keeps every state pair from the forward pass and is the
reference. ``backprop_reversible`` keeps only the last pair and the network
input; walking backwards it rebuilds each earlier pair from the later one and
applies the block's vector-Jacobian product on the fly. ``finite_diff_grad``
is an independent central-difference check for small nets.

A :class:`MemoryMeter` counts bytes of live activation tensors so the two
modes can be compared.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import blocks as hb
from .blocks import NetworkSpec, StatePair, iter_blocks, leapfrog, leapfrog_reverse, leapfrog_vjp
from .tensor import NonFiniteError, _as_batch, _conv, _kernel_grad, im2col

LossFn = Callable[[np.ndarray, np.ndarray], "tuple[float, np.ndarray]"]


class ReconstructionError(RuntimeError):
    """A recomputed state drifted too far from the forward pass."""


# --- memory instrumentation --------------------------------------------------


class MemoryMeter:
    """Live-activation byte counter with peak tracking.

    Tensors are registered under a key with :meth:`hold` and dropped with
    :meth:`release`; a tensor shared by several keys is counted once.
    :meth:`touch` accounts for short-lived temporaries without holding them.
    """

    def __init__(self):
        self._held: dict[object, list[np.ndarray]] = {}
        self._refs: dict[int, list] = {}  # id -> [nbytes, refcount]
        self.live = 0
        self.peak = 0
        self.max_held_keys = 0

    def hold(self, key, *arrays: np.ndarray) -> None:
        if key in self._held:
            self.release(key)
        self._held[key] = list(arrays)
        for a in arrays:
            ref = self._refs.get(id(a))
            if ref is None:
                self._refs[id(a)] = [a.nbytes, 1]
                self.live += a.nbytes
            else:
                ref[1] += 1
        self.max_held_keys = max(self.max_held_keys, len(self._held))
        self.peak = max(self.peak, self.live)

    def release(self, key) -> None:
        for a in self._held.pop(key, ()):
            ref = self._refs[id(a)]
            ref[1] -= 1
            if ref[1] == 0:
                del self._refs[id(a)]
                self.live -= a.nbytes

    def touch(self, *arrays: np.ndarray | None) -> None:
        extra, seen = 0, set()
        for a in arrays:
            if a is None or id(a) in self._refs or id(a) in seen:
                continue
            seen.add(id(a))
            extra += a.nbytes
        self.peak = max(self.peak, self.live + extra)

    @property
    def held_keys(self) -> int:
        return len(self._held)


@dataclass
class GradTape:
    """What the forward pass left behind for the backward pass."""

    mode: str
    x: np.ndarray
    pairs: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    final: tuple[np.ndarray, np.ndarray] | None = None
    prev_norms: list[float] = field(default_factory=list)
    meter: MemoryMeter = field(default_factory=MemoryMeter)
    f_evals: int = 0
    max_pairs: int = 0


@dataclass
class GradResult:
    loss: float
    grads: dict[str, np.ndarray]
    output: np.ndarray
    tape: GradTape


# --- forward with retention --------------------------------------------------


def forward_tape(x: np.ndarray, spec: NetworkSpec, params: dict[str, np.ndarray], mode: str) -> tuple[np.ndarray, GradTape]:
    if mode not in ("stored", "reversible"):
        raise ValueError(f"unknown mode {mode!r}")
    hb.check_input(x, spec)
    hb.check_params(spec, params)
    tape = GradTape(mode, x)
    meter = tape.meter
    meter.hold("input", x)
    y0 = _conv(x, params["opening.K"], params["opening.b"])
    prev = curr = y0
    if mode == "stored":
        tape.pairs.append((prev, curr))
        meter.hold(0, prev, curr)
    else:
        meter.hold("pair", prev, curr)
    for j, (blk, p) in enumerate(iter_blocks(spec, params)):
        if mode == "reversible":
            tape.prev_norms.append(float(np.linalg.norm(prev)))
        u, nxt, z = leapfrog(prev, curr, p, blk.transform)
        tape.f_evals += 1
        meter.touch(u, nxt, z)
        if not np.isfinite(nxt).all():
            raise NonFiniteError(f"non-finite state after block {blk.name}")
        prev, curr = u, nxt
        if mode == "stored":
            tape.pairs.append((prev, curr))
            meter.hold(j + 1, prev, curr)
        else:
            meter.hold("pair", prev, curr)
    tape.final = (prev, curr)
    tape.max_pairs = len(tape.pairs) if mode == "stored" else 1
    out = hb.apply_head(curr, spec, params)
    if not np.isfinite(out).all():
        raise NonFiniteError("non-finite network output")
    meter.touch(out)
    return out, tape


# --- backward ----------------------------------------------------------------


def _backward(tape: GradTape, spec: NetworkSpec, params: dict[str, np.ndarray], g_out: np.ndarray) -> dict[str, np.ndarray]:
    meter = tape.meter
    grads: dict[str, np.ndarray] = {}
    u, nxt = tape.final
    g_next, head_grads = hb.head_vjp(nxt, spec, params, g_out)
    g_u = None
    plan = list(iter_blocks(spec, params))
    for j in range(len(plan) - 1, -1, -1):
        blk, p = plan[j]
        if tape.mode == "stored":
            u, nxt = tape.pairs[j + 1]
            cols = im2col(u, p.K.shape[2])
            n, _, h, w = u.shape
            ch = p.K.shape[0]
            z = np.matmul(p.K.reshape(ch, -1), cols).reshape(n, ch, h, w)
            z += p.b.reshape(1, ch, 1, 1)
            prev, curr = tape.pairs[j]
        else:
            prev, curr, z, cols = leapfrog_reverse(u, nxt, p, blk.transform)
            tape.f_evals += 1
            ref = tape.prev_norms[j]
            got = float(np.linalg.norm(prev))
            if not np.isfinite(got) or abs(got - ref) > 1e-3 * ref + 1e-300:
                raise ReconstructionError(
                    f"block {blk.name}: recomputed state norm {got:.6e} vs forward {ref:.6e}"
                )
        if g_u is None:
            g_u = np.zeros_like(u)
        g_prev, g_curr, dk, db = leapfrog_vjp(cols, z, p, blk.transform, g_u, g_next)
        meter.touch(prev, curr, z, cols, g_prev, g_curr, g_u, g_next)
        if not (np.isfinite(dk).all() and np.isfinite(g_curr).all()):
            raise NonFiniteError(f"non-finite gradient in block {blk.name}")
        grads[f"{blk.name}.K"] = dk
        grads[f"{blk.name}.b"] = db
        if tape.mode == "stored":
            meter.release(j + 1)
        else:
            meter.hold("pair", prev, curr)
        u, nxt = prev, curr
        g_u, g_next = g_prev, g_curr
    g_y0 = g_next if g_u is None else g_u + g_next
    grads["opening.K"] = _kernel_grad(tape.x, g_y0, params["opening.K"].shape[2])
    grads["opening.b"] = g_y0.sum(axis=(0, 2, 3))
    grads.update(head_grads)
    # fixed key order, mirroring the parameters
    return {name: grads[name] for name in params}


def run_backprop(spec: NetworkSpec, params: dict[str, np.ndarray], x: np.ndarray,
                 loss_fn: LossFn, target: np.ndarray, mode: str | None = None) -> GradResult:
    mode = mode or spec.mode
    xb, _ = _as_batch(x)
    out, tape = forward_tape(xb, spec, params, mode)
    loss, g_out = loss_fn(out, target)
    if not np.isfinite(loss):
        raise NonFiniteError(f"non-finite loss {loss}")
    grads = _backward(tape, spec, params, g_out)
    return GradResult(float(loss), grads, out, tape)


def backprop_stored(spec, params, x, loss_fn, target):
    r = run_backprop(spec, params, x, loss_fn, target, "stored")
    return r.loss, r.grads


def backprop_reversible(spec, params, x, loss_fn, target):
    r = run_backprop(spec, params, x, loss_fn, target, "reversible")
    return r.loss, r.grads


@contextlib.contextmanager
def corrupted_vjp(scale: float = 1e-3):
    """Perturb every block kernel gradient by a relative ``scale`` (checker self-test)."""
    old = hb._VJP_FAULT
    hb._VJP_FAULT = scale
    try:
        yield
    finally:
        hb._VJP_FAULT = old


# --- finite differences ------------------------------------------------------


def _relu_pattern(x: np.ndarray, spec: NetworkSpec, params: dict[str, np.ndarray]) -> np.ndarray:
    y0 = _conv(x, params["opening.K"], params["opening.b"])
    prev = curr = y0
    bits = []
    for blk, p in iter_blocks(spec, params):
        prev, curr, z = leapfrog(prev, curr, p, blk.transform)
        bits.append(np.packbits(z > 0))
    return np.concatenate(bits) if bits else np.zeros(0, np.uint8)


def network_loss(spec, params, x, loss_fn, target) -> float:
    xb, _ = _as_batch(x)
    out, _ = hb.forward_network(xb, spec, params)
    return float(loss_fn(out, target)[0])


def finite_diff_grad(spec: NetworkSpec, params: dict[str, np.ndarray], x: np.ndarray,
                     loss_fn: LossFn, target: np.ndarray, h: float = 1e-5,
                     names: list[str] | None = None, with_mask: bool = False):
    """Central differences ``(L(p + h e) - L(p - h e)) / 2h`` for every coordinate.

    With ``with_mask`` also returns, per tensor, a boolean mask that is False
    where the perturbation flips a ReLU on or off somewhere in the network;
    differences across a kink are not derivatives and should be skipped.
    """
    if not h > 0:
        raise ValueError(f"step h must be positive, got {h}")
    xb, _ = _as_batch(x)
    params = {k: v.copy() for k, v in params.items()}
    base = _relu_pattern(xb, spec, params) if with_mask else None
    grads, masks = {}, {}
    for name in names or list(params):
        t = params[name]
        g = np.zeros_like(t)
        ok = np.ones(t.shape, dtype=bool)
        flat, gflat, okflat = t.reshape(-1), g.reshape(-1), ok.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = network_loss(spec, params, xb, loss_fn, target)
            if with_mask:
                okflat[i] = np.array_equal(_relu_pattern(xb, spec, params), base)
            flat[i] = orig - h
            lm = network_loss(spec, params, xb, loss_fn, target)
            if with_mask:
                okflat[i] &= np.array_equal(_relu_pattern(xb, spec, params), base)
            flat[i] = orig
            gflat[i] = (lp - lm) / (2 * h)
        grads[name] = g
        masks[name] = ok
    return (grads, masks) if with_mask else grads


def rel_dev(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    """``max|a - b| / max|b|`` over the (optionally masked) entries."""
    if mask is not None:
        a, b = a[mask], b[mask]
    if a.size == 0:
        return 0.0
    scale = float(np.max(np.abs(b)))
    diff = float(np.max(np.abs(a - b)))
    if scale == 0.0:
        return diff
    return diff / scale


def max_rel_dev(ga: dict, gb: dict, masks: dict | None = None) -> float:
    return max((rel_dev(ga[k], gb[k], None if masks is None else masks[k]) for k in gb), default=0.0)


# --- reversal fidelity -------------------------------------------------------


def reversal_errors(x: np.ndarray, spec: NetworkSpec, params: dict[str, np.ndarray]) -> list[float]:
    """Relative error of every recomputed pair against the stored forward pass."""
    xb, _ = _as_batch(x)
    _, tape = forward_tape(xb, spec, params, "stored")
    plan = list(iter_blocks(spec, params))
    u, nxt = tape.pairs[-1]
    errs = []
    for j in range(len(plan) - 1, -1, -1):
        blk, p = plan[j]
        prev, curr, _, _ = leapfrog_reverse(u, nxt, p, blk.transform)
        ref_prev, ref_curr = tape.pairs[j]
        for got, ref in ((prev, ref_prev), (curr, ref_curr)):
            scale = float(np.max(np.abs(ref))) or 1.0
            errs.append(float(np.max(np.abs(got - ref))) / scale)
        u, nxt = prev, curr
    return errs


# --- memory reports ----------------------------------------------------------


@dataclass
class MemoryReport:
    rows: list[dict] = field(default_factory=list)

    @property
    def peak_bytes(self) -> int:
        return max((r["peak_bytes"] for r in self.rows), default=0)

    def curve(self, mode: str) -> list[tuple[int, int]]:
        return [(r["depth"], r["peak_bytes"]) for r in self.rows if r["mode"] == mode]

    def to_csv(self) -> str:
        lines = ["depth,mode,peak_bytes"]
        lines += [f"{r['depth']},{r['mode']},{r['peak_bytes']}" for r in self.rows]
        return "\n".join(lines) + "\n"


def measure_peak(spec: NetworkSpec, params, x, loss_fn, target, mode: str) -> int:
    r = run_backprop(spec, params, x, loss_fn, target, mode)
    return r.tape.meter.peak


def memory_report(runs: list[tuple[int, str, int]]) -> MemoryReport:
    """Collect ``(depth, mode, peak_bytes)`` measurements into a report."""
    return MemoryReport([{"depth": d, "mode": m, "peak_bytes": int(b)} for d, m, b in runs])


def flatness(curve: list[tuple[int, int]]) -> float:
    """``(max - min) / min`` of the peaks; 0 for a perfectly flat curve."""
    peaks = [b for _, b in curve]
    return (max(peaks) - min(peaks)) / min(peaks) if peaks else 0.0


def linear_fit_r2(curve: list[tuple[int, int]]) -> float:
    d = np.array([c[0] for c in curve], dtype=float)
    b = np.array([c[1] for c in curve], dtype=float)
    slope, icept = np.polyfit(d, b, 1)
    resid = b - (slope * d + icept)
    ss_tot = float(np.sum((b - b.mean()) ** 2))
    return 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0


# --- three-way check ---------------------------------------------------------

FD_TOL = 1e-4
MODE_TOL = 1e-8


@dataclass
class OracleRow:
    name: str
    fd_vs_stored: float
    stored_vs_reversible: float
    excluded: int


def oracle_chain(spec: NetworkSpec, params, x, loss_fn, target, h: float = 1e-5) -> list[OracleRow]:
    """Per-parameter deviations of finite differences vs stored vs reversible gradients.

    Finite-difference coordinates whose perturbation flips a ReLU are left out.
    """
    fd, masks = finite_diff_grad(spec, params, x, loss_fn, target, h, with_mask=True)
    gs = backprop_stored(spec, params, x, loss_fn, target)[1]
    gr = backprop_reversible(spec, params, x, loss_fn, target)[1]
    return [OracleRow(k, rel_dev(gs[k], fd[k], masks[k]), rel_dev(gr[k], gs[k]),
                      int(masks[k].size - masks[k].sum())) for k in params]
