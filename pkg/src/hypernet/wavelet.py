"""Orthonormal single-level 2D Haar transform with channel packing.

For every source channel ``c`` the four sub-bands occupy output channels
``4c .. 4c+3`` in the order LL, HL, LH, HH. With filter taps of +-1/2 the
transform is orthonormal, so its inverse is also its adjoint.
"""

from __future__ import annotations

import numpy as np

from .tensor import _as_batch, _conv, check_finite

BANDS = ("LL", "HL", "LH", "HH")


def haar_forward(x: np.ndarray) -> np.ndarray:
    """``(..., c, h, w) -> (..., 4c, h/2, w/2)``."""
    if x.ndim < 3:
        raise ValueError(f"expected at least (c,h,w), got shape {x.shape}")
    *lead, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"Haar transform needs even spatial dims, got {h}x{w}")
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    cc = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    s_ab, d_ab = a + b, a - b
    s_cd, d_cd = cc + d, cc - d
    out = np.stack(
        [(s_ab + s_cd) * 0.5, (d_ab + d_cd) * 0.5, (s_ab - s_cd) * 0.5, (d_ab - d_cd) * 0.5],
        axis=-3,
    )
    return out.reshape(*lead, 4 * c, h // 2, w // 2)


def haar_inverse(y: np.ndarray) -> np.ndarray:
    """``(..., 4c, h, w) -> (..., c, 2h, 2w)``; exact inverse of :func:`haar_forward`."""
    if y.ndim < 3:
        raise ValueError(f"expected at least (4c,h,w), got shape {y.shape}")
    *lead, c4, h, w = y.shape
    if c4 % 4:
        raise ValueError(f"inverse Haar needs a channel count divisible by 4, got {c4}")
    y = y.reshape(*lead, c4 // 4, 4, h, w)
    ll, hl, lh, hh = y[..., 0, :, :], y[..., 1, :, :], y[..., 2, :, :], y[..., 3, :, :]
    s1, s2 = ll + lh, hl + hh
    d1, d2 = ll - lh, hl - hh
    out = np.empty((*lead, c4 // 4, 2 * h, 2 * w), dtype=y.dtype)
    out[..., 0::2, 0::2] = (s1 + s2) * 0.5
    out[..., 0::2, 1::2] = (s1 - s2) * 0.5
    out[..., 1::2, 0::2] = (d1 + d2) * 0.5
    out[..., 1::2, 1::2] = (d1 - d2) * 0.5
    return out


def wavepool(x: np.ndarray, mix: np.ndarray) -> np.ndarray:
    """Haar transform followed by a learned 1x1 mix from ``4c`` to ``2c`` channels."""
    xb, single = _as_batch(x)
    c = xb.shape[1]
    if mix.shape != (2 * c, 4 * c, 1, 1):
        raise ValueError(f"mix must have shape {(2 * c, 4 * c, 1, 1)}, got {mix.shape}")
    out = check_finite(_conv(haar_forward(xb), mix), "wavepool")
    return out[0] if single else out


def wavepool_vjp(x: np.ndarray, mix: np.ndarray, gy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``<gy, wavepool(x, mix)>`` w.r.t. ``x`` and ``mix``."""
    xb, single = _as_batch(x)
    gb, _ = _as_batch(gy)
    hx = haar_forward(xb)
    n, c4 = hx.shape[:2]
    g = gb.reshape(n, gb.shape[1], -1)
    dmix = np.tensordot(g, hx.reshape(n, c4, -1), axes=([0, 2], [0, 2]))
    gx = haar_inverse(_conv(gb, mix.transpose(1, 0, 2, 3)))
    return (gx[0] if single else gx), dmix.reshape(mix.shape)


def dwt_decompose(x: np.ndarray, levels: int) -> list[np.ndarray]:
    """Multi-level pyramid: transform, then recurse on the LL channels.

    Returns one full ``(4c, h/2^l, w/2^l)`` stack per level, finest first.
    ``levels == 0`` gives an empty pyramid.
    """
    if levels < 0:
        raise ValueError("levels must be non-negative")
    h, w = x.shape[-2:]
    if h % (2**levels) or w % (2**levels):
        raise ValueError(f"spatial dims {h}x{w} not divisible by 2^{levels}")
    stacks = []
    cur = x
    for _ in range(levels):
        st = haar_forward(cur)
        stacks.append(st)
        cur = st[..., 0::4, :, :]
    return stacks


def dwt_reconstruct(stacks: list[np.ndarray]) -> np.ndarray:
    """Rebuild the image from the coarsest LL band and every level's details."""
    if not stacks:
        raise ValueError("empty pyramid")
    cur = haar_inverse(stacks[-1])
    for st in reversed(stacks[:-1]):
        st = st.copy()
        st[..., 0::4, :, :] = cur
        cur = haar_inverse(st)
    return cur


def band_tensors(stacks: list[np.ndarray]) -> dict[str, np.ndarray]:
    """Name the pyramid's bands ``L{level}_{band}``; only the coarsest level keeps LL."""
    out = {}
    for lvl, st in enumerate(stacks, start=1):
        for i, band in enumerate(BANDS):
            if band == "LL" and lvl < len(stacks):
                continue
            out[f"L{lvl}_{band}"] = st[..., i::4, :, :]
    return out
