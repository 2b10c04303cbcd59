"""Manifest-based datasets and deterministic synthetic generators.

A manifest is a UTF-8 text file of ``input_path<TAB>target_path`` lines, paths
relative to the manifest's directory. Lines starting with ``#`` carry
``key = value`` metadata (``task``, ``classes``).

Synthetic tasks:

* ``bars10``: 3x32x32 images of a bar at one of ten orientations; label = orientation.
* ``shapes-seg``: 3x64x64 images of discs, squares and triangles; per-pixel labels
  (0 = background).
* ``ramp-depth``: shaded 3x64x64 images of a tilted plane with raised discs;
  target is the 1x64x64 depth map.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .htns import read_tensor, write_tensor

TASKS = {"bars10": "classification", "shapes-seg": "segmentation", "ramp-depth": "regression"}
MANIFEST_NAME = "manifest.tsv"


class DataError(Exception):
    """Missing or malformed dataset."""


@dataclass
class DatasetManifest:
    root: Path
    entries: list[tuple[str, str]] = field(default_factory=list)
    task: str = "classification"
    classes: int = 0

    def write(self, path: str | os.PathLike | None = None) -> Path:
        path = Path(path) if path else self.root / MANIFEST_NAME
        lines = [f"# task = {self.task}", f"# classes = {self.classes}"]
        lines += [f"{a}\t{b}" for a, b in self.entries]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path


def read_manifest(path: str | os.PathLike) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read manifest {path}: {e}") from e
    m = DatasetManifest(path.parent)
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, sep, val = line[1:].partition("=")
            if sep and key.strip() == "task":
                m.task = val.strip()
            elif sep and key.strip() == "classes":
                m.classes = int(val)
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected input<TAB>target")
        m.entries.append((parts[0], parts[1]))
    if m.task not in TASKS.values():
        raise DataError(f"{path}: unknown task {m.task!r}")
    return m


@dataclass
class Dataset:
    """A manifest loaded into memory: ``x`` is ``(n,c,h,w)``; ``y`` labels or maps."""

    x: np.ndarray
    y: np.ndarray
    task: str
    classes: int

    def __len__(self):
        return len(self.x)


def load_dataset(manifest: DatasetManifest | str | os.PathLike, dtype=np.float64) -> Dataset:
    if not isinstance(manifest, DatasetManifest):
        manifest = read_manifest(manifest)
    xs, ys = [], []
    for a, b in manifest.entries:
        try:
            xs.append(read_tensor(manifest.root / a))
            ys.append(read_tensor(manifest.root / b))
        except (OSError, ValueError) as e:
            raise DataError(f"bad dataset entry {a} / {b}: {e}") from e
    if not xs:
        raise DataError(f"dataset {manifest.root} is empty")
    if len({t.shape for t in xs}) != 1 or len({t.shape for t in ys}) != 1:
        raise DataError("dataset entries have inconsistent shapes")
    x = np.stack(xs).astype(dtype)
    if manifest.task == "regression":
        y = np.stack(ys).astype(dtype)
    else:
        y = np.stack(ys).astype(np.int64)
        if manifest.task == "classification":
            y = y.reshape(len(ys))
        if y.min() < 0 or y.max() >= manifest.classes:
            raise DataError(f"labels outside [0, {manifest.classes})")
    return Dataset(x, y, manifest.task, manifest.classes)


# --- synthetic generators ----------------------------------------------------


def _grid(size: int):
    c = (np.arange(size) + 0.5) - size / 2
    return np.meshgrid(c, c, indexing="ij")


def make_bar(rng: np.random.Generator, label: int, size: int = 32) -> np.ndarray:
    ii, jj = _grid(size)
    theta = np.pi * label / 10
    # distance across and along the bar axis
    ci, cj = rng.uniform(-size / 8, size / 8, 2)
    across = (jj - cj) * np.sin(theta) - (ii - ci) * np.cos(theta)
    along = (jj - cj) * np.cos(theta) + (ii - ci) * np.sin(theta)
    half_len = rng.uniform(0.3, 0.45) * size
    half_w = rng.uniform(1.2, 2.2)
    bar = np.clip(half_w + 0.5 - np.abs(across), 0, 1) * np.clip(half_len + 0.5 - np.abs(along), 0, 1)
    color = rng.uniform(0.5, 1.0, 3) * rng.choice([-1, 1])
    img = color[:, None, None] * bar[None]
    img += rng.normal(0, 0.1, (3, size, size))
    return img


def make_shapes(rng: np.random.Generator, size: int = 64, count: int = 3):
    """Image and label map with a few shapes; class colour is fixed up to jitter."""
    base = np.array([[0.0, 0.0, 0.0], [0.9, 0.2, 0.2], [0.2, 0.9, 0.2], [0.2, 0.3, 0.9]])
    ii, jj = _grid(size)
    img = np.empty((3, size, size))
    img[:] = rng.uniform(-0.2, 0.2, (3, 1, 1))
    label = np.zeros((size, size), dtype=np.uint8)
    for _ in range(count):
        cls = int(rng.integers(1, 4))
        ci, cj = rng.uniform(-size / 3, size / 3, 2)
        r = rng.uniform(size / 10, size / 5)
        di, dj = ii - ci, jj - cj
        if cls == 1:
            mask = di**2 + dj**2 <= r**2
        elif cls == 2:
            mask = (np.abs(di) <= r) & (np.abs(dj) <= r)
        else:
            mask = (di <= r) & (di >= -r) & (np.abs(dj) <= (di + r) / 2)
        color = base[cls] + rng.uniform(-0.1, 0.1, 3)
        img[:, mask] = color[:, None]
        label[mask] = cls
    img += rng.normal(0, 0.05, img.shape)
    return img, label


def make_depth(rng: np.random.Generator, size: int = 64):
    ii, jj = _grid(size)
    a, b = rng.uniform(-1, 1, 2) / size
    depth = 1.0 + a * ii + b * jj
    for _ in range(int(rng.integers(1, 4))):
        ci, cj = rng.uniform(-size / 3, size / 3, 2)
        r = rng.uniform(size / 12, size / 6)
        bump = np.clip(1 - ((ii - ci) ** 2 + (jj - cj) ** 2) / r**2, 0, None)
        depth -= 0.3 * np.sqrt(bump)
    shade = np.exp(-depth)
    tint = rng.uniform(0.6, 1.0, 3)
    img = tint[:, None, None] * shade[None] + rng.normal(0, 0.02, (3, size, size))
    return img, depth[None]


def generate_synthetic(task: str, n: int, seed: int, out_dir: str | os.PathLike) -> DatasetManifest:
    """Write ``n`` deterministic samples as HTNS pairs plus a manifest."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; choose from {sorted(TASKS)}")
    root = Path(out_dir)
    (root / "inputs").mkdir(parents=True, exist_ok=True)
    (root / "targets").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    classes = {"bars10": 10, "shapes-seg": 4, "ramp-depth": 0}[task]
    m = DatasetManifest(root, task=TASKS[task], classes=classes)
    for i in range(n):
        if task == "bars10":
            # balanced labels: a shuffled cycle over the ten classes
            if i % 10 == 0:
                cycle = rng.permutation(10)
            label = int(cycle[i % 10])
            x, y = make_bar(rng, label), np.array([label], dtype=np.uint8)
        elif task == "shapes-seg":
            x, y = make_shapes(rng)
        else:
            x, y = make_depth(rng)
        a, b = f"inputs/{i:06d}.htns", f"targets/{i:06d}.htns"
        write_tensor(root / a, x.astype(np.float64))
        write_tensor(root / b, y)
        m.entries.append((a, b))
    m.write()
    return m
