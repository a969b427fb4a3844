"""Data supply: IDX loading, synthetic generators and the SCND container."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CONTAINER_MAGIC = b"SCND"
CLOUD_POINTS = 4096

SHAPE_CLASSES = ("disk", "ring", "square", "triangle", "cross",
                 "bar-h", "bar-v", "L", "checker", "dot-pair")
CLOUD_CLASSES = ("cube", "sphere", "cylinder", "cone", "torus",
                 "pyramid", "box-frame", "two-sphere", "disk", "cross-beam")


class DataError(Exception):
    """Base class for dataset input errors."""


class BadMagic(DataError):
    pass


class Truncated(DataError):
    pass


class CountMismatch(DataError):
    pass


@dataclass
class LabeledSet:
    """Images ``(n, P, P, C)`` or clouds ``(n, N, 3)`` with integer labels."""
    data: np.ndarray
    labels: np.ndarray
    kind: str = "images"
    classes: int = 10
    split: str = "all"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.data) != len(self.labels):
            raise CountMismatch(f"{len(self.data)} samples but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx, split=None):
        return LabeledSet(self.data[idx], self.labels[idx], self.kind, self.classes,
                          split or self.split, dict(self.meta))


# -- IDX ------------------------------------------------------------------------------

def _read_idx(path, magic, ndim):
    raw = Path(path).read_bytes()
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise Truncated(f"{path}: expected at least {header} header bytes, got {len(raw)}")
    got = struct.unpack(">I", raw[:4])[0]
    if got != magic:
        raise BadMagic(f"{path}: magic 0x{got:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = header + int(np.prod(dims))
    if len(raw) < expected:
        raise Truncated(f"{path}: expected {expected} bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, count=int(np.prod(dims)), offset=header).reshape(dims)


def load_idx(images_path, labels_path, split="all", pad_to=32):
    """Load an IDX image/label pair (MNIST/FMNIST layout, uncompressed).

    Pixels are scaled to [0, 1]. 28x28 images are zero-padded to ``pad_to``
    so they fit the 32x32 architectures; pass ``pad_to=None`` to keep them.
    """
    imgs = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if len(imgs) != len(labels):
        raise CountMismatch(f"{len(imgs)} images but {len(labels)} labels")
    x = imgs.astype(np.float32) / 255.0
    if pad_to and x.shape[1] < pad_to:
        lo = (pad_to - x.shape[1]) // 2
        hi = pad_to - x.shape[1] - lo
        x = np.pad(x, ((0, 0), (lo, hi), (lo, hi)))
    return LabeledSet(x[..., None], labels.astype(np.int64), "images",
                      max(10, int(labels.max()) + 1 if len(labels) else 0), split)


def write_idx(images_path, labels_path, images, labels):
    """Write uint8 arrays in IDX layout (used by tests and tooling)."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">I", IDX_IMAGES_MAGIC))
        fh.write(struct.pack(">3I", *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        fh.write(labels.tobytes())


# -- synthetic 2-D shapes -------------------------------------------------------------------

def _box(x, y, hx, hy):
    return np.clip(0.5 + hx - np.abs(x), 0, 1) * np.clip(0.5 + hy - np.abs(y), 0, 1)


def _disk(x, y, r):
    return np.clip(0.5 + r - np.hypot(x, y), 0, 1)


def _triangle(x, y, r):
    # isosceles, apex up (row axis points down)
    apex, base, half = -1.1 * r, 0.8 * r, 0.75 * r
    t = np.clip((y - apex) / (base - apex), 0, 1)
    width = half * t
    inside_y = np.clip(0.5 + np.minimum(y - apex, base - y), 0, 1)
    return inside_y * np.clip(0.5 + width - np.abs(x), 0, 1)


def _render(cls, x, y, r):
    if cls == 0:
        return _disk(x, y, r)
    if cls == 1:
        return np.clip(_disk(x, y, r) - _disk(x, y, 0.55 * r), 0, 1)
    if cls == 2:
        return _box(x, y, 0.8 * r, 0.8 * r)
    if cls == 3:
        return _triangle(x, y, r)
    if cls == 4:  # latin cross
        return np.maximum(_box(x, y, 0.2 * r, r), _box(x, y + 0.35 * r, 0.65 * r, 0.2 * r))
    if cls == 5:
        return _box(x, y, r, 0.25 * r)
    if cls == 6:
        return _box(x, y, 0.25 * r, r)
    if cls == 7:
        return np.maximum(_box(x + 0.45 * r, y, 0.2 * r, r), _box(x, y - 0.8 * r, 0.65 * r, 0.2 * r))
    if cls == 8:
        sq = _box(x, y, 0.85 * r, 0.85 * r)
        return sq * np.where((x > 0) == (y > 0), 1.0, 0.0)
    return np.maximum(_disk(x + 0.45 * r, y, 0.38 * r), _disk(x - 0.6 * r, y, 0.22 * r))


def gen_shapes2d(n, seed, size=32):
    """Class-balanced 32x32 grayscale shapes with jittered pose and intensity.

    Shapes are rendered with one-pixel soft edges so that resampling behaves
    like it does on natural images.
    """
    if n < 10:
        raise ValueError("gen_shapes2d needs n >= 10")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % 10)
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    c = (size - 1) / 2.0
    out = np.empty((n, size, size, 1), dtype=np.float32)
    for i, cls in enumerate(labels):
        oy, ox = rng.uniform(-1.5, 1.5, size=2)
        r = rng.uniform(6.5, 9.0)
        tilt = rng.uniform(-0.08, 0.08)
        level = rng.uniform(0.65, 1.0)
        dy, dx = rows - c - oy, cols - c - ox
        ct, st = math.cos(tilt), math.sin(tilt)
        x, y = ct * dx + st * dy, -st * dx + ct * dy
        img = level * _render(int(cls), x, y, r) + rng.normal(0.0, 0.01, size=(size, size))
        out[i, :, :, 0] = np.clip(img, 0.0, 1.0)
    return LabeledSet(out, labels.astype(np.int64), "images", 10, "all",
                      {"generator": "shapes2d", "n": n, "seed": seed})


def downscale_pad(images, factor=0.5, pad=8):
    """Shrink images by ``factor`` (box average) and zero-pad back to size."""
    x = np.asarray(images, dtype=np.float32)
    n, p, _, c = x.shape
    k = int(round(1 / factor))
    small = x.reshape(n, p // k, k, p // k, k, c).mean(axis=(2, 4))
    return np.pad(small, ((0, 0), (pad, pad), (pad, pad), (0, 0))).astype(np.float32)


# -- synthetic 3-D clouds ----------------------------------------------------------------------

def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _sample_box_surface(rng, m, half):
    half = np.asarray(half, dtype=np.float64)
    areas = np.array([half[1] * half[2], half[0] * half[2], half[0] * half[1]] * 2)
    face = rng.choice(6, size=m, p=areas / areas.sum())
    pts = rng.uniform(-1, 1, size=(m, 3)) * half
    axis = face % 3
    sign = np.where(face < 3, 1.0, -1.0)
    pts[np.arange(m), axis] = sign * half[axis]
    return pts


def _sample_cloud(cls, rng, m):
    u = rng.uniform
    if cls == 0:
        return _sample_box_surface(rng, m, (1, 1, 1))
    if cls == 1:
        return _unit(rng.normal(size=(m, 3)))
    if cls == 2:  # cylinder, axis z
        h, r = u(0.8, 1.2), 0.6
        side = u(size=m) < (2 * math.pi * r * 2 * h) / (2 * math.pi * r * 2 * h + 2 * math.pi * r * r)
        th = u(0, 2 * math.pi, m)
        rad = np.where(side, r, r * np.sqrt(u(size=m)))
        z = np.where(side, u(-h, h, m), np.where(u(size=m) < 0.5, -h, h))
        return np.stack([rad * np.cos(th), rad * np.sin(th), z], axis=1)
    if cls == 3:  # cone, apex +z
        h = u(1.2, 1.8)
        side = u(size=m) < 0.75
        t = np.sqrt(u(size=m))
        th = u(0, 2 * math.pi, m)
        rad = np.where(side, t, np.sqrt(u(size=m)))
        z = np.where(side, h * (1 - t), 0.0) - h / 3
        return np.stack([rad * np.cos(th), rad * np.sin(th), z], axis=1)
    if cls == 4:  # torus in xy plane
        big, small = 0.7, u(0.2, 0.3)
        a, b = u(0, 2 * math.pi, m), u(0, 2 * math.pi, m)
        return np.stack([(big + small * np.cos(b)) * np.cos(a),
                         (big + small * np.cos(b)) * np.sin(a), small * np.sin(b)], axis=1)
    if cls == 5:  # square pyramid, apex +z
        h = u(1.0, 1.5)
        base = u(size=m) < 0.25
        p = u(-1, 1, (m, 2))
        t = np.sqrt(u(size=m))
        face = rng.integers(0, 4, m)
        s = u(-1, 1, m) * t
        edge = np.stack([np.where(face % 2 == 0, s, np.where(face == 1, t, -t)),
                         np.where(face % 2 == 1, s, np.where(face == 0, t, -t))], axis=1)
        xy = np.where(base[:, None], p, edge)
        z = np.where(base, 0.0, h * (1 - t)) - h / 4
        return np.column_stack([xy, z])
    if cls == 6:  # box frame: points along the 12 edges
        e = rng.integers(0, 12, m)
        axis = e // 4
        corner = np.stack([(e >> 0) & 1, (e >> 1) & 1], axis=1) * 2.0 - 1.0
        pts = np.empty((m, 3))
        along = u(-1, 1, m)
        for k in range(3):
            others = [j for j in range(3) if j != k]
            sel = axis == k
            pts[sel, k] = along[sel]
            pts[sel, others[0]] = corner[sel, 0]
            pts[sel, others[1]] = corner[sel, 1]
        return pts + rng.normal(0, 0.02, (m, 3))
    if cls == 7:  # two spheres along x
        pts = _unit(rng.normal(size=(m, 3))) * 0.5
        pts[:, 0] += np.where(u(size=m) < 0.5, -0.55, 0.55)
        return pts
    if cls == 8:  # thin disk in xy
        th = u(0, 2 * math.pi, m)
        rad = np.sqrt(u(size=m))
        return np.stack([rad * np.cos(th), rad * np.sin(th), u(-0.04, 0.04, m)], axis=1)
    # cross beam: bars along x and y
    along_x = u(size=m) < 0.5
    a = _sample_box_surface(rng, m, (1.0, 0.18, 0.18))
    b = _sample_box_surface(rng, m, (0.18, 1.0, 0.18))
    return np.where(along_x[:, None], a, b)


def gen_clouds3d(n, seed, points=CLOUD_POINTS):
    """Surface-sampled procedural solids, normalized to the unit sphere."""
    if n < 10:
        raise ValueError("gen_clouds3d needs n >= 10")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % 10)
    out = np.empty((n, points, 3), dtype=np.float32)
    for i, cls in enumerate(labels):
        pts = _sample_cloud(int(cls), rng, points)
        if cls != 1:  # keep the sphere isotropic
            pts = pts * rng.uniform(0.85, 1.15, size=3)
        pts = pts - pts.mean(axis=0) if cls != 1 else pts
        pts = pts / np.linalg.norm(pts, axis=1).max()
        out[i] = pts
    # float32 rounding can push a norm a few ulps past 1; shrink those clouds
    shrink = np.float32(1.0 - 2.0 ** -22)
    while True:
        over = np.linalg.norm(out.astype(np.float64), axis=2).max(axis=1) > 1.0
        if not over.any():
            break
        out[over] *= shrink
    return LabeledSet(out, labels.astype(np.int64), "clouds", 10, "all",
                      {"generator": "clouds3d", "n": n, "seed": seed})


# -- split -------------------------------------------------------------------------------

def split(dataset, fractions, seed):
    """Label-stratified, seeded split into ``len(fractions)`` disjoint sets."""
    fractions = np.asarray(fractions, dtype=np.float64)
    if abs(fractions.sum() - 1.0) > 1e-9 or np.any(fractions < 0):
        raise ValueError(f"fractions {fractions} must be non-negative and sum to 1")
    rng = np.random.default_rng(seed)
    parts = [[] for _ in fractions]
    for cls in np.unique(dataset.labels):
        idx = rng.permutation(np.flatnonzero(dataset.labels == cls))
        bounds = np.round(np.cumsum(fractions) * len(idx)).astype(int)
        start = 0
        for k, stop in enumerate(bounds):
            parts[k].append(idx[start:stop])
            start = stop
    out = []
    names = ("train", "test") if len(fractions) == 2 else [f"part{k}" for k in range(len(fractions))]
    for k, chunks in enumerate(parts):
        idx = rng.permutation(np.concatenate(chunks))
        if len(idx) == 0:
            raise ValueError(f"split {k} would be empty")
        out.append(dataset.subset(idx, names[k]))
    return tuple(out)


# -- SCND container --------------------------------------------------------------------------

def save_container(path, dataset):
    """``SCND`` | uint32 header length | JSON header | float32 data | uint8 labels."""
    header = {"kind": dataset.kind, "shape": list(dataset.data.shape[1:]),
              "count": len(dataset), "classes": dataset.classes,
              "split": dataset.split, "meta": dataset.meta}
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CONTAINER_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(dataset.data, dtype="<f4").tobytes())
        fh.write(np.asarray(dataset.labels, dtype=np.uint8).tobytes())


def load_container(path):
    raw = Path(path).read_bytes()
    if raw[:4] != CONTAINER_MAGIC:
        raise BadMagic(f"{path}: not an SCND container")
    if len(raw) < 8:
        raise Truncated(f"{path}: header length missing")
    hlen = struct.unpack("<I", raw[4:8])[0]
    if len(raw) < 8 + hlen:
        raise Truncated(f"{path}: expected {8 + hlen} header bytes, got {len(raw)}")
    header = json.loads(raw[8:8 + hlen])
    n, shape = header["count"], tuple(header["shape"])
    nvals = n * int(np.prod(shape))
    expected = 8 + hlen + 4 * nvals + n
    if len(raw) < expected:
        raise Truncated(f"{path}: expected {expected} bytes, got {len(raw)}")
    off = 8 + hlen
    data = np.frombuffer(raw, dtype="<f4", count=nvals, offset=off).reshape((n,) + shape)
    labels = np.frombuffer(raw, dtype=np.uint8, count=n, offset=off + 4 * nvals)
    return LabeledSet(data.astype(np.float32), labels.astype(np.int64), header["kind"],
                      header["classes"], header.get("split", "all"), header.get("meta", {}))
