"""Parameterized, label-preserving input transformations.

A transformation family is addressed by name; its parameter ``raw`` is a
small float vector in native units (radians, factor, pixels). Functions here
are pure: ``apply(family, raw, x)`` never mutates ``x`` and never sees labels.

Images are ``(n, P, P, C)`` float32 arrays in [0, 1]; point clouds are
``(n, N, 3)`` and are turned into ``(n, P, P, 1)`` images by the 3-D family.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels

TWO_PI = 2.0 * math.pi
RASTER_SIZE = 32


class DomainError(ValueError):
    """Transformation parameter outside its family's domain."""


class NotInvertible(ValueError):
    """The family has no usable inverse."""


@dataclass(frozen=True)
class Family:
    name: str
    low: tuple
    high: tuple
    enc_size: int
    periodic: bool = False
    modality: str = "image"

    @property
    def dim(self):
        return len(self.low)


FAMILIES = {
    "rotation2d": Family("rotation2d", (0.0,), (TWO_PI,), 2, periodic=True),
    "scaling": Family("scaling", (0.2,), (2.0,), 1),
    "translation": Family("translation", (-8.0, -8.0), (8.0, 8.0), 2),
    "brightness": Family("brightness", (0.2,), (2.0,), 1),
    "contrast": Family("contrast", (0.2,), (2.0,), 1),
    "saturation": Family("saturation", (0.2,), (2.0,), 1),
    "sharpness": Family("sharpness", (0.2,), (2.0,), 1),
    "rotation3d": Family("rotation3d", (-math.pi,) * 3, (math.pi,) * 3, 6,
                         periodic=True, modality="cloud"),
}
COLOR = ("brightness", "contrast", "saturation", "sharpness")
ALIASES = {"rotation": "rotation2d", "rotate": "rotation2d", "scale": "scaling",
           "translate": "translation", "rotation3dproject": "rotation3d", "3d": "rotation3d"}


def get_family(name):
    if isinstance(name, Family):
        return name
    key = name.lower().replace("-", "").replace("_", "")
    key = ALIASES.get(key, key)
    if key not in FAMILIES:
        raise KeyError(f"unknown transformation family {name!r}")
    return FAMILIES[key]


def _raw(fam, raw):
    arr = np.atleast_1d(np.asarray(raw, dtype=np.float64))
    if arr.shape != (fam.dim,):
        raise DomainError(f"{fam.name} expects {fam.dim} parameter(s), got {arr.shape}")
    return arr


def check_domain(family, raw):
    fam = get_family(family)
    arr = _raw(fam, raw)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{fam.name}: non-finite parameter {arr}")
    if fam.periodic:
        return arr
    lo, hi = np.asarray(fam.low), np.asarray(fam.high)
    if np.any(arr < lo - 1e-12) or np.any(arr > hi + 1e-12):
        raise DomainError(f"{fam.name}: {arr} outside [{fam.low}, {fam.high}]")
    return arr


def encode_alpha(family, raw):
    """Network-input encoding of a parameter vector.

    Angles become (cos, sin) pairs, shifts are divided by 8 and scalar
    factors are mapped affinely from [0.2, 2] onto [-1, 1].
    """
    fam = get_family(family)
    arr = check_domain(fam, raw)
    return encode_many(fam, arr[None, :])[0]


def encode_many(family, raws):
    fam = get_family(family)
    raws = np.asarray(raws, dtype=np.float64).reshape(-1, fam.dim)
    if fam.periodic:
        return np.stack([f(raws[:, i]) for i in range(fam.dim) for f in (np.cos, np.sin)], axis=1)
    lo, hi = np.asarray(fam.low), np.asarray(fam.high)
    if fam.name == "translation":
        return raws / 8.0
    return 2.0 * (raws - lo) / (hi - lo) - 1.0


def sample_alpha(family, rng):
    fam = get_family(family)
    return rng.uniform(np.asarray(fam.low), np.asarray(fam.high))


def wrap_angle(phi, low=0.0):
    return (np.asarray(phi) - low) % TWO_PI + low


# -- geometric warps ---------------------------------------------------------------

def _cos_sin(phi):
    quarter = phi / (math.pi / 2)
    k = round(quarter)
    if abs(quarter - k) < 1e-12:
        return ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))[k % 4]
    return math.cos(phi), math.sin(phi)


def _snap(a):
    r = np.round(a)
    return np.where(np.abs(a - r) < 1e-9, r, a)


def _grid(size):
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    return rows, cols, (size - 1) / 2.0


def rotation_coords(size, phi):
    """Source (row, col) maps for a counter-clockwise rotation by ``phi``."""
    rows, cols, c = _grid(size)
    cs, sn = _cos_sin(float(phi))
    dy, dx = rows - c, cols - c
    return _snap(c + dx * sn + dy * cs), _snap(c + dx * cs - dy * sn)


def scaling_coords(size, f):
    rows, cols, c = _grid(size)
    return _snap(c + (rows - c) / f), _snap(c + (cols - c) / f)


def translation_coords(size, shift):
    rows, cols, _ = _grid(size)
    ax, ay = shift
    return _snap(rows - ay), _snap(cols - ax)


def _as_batch(images):
    x = np.asarray(images)
    single = x.ndim in (2, 3) and not (x.ndim == 3 and x.shape[-1] > 4)
    if x.ndim == 2:
        x = x[None, :, :, None]
    elif x.ndim == 3:
        x = x[None] if single else x[..., None]
    return np.ascontiguousarray(x, dtype=np.float32), single, images


def _restore(out, single, original):
    if single:
        out = out[0]
    return out.reshape(np.shape(original)) if np.ndim(original) in (2, 3) else out


def _warp(images, coords):
    x, single, orig = _as_batch(images)
    out = kernels.warp_bilinear(x, *coords(x.shape[1]))
    return _restore(out, single, orig)


def rotate2d(images, phi):
    if float(phi) % TWO_PI == 0.0:
        return np.array(images, dtype=np.float32, copy=True)
    return _warp(images, lambda p: rotation_coords(p, phi))


def scale2d(images, f):
    if f == 1.0:
        return np.array(images, dtype=np.float32, copy=True)
    return _warp(images, lambda p: scaling_coords(p, f))


def translate2d(images, shift):
    ax, ay = (float(v) for v in shift)
    if ax == 0.0 and ay == 0.0:
        return np.array(images, dtype=np.float32, copy=True)
    return _warp(images, lambda p: translation_coords(p, (ax, ay)))


# -- color ------------------------------------------------------------------------

_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32)
_SMOOTH = np.array([[1, 1, 1], [1, 5, 1], [1, 1, 1]], dtype=np.float32) / 13.0


def _gray(x):
    if x.shape[-1] == 1:
        return x
    return (x * _LUMA).sum(axis=-1, keepdims=True)


def _smooth(x):
    out = x.copy()
    acc = np.zeros_like(x[:, 1:-1, 1:-1, :])
    for i in range(3):
        for j in range(3):
            acc += _SMOOTH[i, j] * x[:, i:i + x.shape[1] - 2, j:j + x.shape[2] - 2, :]
    out[:, 1:-1, 1:-1, :] = acc
    return out


def color(images, family, f):
    """Brightness / contrast / saturation / sharpness blend by factor ``f``."""
    name = get_family(family).name
    if name not in COLOR:
        raise KeyError(f"{name} is not a color family")
    if f == 1.0:
        return np.array(images, dtype=np.float32, copy=True)
    x, single, orig = _as_batch(images)
    f = np.float32(f)
    if name == "brightness":
        out = f * x
    elif name == "contrast":
        mu = _gray(x).mean(axis=(1, 2, 3), keepdims=True)
        out = mu + f * (x - mu)
    elif name == "saturation":
        if x.shape[-1] == 1:
            return np.array(images, dtype=np.float32, copy=True)
        g = _gray(x)
        out = g + f * (x - g)
    else:
        s = _smooth(x)
        out = (1 - f) * s + f * x
    return _restore(np.clip(out, 0.0, 1.0).astype(np.float32), single, orig)


# -- 3-D rotation and projection --------------------------------------------------------

def _plane(a, b, phi):
    m = np.eye(3)
    c, s = _cos_sin(float(phi))
    m[a, a], m[a, b], m[b, a], m[b, b] = c, -s, s, c
    return m


def rotation3d_matrix(angles):
    """Rotate in the YZ plane by phi1, then XZ by phi2, then XY by phi3 (extrinsic)."""
    p1, p2, p3 = angles
    return _plane(0, 1, p3) @ _plane(0, 2, p2) @ _plane(1, 2, p1)


def rotate3d_project(clouds, angles, size=RASTER_SIZE):
    """Rotate point clouds and rasterize their orthographic XY projection.

    Returns ``(n, size, size, 1)`` density images (cell count / max count),
    or ``(size, size, 1)`` for a single ``(N, 3)`` cloud.
    """
    pts = np.asarray(clouds, dtype=np.float64)
    single = pts.ndim == 2
    if single:
        pts = pts[None]
    if pts.shape[1] == 0:
        raise ValueError("cannot project an empty point cloud")
    rot = pts @ rotation3d_matrix(angles).T
    img = kernels.rasterize(np.ascontiguousarray(rot[..., :2]), size)[..., None]
    return img[0] if single else img


# -- family dispatch -----------------------------------------------------------------

def apply(family, raw, x):
    """Transform a batch with one parameter vector."""
    fam = get_family(family)
    raw = _raw(fam, raw)
    if fam.name == "rotation2d":
        return rotate2d(x, raw[0])
    if fam.name == "scaling":
        return scale2d(x, raw[0])
    if fam.name == "translation":
        return translate2d(x, raw)
    if fam.name == "rotation3d":
        return rotate3d_project(x, raw)
    return color(x, fam.name, raw[0])


def inverse(family, raw):
    """Parameter of the (approximate) inverse transformation.

    Raises :class:`NotInvertible` for sharpness and 3-D rotation-and-projection.
    """
    fam = get_family(family)
    raw = _raw(fam, raw)
    if fam.name == "rotation2d":
        return wrap_angle(-raw)
    if fam.name == "translation":
        return -raw
    if fam.name == "scaling":
        return np.clip(1.0 / raw, fam.low[0], fam.high[0])
    if fam.name in ("brightness", "contrast", "saturation"):
        return 1.0 / raw
    raise NotInvertible(f"{fam.name} has no inverse")


def canonicalize(family, raw, x):
    """Apply the inverse transformation (the Inverse baseline's preprocessing)."""
    return apply(family, inverse(family, raw), x)


# -- point-cloud text files ---------------------------------------------------------------

def read_cloud(path):
    pts = np.loadtxt(path, dtype=np.float64, ndmin=2)
    if pts.size == 0:
        raise ValueError(f"{path}: empty point cloud")
    if pts.shape[1] != 3:
        raise ValueError(f"{path}: expected 'x y z' per line, got {pts.shape[1]} columns")
    return pts


def write_cloud(path, pts):
    np.savetxt(path, np.asarray(pts, dtype=np.float64), fmt="%.9g")
