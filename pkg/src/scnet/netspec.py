"""Inference-network architectures over a single flat parameter vector.

An :class:`ArchSpec` fixes the layer structure; :func:`layout` assigns every
weight and bias a contiguous slot in the flat vector, so a network is nothing
more than ``(arch, theta)``. This is what lets SCN base models be mixed
linearly.

Kinds:

``mlp``
    flatten -> [dense(w) -> relu] * depth -> dense(classes)
``shallowcnn``
    conv 9x9/2 (w ch, pad 1) -> relu -> [conv 13x13 (w ch, same) -> relu] * (depth-1)
    -> global average pool -> dense(classes)
``ticnn``
    [circular conv 4x4 (w ch) -> relu] * depth -> global max pool -> dense(classes)
"""

from __future__ import annotations

import functools
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad

KINDS = ("mlp", "shallowcnn", "ticnn")


@dataclass(frozen=True)
class ArchSpec:
    kind: str = "mlp"
    width: int = 32
    depth: int = 1
    size: int = 32
    channels: int = 1
    classes: int = 10

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unsupported architecture kind {self.kind!r}")
        if self.width < 1 or self.depth < 1:
            raise ValueError("width and depth must be >= 1")

    def to_json(self):
        d = asdict(self)
        d["input"] = [self.size, self.channels]
        del d["size"], d["channels"]
        return d

    @classmethod
    def from_json(cls, d):
        if isinstance(d, str):
            d = json.loads(d)
        size, channels = d["input"]
        return cls(kind=d["kind"], width=d["width"], depth=d["depth"],
                   size=size, channels=channels, classes=d["classes"])

    @classmethod
    def parse(cls, text, size=32, channels=1, classes=10):
        """Parse compact forms such as ``mlp:32x1``, ``ticnn:16x2``, ``shallowcnn:8x1``."""
        kind, _, dims = text.partition(":")
        width, depth = (dims or "32x1").lower().split("x")
        return cls(kind=kind.lower(), width=int(width), depth=int(depth),
                   size=size, channels=channels, classes=classes)


@dataclass(frozen=True)
class Slot:
    layer: int
    role: str  # "weight" | "bias"
    offset: int
    shape: tuple

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def stop(self):
        return self.offset + self.size


def _layer_shapes(arch):
    """[(weight_shape, bias_shape, fan_in)] in forward order."""
    w, c, m = arch.width, arch.channels, arch.classes
    if arch.kind == "mlp":
        shapes = [((arch.size * arch.size * c, w), (w,), arch.size * arch.size * c)]
        shapes += [((w, w), (w,), w)] * (arch.depth - 1)
    elif arch.kind == "shallowcnn":
        shapes = [((w, c, 9, 9), (w,), c * 81)]
        shapes += [((w, w, 13, 13), (w,), w * 169)] * (arch.depth - 1)
    else:
        shapes = [((w, c, 4, 4), (w,), c * 16)]
        shapes += [((w, w, 4, 4), (w,), w * 16)] * (arch.depth - 1)
    shapes.append(((w, m), (m,), w))
    return shapes


@functools.lru_cache(maxsize=None)
def layout(arch):
    slots, off = [], 0
    for i, (ws, bs, _) in enumerate(_layer_shapes(arch)):
        for role, shape in (("weight", ws), ("bias", bs)):
            slot = Slot(i, role, off, tuple(shape))
            slots.append(slot)
            off = slot.stop
    return tuple(slots)


def param_count(arch):
    return layout(arch)[-1].stop


def fan_ins(arch):
    return [f for _, _, f in _layer_shapes(arch)]


def init_params(arch, seed, dtype=np.float32):
    """Uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) for every weight and bias."""
    rng = np.random.default_rng(seed)
    fans = fan_ins(arch)
    theta = np.empty(param_count(arch), dtype=dtype)
    for slot in layout(arch):
        bound = np.sqrt(1.0 / fans[slot.layer])
        vals = rng.uniform(-bound, bound, size=slot.size).astype(dtype)
        # float32 rounding may step just past the bound
        lim = dtype(bound)
        if lim > bound:
            lim = np.nextafter(lim, dtype(0))
        theta[slot.offset:slot.stop] = np.clip(vals, -lim, lim)
    return theta


def views(arch, theta):
    """Numpy views of each slot, keyed ``(layer, role)``."""
    return {(s.layer, s.role): theta[s.offset:s.stop].reshape(s.shape) for s in layout(arch)}


def flatten(arch, parts):
    out = np.empty(param_count(arch), dtype=next(iter(parts.values())).dtype)
    for s in layout(arch):
        out[s.offset:s.stop] = parts[(s.layer, s.role)].reshape(-1)
    return out


def _as_nchw(batch, arch):
    """Accept (b, P, P), (b, P, P, C) or (b, C, P, P) tensors; return NCHW."""
    x = batch
    if x.data.ndim == 3:
        x = ad.reshape(x, (x.shape[0], 1) + x.shape[1:])
    elif x.data.ndim == 4 and x.shape[-1] == arch.channels and x.shape[1] != arch.channels:
        x = ad.transpose(x, (0, 3, 1, 2))
    if x.data.ndim != 4 or x.shape[1:] != (arch.channels, arch.size, arch.size):
        raise ad.ShapeError(f"batch {batch.shape} does not match input "
                            f"{arch.size}x{arch.size}x{arch.channels}")
    return x


def forward(arch, theta, batch):
    """Logits (b, classes) of the network ``arch`` with flat weights ``theta``.

    ``theta`` and ``batch`` may be :class:`~scnet.autodiff.Tensor` or arrays;
    gradients flow into ``theta`` when it requires them.
    """
    if not isinstance(theta, ad.Tensor):
        theta = ad.Tensor(theta)
    if not isinstance(batch, ad.Tensor):
        batch = ad.Tensor(np.asarray(batch, dtype=theta.dtype))
    if theta.data.ndim != 1 or theta.shape[0] != param_count(arch):
        raise ad.ShapeError(f"theta has length {theta.shape}, expected {param_count(arch)}")
    slots = layout(arch)
    params = [(ad.reshape(ad.segment(theta, w.offset, w.stop), w.shape),
               ad.segment(theta, b.offset, b.stop)) for w, b in zip(slots[::2], slots[1::2])]
    nb = batch.shape[0]

    if arch.kind == "mlp":
        x = ad.reshape(batch, (nb, -1))
        if x.shape[1] != arch.size * arch.size * arch.channels:
            raise ad.ShapeError(f"batch {batch.shape} does not match MLP input")
        for W, b in params[:-1]:
            x = ad.relu(ad.add_bias(ad.matmul(x, W), b))
    else:
        x = _as_nchw(batch, arch)
        if arch.kind == "shallowcnn":
            W, b = params[0]
            x = ad.relu(ad.add_channel_bias(ad.conv2d(x, W, stride=2, pads=(1, 1, 1, 1)), b))
            for W, b in params[1:-1]:
                x = ad.relu(ad.add_channel_bias(ad.conv2d(x, W, pads=(6, 6, 6, 6)), b))
            x = ad.global_avg_pool(x)
        else:
            for W, b in params[:-1]:
                x = ad.relu(ad.add_channel_bias(
                    ad.conv2d(x, W, pads=(1, 2, 1, 2), mode="circular"), b))
            x = ad.global_max_pool(x)
    W, b = params[-1]
    return ad.add_bias(ad.matmul(x, W), b)


def predict(arch, theta, images, chunk=1024):
    """Argmax labels for an image array, evaluated in chunks without a tape."""
    out = []
    for i in range(0, len(images), chunk):
        out.append(forward(arch, np.asarray(theta), images[i:i + chunk]).data.argmax(axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)
