"""Subspace-configurable networks.

A configuration net maps the encoded transformation parameter to a simplex
vector ``beta`` (dense 64 -> relu -> dense D -> softmax). Inference weights
are the ``beta``-weighted sum of D base parameter vectors sharing one
:mod:`~scnet.netspec` layout.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import netspec
from . import transforms as tf

CHECKPOINT_MAGIC = b"SCN1"
HIDDEN = 64


def config_param_count(enc_size, dims):
    return HIDDEN * (enc_size + 1) + (HIDDEN + 1) * dims


def _config_slots(enc_size, dims):
    w1 = HIDDEN * enc_size
    b1 = w1 + HIDDEN
    w2 = b1 + HIDDEN * dims
    return (0, w1), (w1, b1), (b1, w2), (w2, w2 + dims)


def init_config(enc_size, dims, seed, dtype=np.float32):
    rng = np.random.default_rng(seed)
    out = np.empty(config_param_count(enc_size, dims), dtype=dtype)
    for (lo, hi), fan in zip(_config_slots(enc_size, dims), (enc_size, enc_size, HIDDEN, HIDDEN)):
        bound = np.sqrt(1.0 / fan)
        out[lo:hi] = rng.uniform(-bound, bound, size=hi - lo).astype(dtype)
    return out


def config_forward(cfg, enc, enc_size, dims):
    """beta = softmax(W2 relu(W1 enc + b1) + b2) for a batch of encodings.

    ``cfg`` is the flat config-net Tensor, ``enc`` an (m, enc_size) Tensor.
    Returns an (m, D) Tensor.
    """
    if enc.shape[-1] != enc_size:
        raise ad.ShapeError(f"encoding width {enc.shape[-1]} != {enc_size}")
    (a, b), (c, d), (e, f), (g, h) = _config_slots(enc_size, dims)
    w1 = ad.reshape(ad.segment(cfg, a, b), (enc_size, HIDDEN))
    hid = ad.relu(ad.add_bias(ad.matmul(enc, w1), ad.segment(cfg, c, d)))
    w2 = ad.reshape(ad.segment(cfg, e, f), (HIDDEN, dims))
    return ad.softmax(ad.add_bias(ad.matmul(hid, w2), ad.segment(cfg, g, h)))


def compose(bank, beta):
    """theta = sum_i beta_i * theta_i.

    ``bank`` is a (D, L) Tensor or array and ``beta`` a length-D vector
    (Tensor, array, or (1, D) row).
    """
    if not isinstance(bank, ad.Tensor):
        bank = ad.Tensor(np.asarray(bank))
    if not isinstance(beta, ad.Tensor):
        beta = ad.Tensor(np.asarray(beta, dtype=bank.dtype))
    row = beta if beta.data.ndim == 2 else ad.reshape(beta, (1, -1))
    if row.shape != (1, bank.shape[0]):
        raise ad.ShapeError(f"beta of shape {beta.shape} for a bank of {bank.shape[0]} models")
    return ad.reshape(ad.matmul(row, bank), (bank.shape[1],))


@dataclass
class SCNModel:
    family: str
    arch: netspec.ArchSpec
    dims: int
    config: np.ndarray
    bank: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        fam = tf.get_family(self.family)
        self.family = fam.name
        if self.config.shape != (config_param_count(fam.enc_size, self.dims),):
            raise ValueError("config-net parameter length does not match encoding size and D")
        if self.bank.shape != (self.dims, netspec.param_count(self.arch)):
            raise ValueError(f"bank shape {self.bank.shape} does not match "
                             f"({self.dims}, {netspec.param_count(self.arch)})")

    @property
    def enc_size(self):
        return tf.get_family(self.family).enc_size

    @classmethod
    def create(cls, family, arch, dims, seed):
        """Fresh model; base model i is drawn with seed ``base_seeds(seed, D)[i]``."""
        fam = tf.get_family(family)
        seeds = base_seeds(seed, dims)
        bank = np.stack([netspec.init_params(arch, s) for s in seeds])
        config = init_config(fam.enc_size, dims, config_seed(seed))
        meta = {"seed": seed, "base_seeds": seeds, "config_activation": "relu",
                "encoding": encoding_descriptor(fam.name)}
        return cls(fam.name, arch, dims, config, bank, meta)

    def betas(self, raws):
        """beta rows for an (m, S) array of native parameters."""
        enc = tf.encode_many(self.family, raws).astype(self.config.dtype)
        return config_forward(ad.Tensor(self.config), ad.Tensor(enc), self.enc_size, self.dims).data

    def beta(self, raw):
        enc = tf.encode_alpha(self.family, raw).astype(self.config.dtype)
        return config_forward(ad.Tensor(self.config), ad.Tensor(enc[None]), self.enc_size,
                              self.dims).data[0]

    def weights(self, raw):
        return compose(self.bank, self.beta(raw)).data

    def forward(self, raw, batch):
        """Logits for a batch that was already transformed with ``raw``."""
        return netspec.forward(self.arch, self.weights(raw), batch).data

    def predict(self, raw, images, chunk=1024):
        return netspec.predict(self.arch, self.weights(raw), images, chunk)


def base_seeds(seed, dims):
    """Seeds for the D base models; base 0 uses ``seed`` itself so a D=1 SCN
    and a seed-matched baseline start from identical weights."""
    return [int(seed)] + [int(s) for s in
                          np.random.SeedSequence([int(seed), 1]).generate_state(dims - 1)]


def config_seed(seed):
    return int(np.random.SeedSequence([int(seed), 2]).generate_state(1)[0])


def encoding_descriptor(family):
    fam = tf.get_family(family)
    if fam.periodic:
        return {"type": "cos-sin", "size": fam.enc_size}
    if fam.name == "translation":
        return {"type": "divide", "by": 8.0, "size": 2}
    return {"type": "minmax", "low": fam.low[0], "high": fam.high[0], "to": [-1, 1], "size": 1}


def scn_forward(model, raw, batch):
    """Logits of the composed network at ``raw`` for an already transformed batch.

    One composition per call, shared by the whole batch.
    """
    tf.check_domain(model.family, raw)
    return model.forward(raw, batch)


# -- checkpoints -------------------------------------------------------------------------

def save_checkpoint(path, model):
    """``SCN1`` | uint32 header length | JSON header | float32 config | float32 bank."""
    fam = tf.get_family(model.family)
    header = {
        "arch": model.arch.to_json(),
        "family": model.family,
        "encoding": encoding_descriptor(model.family),
        "D": model.dims,
        "L": netspec.param_count(model.arch),
        "config_size": int(model.config.size),
        "enc_size": fam.enc_size,
        "meta": model.meta,
    }
    blob = json.dumps(header, sort_keys=True, default=_json_default).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(model.config, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(model.bank, dtype="<f4").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not an SCN1 checkpoint")
    hlen = struct.unpack("<I", raw[4:8])[0]
    header = json.loads(raw[8:8 + hlen])
    off = 8 + hlen
    nc, d, length = header["config_size"], header["D"], header["L"]
    if len(raw) != off + 4 * (nc + d * length):
        raise ValueError(f"{path}: size {len(raw)} does not match header")
    config = np.frombuffer(raw, dtype="<f4", count=nc, offset=off).astype(np.float32)
    bank = np.frombuffer(raw, dtype="<f4", count=d * length, offset=off + 4 * nc)
    bank = bank.astype(np.float32).reshape(d, length)
    return SCNModel(header["family"], netspec.ArchSpec.from_json(header["arch"]), d,
                    config, bank, header.get("meta", {}))


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")
