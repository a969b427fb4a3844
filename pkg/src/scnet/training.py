"""Optimizer, schedule, SCN and baseline training loops, evaluation."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import netspec
from . import scn as scnmod
from . import transforms as tf

log = logging.getLogger(__name__)

BASELINES = ("one4all", "one4one", "inverse")


class Divergence(RuntimeError):
    """Non-finite loss encountered during training."""


@dataclass
class HyperParams:
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0
    lambda_cos: float = 1.0
    lambda_ent: float = 0.01
    schedule: str = "cosine"
    eta_min: float = 0.0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.lambda_cos < 0:
            raise ValueError("lambda_cos must be non-negative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, p):
        return cls(np.zeros_like(p), np.zeros_like(p))


def adam_step(params, grads, state, lr):
    """In-place bias-corrected Adam update of ``params``; returns ``params``."""
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ValueError(f"adam_step: shapes {params.shape}, {grads.shape}, {state.m.shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1 - b1) * grads
    state.v *= b2
    state.v += (1 - b2) * grads * grads
    mhat = state.m / (1 - b1 ** state.t)
    vhat = state.v / (1 - b2 ** state.t)
    params -= (lr * mhat / (np.sqrt(vhat) + state.eps)).astype(params.dtype)
    return params


def cosine_lr(epoch, total, lr0, eta_min=0.0):
    if total <= 0:
        return lr0
    return eta_min + 0.5 * (lr0 - eta_min) * (1 + math.cos(math.pi * epoch / total))


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def append(self, **rec):
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def column(self, key):
        return [r[key] for r in self.records]

    def to_jsonl(self, path):
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r) + "\n")

    def to_csv(self, path):
        if not self.records:
            open(path, "w").close()
            return
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(self.records[0]))
            w.writeheader()
            w.writerows(self.records)


def streams(seed):
    """Independent generators: batch order, alpha^(1), alpha^(2), evaluation."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(int(seed)).spawn(4)]


def _inputs(family, raw, data):
    return tf.apply(family, raw, data)


def _fit(params, batch_loss, train, hp):
    """Shared minibatch loop. ``batch_loss(tensors, xb, yb, rngs)`` returns
    ``(loss, parts, logits)``."""
    order_rng, aug_rng, reg_rng, _ = streams(hp.seed)
    rngs = (aug_rng, reg_rng)
    states = {k: AdamState.zeros_like(v) for k, v in params.items()}
    history = TrainHistory()
    n = len(train)
    for epoch in range(hp.epochs):
        lr = cosine_lr(epoch, hp.epochs, hp.lr, hp.eta_min) if hp.schedule == "cosine" else hp.lr
        perm = order_rng.permutation(n)
        sums = {"loss": 0.0, "ce": 0.0, "reg": 0.0, "ent": 0.0}
        correct = 0
        batches = 0
        for start in range(0, n, hp.batch_size):
            idx = perm[start:start + hp.batch_size]
            xb, yb = train.data[idx], train.labels[idx]
            tensors = {k: ad.Tensor(v, requires_grad=True) for k, v in params.items()}
            loss, parts, logits = batch_loss(tensors, xb, yb, rngs)
            value = float(loss.data)
            if not math.isfinite(value):
                raise Divergence(f"non-finite loss at epoch {epoch}, batch {batches}: "
                                 f"{ {k: float(v) for k, v in parts.items()} }")
            grads = ad.backward(loss, wrt=list(tensors.values()))
            for k, t in tensors.items():
                adam_step(params[k], grads[t], states[k], lr)
            sums["loss"] += value
            for k, v in parts.items():
                sums[k] += float(v)
            correct += int((logits.argmax(axis=1) == yb).sum())
            batches += 1
        rec = {"epoch": epoch, "lr": lr}
        rec.update({k: v / max(batches, 1) for k, v in sums.items()})
        rec["train_acc"] = correct / max(n, 1)
        history.append(**rec)
        log.info("epoch %d loss %.4f ce %.4f reg %.4f acc %.4f", epoch, rec["loss"], rec["ce"],
                 rec["reg"], rec["train_acc"])
    return history


def scn_loss(config, bank, family, arch, dims, xb, yb, a1, a2, lambda_cos=1.0, lambda_ent=0.01,
             iscn=False):
    """Training loss of one batch; ``xb`` is the untransformed batch.

    CE at alpha1 plus lambda_cos * cos^2(beta(alpha1), beta(alpha2)); with
    ``iscn`` the entropy of the logits at alpha1 is added and the entropy at
    alpha2 (same inputs) subtracted, both weighted by lambda_ent.
    Returns ``(loss, parts, logits)``.
    """
    fam = tf.get_family(family)
    config = config if isinstance(config, ad.Tensor) else ad.Tensor(config)
    bank = bank if isinstance(bank, ad.Tensor) else ad.Tensor(bank)
    x = ad.Tensor(_inputs(fam, a1, xb).astype(bank.dtype, copy=False))
    enc1 = ad.Tensor(tf.encode_many(fam, a1).astype(config.dtype))
    enc2 = ad.Tensor(tf.encode_many(fam, a2).astype(config.dtype))
    beta1 = ad.reshape(scnmod.config_forward(config, enc1, fam.enc_size, dims), (dims,))
    beta2 = ad.reshape(scnmod.config_forward(config, enc2, fam.enc_size, dims), (dims,))
    logits = netspec.forward(arch, scnmod.compose(bank, beta1), x)
    ce = ad.cross_entropy(logits, yb)
    reg = ad.cosine_sim_sq(beta1, beta2)
    loss = ad.add(ce, ad.scale(reg, lambda_cos))
    parts = {"ce": ce.data, "reg": reg.data}
    if iscn:
        h1 = ad.entropy_of_logits(logits)
        h2 = ad.entropy_of_logits(netspec.forward(arch, scnmod.compose(bank, beta2), x))
        loss = ad.add(loss, ad.scale(ad.sub(h1, h2), lambda_ent))
        parts["ent"] = h1.data
    return loss, parts, logits.data


def train_scn(model, train, hp, iscn=False):
    """Train config net and base models jointly; updates ``model`` in place.

    Per batch, alpha1 is drawn from the augmentation stream and applied to
    the whole batch; alpha2 comes from an independent stream and only enters
    the regularizer (and the I-SCN entropy term). See :func:`scn_loss`.
    """
    fam = tf.get_family(model.family)
    params = {"config": model.config, "bank": model.bank}

    def batch_loss(t, xb, yb, rngs):
        aug_rng, reg_rng = rngs
        a1 = tf.sample_alpha(fam, aug_rng)
        a2 = tf.sample_alpha(fam, reg_rng)
        return scn_loss(t["config"], t["bank"], fam, model.arch, model.dims, xb, yb, a1, a2,
                        hp.lambda_cos, hp.lambda_ent, iscn)

    history = _fit(params, batch_loss, train, hp)
    model.meta.update({"hyperparams": asdict(hp), "iscn": bool(iscn)})
    return model, history


@dataclass
class BaselineModel:
    kind: str
    family: str
    arch: netspec.ArchSpec
    params: np.ndarray
    alpha_star: tuple | None = None

    def predict(self, raw, images, chunk=1024):
        """Labels for inputs that were transformed with ``raw``."""
        if self.kind == "inverse":
            images = tf.canonicalize(self.family, raw, images)
        return netspec.predict(self.arch, self.params, images, chunk)

    def forward(self, raw, batch):
        if self.kind == "inverse":
            batch = tf.canonicalize(self.family, raw, batch)
        return netspec.forward(self.arch, self.params, batch).data


def train_baseline(kind, arch, family, train, hp, alpha_star=None):
    """One4All (random alpha per batch), One4One (fixed ``alpha_star``) or
    Inverse (train on inverse-transformed inputs). Same optimizer, schedule and
    seed handling as :func:`train_scn`; base-model seed equals ``hp.seed``."""
    kind = kind.lower()
    if kind not in BASELINES:
        raise ValueError(f"unknown baseline {kind!r}")
    fam = tf.get_family(family)
    if kind == "inverse":
        tf.inverse(fam, tf.sample_alpha(fam, np.random.default_rng(0)))  # raises NotInvertible
    if kind == "one4one":
        if alpha_star is None:
            raise ValueError("one4one needs alpha_star")
        alpha_star = tuple(float(v) for v in tf.check_domain(fam, alpha_star))
    theta = netspec.init_params(arch, hp.seed)
    params = {"theta": theta}

    def batch_loss(t, xb, yb, rngs):
        aug_rng, _ = rngs
        if kind == "one4one":
            x = _inputs(fam, alpha_star, xb)
        else:
            a = tf.sample_alpha(fam, aug_rng)
            x = _inputs(fam, a, xb)
            if kind == "inverse":
                x = tf.canonicalize(fam, a, x)
        logits = netspec.forward(arch, t["theta"], ad.Tensor(x))
        ce = ad.cross_entropy(logits, yb)
        return ce, {"ce": ce.data}, logits.data

    history = _fit(params, batch_loss, train, hp)
    return BaselineModel(kind, fam.name, arch, theta, alpha_star), history


# -- evaluation -----------------------------------------------------------------------

@dataclass
class AccuracyTable:
    family: str
    grid: np.ndarray
    acc: np.ndarray

    @property
    def mean(self):
        return float(self.acc.mean())

    @property
    def min(self):
        return float(self.acc.min())

    @property
    def max(self):
        return float(self.acc.max())

    def to_csv(self, path):
        fam = tf.get_family(self.family)
        names = _alpha_columns(fam)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names + ["accuracy"])
            for raw, a in zip(self.grid, self.acc):
                w.writerow([f"{v:.10g}" for v in raw] + [f"{a:.10g}"])


def _alpha_columns(fam):
    if fam.name == "rotation2d":
        return ["phi"]
    if fam.name == "translation":
        return ["shift_x", "shift_y"]
    if fam.name == "rotation3d":
        return ["phi1", "phi2", "phi3"]
    return ["factor"]


def default_grid(family):
    """Evaluation grids: 1 degree for rotation, 0.05 for factors, integer
    shifts for translation and 15 degrees per angle for 3-D rotation."""
    fam = tf.get_family(family)
    if fam.name == "rotation2d":
        return np.deg2rad(np.arange(360.0))[:, None]
    if fam.name == "translation":
        s = np.arange(-8.0, 9.0)
        return np.array([(x, y) for y in s for x in s])
    if fam.name == "rotation3d":
        a = np.deg2rad(np.arange(-165.0, 181.0, 15.0))
        return np.array([(p, q, r) for p in a for q in a for r in a])
    return np.round(np.arange(0.2, 2.0001, 0.05), 10)[:, None]


def evaluate(model, test, grid=None, chunk=1024):
    """Accuracy of ``model`` on ``test`` transformed by every grid point.

    ``model`` is an :class:`~scnet.scn.SCNModel` (weights composed per grid
    point) or a :class:`BaselineModel`.
    """
    fam = tf.get_family(model.family)
    grid = default_grid(fam) if grid is None else np.asarray(grid, dtype=np.float64).reshape(-1, fam.dim)
    acc = np.empty(len(grid))
    for k, raw in enumerate(grid):
        x = _inputs(fam, raw, test.data)
        acc[k] = float((model.predict(raw, x, chunk) == test.labels).mean())
    return AccuracyTable(fam.name, grid, acc)
