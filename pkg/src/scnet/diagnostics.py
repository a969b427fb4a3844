"""Probes of the learned configuration subspace.

CSV column order is fixed: native alpha columns, encoding columns, then
``beta1..betaD`` (beta curves) or ``accuracy`` (sweeps).
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import training
from . import transforms as tf


@dataclass
class BetaCurve:
    family: str
    grid: np.ndarray  # (m, S) native
    enc: np.ndarray  # (m, S')
    betas: np.ndarray  # (m, D)

    def columns(self):
        fam = tf.get_family(self.family)
        return (training._alpha_columns(fam) + [f"enc{i + 1}" for i in range(self.enc.shape[1])]
                + [f"beta{i + 1}" for i in range(self.betas.shape[1])])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns())
            for row in np.hstack([self.grid, self.enc, self.betas]):
                w.writerow([f"{v:.10g}" for v in row])


@dataclass
class ContinuityReport:
    max_step: float
    mean_step: float
    lipschitz: float

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2)


def _betas_fn(source):
    return source if callable(source) and not hasattr(source, "betas") else source.betas


def export_beta_curve(model, grid=None):
    fam = tf.get_family(model.family)
    grid = training.default_grid(fam) if grid is None else np.asarray(grid, float).reshape(-1, fam.dim)
    return BetaCurve(fam.name, grid, tf.encode_many(fam, grid), np.asarray(model.betas(grid)))


def _check_ordered(grid):
    steps = np.linalg.norm(np.diff(grid, axis=0), axis=1)
    if len(grid) < 2:
        raise ValueError("continuity probe needs at least two grid points")
    if grid.shape[1] == 1:
        d = np.diff(grid[:, 0])
        if not (np.all(d > 0) or np.all(d < 0)):
            raise ValueError("grid is not ordered along a curve")
    elif np.any(steps == 0) or steps.max() > 2.0 * np.median(steps):
        raise ValueError("grid is not ordered along a curve")


def continuity_probe(source, family, grid):
    """Finite-difference steps of beta along an ordered grid.

    ``source`` is an SCN model or any callable mapping (m, S) native
    parameters to (m, D) beta rows.
    """
    fam = tf.get_family(family)
    grid = np.asarray(grid, dtype=np.float64).reshape(-1, fam.dim)
    _check_ordered(grid)
    betas = np.asarray(_betas_fn(source)(grid), dtype=np.float64)
    enc = tf.encode_many(fam, grid)
    db = np.diff(betas, axis=0)
    de = np.linalg.norm(np.diff(enc, axis=0), axis=1)
    inf_steps = np.abs(db).max(axis=1)
    l2 = np.linalg.norm(db, axis=1)
    ratio = np.where(de > 0, l2 / np.where(de > 0, de, 1.0), 0.0)
    return ContinuityReport(float(inf_steps.max()), float(inf_steps.mean()), float(ratio.max()))


def degeneracy_index(curve):
    """max_i mean_alpha beta_i: 1 when one base model carries every alpha,
    1/D when all are used equally."""
    betas = curve.betas if isinstance(curve, BetaCurve) else np.asarray(curve)
    if betas.size == 0:
        raise ValueError("empty beta curve")
    return float(betas.mean(axis=0).max())


def argmax_arcs(curve, periodic=True):
    """Number of contiguous runs of ``argmax_i beta_i`` along the grid
    (first and last run merged when ``periodic``), and the distinct winners."""
    betas = curve.betas if isinstance(curve, BetaCurve) else np.asarray(curve)
    winners = betas.argmax(axis=1)
    changes = int((winners[1:] != winners[:-1]).sum())
    runs = changes + 1
    if periodic and runs > 1 and winners[0] == winners[-1]:
        runs -= 1
    return runs, sorted(set(winners.tolist()))


def accuracy_sweep(model, test, grid=None):
    return training.evaluate(model, test, grid)


class _Frozen:
    """Single composed network used for every alpha."""

    def __init__(self, family, arch, theta):
        self.family, self.arch, self.theta = family, arch, theta

    def predict(self, raw, images, chunk=1024):
        from . import netspec
        return netspec.predict(self.arch, self.theta, images, chunk)


def specialization_profile(model, alpha_star, test, grid=None):
    """Accuracy over the grid of the single network composed at ``alpha_star``."""
    frozen = _Frozen(model.family, model.arch, model.weights(alpha_star))
    return training.evaluate(frozen, test, grid)
