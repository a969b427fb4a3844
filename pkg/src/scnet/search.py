"""Invariant SCN inference: estimate alpha from a batch by entropy minimization.

The search runs basin hopping in a normalized coordinate ``u`` in [-1, 1]^S.
For 2-D rotation ``u`` maps to degrees as ``(1 + u) * 180`` (so the start
point ``u = 0`` is 180 degrees); angles wrap, other parameters are clamped.
Local refinement is derivative-free: golden-section descent for one
parameter (re-centred until the basin minimum is interior), Nelder-Mead for
several.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import autodiff as ad
from . import transforms as tf

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class SearchConfig:
    """Basin-hopping settings.

    ``step`` is the half-width of the uniform perturbation in ``u``. The
    default (``None``) is 1.0 for angle families, so one hop can reach any
    point of the period, and 0.5 for bounded families.
    """

    restarts: int = 100
    temperature: float = 0.1
    local_iters: int = 20
    step: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.step is not None and self.step <= 0:
            raise ValueError("step must be positive")

    def step_for(self, family):
        if self.step is not None:
            return self.step
        return 1.0 if tf.get_family(family).periodic else 0.5


@dataclass
class SearchResult:
    alpha: np.ndarray
    entropy: float
    best_restart: int
    trace: list = field(default_factory=list)  # (restart, alpha, entropy)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            dim = len(self.alpha)
            w.writerow(["restart"] + [f"alpha{i + 1}" for i in range(dim)] + ["entropy"])
            for k, a, e in self.trace:
                w.writerow([k] + [f"{v:.10g}" for v in a] + [f"{e:.10g}"])


def batch_entropy(model, raw, batch):
    """Summed output entropy of the model composed at ``raw`` on ``batch``."""
    tf.check_domain(model.family, raw)
    logits = model.forward(np.asarray(raw, dtype=np.float64), batch)
    return float(ad.entropy_of_logits(ad.Tensor(np.asarray(logits, dtype=np.float64))).data)


def to_native(family, u):
    fam = tf.get_family(family)
    u = np.asarray(u, dtype=np.float64)
    if fam.name == "rotation2d":
        return tf.wrap_angle((1.0 + u) * math.pi)
    if fam.name == "rotation3d":
        return tf.wrap_angle(u * math.pi, -math.pi)
    lo, hi = np.asarray(fam.low), np.asarray(fam.high)
    return lo + (np.clip(u, -1.0, 1.0) + 1.0) * 0.5 * (hi - lo)


def _normalize(fam, u):
    if fam.periodic:
        return (u + 1.0) % 2.0 - 1.0
    return np.clip(u, -1.0, 1.0)


def _golden(f, a, b, x0, f0, iters):
    """Golden-section search on [a, b]; returns the best point seen, never
    worse than the incumbent ``(x0, f0)``."""
    best_x, best_f = x0, f0
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    for x, fx in ((c, fc), (d, fd)):
        if fx < best_f:
            best_x, best_f = x, fx
    return best_x, best_f


def _descend(f, x, half, iters, lo=-math.inf, hi=math.inf, max_shifts=8):
    """Golden-section descent to the bottom of the local basin.

    A window of half-width ``half`` around ``x`` is searched; while the
    minimum lands on an open window edge the window is re-centred there, so a
    start anywhere in a basin reaches its minimum like a converged local
    minimizer would.
    """
    fx = f(x)
    for _ in range(max_shifts):
        a, b = max(x - half, lo), min(x + half, hi)
        nx, nf = _golden(f, a, b, x, fx, iters)
        if nf >= fx:
            break
        tol = 1e-3 * (b - a)
        open_edge = (nx - a < tol and a > lo) or (b - nx < tol and b < hi)
        x, fx = nx, nf
        if not open_edge:
            break
    return x, fx


def search_alpha(model, batch, cfg=None, objective=None):
    """Basin-hopping search for the alpha that minimizes output entropy.

    ``objective(raw)`` overrides :func:`batch_entropy` (used with stubs).
    """
    cfg = cfg or SearchConfig()
    if len(batch) == 0:
        raise ValueError("search_alpha needs a non-empty batch")
    fam = tf.get_family(model.family)
    obj = objective or (lambda raw: batch_entropy(model, raw, batch))
    rng = np.random.default_rng(cfg.seed)
    step = cfg.step_for(fam)

    def f(u):
        return obj(to_native(fam, _normalize(fam, np.atleast_1d(u))))

    def refine(u):
        if fam.dim == 1:
            lo, hi = (-math.inf, math.inf) if fam.periodic else (-1.0, 1.0)
            x, fx = _descend(lambda s: f(np.array([s])), float(u[0]), step / 2, cfg.local_iters, lo, hi)
            return _normalize(fam, np.array([x])), fx
        simplex = u + np.vstack([np.zeros(fam.dim), np.eye(fam.dim) * step / 2])
        res = optimize.minimize(f, u, method="Nelder-Mead",
                                options={"initial_simplex": simplex, "maxfev": cfg.local_iters * fam.dim * 4,
                                         "xatol": 1e-4, "fatol": 1e-9})
        fu = f(u)
        if res.fun < fu:
            return _normalize(fam, res.x), float(res.fun)
        return u, fu

    start = np.zeros(fam.dim)
    trace = [(0, to_native(fam, start), f(start))]
    cur, cur_e = refine(start)
    trace.append((0, to_native(fam, cur), cur_e))
    best, best_e, best_k = cur, cur_e, 0
    for k in range(1, cfg.restarts + 1):
        cand = _normalize(fam, cur + rng.uniform(-step, step, fam.dim))
        cand, e = refine(cand)
        trace.append((k, to_native(fam, cand), e))
        if e < cur_e or rng.random() < math.exp(-(e - cur_e) / cfg.temperature):
            cur, cur_e = cand, e
        if e < best_e:
            best, best_e, best_k = cand, e, k
    return SearchResult(to_native(fam, best), best_e, best_k, trace)


def invariant_predict(model, batch, cfg=None, alpha=None):
    """Labels for a batch whose transformation is unknown.

    The batch is classified with weights composed at the searched alpha;
    pass ``alpha`` to bypass the search. Returns ``(labels, result)`` where
    ``result`` is ``None`` when bypassed.
    """
    result = None
    if alpha is None:
        result = search_alpha(model, batch, cfg)
        alpha = result.alpha
    return model.predict(np.asarray(alpha, dtype=np.float64), batch), result


def angle_error(a, b):
    """Smallest absolute difference of two angles (radians), in [0, pi]."""
    d = (np.asarray(a) - np.asarray(b)) % tf.TWO_PI
    return np.minimum(d, tf.TWO_PI - d)
