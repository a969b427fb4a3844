"""Acceptance suite: structural checks and desk-scale regressions.

Each criterion is a function ``(ctx) -> Result``. The shared
:class:`Context` caches datasets and trained models so that criteria reuse
runs (the D=1 rotation SCN of seed 0 serves both the collapse check and the
accuracy regression, for instance).
"""

from __future__ import annotations

import logging
import math
import os
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import datasets as ds
from . import diagnostics as dg
from . import netspec
from . import scn as scnmod
from . import search
from . import training
from . import transforms as tf

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Profile:
    name: str
    n_train: int = 12000
    n_test: int = 2000
    data_seed: int = 7
    epochs: int = 30
    seeds: tuple = (0, 1, 2)
    arch: str = "mlp:32x1"
    ticnn: str = "ticnn:16x2"
    search_batches: int = 50
    search_batch: int = 16
    restarts: int = 100
    clouds_train: int = 3000
    clouds_test: int = 1000
    cloud_triples: int = 30


PROFILES = {
    "desk": Profile("desk"),
    # exercises every code path in a couple of minutes; thresholds are not
    # expected to hold at this scale
    "quick": Profile("quick", n_train=600, n_test=200, epochs=1, seeds=(0,), search_batches=3,
                     restarts=3, clouds_train=100, clouds_test=50, cloud_triples=3),
}


@dataclass
class Result:
    number: int
    name: str
    passed: bool
    detail: str
    metrics: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self):
        return (f"[{'PASS' if self.passed else 'FAIL'}] criterion {self.number:2d} "
                f"{self.name}: {self.detail} ({self.seconds:.1f}s)")


class Context:
    """Lazily built datasets and trained models shared across criteria."""

    def __init__(self, profile="desk"):
        self.profile = PROFILES[profile] if isinstance(profile, str) else profile
        self._cache = {}

    def _memo(self, key, build):
        if key not in self._cache:
            t = time.time()
            self._cache[key] = build()
            log.info("built %s in %.1fs", key, time.time() - t)
        return self._cache[key]

    def hp(self, seed):
        return training.HyperParams(epochs=self.profile.epochs, seed=seed)

    def arch(self, text=None):
        return netspec.ArchSpec.parse(text or self.profile.arch)

    def shapes(self):
        def build():
            p = self.profile
            full = ds.gen_shapes2d(p.n_train + p.n_test, p.data_seed)
            return ds.split(full, [p.n_train / (p.n_train + p.n_test), p.n_test / (p.n_train + p.n_test)], 0)
        return self._memo("shapes", build)

    def shapes_small(self):
        def build():
            tr, te = self.shapes()
            return _downscaled(tr), _downscaled(te)
        return self._memo("shapes_small", build)

    def clouds(self):
        def build():
            p = self.profile
            full = ds.gen_clouds3d(p.clouds_train + p.clouds_test, p.data_seed)
            total = p.clouds_train + p.clouds_test
            return ds.split(full, [p.clouds_train / total, p.clouds_test / total], 0)
        return self._memo("clouds", build)

    def scn(self, family, dims, seed, arch=None, iscn=False, data="shapes"):
        def build():
            train = getattr(self, data)()[0]
            model = scnmod.SCNModel.create(family, self.arch(arch), dims, seed)
            return training.train_scn(model, train, self.hp(seed), iscn=iscn)
        return self._memo(("scn", family, dims, seed, arch, iscn, data), build)

    def one4all(self, seed):
        def build():
            return training.train_baseline("one4all", self.arch(), "rotation2d", self.shapes()[0],
                                           self.hp(seed))
        return self._memo(("one4all", seed), build)

    def rotation_acc(self, key, seed):
        def build():
            model = self.one4all(seed)[0] if key == "one4all" else self.scn("rotation2d", key, seed)[0]
            return training.evaluate(model, self.shapes()[1]).mean
        return self._memo(("rotacc", key, seed), build)


def _downscaled(d):
    return ds.LabeledSet(ds.downscale_pad(d.data, 0.5, 8), d.labels, d.kind, d.classes, d.split,
                         dict(d.meta, downscaled=True))


def _timed(number, name):
    def wrap(fn):
        def run(ctx, **kwargs):
            t = time.time()
            res = fn(ctx, **kwargs)
            res.number, res.name, res.seconds = number, name, time.time() - t
            return res
        run.number, run.title = number, name
        run.__doc__ = fn.__doc__
        run.__name__ = fn.__name__
        return run
    return wrap


def _res(passed, detail, **metrics):
    return Result(0, "", bool(passed), detail, metrics)


# -- 1 --------------------------------------------------------------------------------

@_timed(1, "gradient correctness")
def gradient_check(ctx, seed=0):
    """Autodiff vs float64 central differences on the full SCN training loss."""
    arch = netspec.ArchSpec.parse("mlp:8x1")
    model = scnmod.SCNModel.create("rotation2d", arch, 3, seed)
    config = model.config.astype(np.float64)
    bank = model.bank.astype(np.float64)
    train = ctx.shapes()[0]
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(train), 4, replace=False)
    xb = train.data[idx].astype(np.float64)
    yb = train.labels[idx]
    a1, a2 = tf.sample_alpha("rotation2d", rng), tf.sample_alpha("rotation2d", rng)

    def loss_fn(cfg, bnk):
        return training.scn_loss(cfg, bnk, "rotation2d", arch, 3, xb, yb, a1, a2)[0]

    tc, tb = ad.Tensor(config, requires_grad=True), ad.Tensor(bank, requires_grad=True)
    grads = ad.backward(loss_fn(tc, tb), wrt=[tc, tb])
    num = ad.numeric_grad(lambda c, b: float(loss_fn(ad.Tensor(c), ad.Tensor(b)).data),
                          [config, bank], h=1e-5)
    worst_abs, worst_rel, bad = 0.0, 0.0, 0
    for analytic, numeric in zip((grads[tc], grads[tb]), num):
        err = np.abs(analytic - numeric)
        bad += int(np.sum(err > 1e-7 + 1e-4 * np.abs(numeric)))
        worst_abs = max(worst_abs, float(err.max()))
        rel = err / np.maximum(np.abs(numeric), 1e-300)
        worst_rel = max(worst_rel, float(np.where(err > 1e-7, rel, 0).max()))
    n = config.size + bank.size
    return _res(bad == 0, f"{n} coordinates, {bad} outside tolerance, max abs err {worst_abs:.2e}",
                coordinates=n, failures=bad, max_abs=worst_abs, max_rel=worst_rel)


# -- 2 --------------------------------------------------------------------------------

def mlp_formula(w, l, p=32, c=1, m=10):
    return (p * p * c + 1) * w + (l - 1) * (w * w + w) + m * (w + 1)


def shallowcnn_formula(w, l, c=1, m=10):
    return (9 * 9 * c + 1) * w + (l - 1) * (13 * 13 * w + 1) * w + m * (w + 1)


@_timed(2, "exact formulas")
def exact_formulas(ctx):
    """Parameter-count formulas on a width x depth grid, config net size."""
    mism = []
    for w in (1, 2, 8, 16, 32, 64):
        for l in (1, 2, 3, 4):
            for kind, formula in (("mlp", mlp_formula), ("shallowcnn", shallowcnn_formula)):
                got = netspec.param_count(netspec.ArchSpec(kind, w, l))
                if got != formula(w, l):
                    mism.append((kind, w, l, got, formula(w, l)))
    cfg = scnmod.config_param_count(2, 3)
    ok = not mism and cfg == 387
    return _res(ok, f"48 grid points, {len(mism)} mismatches, config_param_count(2,3)={cfg}",
                mismatches=mism, config_387=cfg)


# -- 3 --------------------------------------------------------------------------------

@_timed(3, "composition structure")
def composition_structure(ctx, seed=0):
    """Basis recovery, linearity of the composition, simplex invariant."""
    rng = np.random.default_rng(seed)
    arch = ctx.arch()
    d = 5
    bank = rng.standard_normal((d, netspec.param_count(arch)))
    basis_err = max(float(np.abs(scnmod.compose(bank, np.eye(d)[i]).data - bank[i]).max())
                    for i in range(d))
    lin_err = 0.0
    for _ in range(20):
        b1, b2 = rng.dirichlet(np.ones(d)), rng.dirichlet(np.ones(d))
        s, t = rng.standard_normal(2)
        lhs = scnmod.compose(bank, s * b1 + t * b2).data
        rhs = s * scnmod.compose(bank, b1).data + t * scnmod.compose(bank, b2).data
        lin_err = max(lin_err, float(np.abs(lhs - rhs).max()))
    cfg = scnmod.init_config(2, d, seed, dtype=np.float64) * 4.0
    enc = np.vstack([tf.encode_many("rotation2d", rng.uniform(0, tf.TWO_PI, (5000, 1))),
                     rng.standard_normal((5000, 2)) * 5])
    beta = scnmod.config_forward(ad.Tensor(cfg), ad.Tensor(enc), 2, d).data
    simplex_err = float(max(np.abs(beta.sum(axis=1) - 1).max(), -beta.min()))
    ok = basis_err == 0.0 and lin_err <= 1e-6 and simplex_err <= 1e-12
    return _res(ok, f"basis err {basis_err:.1e}, linearity err {lin_err:.1e}, "
                    f"simplex err over 10^4 encodings {simplex_err:.1e}",
                basis=basis_err, linearity=lin_err, simplex=simplex_err)


# -- 4 --------------------------------------------------------------------------------

@_timed(4, "D=1 collapse")
def d1_collapse(ctx, seed=0):
    """D=1 SCN and One4All give identical loss traces once the constant
    regularizer (cos^2 = 1) is removed."""
    model, h_scn = ctx.scn("rotation2d", 1, seed)
    base, h_base = ctx.one4all(seed)
    ce = np.array(h_scn.column("ce"))
    reg = np.array(h_scn.column("reg"))
    loss = np.array(h_base.column("loss"))
    same_trace = np.array_equal(ce, loss)
    same_weights = np.array_equal(model.bank[0], base.params)
    beta_one = bool(np.all(model.betas(training.default_grid("rotation2d")) == 1.0))
    ok = same_trace and same_weights and beta_one and np.all(reg == 1.0)
    return _res(ok, f"{len(ce)} epochs, traces bit-identical={same_trace}, "
                    f"final weights identical={same_weights}, beta==1 {beta_one}",
                trace_scn=ce.tolist(), trace_one4all=loss.tolist())


# -- 5 --------------------------------------------------------------------------------

@_timed(5, "accuracy grows with D")
def hypothesis_regression(ctx):
    """Mean 1-degree-grid accuracy for D in {1, 3, 8} and One4All, seed-averaged."""
    seeds = ctx.profile.seeds
    acc = {k: float(np.mean([ctx.rotation_acc(k, s) for s in seeds])) for k in (1, 3, 8, "one4all")}
    c1 = acc[8] >= acc[3] - 0.005
    c2 = acc[8] >= acc[1] + 0.02
    c3 = abs(acc["one4all"] - acc[1]) <= 0.015
    detail = (f"D=1 {acc[1]:.4f}, D=3 {acc[3]:.4f}, D=8 {acc[8]:.4f}, One4All {acc['one4all']:.4f} "
              f"over seeds {list(seeds)}")
    return _res(c1 and c2 and c3, detail, **{str(k): v for k, v in acc.items()})


# -- 6 --------------------------------------------------------------------------------

@_timed(6, "beta-space structure")
def beta_structure(ctx, seed=0):
    """D=3: argmax of beta forms three arcs; small per-degree beta steps."""
    model = ctx.scn("rotation2d", 3, seed)[0]
    curve = dg.export_beta_curve(model)
    arcs, winners = dg.argmax_arcs(curve, periodic=True)
    closed = np.deg2rad(np.arange(361.0))[:, None]
    rep = dg.continuity_probe(model, "rotation2d", closed)
    ok = arcs == 3 and len(winners) == 3 and rep.max_step < 0.2
    return _res(ok, f"{arcs} arcs over {len(winners)} distinct models, max step {rep.max_step:.4f}, "
                    f"Lipschitz {rep.lipschitz:.3f}",
                arcs=arcs, winners=winners, max_step=rep.max_step, mean_step=rep.mean_step,
                lipschitz=rep.lipschitz)


# -- 7 --------------------------------------------------------------------------------

@_timed(7, "specialization")
def specialization(ctx):
    """D=8: the network composed for 0 degrees is worse at 180 degrees."""
    gaps = []
    test = ctx.shapes()[1]
    for s in ctx.profile.seeds:
        model = ctx.scn("rotation2d", 8, s)[0]
        table = dg.specialization_profile(model, [0.0], test, grid=[[0.0], [math.pi]])
        gaps.append(float(table.acc[0] - table.acc[1]))
    gap = float(np.mean(gaps))
    return _res(gap >= 0.10, f"mean acc(0)-acc(180) = {gap:.4f} (per seed {np.round(gaps, 4).tolist()})",
                gap=gap, per_seed=gaps)


# -- 8 --------------------------------------------------------------------------------

@_timed(8, "degeneracy with translation-invariant CNN")
def degeneracy(ctx, seed=0):
    """Translation SCN on half-size padded images: TI-CNN collapses onto one
    base model, the MLP does not."""
    out = {}
    for name, arch in (("ticnn", ctx.profile.ticnn), ("mlp", ctx.profile.arch)):
        for d in (2, 4):
            model = ctx.scn("translation", d, seed, arch=arch, data="shapes_small")[0]
            out[f"{name}_D{d}"] = dg.degeneracy_index(dg.export_beta_curve(model))
    ok = all(out[f"ticnn_D{d}"] > 0.9 for d in (2, 4)) and all(out[f"mlp_D{d}"] < 0.7 for d in (2, 4))
    return _res(ok, ", ".join(f"{k} {v:.3f}" for k, v in out.items()), **out)


# -- 9 --------------------------------------------------------------------------------

# classes whose rendering is unchanged (or swapped with another class) by a
# quarter or half turn; measured on class-mean images of gen_shapes2d
_QUARTER_SAFE = {"disk", "ring", "square", "bar-h", "bar-v"}
_HALF_SAFE = _QUARTER_SAFE | {"checker"}


def _ambiguous_shift(labels, k):
    names = {ds.SHAPE_CLASSES[i] for i in labels}
    return names <= (_HALF_SAFE if k == 2 else _QUARTER_SAFE)


@_timed(9, "I-SCN alpha search")
def iscn_search(ctx, seed=0):
    """Entropy search recovers held-out angles; batches beat single images."""
    p = ctx.profile
    model = ctx.scn("rotation2d", 8, seed, iscn=True)[0]
    test = ctx.shapes()[1]
    rng = np.random.default_rng([seed, 9])
    cfg = search.SearchConfig(restarts=p.restarts, seed=seed)
    hits, ambiguous, correct16, correct1, n = 0, 0, 0, 0, 0
    errors = []
    for k in range(p.search_batches):
        idx = rng.choice(len(test), p.search_batch, replace=False)
        phi = float(rng.uniform(0, tf.TWO_PI))
        x = tf.rotate2d(test.data[idx], phi)
        y = test.labels[idx]
        labels, res = search.invariant_predict(model, x, cfg)
        err = float(search.angle_error(res.alpha[0], phi))
        errors.append(math.degrees(err))
        if err <= math.radians(15):
            hits += 1
        elif any(search.angle_error(res.alpha[0], phi + q * math.pi / 2) <= math.radians(15)
                 and _ambiguous_shift(y, q) for q in (1, 2, 3)):
            hits += 1
            ambiguous += 1
            log.info("batch %d: label-symmetric ambiguity (phi %.1f, found %.1f)", k,
                     math.degrees(phi), math.degrees(res.alpha[0]))
        correct16 += int((labels == y).sum())
        for j in range(len(idx)):
            lab1, _ = search.invariant_predict(model, x[j:j + 1], cfg)
            correct1 += int(lab1[0] == y[j])
        n += len(idx)
    rate = hits / p.search_batches
    acc16, acc1 = correct16 / n, correct1 / n
    ok = rate >= 0.7 and acc16 - acc1 >= 0.05
    return _res(ok, f"recovered {hits}/{p.search_batches} batches within 15 deg "
                    f"({ambiguous} via label symmetry), median err {np.median(errors):.1f} deg, "
                    f"acc b={p.search_batch} {acc16:.4f} vs b=1 {acc1:.4f}",
                recovery=rate, ambiguous=ambiguous, acc_batch=acc16, acc_single=acc1,
                errors_deg=errors)


# -- 10 -------------------------------------------------------------------------------

@_timed(10, "transform oracles")
def transform_oracles(ctx, seed=0):
    """Quarter turns, rotation round trip, integer shifts, colour identity."""
    test = ctx.shapes()[1]
    x = test.data[:200]
    perm_ok = all(np.array_equal(tf.rotate2d(x, k * math.pi / 2), np.rot90(x, k, axes=(1, 2)))
                  for k in (1, 2, 3))
    rng = np.random.default_rng(seed)
    size = x.shape[1]
    rr, cc = np.mgrid[:size, :size]
    c = (size - 1) / 2
    disk = (rr - c) ** 2 + (cc - c) ** 2 <= (size / 2) ** 2
    rt = []
    for phi in rng.uniform(0, tf.TWO_PI, 10):
        back = tf.rotate2d(tf.rotate2d(x, phi), -phi)
        rt.append(float(np.abs(back - x)[:, disk].mean()))
    rt_err = max(rt)
    shift_ok = True
    for _ in range(10):
        s = rng.integers(-8, 9, size=2).astype(float)
        back = tf.translate2d(tf.translate2d(x, s), -s)
        r0, r1 = int(abs(s[1])), size - int(abs(s[1]))
        c0, c1 = int(abs(s[0])), size - int(abs(s[0]))
        shift_ok &= bool(np.array_equal(back[:, r0:r1, c0:c1], x[:, r0:r1, c0:c1]))
    rgb = np.random.default_rng(seed).random((20, size, size, 3)).astype(np.float32)
    color_ok = all(np.array_equal(tf.apply(f, [1.0], imgs), imgs)
                   for f in tf.COLOR for imgs in (x, rgb))
    ok = perm_ok and rt_err < 0.02 and shift_ok and color_ok
    return _res(ok, f"quarter turns exact={perm_ok}, round-trip disk MAE {rt_err:.4f}, "
                    f"integer shifts exact={shift_ok}, colour identity={color_ok}",
                roundtrip_mae=rt_err)


# -- 11 -------------------------------------------------------------------------------

@_timed(11, "persistence")
def persistence(ctx, seed=0):
    """Checkpoint and container round trips; evaluate() after reload."""
    train, test = ctx.shapes()
    model = scnmod.SCNModel.create("rotation2d", ctx.arch(), 3, seed)
    training.train_scn(model, train.subset(np.arange(min(2000, len(train)))),
                       training.HyperParams(epochs=1, seed=seed))
    grid = training.default_grid("rotation2d")[::10]
    with tempfile.TemporaryDirectory() as tmp:
        p1, p2 = os.path.join(tmp, "a.scn"), os.path.join(tmp, "b.scn")
        scnmod.save_checkpoint(p1, model)
        again = scnmod.load_checkpoint(p1)
        scnmod.save_checkpoint(p2, again)
        ckpt_ok = (open(p1, "rb").read() == open(p2, "rb").read()
                   and np.array_equal(again.config, model.config) and np.array_equal(again.bank, model.bank))
        eval_ok = np.array_equal(training.evaluate(model, test, grid).acc,
                                 training.evaluate(again, test, grid).acc)
        c1, c2 = os.path.join(tmp, "a.scnd"), os.path.join(tmp, "b.scnd")
        ds.save_container(c1, test)
        back = ds.load_container(c1)
        ds.save_container(c2, back)
        cont_ok = (open(c1, "rb").read() == open(c2, "rb").read()
                   and np.array_equal(back.data, test.data) and np.array_equal(back.labels, test.labels))
    ok = ckpt_ok and eval_ok and cont_ok
    return _res(ok, f"checkpoint bit-exact={ckpt_ok}, evaluate after reload identical={eval_ok}, "
                    f"container bit-exact={cont_ok}")


# -- 12 -------------------------------------------------------------------------------

@_timed(12, "3D rotation smoke test")
def rotation3d_smoke(ctx):
    """Accuracy over random Euler triples does not drop from D=1 to D=4."""
    p = ctx.profile
    test = ctx.clouds()[1]
    angles = np.random.default_rng(12).uniform(-math.pi, math.pi, (p.cloud_triples, 3))
    acc = {}
    for d in (1, 4):
        vals = []
        for s in p.seeds:
            model = ctx.scn("rotation3d", d, s, data="clouds")[0]
            vals.append(training.evaluate(model, test, angles).mean)
        acc[d] = float(np.mean(vals))
    return _res(acc[4] >= acc[1], f"D=1 {acc[1]:.4f}, D=4 {acc[4]:.4f} over {p.cloud_triples} "
                                  f"angle triples and seeds {list(p.seeds)}",
                D1=acc[1], D4=acc[4])


CRITERIA = (gradient_check, exact_formulas, composition_structure, d1_collapse, hypothesis_regression,
            beta_structure, specialization, degeneracy, iscn_search, transform_oracles, persistence,
            rotation3d_smoke)


def run(profile="desk", only=None, ctx=None, report=print):
    """Run the selected criteria (numbers 1..12) and return their results."""
    ctx = ctx or Context(profile)
    results = []
    for crit in CRITERIA:
        if only and crit.number not in only:
            continue
        res = crit(ctx)
        report(res.line())
        results.append(res)
    return results
