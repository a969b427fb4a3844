"""Command-line driver: ``scn <subcommand> [options]``.

Exit codes: 2 configuration error, 3 data error, 4 numeric divergence,
5 acceptance failure. ``SCN_THREADS`` caps BLAS threads; 0 selects the
strict deterministic mode (one thread).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from contextlib import nullcontext

import numpy as np

from . import acceptance
from . import autodiff as ad
from . import datasets as ds
from . import diagnostics as dg
from . import netspec
from . import scn as scnmod
from . import search
from . import training
from . import transforms as tf
from .config import ConfigError, RunManifest, atomic_write, resolve

log = logging.getLogger("scnet")

EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE, EXIT_ACCEPT = 2, 3, 4, 5


# -- data and models ---------------------------------------------------------------------

def load_data(spec, n=14000, seed=7):
    """``synthetic:shapes2d``, ``synthetic:clouds3d``, ``idx:IMAGES,LABELS`` or a container path."""
    if spec.startswith("synthetic:"):
        kind = spec.split(":", 1)[1]
        if kind == "shapes2d":
            return ds.gen_shapes2d(n, seed)
        if kind == "clouds3d":
            return ds.gen_clouds3d(n, seed)
        raise ConfigError(f"unknown synthetic dataset {kind!r}")
    if spec.startswith("idx:"):
        images, _, labels = spec[4:].partition(",")
        if not labels:
            raise ConfigError("idx data needs 'idx:IMAGES,LABELS'")
        return ds.load_idx(images, labels)
    if not os.path.exists(spec):
        raise ds.DataError(f"data file {spec} does not exist")
    return ds.load_container(spec)


def train_test(cfg):
    data = load_data(cfg.data, cfg.n, cfg.data_seed)
    train, test = ds.split(data, [1 - cfg.test_fraction, cfg.test_fraction], cfg.data_seed)
    if cfg.downscale:
        train, test = (ds.LabeledSet(ds.downscale_pad(d.data, 0.5, 8), d.labels, d.kind, d.classes,
                                     d.split, dict(d.meta, downscaled=True)) for d in (train, test))
    return train, test


def arch_for(cfg, data):
    arch = cfg.arch_spec()
    channels = data.data.shape[3] if data.data.ndim == 4 and data.kind != "clouds" else 1
    return netspec.ArchSpec(arch.kind, arch.width, arch.depth, arch.size, channels, data.classes)


def baseline_to_scn(model):
    """Store a baseline as a D=1 checkpoint (beta is identically 1)."""
    fam = tf.get_family(model.family)
    cfg = np.zeros(scnmod.config_param_count(fam.enc_size, 1), dtype=np.float32)
    meta = {"baseline": model.kind, "alpha_star": model.alpha_star}
    return scnmod.SCNModel(fam.name, model.arch, 1, cfg, model.params[None].copy(), meta)


def load_model(path):
    if not os.path.exists(path):
        raise ds.DataError(f"checkpoint {path} does not exist")
    try:
        model = scnmod.load_checkpoint(path)
    except ValueError as exc:
        raise ds.DataError(str(exc)) from exc
    kind = model.meta.get("baseline")
    if kind:
        star = model.meta.get("alpha_star")
        return training.BaselineModel(kind, model.family, model.arch, model.bank[0],
                                      tuple(star) if star else None)
    return model


def parse_alpha(text, family):
    fam = tf.get_family(family)
    vals = [float(v) for v in str(text).split(",")]
    if fam.name in ("rotation2d", "rotation3d"):
        vals = [math.radians(v) for v in vals]
    return tf.check_domain(fam, vals)


def parse_grid(text, family):
    if text in (None, "", "default"):
        return training.default_grid(family)
    return np.array([parse_alpha(p, family) for p in text.split(";")])


# -- subcommands --------------------------------------------------------------------------

def _config(args):
    overrides = {k: getattr(args, k, None) for k in
                 ("data", "family", "arch", "dims", "epochs", "seed", "lr", "batch_size", "out")}
    if getattr(args, "iscn", False):
        overrides["iscn"] = True
    items = [f"{k}={json.dumps(v) if not isinstance(v, str) else v}"
             for k, v in overrides.items() if v is not None]
    return resolve(getattr(args, "config", None), items + list(getattr(args, "set", None) or ()))


def cmd_gen_data(args):
    data = load_data(f"synthetic:{args.synthetic}", args.n, args.seed) if args.synthetic else \
        load_data(f"idx:{args.idx_images},{args.idx_labels}")
    man = RunManifest("gen-data", {"synthetic": args.synthetic, "n": args.n, "seed": args.seed,
                                   "idx_images": args.idx_images, "idx_labels": args.idx_labels})
    ds.save_container(man.add("data", args.out), data)
    man.metrics = {"count": len(data), "classes": data.classes}
    man.finish(args.out + ".manifest.json")
    print(f"wrote {len(data)} samples to {args.out}")


def _train_common(args, kind):
    cfg = _config(args)
    os.makedirs(cfg.out, exist_ok=True)
    man = RunManifest(kind, cfg.__dict__.copy())
    atomic_write(man.add("config", os.path.join(cfg.out, "config.resolved")), cfg.to_text())
    train, test = train_test(cfg)
    return cfg, man, train, test


def cmd_train_scn(args):
    cfg, man, train, test = _train_common(args, "train-scn")
    model = scnmod.SCNModel.create(cfg.family, arch_for(cfg, train), cfg.dims, cfg.seed)
    model, hist = training.train_scn(model, train, cfg.hyperparams(), iscn=cfg.iscn)
    _finish_training(cfg, man, baseline=None, model=model, hist=hist, test=test)


def cmd_train_baseline(args):
    cfg, man, train, test = _train_common(args, "train-baseline")
    star = parse_alpha(args.alpha_star, cfg.family) if args.alpha_star is not None else None
    model, hist = training.train_baseline(args.kind, arch_for(cfg, train), cfg.family, train,
                                          cfg.hyperparams(), star)
    _finish_training(cfg, man, baseline=model, model=baseline_to_scn(model), hist=hist, test=test)


def _finish_training(cfg, man, baseline, model, hist, test):
    scnmod.save_checkpoint(man.add("checkpoint", os.path.join(cfg.out, "model.scn")), model)
    hist.to_jsonl(man.add("history", os.path.join(cfg.out, "history.jsonl")))
    last = hist.records[-1] if hist.records else {}
    man.metrics = {"final_" + k: v for k, v in last.items()}
    man.finish(os.path.join(cfg.out, "manifest.json"))
    print(json.dumps(man.metrics))


def _eval_inputs(args):
    model = load_model(args.model)
    test = load_data(args.data, args.n, args.data_seed)
    if args.downscale:
        test = ds.LabeledSet(ds.downscale_pad(test.data, 0.5, 8), test.labels, test.kind,
                             test.classes, test.split, test.meta)
    return model, test


def cmd_eval(args):
    model, test = _eval_inputs(args)
    table = training.evaluate(model, test, parse_grid(args.grid, model.family))
    summary = {"mean": table.mean, "min": table.min, "max": table.max, "points": len(table.acc)}
    if args.out:
        man = RunManifest("eval", vars(args).copy())
        atomic_write(man.add("summary", args.out), json.dumps(summary, indent=2) + "\n")
        man.metrics = summary
        man.finish(args.out + ".manifest.json")
    print(json.dumps(summary))


def cmd_sweep(args):
    model, test = _eval_inputs(args)
    grid = parse_grid(args.grid, model.family)
    if args.profile_alpha is not None:
        table = dg.specialization_profile(model, parse_alpha(args.profile_alpha, model.family), test, grid)
    else:
        table = dg.accuracy_sweep(model, test, grid)
    man = RunManifest("sweep", vars(args).copy())
    table.to_csv(man.add("sweep", args.out))
    man.metrics = {"mean": table.mean, "min": table.min, "max": table.max}
    man.finish(args.out + ".manifest.json")
    print(json.dumps(man.metrics))


def cmd_export_beta(args):
    model = load_model(args.model)
    if not isinstance(model, scnmod.SCNModel):
        raise ConfigError("export-beta needs an SCN checkpoint")
    grid = parse_grid(args.grid, model.family)
    curve = dg.export_beta_curve(model, grid)
    man = RunManifest("export-beta", vars(args).copy())
    curve.to_csv(man.add("beta_curve", args.out))
    report = {"degeneracy_index": dg.degeneracy_index(curve)}
    if model.family == "rotation2d":
        report["argmax_arcs"] = dg.argmax_arcs(curve)[0]
    try:
        rep = dg.continuity_probe(model, model.family, grid)
        report.update({"max_step": rep.max_step, "mean_step": rep.mean_step, "lipschitz": rep.lipschitz})
    except ValueError as exc:
        log.warning("continuity probe skipped: %s", exc)
    report_path = os.path.splitext(args.out)[0] + ".report.json"
    atomic_write(man.add("report", report_path), json.dumps(report, indent=2) + "\n")
    man.metrics = report
    man.finish(args.out + ".manifest.json")
    print(json.dumps(report))


def cmd_search_alpha(args):
    model, test = _eval_inputs(args)
    if not isinstance(model, scnmod.SCNModel):
        raise ConfigError("search-alpha needs an SCN checkpoint")
    rng = np.random.default_rng(args.seed)
    idx = rng.choice(len(test), args.batch_size, replace=False)
    x, y = test.data[idx], test.labels[idx]
    truth = None
    if args.alpha is not None:
        truth = parse_alpha(args.alpha, model.family)
        x = tf.apply(model.family, truth, x)
    cfg = search.SearchConfig(restarts=args.restarts, temperature=args.temperature, seed=args.seed)
    labels, res = search.invariant_predict(model, x, cfg)
    man = RunManifest("search-alpha", vars(args).copy())
    res.to_csv(man.add("trace", args.out))
    out = {"alpha": res.alpha.tolist(), "entropy": res.entropy, "best_restart": res.best_restart,
           "accuracy": float((labels == y).mean())}
    if truth is not None and tf.get_family(model.family).periodic:
        out["error_deg"] = float(np.degrees(search.angle_error(res.alpha, truth)).max())
    man.metrics = out
    man.finish(args.out + ".manifest.json")
    print(json.dumps(out))


def cmd_gradcheck(args):
    ctx = acceptance.Context(args.profile)
    res = acceptance.gradient_check(ctx, seed=args.seed)
    print(res.line())
    return 0 if res.passed else 1


def cmd_accept(args):
    only = {int(v) for v in args.only.split(",")} if args.only else None
    results = acceptance.run(args.profile, only)
    if args.out:
        atomic_write(args.out, json.dumps([{k: v for k, v in r.__dict__.items()} for r in results],
                                          indent=2, default=str) + "\n")
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return EXIT_ACCEPT if failed else 0


# -- parser -------------------------------------------------------------------------------

def _train_args(p):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--data")
    p.add_argument("--family")
    p.add_argument("--arch")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--out")


def _eval_args(p):
    p.add_argument("--model", required=True)
    p.add_argument("--data", default="synthetic:shapes2d")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--data-seed", type=int, default=8)
    p.add_argument("--downscale", action="store_true")


def build_parser():
    ap = argparse.ArgumentParser(prog="scn", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a data container")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--synthetic", choices=("shapes2d", "clouds3d"))
    src.add_argument("--idx-images")
    p.add_argument("--idx-labels")
    p.add_argument("--n", type=int, default=14000)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", default="data.scnd")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train-scn", help="train an SCN")
    _train_args(p)
    p.add_argument("--dims", type=int)
    p.add_argument("--iscn", action="store_true", help="add the entropy terms")
    p.set_defaults(fn=cmd_train_scn)

    p = sub.add_parser("train-baseline", help="train One4All, One4One or Inverse")
    _train_args(p)
    p.add_argument("--kind", choices=training.BASELINES, default="one4all")
    p.add_argument("--alpha-star", help="fixed alpha for one4one (degrees for angles)")
    p.set_defaults(fn=cmd_train_baseline)

    for name, fn, hlp in (("eval", cmd_eval, "accuracy summary over a grid"),
                          ("sweep", cmd_sweep, "per-grid-point accuracy CSV")):
        p = sub.add_parser(name, help=hlp)
        _eval_args(p)
        p.add_argument("--grid", default="default", help="'default' or 'a;b;c' (degrees for angles)")
        p.add_argument("--out", required=(name == "sweep"))
        if name == "sweep":
            p.add_argument("--profile-alpha", help="freeze the network composed at this alpha")
        p.set_defaults(fn=fn)

    p = sub.add_parser("export-beta", help="beta curve CSV and continuity report")
    p.add_argument("--model", required=True)
    p.add_argument("--grid", default="default")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_export_beta)

    p = sub.add_parser("search-alpha", help="entropy search on one transformed batch")
    _eval_args(p)
    p.add_argument("--alpha", help="transform the batch with this alpha first")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--restarts", type=int, default=100)
    p.add_argument("--temperature", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_search_alpha)

    p = sub.add_parser("gradcheck", help="finite-difference check of the SCN loss")
    p.add_argument("--profile", choices=sorted(acceptance.PROFILES), default="quick")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("accept", help="run the acceptance suite")
    p.add_argument("--profile", choices=sorted(acceptance.PROFILES), default="desk")
    p.add_argument("--only", help="comma-separated criterion numbers")
    p.add_argument("--out", help="write results as JSON")
    p.set_defaults(fn=cmd_accept)
    return ap


def thread_limits():
    """Context manager honouring SCN_THREADS (0 = strict single-threaded)."""
    raw = os.environ.get("SCN_THREADS")
    if raw is None:
        return nullcontext()
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"SCN_THREADS must be an integer, got {raw!r}") from exc
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=max(n, 1))


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with thread_limits():
            code = args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (tf.DomainError, tf.NotInvertible) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ds.DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except training.Divergence as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    return code or 0


if __name__ == "__main__":
    sys.exit(main())
