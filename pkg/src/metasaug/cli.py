"""Command-line front end: ``metasaug <subcommand>``.

Exit codes: 0 success, 1 verification/acceptance failure, 2 usage or input
error.
"""

import argparse
import hashlib
import json
import platform
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__, config, datagen, diagnostics, kernels, meta, model, verify
from . import covariance as cov
from .errors import ConfigError, MetaSAugError
from .numerics import make_rng

SPLITS = ("train", "meta_val", "test")


class UsageError(Exception):
    pass


def sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def versions():
    return {
        "metasaug": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "kernel_backend": kernels.BACKEND,
    }


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _existing_dir(path, what):
    path = Path(path)
    if not path.is_dir():
        raise UsageError(f"{what} directory {path} does not exist")
    return path


def load_splits(data_dir):
    data_dir = _existing_dir(data_dir, "data")
    manifest_path = data_dir / "manifest.json"
    num_classes = None
    if manifest_path.exists():
        num_classes = json.loads(manifest_path.read_text()).get("num_classes")
    out = {}
    for name in SPLITS:
        p = data_dir / f"{name}.csv"
        if not p.exists():
            raise UsageError(f"missing {p}")
        out[name] = datagen.load_csv(p, num_classes)
    C = num_classes or max(d.num_classes for d in out.values())
    out = {k: datagen.Dataset(d.features, d.labels, C) for k, d in out.items()}
    return datagen.SplitBundle(out["train"], out["meta_val"], out["test"])


def cmd_make_lt(args):
    out = _existing_dir(args.out, "output")
    t0 = time.time()
    spec = datagen.LongTailSpec(args.classes, args.n_max, args.mu, args.profile)
    split = datagen.make_longtail_benchmark(
        args.classes, args.dim, args.n_max, args.mu, args.val_per_class, args.test_per_class,
        args.separation, make_rng(args.seed), args.profile,
    )
    files = {}
    for name in SPLITS:
        p = out / f"{name}.csv"
        datagen.save_csv(getattr(split, name), p)
        files[name] = {"path": p.name, "sha256": sha256(p), "n": len(getattr(split, name)),
                       "class_counts": getattr(split, name).class_counts.tolist()}
    counts = split.train.class_counts
    manifest = {
        "command": "make-lt",
        "args": {k: v for k, v in vars(args).items() if k not in ("func",)},
        "num_classes": args.classes,
        "target_counts": spec.counts(),
        "achieved_mu": datagen.imbalance_ratio(counts),
        "files": files,
        "versions": versions(),
        "wall_clock_s": time.time() - t0,
    }
    manifest["args"]["out"] = str(args.out)
    write_json(out / "manifest.json", manifest)
    print(f"wrote {', '.join(f'{n}.csv' for n in SPLITS)} to {out}; train counts {counts.tolist()} "
          f"(mu achieved {manifest['achieved_mu']:.2f})")
    return 0


def _config_from_args(args):
    values = {}
    if args.preset:
        if args.preset not in config.PRESETS:
            raise ConfigError([f"preset: unknown preset {args.preset!r}"])
        values.update(config.PRESETS[args.preset])
    if args.config:
        values.update(config.load_config(args.config))
    pairs = [(f.name, getattr(args, f.name)) for f in fields(config.TrainConfig) if getattr(args, f.name) is not None]
    values.update(config.parse_pairs(pairs))
    return config.build(values)


def cmd_train(args):
    cfg = _config_from_args(args)
    split = load_splits(args.data)
    out = Path(args.out)
    if not out.parent.is_dir():
        raise UsageError(f"parent of output directory {out} does not exist")
    out.mkdir(exist_ok=True)
    t0 = time.time()
    with (out / "history.jsonl").open("w") as hist:
        result = meta.train(split, cfg, on_record=lambda r: hist.write(json.dumps(r, sort_keys=True) + "\n"))
    model.save_tensors(out / "params", result.params, {"kind": "params", "hidden": list(cfg.hidden)})
    model.save_tensors(out / "bank", cov.bank_tensors(result.bank), cov.bank_meta(result.bank))
    model.save_tensors(out / "estimated_bank", cov.bank_tensors(result.estimated_bank),
                       cov.bank_meta(result.estimated_bank))
    (out / "config.txt").write_text(cfg.to_text())
    artifacts = ["params.bin", "params.json", "bank.bin", "bank.json", "estimated_bank.bin",
                 "estimated_bank.json", "history.jsonl", "config.txt"]
    data_dir = Path(args.data)
    manifest = {
        "command": "train",
        "preset": args.preset,
        "config": cfg.to_dict(),
        "resolved_config": result.config.to_dict(),
        "bank_mode": result.bank.mode,
        "isda_mode": result.config.isda,
        "data_dir": str(data_dir),
        "datasets": {n: sha256(data_dir / f"{n}.csv") for n in SPLITS},
        "train_class_counts": split.train.class_counts.tolist(),
        "artifacts": {a: sha256(out / a) for a in artifacts},
        "versions": versions(),
        "wall_clock_s": time.time() - t0,
    }
    write_json(out / "manifest.json", manifest)
    last = result.history[-1] if result.history else None
    msg = f"trained {cfg.t2} steps (t1={cfg.t1}, isda={result.config.isda}, bank={result.bank.mode})"
    if last:
        msg += f"; final L_B={last['L_B']:.4f}"
    print(msg)
    return 0


def _load_run(run_dir):
    run = _existing_dir(run_dir, "run")
    if not (run / "params.json").exists():
        raise UsageError(f"no checkpoint in {run} (params.json missing)")
    params, _ = model.load_tensors(run / "params")
    manifest = json.loads((run / "manifest.json").read_text()) if (run / "manifest.json").exists() else {}
    return run, params, manifest


def cmd_eval(args):
    run, params, manifest = _load_run(args.run)
    if args.test:
        test = datagen.load_csv(args.test, params["fc.bias"].size)
    elif args.data:
        test = datagen.load_csv(Path(args.data) / "test.csv", params["fc.bias"].size)
    elif manifest.get("data_dir"):
        test = datagen.load_csv(Path(manifest["data_dir"]) / "test.csv", params["fc.bias"].size)
    else:
        raise UsageError("pass --data or --test")
    cm, report = diagnostics.evaluate(params, test, manifest.get("train_class_counts"))
    out = Path(args.out) if args.out else run
    out.mkdir(exist_ok=True)
    write_json(out / "error_report.json", report.to_dict())
    diagnostics.write_confusion_csv(cm, out / "confusion.csv")
    diagnostics.write_confusion_csv(cm, out / "confusion_normalized.csv", normalized=True)
    print(f"top-1 error {report.top1_error:.2f}% on {report.n_samples} samples; groups "
          + ", ".join(f"{g} {e:.2f}%" for g, e in report.group_error.items()))
    return 0


def cmd_diag(args):
    run = _existing_dir(args.run, "run")
    out = {}
    for name in ("bank", "estimated_bank"):
        if not (run / f"{name}.json").exists():
            raise UsageError(f"no {name} checkpoint in {run}")
        tensors, meta_ = model.load_tensors(run / name)
        bank = cov.bank_from_tensors(tensors, meta_)
        classes = [args.cls] if args.cls is not None else range(bank.num_classes)
        out[name] = {"mode": bank.mode, "spectra": [diagnostics.spectrum_figure_data(bank, c, args.k) for c in classes]}
    manifest_path = run / "manifest.json"
    if manifest_path.exists():
        counts = json.loads(manifest_path.read_text()).get("train_class_counts")
        if counts:
            out["rarest_class"] = int(np.argmin(counts))
    write_json(run / "spectrum.json", out)
    for name, entry in out.items():
        if name == "rarest_class":
            continue
        for s in entry["spectra"]:
            flag = " (zero matrix)" if s["zero"] else ""
            print(f"{name} class {s['class']}: top-{len(s['values'])} {np.round(s['values'], 4).tolist()} "
                  f"flatness {s['flatness']:.4f}{flag}")
    return 0


def cmd_verify(args):
    names = list(verify.CHECKS) if args.check == "all" else [args.check]
    results = []
    for name in names:
        kwargs = {"seed": args.seed}
        if name == "mc-bound" and args.samples:
            kwargs["samples"] = args.samples
        if args.instances:
            key = {"streaming-cov": "streams", "weights": "pairs"}.get(name, "instances")
            kwargs[key] = args.instances
        r = verify.CHECKS[name](**kwargs)
        results.append(r)
        print(r.line())
        if name == "hypergrad":
            print(f"  max relative error (scaled by rtol={r.details['rtol']:g}): {r.measured * r.details['rtol']:.3e}")
        if name == "mc-bound":
            print(f"  worst bound excess {r.details['worst_bound_excess_in_se']:.2f} SE, "
                  f"worst moment z {r.details['worst_moment_z']:.2f}")
    ok = all(r.passed for r in results)
    summary = {"passed": ok, "checks": [r.to_dict() for r in results], "versions": versions()}
    if args.json:
        write_json(args.json, summary)
    print(json.dumps({"passed": ok, "failed": [r.name for r in results if not r.passed]}))
    return 0 if ok else 1


def cmd_ablate(args):
    split = load_splits(args.data)
    base = _config_from_args(args)
    out = Path(args.out) if args.out else None
    rows = []
    for name, cfg in meta.ablation_modes(base).items():
        result = meta.train(split, cfg)
        _, report = diagnostics.evaluate(result.params, split.test, split.train.class_counts)
        rows.append({"variant": name, "top1_error": report.top1_error, "bank_mode": result.bank.mode,
                     "isda": result.config.isda, "reweight": result.config.reweight})
    rows.sort(key=lambda r: r["top1_error"])
    for rank, r in enumerate(rows, start=1):
        r["rank"] = rank
        print(f"{rank}. {r['variant']:12s} {r['top1_error']:.2f}%")
    if out:
        out.mkdir(exist_ok=True)
        write_json(out / "ablation.json", {"config": base.to_dict(), "ranking": rows, "versions": versions()})
    return 0


def _add_config_flags(p):
    p.add_argument("--preset", help="one of " + ", ".join(sorted(config.PRESETS)))
    p.add_argument("--config", help="key = value config file")
    for f in fields(config.TrainConfig):
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None, metavar="VALUE")


def build_parser():
    parser = argparse.ArgumentParser(prog="metasaug", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-lt", help="build long-tailed train / meta-val / test CSVs")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--dim", type=int, default=10)
    p.add_argument("--n-max", type=int, default=500)
    p.add_argument("--mu", type=float, default=100.0)
    p.add_argument("--profile", choices=datagen.PROFILES, default="exponential")
    p.add_argument("--val-per-class", type=int, default=10)
    p.add_argument("--test-per-class", type=int, default=200)
    p.add_argument("--separation", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_lt)

    p = sub.add_parser("train", help="run the two-phase training schedule")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="error report and confusion matrices for a run")
    p.add_argument("--run", required=True)
    p.add_argument("--data")
    p.add_argument("--test")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("diag", help="covariance spectrum report for a run")
    p.add_argument("--run", required=True)
    p.add_argument("--class", dest="cls", type=int)
    p.add_argument("--k", type=int, default=5)
    p.set_defaults(func=cmd_diag)

    p = sub.add_parser("verify", help="run the numerical self-checks")
    p.add_argument("--check", choices=["all", *verify.CHECKS], default="all")
    p.add_argument("--mode", choices=["fd-vs-analytic"], default="fd-vs-analytic")
    p.add_argument("--samples", type=int)
    p.add_argument("--instances", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("ablate", help="train and rank the ablation variants of a meta config")
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "ablate" and args.preset is None:
        args.preset = "metasaug-ce"
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (UsageError, FileNotFoundError, MetaSAugError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
