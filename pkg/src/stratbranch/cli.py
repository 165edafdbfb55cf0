"""Pipeline commands: gen, collect, group, augment, train, eval, verify.

Each command reads a JSON config (``--config``), takes an explicit seed and an
output location, and stamps every artifact with the config digest and seed.
Run as ``python -m stratbranch <command> ...``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .bnb import Limits, RandomBranching, StrongBranching, collect_expert_samples, solve
from .derivation import DerivationConfig, augment_dataset
from .generators import GenSpec, read_dataset, write_dataset
from .hybrid import HybridConfig, HybridPolicy, LearnedPolicy
from .samples import read_manifest, read_samples, write_samples
from .stratify import GroupModel, assign_groups, fit_groups
from .train import (TrainConfig, evaluate_acc, load_checkpoint, save_checkpoint, split_by_instance,
                    stats_digest, train)
from .verify import run_suite

log = logging.getLogger("stratbranch")


class PipelineError(RuntimeError):
    """Missing input, schema mismatch or failed property check."""


def config_sha(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def _stamp(cfg, seed):
    return {"config_sha": config_sha(cfg), "seed": int(seed)}


def _csv_stamp(cfg, seed):
    """Leading comment line for CSV reports (read back with ``comment="#"``)."""
    return f"# config_sha={config_sha(cfg)} seed={int(seed)}\n"


def _need(path, what):
    p = Path(path)
    if not p.exists():
        raise PipelineError(f"missing {what}: {p}")
    return p


def _pick(cls, d):
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise PipelineError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


def _file_sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------- commands

def cmd_gen(cfg, seed, out, jobs=1):
    """Instances ``seed, seed+1, ...`` of one family plus ``manifest.json``."""
    family = cfg.get("family", "set-covering")
    count = int(cfg.get("count", 40))
    params = dict(cfg.get("params", {}))
    specs = [GenSpec(family=family, seed=seed + k, **params) for k in range(count)]
    write_dataset(specs, out)
    man = Path(out) / "manifest.json"
    data = json.loads(man.read_text())
    data.update(_stamp(cfg, seed))
    man.write_text(json.dumps(data, indent=1))
    return {"instances": count, "out": str(out)}


def _collect_one(args):
    k, inst, limits, seed = args
    samples = collect_expert_samples([inst], limits, seed)
    for s in samples:
        s.instance_id = k
    return samples


def cmd_collect(cfg, seed, out, jobs=1):
    """Strong-branching samples from every instance of a generated dataset."""
    src = _need(cfg["instances"], "instance directory")
    insts = read_dataset(src)
    limits = Limits(cfg.get("node_limit"), cfg.get("time_limit"))
    work = [(k, inst, limits, seed) for k, inst in enumerate(insts)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            parts = list(pool.map(_collect_one, work))
    else:
        parts = [_collect_one(w) for w in work]
    samples = [s for part in parts for s in part]
    manifest = {**_stamp(cfg, seed), "source_manifest_sha": _file_sha(src / "manifest.json"),
                "instance_seeds": [int(i.meta["seed"]) for i in insts]}
    digest = write_samples(samples, out, manifest)
    return {"samples": len(samples), "sha256": digest}


def cmd_group(cfg, seed, out, jobs=1):
    """Split by instance, fit the group model on the training side, label both sides."""
    samples = read_samples(_need(cfg["samples"], "sample container"))
    tr, va = split_by_instance(samples, cfg.get("val_fraction", 0.2), seed)
    m_range = tuple(cfg.get("m_range", (2, 10)))
    model = fit_groups(tr, m_range, seed, cfg.get("m"))
    for part in (tr, va):
        for s, g in zip(part, assign_groups(part, model)):
            s.group = int(g)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    stamp = _stamp(cfg, seed)
    (out / "group_model.json").write_text(json.dumps({**stamp, "model": model.to_dict()}, indent=1))
    write_samples(tr, out / "train.bin", {**stamp, "split": "train", "m": model.m})
    write_samples(va, out / "val.bin", {**stamp, "split": "val", "m": model.m})
    sizes = np.bincount([s.group for s in tr], minlength=model.m).tolist()
    return {"m": model.m, "train": len(tr), "val": len(va), "group_sizes": sizes}


def load_group_model(path):
    return GroupModel.from_dict(json.loads(Path(path).read_text())["model"])


def cmd_augment(cfg, seed, out, jobs=1):
    samples = read_samples(_need(cfg["samples"], "grouped sample container"))
    if any(s.group < 0 for s in samples):
        raise PipelineError("samples carry no group ids; run group first")
    dcfg = _pick(DerivationConfig, {**cfg.get("derivation", {}), "seed": seed})
    aug = augment_dataset(samples, dcfg)
    m = read_manifest(cfg["samples"]).get("m")
    digest = write_samples(aug, out, {**_stamp(cfg, seed), "split": "train", "m": m})
    return {"before": len(samples), "after": len(aug), "sha256": digest}


METRIC_COLUMNS = ("epoch", "loss", "sup", "cons", "lambda", "acc@1", "acc@3", "acc@5", "acc@10",
                  "shallow_acc@1")


def cmd_train(cfg, seed, out, jobs=1):
    tr = read_samples(_need(cfg["samples"], "training container"))
    if "val" in cfg:
        va = read_samples(_need(cfg["val"], "validation container"))
    else:
        # early-stopping instances carved out of the training container
        tr, va = split_by_instance(tr, cfg.get("val_fraction", 0.15), seed)
    model = load_group_model(_need(cfg["group_model"], "group model"))
    tcfg = _pick(TrainConfig, {**cfg.get("options", {}), "seed": seed})
    params, history, stats = train(tr, va, model.m, tcfg,
                                   log_fn=lambda r: log.info("epoch %d loss %.4f acc@1 %.3f",
                                                             r["epoch"], r["loss"], r["acc@1"]))
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {**_stamp(cfg, seed), "train_config": asdict(tcfg), "m": model.m,
            "stats_sha256": stats_digest(stats),
            "group_model_sha256": _file_sha(cfg["group_model"])}
    save_checkpoint(out / "checkpoint.bin", params, stats, meta)
    with open(out / "metrics.csv", "w", newline="") as fh:
        fh.write(_csv_stamp(cfg, seed))
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for row in history:
            w.writerow([row[c] if c == "epoch" else repr(float(row[c])) for c in METRIC_COLUMNS])
    (out / "run.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    return {"epochs": len(history), "best_acc@1": max(r["acc@1"] for r in history)}


def _policy(name, params, stats, hcfg, seed):
    if name == "strong-branching":
        return StrongBranching()
    if name == "random":
        return RandomBranching(seed)
    if name == "learned":
        return LearnedPolicy(params, stats)
    if name == "hybrid":
        return HybridPolicy(params, stats, hcfg)
    raise PipelineError(f"unknown policy {name!r}")


def _eval_one(args):
    k, inst, names, params, stats, hcfg, limits, seed = args
    rows = []
    for name in names:
        rep = solve(inst, _policy(name, params, stats, hcfg, seed + k), limits)
        rows.append({"instance": k, "policy": name, "status": rep.status,
                     "obj": float(rep.obj), "nodes": rep.nodes, "time": rep.time})
    return rows


def load_policy_checkpoint(path):
    params, stats, header = load_checkpoint(_need(path, "checkpoint"))
    expected = header["meta"].get("stats_sha256")
    if expected is not None and expected != stats_digest(stats):
        raise PipelineError("checkpoint standardization stats do not match their digest")
    return params, stats, header


def cmd_eval(cfg, seed, out, jobs=1):
    """Solve a test set with each policy; report nodes, time, wins and acc@k."""
    names = list(cfg.get("policies", ["strong-branching", "learned", "hybrid"]))
    params = stats = None
    header = {}
    if any(n in ("learned", "hybrid") for n in names) or "samples" in cfg:
        params, stats, header = load_policy_checkpoint(cfg["checkpoint"])
        if "stats_sha256" in cfg and cfg["stats_sha256"] != stats_digest(stats):
            raise PipelineError("checkpoint stats differ from the dataset's recorded stats")
    hcfg = _pick(HybridConfig, cfg.get("hybrid", {}))
    limits = Limits(cfg.get("node_limit"), cfg.get("time_limit"))
    insts = read_dataset(_need(cfg["instances"], "instance directory"))
    work = [(k, inst, names, params, stats, hcfg, limits, seed) for k, inst in enumerate(insts)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            parts = list(pool.map(_eval_one, work))
    else:
        parts = [_eval_one(w) for w in work]
    rows = sorted((r for p in parts for r in p), key=lambda r: (r["instance"], names.index(r["policy"])))
    wins = {n: 0 for n in names}
    for k in range(len(insts)):
        solved = [r for r in rows if r["instance"] == k and r["status"] == "optimal"]
        if not solved:
            continue
        best = min(r["time"] for r in solved)
        top = [r for r in solved if r["time"] == best]
        if len(top) == 1:
            wins[top[0]["policy"]] += 1
    summary = {}
    for n in names:
        mine = [r for r in rows if r["policy"] == n]
        nodes = np.array([r["nodes"] for r in mine], dtype=np.float64)
        times = np.array([r["time"] for r in mine])
        summary[n] = {"mean_nodes": float(nodes.mean()),
                      "geomean_nodes": float(np.exp(np.mean(np.log(nodes + 1.0))) - 1.0),
                      "mean_time": float(times.mean()), "wins": wins[n],
                      "solved": sum(r["status"] == "optimal" for r in mine)}
    acc = None
    if "samples" in cfg:
        if read_manifest(cfg["samples"]).get("var_features") != header.get("var_features"):
            raise PipelineError("sample feature schema differs from the checkpoint")
        acc = evaluate_acc(read_samples(cfg["samples"]), params, stats)
    deterministic = {"rows": [{k: r[k] for k in ("instance", "policy", "status", "obj", "nodes")}
                              for r in rows], "acc": acc}
    report = {**_stamp(cfg, seed), "summary": summary, "deterministic": deterministic,
              "times": [r["time"] for r in rows]}
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    with open(out / "results.csv", "w", newline="") as fh:
        fh.write(_csv_stamp(cfg, seed))
        w = csv.DictWriter(fh, fieldnames=["instance", "policy", "status", "obj", "nodes", "time"])
        w.writeheader()
        w.writerows(rows)
    return report


def cmd_verify(cfg, seed, out, jobs=1):
    checks = run_suite(float(cfg.get("scale", 0.2)), seed)
    report = {**_stamp(cfg, seed), "checks": [
        {"name": c.name, "passed": bool(c.passed), "worst": float(c.worst), "count": int(c.count),
         "seconds": float(c.seconds)} for c in checks]}
    for c in checks:
        print(c.line())
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(json.dumps(report, indent=1))
    failed = [c.name for c in checks if not c.passed]
    if failed:
        raise PipelineError(f"property checks failed: {failed}")
    return report


COMMANDS = {"gen": cmd_gen, "collect": cmd_collect, "group": cmd_group, "augment": cmd_augment,
            "train": cmd_train, "eval": cmd_eval, "verify": cmd_verify}


def main(argv=None):
    ap = argparse.ArgumentParser(prog="stratbranch", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="JSON config file")
    ap.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    ap.add_argument("--out", help="output path")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = json.loads(Path(args.config).read_text()) if args.config else {}
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        cfg.pop("seed", None)
        if not args.out and args.command != "verify":
            raise PipelineError("--out is required")
        t0 = time.perf_counter()
        result = COMMANDS[args.command](cfg, seed, args.out, max(1, args.jobs))
    except (PipelineError, KeyError, ValueError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    log.info("%s finished in %.1fs", args.command, time.perf_counter() - t0)
    if args.command != "verify":
        print(json.dumps(result if args.command != "eval" else result["summary"], indent=1))
    return 0


if __name__ == "__main__":
    sys.exit(main())
