"""Command-line entry point: ``bpatch <command> [options]``.

Every command writes into one run directory (``--out``) and leaves a
``config.json`` snapshot of the exact settings there.  Seeds come from
``--seed``; without it the ``BPATCH_SEED`` environment variable, then 0.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .data import (BUILTIN_SPECS, DiscretizationSpec, IngestionError, dataset_from_dict,
                   dataset_to_dict, kfold_split, load_builtin, load_csv, resolve_spec)
from .evaluation import (cross_validate, knn_cross_validate, runtime_profile, runtime_table,
                         sensitivity_sweep, sweep_table, write_plot_data)
from .inference import ChainConfig, run_chain, samples_from_json, samples_to_json
from .model import CategoricalDataset, Hyperparameters, ParentSet, generate_synthetic
from .prediction import (case_seed, classify, explain, explanation_to_dict,
                         explanation_to_text, feature_importance, infer_new_case)

log = logging.getLogger("bpatch")

BUILTIN_DATA = ("heart", "heart_corrected", "breast", "readmission")


class UsageError(Exception):
    """Bad input the user can fix; exits with status 2."""


# ---------------------------------------------------------------- helpers

def resolve_seed(flag) -> int:
    if flag is not None:
        return int(flag)
    env = os.environ.get("BPATCH_SEED")
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"BPATCH_SEED must be an integer, got {env!r}") from None
    return 0


def _hp_from_args(args) -> Hyperparameters:
    return Hyperparameters(alpha=args.alpha, gamma=args.gamma, sigma1=args.sigma1,
                           sigma2=args.sigma2, lambda0=args.lambda0, lam=args.lam,
                           mu0=args.mu0, mu=args.mu, variant=args.variant)


def _chain_from_args(args, seed) -> ChainConfig:
    return ChainConfig(n_iterations=args.iterations, burn_in=args.burn_in,
                       thinning=args.thinning, mh_step_size=args.step, rng_seed=seed,
                       supervised=args.supervised)


def _load_dataset(args, seed) -> CategoricalDataset:
    ds = args.dataset
    spec = getattr(args, "spec", None)
    if spec is not None and spec not in BUILTIN_SPECS and not Path(spec).is_file():
        raise UsageError(f"spec file not found: {spec}")
    if ds in BUILTIN_DATA and not Path(ds).exists():
        return load_builtin(ds, seed=seed)
    path = Path(ds)
    if not path.is_file():
        raise UsageError(f"dataset file not found: {ds}")
    if path.suffix == ".json":
        return dataset_from_dict(json.loads(path.read_text()))
    if spec is None:
        raise UsageError("--spec is required for CSV input")
    data, report = load_csv(path, resolve_spec(spec))
    if report.dropped_ids:
        log.info("dropped %d rows with missing values", len(report.dropped_ids))
    return data


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n")


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    return str(o)


def _snapshot(out: Path, args, seed: int, **extra) -> None:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg.update(resolved_seed=seed, version=__version__, **extra)
    _write_json(out / "config.json", cfg)


def _announce(hp: Hyperparameters | None, seed: int) -> None:
    if hp is not None:
        print("hyperparameters: " + ", ".join(f"{k}={v}" for k, v in hp.as_dict().items()),
              file=sys.stderr)
    print(f"seed: {seed}", file=sys.stderr)


def _parse_ids(text):
    if text is None:
        return None
    return [int(t) for t in text.split(",") if t.strip()]


# ---------------------------------------------------------------- commands

def cmd_train(args) -> int:
    seed = resolve_seed(args.seed)
    data = _load_dataset(args, seed)
    hp = _hp_from_args(args)
    _announce(hp, seed)
    rng = np.random.default_rng(seed)
    if not 1 <= args.S < data.n_cases:
        raise UsageError(f"--S must lie in [1, {data.n_cases - 1}]")
    rows = np.sort(rng.choice(data.n_cases, size=args.S, replace=False))
    parents = ParentSet.from_dataset(data, rows)
    cases = data.subset(np.setdiff1d(np.arange(data.n_cases), rows))
    config = _chain_from_args(args, int(rng.integers(0, 2**31 - 1)))
    t0 = time.perf_counter()
    samples = run_chain(cases, parents, hp, config)
    elapsed = time.perf_counter() - t0
    out = _out_dir(args)
    _snapshot(out, args, seed, hyperparameters=hp.as_dict(), chain=asdict(config))
    _write_json(out / "samples.json", samples_to_json(samples))
    _write_json(out / "parents.json", dataset_to_dict(data.subset(rows)))
    _write_json(out / "cases.json", dataset_to_dict(cases))
    imp = feature_importance(samples, data.feature_names)
    _write_json(out / "feature_importance.json", {
        "names": imp.names, "mean": imp.mean, "q25": imp.q25, "median": imp.median,
        "q75": imp.q75, "ranking": [imp.names[j] for j in imp.ranking]})
    np.savetxt(out / "trace.csv", samples.log_posterior_trace, header="log_posterior",
               comments="")
    if args.emit_plot_data:
        write_plot_data(out / "plots", "trace", range(1, samples.log_posterior_trace.size + 1),
                        samples.log_posterior_trace, "iteration", "log_posterior")
        write_plot_data(out / "plots", "feature_q_mean", imp.names, imp.mean, "feature", "q_mean")
    print(f"trained {samples.n_samples} retained draws in {elapsed:.1f}s -> {out}")
    return 0


def _load_model(path):
    model = Path(path)
    for name in ("samples.json", "parents.json"):
        if not (model / name).is_file():
            raise UsageError(f"model archive incomplete: {model / name} not found")
    samples = samples_from_json(json.loads((model / "samples.json").read_text()))
    pdata = dataset_from_dict(json.loads((model / "parents.json").read_text()))
    if pdata.labels is None:
        raise UsageError("parent set in the archive has no labels")
    parents = ParentSet(pdata.features, pdata.cardinalities, pdata.labels, pdata.n_classes,
                        pdata.case_ids)
    return samples, parents, pdata.feature_names


def _select_cases(data, ids):
    if ids is None:
        return list(range(data.n_cases))
    where = {int(c): r for r, c in enumerate(data.case_ids)}
    rows = []
    for cid in ids:
        if cid not in where:
            print(f"warning: case {cid} not in input, skipped", file=sys.stderr)
            continue
        rows.append(where[cid])
    return rows


def cmd_predict(args) -> int:
    seed = resolve_seed(args.seed)
    samples, parents, names = _load_model(args.model)
    data = _load_dataset(args, seed)
    _announce(samples.hp, seed)
    out = _out_dir(args)
    _snapshot(out, args, seed)
    records, lines = [], ["case_id  theta_2  label"]
    for r in _select_cases(data, _parse_ids(args.cases)):
        dr = infer_new_case(data.features[r], None, samples, parents, samples.hp,
                            args.new_sweeps, case_seed(seed, r))
        label = classify(dr.theta, args.threshold)
        cid = int(data.case_ids[r])
        records.append({"case_id": cid, "theta": dr.theta.tolist(), "label": label + 1})
        lines.append(f"{cid:>7}  {dr.theta[-1]:.4f}  {label + 1}")
    _write_json(out / "predictions.json", records)
    (out / "predictions.txt").write_text("\n".join(lines) + "\n")
    print(f"{len(records)} predictions -> {out}")
    return 0


def cmd_explain(args) -> int:
    seed = resolve_seed(args.seed)
    samples, parents, names = _load_model(args.model)
    data = _load_dataset(args, seed)
    _announce(samples.hp, seed)
    out = _out_dir(args)
    _snapshot(out, args, seed)
    records, texts = [], []
    for r in _select_cases(data, _parse_ids(args.cases)):
        y = None
        if args.label_known:
            if data.labels is None:
                raise UsageError("--label-known needs labels in the input")
            y = int(data.labels[r])
        x = data.features[r]
        dr = infer_new_case(x, y, samples, parents, samples.hp, args.new_sweeps,
                            case_seed(seed, r))
        ex = explain(int(data.case_ids[r]), x, dr, parents, args.top_k)
        records.append(explanation_to_dict(ex, x, parents, names))
        texts.append(explanation_to_text(ex, x, parents, names))
    _write_json(out / "explanations.json", records)
    (out / "explanations.txt").write_text("\n".join(texts))
    print(f"{len(records)} explanations -> {out}")
    return 0


def _plan(args, data, seed, S):
    return kfold_split(data, args.k, seed, stratified=args.stratified, n_parents=S)


def cmd_cv(args) -> int:
    seed = resolve_seed(args.seed)
    data = _load_dataset(args, seed)
    hp = _hp_from_args(args)
    _announce(hp, seed)
    plan = _plan(args, data, seed, args.S)
    config = _chain_from_args(args, seed)
    rep = cross_validate(data, hp, config, plan, args.threshold, n_jobs=args.jobs,
                         n_sweeps_new=args.new_sweeps,
                         name=f"{hp.variant.value} {'supervised' if args.supervised else 'unsupervised'} S={args.S}")
    out = _out_dir(args)
    _snapshot(out, args, seed, hyperparameters=hp.as_dict(), chain=asdict(config))
    _write_json(out / "fold_plan.json", plan.as_dict())
    (out / "report.json").write_text(rep.to_json() + "\n")
    (out / "report.txt").write_text(rep.to_text())
    if args.emit_plot_data:
        write_plot_data(out / "plots", "fold_accuracy", range(1, plan.k + 1),
                        rep.values("accuracy"), "fold", "accuracy")
    print(rep.to_text(), end="")
    return 0


def _values(text):
    vals = []
    for t in text.split(","):
        t = t.strip()
        if not t:
            continue
        try:
            f = float(t)
            vals.append(int(f) if f.is_integer() and "." not in t else f)
        except ValueError:
            low = t.lower()
            vals.append({"true": True, "false": False}.get(low, t))
    if not vals:
        raise UsageError("--values is empty")
    return vals


def cmd_sweep(args) -> int:
    seed = resolve_seed(args.seed)
    data = _load_dataset(args, seed)
    hp = _hp_from_args(args)
    _announce(hp, seed)
    if args.param == "gamma_sigma1":
        pairs = [p.split(":") for p in args.values.split(",")]
        grid = [{"gamma": float(a), "sigma1": float(b)} for a, b in pairs]
    else:
        grid = {args.param: _values(args.values)}
    plan = _plan(args, data, seed, args.S)
    config = _chain_from_args(args, seed)
    results = sensitivity_sweep(data, hp, grid, config, plan, n_jobs=args.jobs,
                                threshold=args.threshold, n_sweeps_new=args.new_sweeps)
    out = _out_dir(args)
    _snapshot(out, args, seed, hyperparameters=hp.as_dict(), chain=asdict(config))
    _write_json(out / "fold_plan.json", plan.as_dict())
    _write_json(out / "sweep.json", [{"point": p, "report": r.as_dict()} for p, r in results])
    table = sweep_table(results)
    (out / "sweep.txt").write_text(table)
    if args.emit_plot_data:
        xs = [", ".join(f"{k}={v}" for k, v in p.items()) if len(p) > 1 else next(iter(p.values()))
              for p, _ in results]
        write_plot_data(out / "plots", f"sweep_{args.param}", xs,
                        [r.mean("accuracy") for _, r in results], args.param, "accuracy")
    print(table, end="")
    return 0


def cmd_baseline(args) -> int:
    seed = resolve_seed(args.seed)
    data = _load_dataset(args, seed)
    _announce(None, seed)
    plan = kfold_split(data, args.folds, seed, stratified=args.stratified)
    weights = None if args.weights is None else [float(w) for w in args.weights.split(",")]
    rep = knn_cross_validate(data, plan, args.k, args.mode, weights)
    out = _out_dir(args)
    _snapshot(out, args, seed)
    _write_json(out / "fold_plan.json", plan.as_dict())
    (out / "report.json").write_text(rep.to_json() + "\n")
    (out / "report.txt").write_text(rep.to_text())
    if args.emit_plot_data:
        write_plot_data(out / "plots", "fold_accuracy", range(1, plan.k + 1),
                        rep.values("accuracy"), "fold", "accuracy")
    print(rep.to_text(), end="")
    return 0


def cmd_generate(args) -> int:
    seed = resolve_seed(args.seed)
    hp = _hp_from_args(args)
    _announce(hp, seed)
    rng = np.random.default_rng(seed)
    card = np.full(args.P, args.V, dtype=np.int64)
    parents = ParentSet(rng.integers(0, args.V, (args.S, args.P)), card,
                        rng.integers(0, args.M, args.S), args.M)
    draw = generate_synthetic(hp, parents, args.N, int(rng.integers(0, 2**31 - 1)))
    out = _out_dir(args)
    _snapshot(out, args, seed, hyperparameters=hp.as_dict())
    st = draw.planted_state
    _write_json(out / "bundle.json", {
        "format": "bpatch-generative-draw/1",
        "dataset": dataset_to_dict(draw.dataset),
        "parents": dataset_to_dict(CategoricalDataset(parents.features, card, parents.labels,
                                                      args.M)),
        "planted": {"z": st.z, "w": st.w, "q": st.q, "qtilde": draw.planted_qtilde,
                    "phi": [[p.tolist() for p in row] for row in draw.planted_phi],
                    "theta": draw.planted_theta},
    })
    print(f"generated N={args.N} cases from S={args.S} parents -> {out}")
    return 0


def cmd_profile(args) -> int:
    seed = resolve_seed(args.seed)
    _announce(None, seed)
    sizes = [tuple(int(v) for v in s.split("x")) for s in args.sizes.split(",")]
    s_grid = [int(v) for v in args.s_grid.split(",")]
    rows = runtime_profile(sizes, s_grid, args.variants.split(","), args.sweeps, seed)
    out = _out_dir(args)
    _snapshot(out, args, seed)
    _write_json(out / "profile.json", rows)
    table = runtime_table(rows)
    (out / "profile.txt").write_text(table)
    if args.emit_plot_data:
        for v in sorted({r["variant"] for r in rows}):
            sel = [r for r in rows if r["variant"] == v]
            write_plot_data(out / "plots", f"runtime_{v}", [r["S"] for r in sel],
                            [r["seconds_per_sweep"] for r in sel], "S", "seconds_per_sweep")
    print(table, end="")
    return 0


# ---------------------------------------------------------------- parser

def _add_common(p, out_default):
    p.add_argument("--seed", type=int, default=None,
                   help="random seed (default: $BPATCH_SEED, else 0)")
    p.add_argument("--out", default=out_default, help="run directory")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel workers over folds / grid points")
    p.add_argument("--emit-plot-data", action="store_true",
                   help="also write (x, y) CSV series under <out>/plots")


def _add_data(p, required=True):
    p.add_argument("--dataset", required=required,
                   help=f"CSV or dataset JSON path, or one of {', '.join(BUILTIN_DATA)}")
    p.add_argument("--spec", default=None,
                   help=f"discretization spec JSON, or one of {', '.join(BUILTIN_SPECS)}")


def _add_model(p):
    d = Hyperparameters()
    p.add_argument("--variant", default="model2", choices=["model1", "model2"])
    p.add_argument("--alpha", type=float, default=d.alpha)
    p.add_argument("--gamma", type=float, default=d.gamma)
    p.add_argument("--sigma1", type=float, default=d.sigma1)
    p.add_argument("--sigma2", type=float, default=d.sigma2)
    p.add_argument("--lambda0", type=float, default=d.lambda0)
    p.add_argument("--lam", "--lambda", dest="lam", type=float, default=d.lam)
    p.add_argument("--mu0", type=float, default=d.mu0)
    p.add_argument("--mu", type=float, default=d.mu)


def _add_chain(p):
    c = ChainConfig()
    p.add_argument("--iterations", type=int, default=c.n_iterations)
    p.add_argument("--burn-in", type=int, default=c.burn_in)
    p.add_argument("--thinning", type=int, default=c.thinning)
    p.add_argument("--step", type=float, default=c.mh_step_size, help="MH scale on logit(q)")
    sup = p.add_mutually_exclusive_group()
    sup.add_argument("--supervised", dest="supervised", action="store_true", default=True)
    sup.add_argument("--unsupervised", dest="supervised", action="store_false")
    p.add_argument("--new-sweeps", type=int, default=10,
                   help="conditional sweeps per retained draw for each new case")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bpatch", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"bpatch {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the sampler and archive the posterior draws")
    _add_data(p)
    _add_model(p)
    _add_chain(p)
    p.add_argument("--S", type=int, default=80, help="number of parents")
    _add_common(p, "runs/train")
    p.set_defaults(func=cmd_train)

    for name, func, help_ in (("predict", cmd_predict, "label distribution for new cases"),
                              ("explain", cmd_explain, "top parents for new cases")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--model", required=True, help="run directory written by train")
        _add_data(p)
        p.add_argument("--cases", default=None, help="comma-separated case ids (default: all)")
        p.add_argument("--new-sweeps", type=int, default=10)
        if name == "predict":
            p.add_argument("--threshold", type=float, default=0.5)
        else:
            p.add_argument("--top-k", type=int, default=4)
            p.add_argument("--label-known", action="store_true",
                           help="condition on the case's label (neighbors given the outcome)")
        _add_common(p, f"runs/{name}")
        p.set_defaults(func=func)

    p = sub.add_parser("cv", help="k-fold cross-validation")
    _add_data(p)
    _add_model(p)
    _add_chain(p)
    p.add_argument("--k", type=int, default=5, help="number of folds")
    p.add_argument("--S", type=int, default=80)
    p.add_argument("--stratified", action="store_true")
    p.add_argument("--threshold", type=float, default=0.5)
    _add_common(p, "runs/cv")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("sweep", help="cross-validate over a grid of one parameter")
    _add_data(p)
    _add_model(p)
    _add_chain(p)
    p.add_argument("--param", required=True,
                   help="alpha, gamma, sigma1, sigma2, lambda0, lam, mu0, mu, S, supervised, "
                        "or gamma_sigma1 (values as g:s pairs)")
    p.add_argument("--values", required=True, help="comma-separated grid values")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--S", type=int, default=80)
    p.add_argument("--stratified", action="store_true")
    p.add_argument("--threshold", type=float, default=0.5)
    _add_common(p, "runs/sweep")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("baseline", help="Hamming KNN baseline on the same folds")
    p.add_argument("method", choices=["knn"])
    _add_data(p)
    p.add_argument("--k", type=int, default=30, help="number of neighbors")
    p.add_argument("--mode", default="plain",
                   choices=["plain", "distance-weighted", "feature-weighted"])
    p.add_argument("--weights", default=None, help="comma-separated feature weights")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--stratified", action="store_true")
    _add_common(p, "runs/baseline")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("generate", help="draw a synthetic dataset from the generative model")
    _add_model(p)
    p.add_argument("--S", type=int, default=5)
    p.add_argument("--N", type=int, default=50)
    p.add_argument("--P", type=int, default=5)
    p.add_argument("--V", type=int, default=3, help="outcomes per feature")
    p.add_argument("--M", type=int, default=2, help="number of classes")
    _add_common(p, "runs/generate")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("profile", help="per-sweep wall-clock on random data")
    p.add_argument("--sizes", default="150x13", help="comma-separated NxP")
    p.add_argument("--s-grid", default="20,40,80")
    p.add_argument("--variants", default="model1,model2")
    p.add_argument("--sweeps", type=int, default=20)
    _add_common(p, "runs/profile")
    p.set_defaults(func=cmd_profile)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return int(args.func(args) or 0)
    except (UsageError, FileNotFoundError, IngestionError) as exc:
        print(f"bpatch {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - one-line diagnostic, nonzero exit
        print(f"bpatch {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
