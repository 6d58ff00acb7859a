"""Command-line entry point: generate, train, explain, evaluate, sweep-b.

Every command echoes its effective configuration, writes its outputs under
the requested directory, and finishes with a manifest listing the produced
files. Exit codes: 0 success, 2 usage or configuration error, 1 runtime
failure.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, data, explain, jsonio, metrics, train
from .graph import Dataset, load_dataset, save_dataset, stratified_split
from .linalg import ContractViolation, Rng
from .model import GinConfig, GnnModel, load_model, save_model
from .train import TrainConfig


def _parse_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ContractViolation(f"config line has no '=': {line!r}")
        key, val = line.split("=", 1)
        values[key.strip().replace("_", "-")] = val.strip()
    return values


def _apply_config_defaults(args: argparse.Namespace, raw_argv: list[str]) -> None:
    """File values fill in only options the command line left at defaults."""
    if not getattr(args, "config", None):
        return
    file_values = _parse_config_file(args.config)
    given = {a.lstrip("-").replace("_", "-").split("=")[0] for a in raw_argv if a.startswith("--")}
    for key, val in file_values.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            raise ContractViolation(f"unknown config key {key!r}")
        if key in given:
            continue  # explicit flags override file values
        current = getattr(args, dest)
        if isinstance(current, bool):
            setattr(args, dest, val.lower() in ("1", "true", "yes"))
        elif isinstance(current, int):
            setattr(args, dest, int(val))
        elif isinstance(current, float):
            setattr(args, dest, float(val))
        else:
            setattr(args, dest, val)


def _echo_config(name: str, cfg: dict) -> None:
    print(f"[{name}] effective configuration:")
    for key in sorted(cfg):
        print(f"  {key} = {cfg[key]}")


def _write_manifest(out_dir: Path, command: str, cfg: dict, files: list[str]) -> None:
    doc = {
        "tool": "bcosgnn",
        "version": __version__,
        "command": command,
        "config": {k: cfg[k] for k in sorted(cfg)},
        "files": sorted(files),
    }
    jsonio.dump_path(doc, out_dir / "manifest.json")


def _parse_seeds(text: str) -> list[int]:
    seeds = [int(s) for s in text.split(",") if s.strip() != ""]
    if not seeds:
        raise ContractViolation("empty seed list")
    return seeds


def _parse_fractions(text: str) -> tuple[float, float, float]:
    parts = [float(s) for s in text.split(",")]
    if len(parts) != 3:
        raise ContractViolation("split must be three comma-separated fractions")
    return parts[0], parts[1], parts[2]


def cmd_generate(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.dataset == "ba2motif":
        spec = data.Ba2MotifSpec(
            num_graphs=args.num_graphs, base_nodes=args.base_nodes,
            base_jitter=args.base_jitter, attach_m=args.attach_m, seed=args.seed,
        )
        ds = data.generate_ba2motif(spec)
        cfg = {"dataset": "ba2motif", "num_graphs": args.num_graphs, "base_nodes": args.base_nodes,
               "base_jitter": args.base_jitter, "attach_m": args.attach_m, "seed": args.seed,
               "out": str(out)}
    else:
        spec = data.HaloBenzeneSpec(
            num_graphs=args.num_graphs, scaffold_min=args.scaffold_min,
            scaffold_max=args.scaffold_max, seed=args.seed,
        )
        ds = data.generate_halobenzene(spec)
        cfg = {"dataset": "halobenzene", "num_graphs": args.num_graphs,
               "scaffold_min": args.scaffold_min, "scaffold_max": args.scaffold_max,
               "seed": args.seed, "out": str(out)}
    _echo_config("generate", cfg)
    save_dataset(ds, out)
    stats_path = out.with_name(out.stem + ".stats.json")
    jsonio.dump_path(data.dataset_stats(ds), stats_path)
    _write_manifest(out.parent, "generate", cfg, [out.name, stats_path.name])
    print(f"wrote {out} ({len(ds)} graphs)")
    return 0


def _model_config_from_args(args, ds: Dataset) -> GinConfig:
    edge_mode = args.edge_mode
    if edge_mode == "auto":
        edge_mode = "additive" if ds.edge_feature_dim is not None else "none"
    return GinConfig(
        num_layers=args.layers, hidden=args.hidden, num_classes=ds.num_classes,
        input_dim=ds.feature_dim, b=args.b, epsilon=args.epsilon, variant=args.variant,
        edge_mode=edge_mode, edge_input_dim=ds.edge_feature_dim,
        update_depth=args.update_depth, readout_depth=args.readout_depth,
        dropout=args.dropout,
    )


def _train_config_from_args(args) -> TrainConfig:
    return TrainConfig(
        lr=args.lr, lr_decay=args.lr_decay, plateau_patience=args.plateau_patience,
        min_lr=args.min_lr, stop_patience=args.stop_patience,
        max_epochs=args.epochs, batch_size=args.batch_size,
    )


def cmd_train(args) -> int:
    ds = load_dataset(args.dataset)
    seeds = _parse_seeds(args.seeds)
    fractions = _parse_fractions(args.split)
    config = _model_config_from_args(args, ds)
    train_cfg = _train_config_from_args(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg_echo = {**config.to_json(), "dataset": args.dataset, "seeds": seeds,
                "split": list(fractions), "lr": train_cfg.lr, "epochs": train_cfg.max_epochs,
                "batch_size": train_cfg.batch_size, "out": str(out_dir)}
    _echo_config("train", cfg_echo)
    report, outcomes = train.run_experiment(ds, config, train_cfg, seeds, fractions, jobs=args.jobs)
    files = []
    for outcome in outcomes:
        seed_dir = out_dir / f"seed{outcome.seed}"
        seed_dir.mkdir(exist_ok=True)
        save_model(outcome.model, seed_dir / "checkpoint.json")
        (seed_dir / "history.csv").write_text(
            train.history_to_csv(outcome.fit_result.history), encoding="utf-8"
        )
        files.extend([f"seed{outcome.seed}/checkpoint.json", f"seed{outcome.seed}/history.csv"])
    jsonio.dump_path(report.to_json(), out_dir / "summary.json")
    files.append("summary.json")
    _write_manifest(out_dir, "train", cfg_echo, files)
    jac = f" jaccard={report.jaccard_at_k:.4f}" if report.jaccard_at_k is not None else ""
    print(f"test accuracy={report.accuracy:.4f} macro_f1={report.macro_f1:.4f}{jac}")
    return 0


def _select_split(ds: Dataset, which: str, fractions, seed: int) -> Dataset:
    if which == "all":
        return ds
    train_ds, val_ds, test_ds = stratified_split(ds, fractions, Rng(seed).derive(0))
    return {"train": train_ds, "val": val_ds, "test": test_ds}[which]


def _explain_one(model: GnnModel, g, method: str, steps: int, k: int | None):
    if method == "bcos":
        cm = explain.contribution_map(model, g)
        ns = explain.node_scores(cm)
        logits = cm.logits
        pred = cm.class_row
    else:
        trace_logits = model_logits(model, g)
        pred = int(np.argmax(trace_logits))
        ns = explain.integrated_gradients(model, g, steps=steps, class_row=pred)
        logits = trace_logits
    kk = k
    if kk is None:
        kk = int(g.gt_mask.sum()) if g.gt_mask is not None else min(5, g.n)
    expl = explain.top_k(ns, min(kk, g.n))
    return ns, expl, logits, pred


def model_logits(model: GnnModel, g) -> np.ndarray:
    from .model import gin_forward

    return gin_forward(model, g).logits[0]


def cmd_explain(args) -> int:
    model = load_model(args.checkpoint)
    if args.method == "bcos" and model.config.variant != "bcos":
        raise ContractViolation("unsupported-variant: bcos explanations need a bcos checkpoint")
    ds = load_dataset(args.dataset)
    fractions = _parse_fractions(args.split_fractions)
    part = _select_split(ds, args.split, fractions, args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg_echo = {"checkpoint": args.checkpoint, "dataset": args.dataset, "method": args.method,
                "steps": args.steps, "split": args.split, "seed": args.seed,
                "k": args.k, "jobs": args.jobs, "out": str(out_dir)}
    _echo_config("explain", cfg_echo)

    def work(idx_graph):
        idx, g = idx_graph
        ns, expl, logits, pred = _explain_one(model, g, args.method, args.steps, args.k)
        jac = auc = None
        if g.gt_mask is not None and not (args.only_correct and pred != g.label):
            jac = metrics.jaccard_at_k(ns, g.gt_mask, k=args.k)
            auc = metrics.node_auroc(ns, g.gt_mask)
        return idx, ns, expl, logits, pred, jac, auc

    items = list(enumerate(part.graphs))
    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(work, items))
    else:
        results = [work(it) for it in items]
    results.sort(key=lambda r: r[0])

    files = []
    jaccs, aucs, preds = [], [], []
    for idx, ns, expl, logits, pred, jac, auc in results:
        doc = explain.explanation_to_json(f"graph{idx}", ns, expl, logits, pred, jaccard=jac)
        jsonio.dump_path(doc, out_dir / f"graph{idx}.json")
        (out_dir / f"graph{idx}.dot").write_text(
            explain.explanation_to_dot(part.graphs[idx], ns, expl), encoding="utf-8"
        )
        files.extend([f"graph{idx}.json", f"graph{idx}.dot"])
        preds.append(pred)
        if jac is not None:
            jaccs.append(jac)
            aucs.append(auc)
    labels = part.labels()
    acc, f1 = metrics.classification_metrics(np.array(preds), labels, part.num_classes)
    summary = {
        "method": args.method,
        "steps": args.steps if args.method == "ig" else None,
        "num_graphs": len(part),
        "accuracy": acc,
        "macro_f1": f1,
        "mean_jaccard": float(np.mean(jaccs)) if jaccs else None,
        "mean_auroc": float(np.mean(aucs)) if aucs else None,
    }
    if args.timing_repeats > 0:
        explainer = (
            (lambda g: explain.node_scores(explain.contribution_map(model, g)))
            if args.method == "bcos"
            else (lambda g: explain.integrated_gradients(model, g, steps=args.steps))
        )
        timing = metrics.time_explainer(explainer, part.graphs, repeats=args.timing_repeats)
        summary["ms_per_graph"] = timing.mean_ms
        summary["ms_per_graph_std"] = timing.std_ms
    jsonio.dump_path(summary, out_dir / "metrics.json")
    files.append("metrics.json")
    _write_manifest(out_dir, "explain", cfg_echo, files)
    jac_txt = f" jaccard={summary['mean_jaccard']:.4f}" if summary["mean_jaccard"] is not None else ""
    print(f"explained {len(part)} graphs{jac_txt}")
    return 0


def cmd_evaluate(args) -> int:
    model = load_model(args.checkpoint)
    ds = load_dataset(args.dataset)
    fractions = _parse_fractions(args.split_fractions)
    part = _select_split(ds, args.split, fractions, args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    cfg_echo = {"checkpoint": args.checkpoint, "dataset": args.dataset, "methods": methods,
                "steps": args.steps, "split": args.split, "seed": args.seed, "out": str(out_dir)}
    _echo_config("evaluate", cfg_echo)
    from .model import predict_logits

    logits = predict_logits(model, part.graphs)
    preds = logits.argmax(axis=1)
    acc, f1 = metrics.classification_metrics(preds, part.labels(), part.num_classes)
    rows = []
    for method in methods:
        if method == "bcos" and model.config.variant != "bcos":
            raise ContractViolation("unsupported-variant: bcos evaluation needs a bcos checkpoint")
        jaccs, aucs = [], []
        for g, pred in zip(part.graphs, preds):
            if g.gt_mask is None or (args.only_correct and int(pred) != g.label):
                continue
            ns, _, _, _ = _explain_one(model, g, method, args.steps, None)
            jaccs.append(metrics.jaccard_at_k(ns, g.gt_mask))
            aucs.append(metrics.node_auroc(ns, g.gt_mask))
        explainer = (
            (lambda g: explain.node_scores(explain.contribution_map(model, g)))
            if method == "bcos"
            else (lambda g: explain.integrated_gradients(model, g, steps=args.steps))
        )
        timing = metrics.time_explainer(explainer, part.graphs, repeats=args.timing_repeats)
        rows.append({
            "method": method,
            "jaccard": float(np.mean(jaccs)) if jaccs else None,
            "auroc": float(np.mean(aucs)) if aucs else None,
            "ms_per_graph": timing.mean_ms,
            "ms_per_graph_std": timing.std_ms,
            "accuracy": acc,
            "macro_f1": f1,
        })
    report = {"num_graphs": len(part), "rows": rows}
    jsonio.dump_path(report, out_dir / "report.json")
    lines = ["method,jaccard,auroc,ms_per_graph,accuracy,macro_f1"]
    for r in rows:
        jac = "" if r["jaccard"] is None else f"{r['jaccard']:.6f}"
        auc = "" if r["auroc"] is None else f"{r['auroc']:.6f}"
        lines.append(f"{r['method']},{jac},{auc},{r['ms_per_graph']:.4f},{r['accuracy']:.6f},{r['macro_f1']:.6f}")
    (out_dir / "report.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_manifest(out_dir, "evaluate", cfg_echo, ["report.json", "report.csv"])
    for r in rows:
        print(f"{r['method']}: jaccard={r['jaccard']} auroc={r['auroc']} ms/graph={r['ms_per_graph']:.3f}")
    return 0


def cmd_sweep_b(args) -> int:
    ds = load_dataset(args.dataset)
    seeds = _parse_seeds(args.seeds)
    fractions = _parse_fractions(args.split)
    b_values = [float(v) for v in args.b_list.split(",")]
    train_cfg = _train_config_from_args(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg_echo = {"dataset": args.dataset, "b_list": b_values, "seeds": seeds,
                "hidden": args.hidden, "layers": args.layers, "out": str(out_dir)}
    _echo_config("sweep-b", cfg_echo)
    rows = []
    for b in b_values:
        args.b = b
        config = _model_config_from_args(args, ds)
        report, _ = train.run_experiment(ds, config, train_cfg, seeds, fractions, jobs=args.jobs)
        accs = [o["accuracy"] for o in report.per_seed]
        aucs = [o.get("node_auroc") for o in report.per_seed if o.get("node_auroc") is not None]
        rows.append({
            "b": b,
            "val_accuracy_mean": float(np.mean(accs)),
            "val_accuracy_std": float(np.std(accs)),
            "explanation_auc_mean": float(np.mean(aucs)) if aucs else None,
            "explanation_auc_std": float(np.std(aucs)) if aucs else None,
        })
        print(f"B={b}: accuracy={rows[-1]['val_accuracy_mean']:.4f} "
              f"explanation_auc={rows[-1]['explanation_auc_mean']}")
    lines = ["b,accuracy_mean,accuracy_std,explanation_auc_mean,explanation_auc_std"]
    for r in rows:
        auc_m = "" if r["explanation_auc_mean"] is None else f"{r['explanation_auc_mean']:.6f}"
        auc_s = "" if r["explanation_auc_std"] is None else f"{r['explanation_auc_std']:.6f}"
        lines.append(f"{r['b']},{r['val_accuracy_mean']:.6f},{r['val_accuracy_std']:.6f},{auc_m},{auc_s}")
    (out_dir / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    jsonio.dump_path({"rows": rows}, out_dir / "sweep.json")
    _write_manifest(out_dir, "sweep-b", cfg_echo, ["sweep.csv", "sweep.json"])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bcosgnn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="key=value config file; flags override", default=None)
        p.add_argument("--jobs", type=int, default=1, help="max parallel workers")

    g = sub.add_parser("generate", help="write a benchmark dataset as JSON")
    g.add_argument("dataset", choices=["ba2motif", "halobenzene"])
    g.add_argument("--num-graphs", type=int, default=1000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--base-nodes", type=int, default=20)
    g.add_argument("--base-jitter", type=int, default=0)
    g.add_argument("--attach-m", type=int, default=1)
    g.add_argument("--scaffold-min", type=int, default=8)
    g.add_argument("--scaffold-max", type=int, default=16)
    g.add_argument("-o", "--out", required=True)
    add_common(g)
    g.set_defaults(func=cmd_generate)

    def add_model_flags(p):
        p.add_argument("--variant", choices=["bcos", "relu"], default="bcos")
        p.add_argument("--b", type=float, default=2.0)
        p.add_argument("--hidden", type=int, default=64)
        p.add_argument("--layers", type=int, default=3)
        p.add_argument("--update-depth", type=int, default=2)
        p.add_argument("--readout-depth", type=int, default=3)
        p.add_argument("--edge-mode", choices=["auto", "none", "additive"], default="auto")
        p.add_argument("--epsilon", type=float, default=0.0)
        p.add_argument("--dropout", type=float, default=0.0)

    def add_train_flags(p):
        p.add_argument("--lr", type=float, default=1e-3)
        p.add_argument("--lr-decay", type=float, default=0.5)
        p.add_argument("--plateau-patience", type=int, default=25)
        p.add_argument("--min-lr", type=float, default=1e-6)
        p.add_argument("--stop-patience", type=int, default=25)
        p.add_argument("--epochs", type=int, default=200)
        p.add_argument("--batch-size", type=int, default=64)
        p.add_argument("--split", default="0.7,0.2,0.1")

    t = sub.add_parser("train", help="train across seeds; write checkpoints and summary")
    t.add_argument("--dataset", required=True)
    t.add_argument("--seeds", default="0,1,2,3,4")
    add_model_flags(t)
    add_train_flags(t)
    t.add_argument("-o", "--out", required=True)
    add_common(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("explain", help="per-graph node scores, selections, DOT files")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--method", choices=["bcos", "ig"], default="bcos")
    e.add_argument("--steps", type=int, default=50, help="IG interpolation steps")
    e.add_argument("--split", choices=["train", "val", "test", "all"], default="test")
    e.add_argument("--split-fractions", default="0.7,0.2,0.1")
    e.add_argument("--seed", type=int, default=0, help="split seed (match training)")
    e.add_argument("--k", type=int, default=None, help="top-k size; default |rationale|")
    e.add_argument("--timing-repeats", type=int, default=0)
    e.add_argument("--only-correct", action="store_true",
                   help="restrict explanation metrics to correctly predicted graphs")
    e.add_argument("-o", "--out", required=True)
    add_common(e)
    e.set_defaults(func=cmd_explain)

    v = sub.add_parser("evaluate", help="metrics table (jaccard/auroc/timing) per method")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--dataset", required=True)
    v.add_argument("--methods", default="bcos,ig")
    v.add_argument("--steps", type=int, default=50)
    v.add_argument("--split", choices=["train", "val", "test", "all"], default="test")
    v.add_argument("--split-fractions", default="0.7,0.2,0.1")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--timing-repeats", type=int, default=3)
    v.add_argument("--only-correct", action="store_true",
                   help="restrict explanation metrics to correctly predicted graphs")
    v.add_argument("-o", "--out", required=True)
    add_common(v)
    v.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep-b", help="train per alignment exponent; CSV of accuracy and AUC")
    s.add_argument("--dataset", required=True)
    s.add_argument("--b-list", default="1.0,1.5,2.0,2.5,3.0")
    s.add_argument("--seeds", default="0,1,2")
    add_model_flags(s)
    add_train_flags(s)
    s.add_argument("-o", "--out", required=True)
    add_common(s)
    s.set_defaults(func=cmd_sweep_b)

    return parser


def main(argv=None) -> int:
    raw_argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(raw_argv)
    try:
        _apply_config_defaults(args, raw_argv)
        return args.func(args)
    except ContractViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
