"""``catgnn`` command line: generate, train, evaluate, sweep, bench.

Every command reads an optional JSON spec (``--config``) and applies flag
overrides on top. Validation happens before any data is loaded or trained.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from .errors import CatGnnError, InvalidInput
from .experiments import AXES, ExperimentSpec, load_dataset, run_bench, run_grid, write_results
from .graph import SynthConfig, generate_synthetic, save_generic_graph
from .model import ModelConfig, load_params
from .trainer import evaluate_ids, visible_labels

log = logging.getLogger("catgnn")

MODEL_FLAGS = {"hidden_dim": int, "num_heads": int, "dropout": float, "r_e": float, "r_c": float,
               "fixed_env_count": int, "env_rounding": str}
TRAIN_FLAGS = {"learning_rate": float, "batch_size": int, "epochs": int,
               "early_stop_patience": int, "weight_decay": float}
SYNTH_FLAGS = {"num_nodes": int, "fraud_ratio": float, "camouflage_ratio": float,
               "hidden_ratio": float, "feature_dim": int, "num_relations": int,
               "avg_degree": int, "homophily_noise": float, "class_sep": float,
               "test_shift": float, "train_ratio": float, "valid_ratio": float,
               "test_ratio": float}


def _flag(name):
    return "--" + name.replace("_", "-")


def _csv_list(kind):
    def parse(text):
        return [kind(x) for x in text.split(",") if x.strip()]
    return parse


def _add_group(parser, title, table, prefix=""):
    g = parser.add_argument_group(title)
    for name, kind in table.items():
        g.add_argument(_flag(prefix + name), dest=prefix + name, type=kind, default=None)


def _add_spec_args(p, synth=True):
    p.add_argument("--config", type=Path, help="JSON experiment spec; flags override it")
    p.add_argument("--source", choices=("synthetic", "generic", "csv"))
    p.add_argument("--data-dir", type=Path, help="directory written by 'generate' (generic source)")
    p.add_argument("--features", type=Path)
    p.add_argument("--labels", type=Path)
    p.add_argument("--edges", type=Path, nargs="+")
    p.add_argument("--csv", type=Path, help="transaction CSV (csv source)")
    p.add_argument("--window", type=int, help="temporal edge window in seconds (csv source)")
    p.add_argument("--max-neighbors", type=int)
    p.add_argument("--data-seed", type=int)
    p.add_argument("--variants", type=_csv_list(str), help="comma list, e.g. PL,N_CAT")
    p.add_argument("--seeds", type=_csv_list(int), help="comma list of repeat seeds")
    p.add_argument("--out", type=Path, help="output directory")
    _add_group(p, "model", MODEL_FLAGS)
    _add_group(p, "training", TRAIN_FLAGS)
    if synth:
        _add_group(p, "synthetic data", SYNTH_FLAGS, prefix="synth_")


def build_spec(args):
    """Spec from ``--config`` (if any) with explicit flags applied on top."""
    base = ExperimentSpec.load(args.config).to_dict() if args.config else ExperimentSpec().to_dict()
    if getattr(args, "full_scale_model", False) and not args.config:
        # time the full-scale width; the desk width exaggerates fixed per-edge costs
        base["model"] = ModelConfig().to_dict()
    if args.source:
        base["source"] = args.source
    data = base["data"]
    if args.data_dir:
        d = Path(args.data_dir)
        edges = json.loads((d / "manifest.json").read_text())["edges"] if (d / "manifest.json").exists() \
            else sorted(str(p) for p in d.glob("*.csv") if p.stem not in ("features", "labels"))
        data.update(features=str(d / "features.csv"), labels=str(d / "labels.csv"),
                    edges=[str(d / Path(e).name) for e in edges])
        if (d / "split.json").exists():
            data["split_file"] = str(d / "split.json")
        base["source"] = args.source or "generic"
    for key in ("features", "labels"):
        if getattr(args, key):
            data[key] = str(getattr(args, key))
    if args.edges:
        data["edges"] = [str(e) for e in args.edges]
    if args.csv:
        data["path"] = str(args.csv)
        base["source"] = args.source or "csv"
    if args.window is not None:
        data["window"] = args.window
    if args.max_neighbors is not None:
        data["max_neighbors"] = args.max_neighbors
    if args.data_seed is not None:
        base["data_seed"] = args.data_seed
    if args.variants:
        base["variants"] = args.variants
    if args.seeds:
        base["seeds"] = args.seeds
    if args.out:
        base["out_dir"] = str(args.out)
    for name in MODEL_FLAGS:
        if getattr(args, name) is not None:
            base["model"][name] = getattr(args, name)
    for name in TRAIN_FLAGS:
        if getattr(args, name) is not None:
            base["train"][name] = getattr(args, name)
    for name in SYNTH_FLAGS:
        v = getattr(args, "synth_" + name, None)
        if v is not None:
            base["synth"][name] = v
    return ExperimentSpec.from_dict(base).validate()


# ------------------------------------------------------------------ commands

def cmd_generate(args):
    cfg = asdict(SynthConfig())
    if args.config:
        cfg.update(json.loads(Path(args.config).read_text()))
    for name in SYNTH_FLAGS:
        v = getattr(args, "synth_" + name)
        if v is not None:
            cfg[name] = v
    cfg = SynthConfig(**cfg).validate()
    graph, split = generate_synthetic(cfg, args.seed)
    out = Path(args.out)
    paths = save_generic_graph(graph, out)
    (out / "split.json").write_text(json.dumps(split.to_dict()))
    manifest = {"synth_config": asdict(cfg), "seed": args.seed,
                "edges": [p.name for p in paths["edges"]], "num_nodes": graph.num_nodes,
                "num_edges": graph.num_edges, "split_sizes": list(split.sizes())}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    print(json.dumps({k: manifest[k] for k in ("num_nodes", "num_edges", "split_sizes")}))
    return 0


def cmd_train(args):
    spec = build_spec(args)
    out = Path(spec.out_dir)
    rows, runs = run_grid(spec, checkpoint_dir=out / "checkpoints")
    write_results(spec, rows, runs, out)
    for r in rows:
        print(f"{r['variant']:6s} auc {r['auc_mean']:.4f}±{r['auc_std']:.4f} "
              f"f1 {r['f1_mean']:.4f}±{r['f1_std']:.4f} ap {r['ap_mean']:.4f}±{r['ap_std']:.4f}")
    return 0


def cmd_sweep(args):
    spec = build_spec(args)
    if not args.grid:
        raise InvalidInput("empty sweep grid")
    out = Path(spec.out_dir)
    rows, runs = run_grid(spec, args.axis, args.grid)
    write_results(spec, rows, runs, out, axis=args.axis, grid=args.grid)
    for r in rows:
        print(f"{args.axis}={r['axis_value']} {r['variant']:6s} auc {r['auc_mean']:.4f}±{r['auc_std']:.4f}")
    return 0


def cmd_bench(args):
    spec = build_spec(args)
    res = run_bench(spec, repeats=args.repeats)
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.json").write_text(json.dumps({"spec": spec.to_dict(), **res}, indent=1))
    for v, r in res["variants"].items():
        print(f"{v:6s} {r['seconds']:.2f}s ({r['steps']} steps)")
    print(f"overhead {res['overhead_percent']:+.2f}%")
    return 0


def cmd_evaluate(args):
    spec = build_spec(args)
    params, config = load_params(args.checkpoint)
    graph, split = load_dataset(spec)
    if spec.train.standardize:
        graph = graph.standardized()
    vis = visible_labels(graph, split.train_ids)
    ids = {"train": split.train_ids, "valid": split.valid_ids, "test": split.test_ids}[args.part]
    res = evaluate_ids(graph, ids, params, config, vis, spec.train.eval_batch_size)
    doc = {"checkpoint": str(args.checkpoint), "part": args.part,
           "model_config": config.to_dict(), "metrics": None if res is None else res.to_dict()}
    print(json.dumps(doc, indent=1))
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "evaluation.json").write_text(json.dumps(doc, indent=1))
    return 0


def make_parser():
    parser = argparse.ArgumentParser(prog="catgnn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic camouflaged-fraud graph")
    p.add_argument("--config", type=Path, help="JSON synthetic config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    _add_group(p, "synthetic data", SYNTH_FLAGS, prefix="synth_")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train each variant over the repeat seeds")
    _add_spec_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on one split part")
    _add_spec_args(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--part", choices=("train", "valid", "test"), default="test")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="sensitivity sweep over env_ratio or train_ratio")
    _add_spec_args(p)
    p.add_argument("--axis", choices=AXES, required=True)
    p.add_argument("--grid", type=_csv_list(float), required=True, help="comma list of values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="wall-clock of PL vs N_CAT training (full-scale model width)")
    _add_spec_args(p)
    p.add_argument("--repeats", type=int, default=1)
    p.set_defaults(func=cmd_bench, full_scale_model=True)
    return parser


def main(argv=None):
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CatGnnError, ValueError, KeyError, OSError) as exc:
        print(f"catgnn {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
