"""Experiment specs and runners behind the command-line tools.

An :class:`ExperimentSpec` names a dataset source, model/training configs,
the variants to compare and the repeat seeds. Runners return plain rows and
run records; :func:`write_results` turns them into ``metrics.csv`` and
``report.json``.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .causal import Variant
from .errors import InvalidInput
from .graph import (ColumnMapping, DatasetSplit, SynthConfig, build_temporal_graph,
                    generate_synthetic, load_generic_graph, load_transactions_csv,
                    split_labeled, temporal_split)
from .model import ModelConfig, save_params
from .trainer import TrainConfig, train

log = logging.getLogger(__name__)

SOURCES = ("synthetic", "generic", "csv")
AXES = ("env_ratio", "train_ratio")
METRIC_COLUMNS = ("variant", "axis", "axis_value", "auc_mean", "auc_std", "f1_mean", "f1_std",
                  "ap_mean", "ap_std")
BENCH_VARIANTS = frozenset({"PL", "N_CAT"})
# held fixed while train_ratio is swept, so every grid point shares one test set
SWEEP_VALID_RATIO = 0.1
SWEEP_TEST_RATIO = 0.2

# Desk-scale model width; 256 makes a five-seed comparison take hours on one core.
# Training keeps the full-scale defaults (100 epochs, patience 10).
DESK_MODEL = {"hidden_dim": 32}
DESK_TRAIN = {}


@dataclass
class ExperimentSpec:
    source: str = "synthetic"
    synth: SynthConfig = field(default_factory=SynthConfig)
    data: dict = field(default_factory=dict)
    data_seed: int = 0
    model: ModelConfig = field(default_factory=lambda: ModelConfig(**DESK_MODEL))
    train: TrainConfig = field(default_factory=lambda: TrainConfig(**DESK_TRAIN))
    variants: tuple = ("PL", "N_CAT")
    seeds: tuple = (0, 1, 2, 3, 4)
    out_dir: str = "results"

    def validate(self):
        if self.source not in SOURCES:
            raise InvalidInput(f"source must be one of {SOURCES}, got {self.source!r}")
        if not self.variants:
            raise InvalidInput("need at least one variant")
        if not self.seeds:
            raise InvalidInput("need at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise InvalidInput("seeds must be distinct")
        for v in self.variants:
            try:
                Variant(v)
            except ValueError:
                raise InvalidInput(f"unknown variant {v!r}") from None
        self.model.validate()
        self.train.validate()
        if self.source == "synthetic":
            self.synth.validate()
        elif self.source == "generic":
            for key in ("features", "labels", "edges"):
                if key not in self.data:
                    raise InvalidInput(f"generic source needs data.{key}")
        elif "path" not in self.data:
            raise InvalidInput("csv source needs data.path")
        return self

    def to_dict(self):
        return {
            "source": self.source,
            "synth": asdict(self.synth),
            "data": dict(self.data),
            "data_seed": self.data_seed,
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "variants": list(self.variants),
            "seeds": list(self.seeds),
            "out_dir": self.out_dir,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise InvalidInput(f"unknown spec keys: {sorted(unknown)}")
        base = cls()
        return cls(
            source=d.get("source", base.source),
            synth=SynthConfig(**{**asdict(base.synth), **d.get("synth", {})}),
            data=dict(d.get("data", {})),
            data_seed=int(d.get("data_seed", base.data_seed)),
            model=ModelConfig.from_dict({**base.model.to_dict(), **d.get("model", {})}),
            train=TrainConfig.from_dict({**base.train.to_dict(), **d.get("train", {})}),
            variants=tuple(d.get("variants", base.variants)),
            seeds=tuple(int(s) for s in d.get("seeds", base.seeds)),
            out_dir=d.get("out_dir", base.out_dir),
        )

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


# ------------------------------------------------------------------ data

def load_dataset(spec, train_ratio=None):
    """Graph and split for ``spec``; ``train_ratio`` switches to the sweep split."""
    if spec.source == "synthetic":
        cfg = spec.synth
        if train_ratio is not None:
            cfg = replace(cfg, train_ratio=train_ratio, valid_ratio=SWEEP_VALID_RATIO,
                          test_ratio=SWEEP_TEST_RATIO)
        return generate_synthetic(cfg, spec.data_seed)

    data = spec.data
    if spec.source == "generic":
        graph = load_generic_graph(data["features"], data["labels"], data["edges"],
                                   data.get("relation_names"))
        if data.get("split_file") and train_ratio is None:
            split = DatasetSplit.from_dict(json.loads(Path(data["split_file"]).read_text()))
        else:
            ratios = (data.get("train_ratio", 0.4), data.get("valid_ratio", 0.2),
                      data.get("test_ratio", 0.4))
            if train_ratio is not None:
                ratios = (train_ratio, SWEEP_VALID_RATIO, SWEEP_TEST_RATIO)
            split = split_labeled(graph.labels, *ratios, seed=spec.data_seed)
        return graph, split

    if train_ratio is not None:
        raise InvalidInput("train_ratio sweeps need a stratified split (synthetic or generic source)")
    schema = ColumnMapping(**data.get("schema", {}))
    records = load_transactions_csv(data["path"], schema)
    graph = build_temporal_graph(records, data.get("window", 86_400), data.get("max_neighbors", 16))
    split = temporal_split(graph, data.get("temporal_cut", 0.7), data.get("valid_fraction", 0.2),
                           seed=spec.data_seed)
    return graph, split


# ------------------------------------------------------------------ running

def variant_config(model, variant, axis=None, value=None):
    cfg = model.with_variant(variant)
    if axis == "env_ratio":
        cfg = replace(cfg, r_e=float(value))
    return cfg.validate()


def describe_variant(cfg):
    v = cfg.variant
    return {"variant": v.value, "selection": v.selection if v.mixes or v is Variant.D_CAT else None,
            "weight_mode": v.weight_mode if v.mixes else None, "r_e": cfg.r_e, "r_c": cfg.r_c,
            "fixed_env_count": cfg.fixed_env_count, "env_rounding": cfg.env_rounding}


def summarize(reports):
    """Mean and population std over seeds of test AUC, F1-macro and AP."""
    out = {}
    for key, name in (("auc", "auc"), ("f1_macro", "f1"), ("ap", "ap")):
        vals = np.array([r.test_metrics[key] if r.test_metrics else np.nan for r in reports])
        out[f"{name}_mean"] = float(np.mean(vals))
        out[f"{name}_std"] = float(np.std(vals))
    return out


def run_grid(spec, axis=None, grid=None, checkpoint_dir=None):
    """Train every (grid point, variant, seed); returns ``(rows, runs)``."""
    spec.validate()
    if axis is not None:
        if axis not in AXES:
            raise InvalidInput(f"axis must be one of {AXES}")
        grid = list(grid or [])
        if not grid:
            raise InvalidInput("empty sweep grid")
        check_grid(axis, grid)
    points = grid if axis is not None else [None]
    rows, runs = [], []
    for value in points:
        graph, split = load_dataset(spec, value if axis == "train_ratio" else None)
        for variant in spec.variants:
            cfg = variant_config(spec.model, variant, axis, value)
            reports = []
            for seed in spec.seeds:
                params, report = train(graph, split, cfg, replace(spec.train, seed=seed))
                reports.append(report)
                tag = variant if value is None else f"{variant}_{axis}{value}"
                if checkpoint_dir is not None:
                    Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
                    save_params(Path(checkpoint_dir) / f"{tag}_seed{seed}.json", params, cfg)
                runs.append({"variant": variant, "axis_value": value, "seed": seed,
                             "split_sizes": list(split.sizes()), "report": report.to_dict()})
                log.info("%s seed %d test %s", tag, seed, report.test_metrics)
            rows.append({"variant": variant, "axis": axis or "", "axis_value": value,
                         **summarize(reports)})
    return rows, runs


def check_grid(axis, grid):
    for v in grid:
        if axis == "env_ratio" and not 0.0 <= v <= 1.0:
            raise InvalidInput(f"env_ratio {v} outside [0, 1]")
        if axis == "train_ratio" and not 0.0 < v <= 1.0 - SWEEP_VALID_RATIO - SWEEP_TEST_RATIO + 1e-9:
            raise InvalidInput(f"train_ratio {v} outside (0, {1 - SWEEP_VALID_RATIO - SWEEP_TEST_RATIO}]")


def run_bench(spec, repeats=1):
    """Wall-clock of full training for PL vs N_CAT on the same data and seed.

    Early stopping is disabled so both variants run the same number of steps.
    Each repeat times one back-to-back pair, alternating which variant goes
    first; the overhead is the median of the per-pair overheads, which cancels
    slow drift in machine speed. Per-variant seconds are medians too.
    """
    spec.validate()
    if set(spec.variants) != BENCH_VARIANTS or len(spec.variants) != 2:
        raise InvalidInput("bench compares exactly the variants PL and N_CAT")
    if repeats < 1:
        raise InvalidInput("repeats must be >= 1")
    graph, split = load_dataset(spec)
    seed = spec.seeds[0]
    tc = replace(spec.train, seed=seed, early_stop_patience=spec.train.epochs)
    result = {"seed": seed, "epochs": tc.epochs, "num_nodes": graph.num_nodes, "variants": {}}
    timings = {v: [] for v in ("N_CAT", "PL")}
    cpu = {v: [] for v in timings}
    steps = {}
    for k in range(repeats):
        for v in (("N_CAT", "PL") if k % 2 == 0 else ("PL", "N_CAT")):
            cfg = variant_config(spec.model, v)
            t0, c0 = time.perf_counter(), time.process_time()
            _, report = train(graph, split, cfg, tc)
            timings[v].append(time.perf_counter() - t0)
            cpu[v].append(time.process_time() - c0)
            steps[v] = report.steps
    for v, ts in timings.items():
        result["variants"][v] = {"seconds": float(np.median(ts)), "all_seconds": ts,
                                 "cpu_seconds": cpu[v], "steps": steps[v]}
    pairs = [100.0 * (p - n) / n for p, n in zip(timings["PL"], timings["N_CAT"])]
    result["pair_overhead_percent"] = pairs
    result["overhead_percent"] = float(np.median(pairs))
    return result


# ------------------------------------------------------------------ output

def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def metrics_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in METRIC_COLUMNS])
    return buf.getvalue()


def write_results(spec, rows, runs, out_dir, axis=None, grid=None, extra=None):
    """Write ``metrics.csv`` and ``report.json``; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mpath, rpath = out / "metrics.csv", out / "report.json"
    mpath.write_text(metrics_csv(rows))
    doc = {
        "version": __version__,
        "spec": spec.to_dict(),
        "seeds": list(spec.seeds),
        "axis": axis,
        "grid": grid,
        "variant_configs": {v: describe_variant(variant_config(spec.model, v)) for v in spec.variants},
        "rows": rows,
        "runs": runs,
    }
    if extra:
        doc.update(extra)
    rpath.write_text(json.dumps(doc, indent=1, sort_keys=True))
    return mpath, rpath
