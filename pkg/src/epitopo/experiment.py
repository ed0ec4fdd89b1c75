"""Experiment orchestration: configuration, single runs, sweeps and file outputs.

A config is a flat ``key = value`` text file. Keys mirror the training
parameter table (Graph, RandomSeed, n, Pathogen, DLModel, Dense,
MobilityRate) plus simulation, training and harness settings. Unknown keys
are rejected so a typo never silently falls back to a default.
"""
from __future__ import annotations

import configparser
import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import epidemic, graphgen, inference, metrics, storage
from .errors import ConfigError, EpiTopoError

log = logging.getLogger(__name__)

SWEEP_AXES = {"pathogens": "Pathogen", "mobility_rate": "MobilityRate",
              "density": "Dense", "nodes": "n"}
MOBILITY_RATES = (2e-4, 5e-4, 1e-3, 2e-3, 5e-3, 1e-2, 2e-2, 5e-2, 1e-1)
DL_MODELS = inference.MODELS + ("RND",)
METRIC_NAMES = ("spectral_similarity", "pearson", "jaccard", "pr_auc",
                "rmse_beta", "rmse_inv_gamma", "sparsity_index")


@dataclass
class ExperimentConfig:
    # training parameter table
    Graph: str = "RGG"
    RandomSeed: int = 0
    n: int = 50
    Pathogen: int = 4
    DLModel: str = "DTEF"
    Dense: float = 4.0
    MobilityRate: float = graphgen.DEFAULT_MOBILITY_RATE
    # graph and simulation
    Weighted: bool = False
    rewire_prob: float = 0.1
    T: int = epidemic.DEFAULT_T
    seed_fraction: float | None = None
    populations: list | float = graphgen.DEFAULT_POPULATION
    use_approx: bool = True
    # training
    embedding_dim: int = 30
    channels: int = 5
    lr: float = 1e-2
    epochs: int = 2000
    use_ground_truth_params: bool = False
    symmetrize: bool = True
    stop_window: int = 100
    stop_tol: float = 1e-7
    track_metrics: bool = True
    # harness
    replicates: int = 3
    workers: int = 1
    out_dir: str = "results"

    def graph_spec(self, seed):
        if self.Graph in graphgen.MODELS:
            return graphgen.GraphSpec(model=self.Graph, n=int(self.n), avg_degree=float(self.Dense),
                                      rewire_prob=self.rewire_prob, rng_seed=int(seed))
        return graphgen.GraphSpec(model="FILE", file_path=self.Graph, weighted=self.Weighted,
                                  rng_seed=int(seed))

    def train_config(self, seed):
        return inference.TrainConfig(
            model=self.DLModel if self.DLModel in inference.MODELS else "DTEF",
            embedding_dim=self.embedding_dim, channels=self.channels, lr=self.lr,
            epochs=self.epochs, rng_seed=int(seed),
            use_ground_truth_params=self.use_ground_truth_params, symmetrize=self.symmetrize,
            stop_window=self.stop_window, stop_tol=self.stop_tol, track_metrics=self.track_metrics)

    def validate(self):
        if self.DLModel not in DL_MODELS:
            raise ConfigError(f"unknown DLModel {self.DLModel!r}", allowed=",".join(DL_MODELS))
        for name in ("Pathogen", "T", "replicates", "workers"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer", value=getattr(self, name))
        if not 0 < self.MobilityRate < 1:
            raise ConfigError("MobilityRate must lie in (0, 1)", value=self.MobilityRate)
        if self.Graph in graphgen.MODELS and self.Graph != "FILE":
            self.graph_spec(self.RandomSeed).validate()
        elif not (Path(self.Graph).exists() or self.Graph in graphgen.BUNDLED_GRAPHS):
            raise ConfigError(f"Graph {self.Graph!r} is neither a model, a bundled graph nor a file")
        if self.seed_fraction is not None and not 0 < self.seed_fraction < 1:
            raise ConfigError("seed_fraction must lie in (0, 1)", value=self.seed_fraction)
        self.train_config(0).validate()
        return self


FULL_SCALE = {"n": 100, "replicates": 5}


# --- config parsing -----------------------------------------------------

def _field_types():
    return {f.name: f for f in fields(ExperimentConfig)}


def _coerce(name, raw):
    raw = raw.strip()
    default = getattr(ExperimentConfig, name)
    try:
        if name == "populations":
            vals = [float(x) for x in raw.split(",") if x.strip()]
            return vals[0] if len(vals) == 1 else vals
        if name == "seed_fraction":
            return None if raw.lower() in ("", "none", "default") else float(raw)
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {exc}", key=name) from None


def apply_overrides(config: ExperimentConfig, pairs) -> ExperimentConfig:
    """Apply ``key=value`` strings (or a mapping); unknown keys raise ``ConfigError``."""
    known = _field_types()
    items = pairs.items() if isinstance(pairs, dict) else (_split_pair(p) for p in pairs)
    updates = {}
    for key, value in items:
        if key == "preset":
            if str(value).strip() == "full":
                updates.update(FULL_SCALE)
                continue
            if str(value).strip() == "desk":
                continue
            raise ConfigError(f"unknown preset {value!r}", allowed="desk,full")
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}", key=key)
        updates[key] = _coerce(key, value) if isinstance(value, str) else value
    return replace(config, **updates)


def _split_pair(text):
    key, sep, value = text.partition("=")
    if not sep:
        raise ConfigError(f"expected key=value, got {text!r}")
    return key.strip(), value.strip()


def load_config(path=None, overrides=()) -> ExperimentConfig:
    config = ExperimentConfig()
    if path is not None:
        parser = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#",),
                                           inline_comment_prefixes=("#",), interpolation=None)
        parser.optionxform = str  # keys are case sensitive
        try:
            text = Path(path).read_text(encoding="utf-8")
            parser.read_string("[config]\n" + text, source=str(path))
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}", path=str(path)) from None
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}".replace("\n", " "), path=str(path)) from None
        config = apply_overrides(config, dict(parser["config"]))
    return apply_overrides(config, list(overrides)).validate()


def dump_config(config: ExperimentConfig) -> str:
    lines = []
    for key, value in asdict(config).items():
        if isinstance(value, list):
            value = ",".join(repr(float(v)) for v in value)
        elif value is None:
            value = "none"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


# --- single runs --------------------------------------------------------

@dataclass
class RunRecord:
    config: dict
    replicate: int
    metrics: dict | None = None
    loss_history: list = field(default_factory=list)
    metric_history: dict = field(default_factory=dict)
    A_hat: np.ndarray | None = None
    A_true: np.ndarray | None = None
    pr_points: tuple | None = None
    beta_hat: list | None = None
    gamma_hat: list | None = None
    params: dict = field(default_factory=dict)
    duration_s: float = 0.0
    paths: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def run_id(self):
        c = self.config
        return (f"{c['Graph']}_{c['DLModel']}_n{c['n']}_k{c['Pathogen']}_d{c['Dense']}"
                f"_m{c['MobilityRate']}_s{c['RandomSeed']}_r{self.replicate}").replace("/", "-")


def replicate_seeds(config: ExperimentConfig, replicate: int):
    """Independent integer seeds for (graph, pathogens, training)."""
    ss = np.random.SeedSequence([int(config.RandomSeed), int(replicate)])
    return [int(s) for s in ss.generate_state(3)]


def build_dataset(config: ExperimentConfig, replicate: int = 0):
    graph_seed, pathogen_seed, _ = replicate_seeds(config, replicate)
    spec = config.graph_spec(graph_seed)
    net = graphgen.generate(spec)
    net = graphgen.with_populations(net, config.populations)
    if not net.weighted:
        net = graphgen.assign_mobility(net, config.MobilityRate)
    net.check()
    pathogens = epidemic.sample_pathogens(net, int(config.Pathogen), pathogen_seed,
                                          seed_fraction=config.seed_fraction)
    return epidemic.simulate(net, pathogens, int(config.T), use_approx=config.use_approx,
                             keep_traces=False, graph_spec=asdict(spec))


def train_on_dataset(config: ExperimentConfig, ds, replicate: int = 0) -> RunRecord:
    _, _, train_seed = replicate_seeds(config, replicate)
    start = time.perf_counter()
    rec = RunRecord(config=asdict(config), replicate=int(replicate))
    net = ds.network_truth
    if config.DLModel == "RND":
        A_hat = metrics.random_baseline(ds.n, train_seed)
    else:
        result = inference.train(ds, config.train_config(train_seed))
        A_hat = result.A_hat
        rec.loss_history = result.loss_history
        rec.metric_history = result.metric_history
        rec.beta_hat = result.beta_hat.tolist()
        rec.gamma_hat = result.gamma_hat.tolist()
        rec.params = result.params
    rec.A_hat = A_hat
    if net is not None:
        report = metrics.evaluate(net.A, A_hat, weighted=net.weighted,
                                  beta_hat=rec.beta_hat, gamma_hat=rec.gamma_hat,
                                  truth=ds.params_truth)
        rec.metrics = report.as_dict()
        rec.A_true = net.A
        if report.pr_auc is not None:
            rec.pr_points = metrics.pr_curve(net.binary(), A_hat)
    rec.duration_s = time.perf_counter() - start
    return rec


def run_experiment(config: ExperimentConfig, replicate: int = 0) -> RunRecord:
    """Generate, simulate, train and evaluate one replicate of ``config``."""
    config.validate()
    try:
        ds = build_dataset(config, replicate)
        return train_on_dataset(config, ds, replicate)
    except EpiTopoError as exc:
        exc.context.setdefault("replicate", replicate)
        exc.context.setdefault("Graph", config.Graph)
        raise


def replay(record: RunRecord) -> RunRecord:
    """Re-execute a run from its config snapshot and replicate index."""
    return run_experiment(ExperimentConfig(**record.config), record.replicate)


def _run_cell(args):
    config, replicate = args
    try:
        return run_experiment(config, replicate)
    except (EpiTopoError, ValueError, FloatingPointError) as exc:
        log.warning("run failed (replicate %d): %s", replicate, exc)
        return RunRecord(config=asdict(config), replicate=replicate, error=f"{type(exc).__name__}: {exc}")


def run_many(jobs, workers=1):
    """Run ``(config, replicate)`` jobs; results keep the input order."""
    jobs = list(jobs)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_cell, jobs))
    return [_run_cell(j) for j in jobs]


def run_replicates(config: ExperimentConfig):
    config.validate()
    return run_many([(config, r) for r in range(config.replicates)], config.workers)


def run_sweep(base: ExperimentConfig, axis: str, values):
    """One record per (value, replicate); failures are recorded and the sweep continues."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}", allowed=",".join(SWEEP_AXES))
    key = SWEEP_AXES[axis]
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    configs = [apply_overrides(base, {key: _coerce(key, str(v))}).validate() for v in values]
    jobs = [(c, r) for c in configs for r in range(base.replicates)]
    return run_many(jobs, base.workers)


# --- aggregation and outputs --------------------------------------------

def aggregate(records, by=None):
    """Mean of each metric over successful records, grouped by config key ``by``."""
    groups = {}
    for rec in records:
        key = rec.config[by] if by else None
        groups.setdefault(key, []).append(rec)
    rows = []
    for key, recs in groups.items():
        ok = [r for r in recs if r.error is None and r.metrics]
        row = {"value": key, "runs": len(recs), "failed": len(recs) - len(ok)}
        for name in METRIC_NAMES:
            vals = [r.metrics[name] for r in ok if r.metrics.get(name) is not None]
            row[name] = float(np.mean(vals)) if vals else None
        rows.append(row)
    return rows


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return ";".join(_fmt(x) for x in v)
    return str(v)


def _write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
    tmp.replace(path)
    return path


def write_trace(path, rec: RunRecord):
    h = rec.metric_history or {}
    cols = ["spectral", "pearson", "jaccard", "pr_auc", "sparsity"]
    rows = []
    for e, loss in enumerate(rec.loss_history):
        rows.append([e, loss] + [h[c][e] if h.get(c) else None for c in cols])
    return _write_csv(path, ["epoch", "loss"] + cols, rows)


def write_pr_curve(path, points, replicate=None):
    precision, recall, thresholds = points
    thr = np.r_[np.inf, thresholds]
    rows = [[replicate, float(r), float(p), float(t)] for p, r, t in zip(precision, recall, thr)]
    return _write_csv(path, ["replicate", "recall", "precision", "threshold"], rows)


def emit_outputs(records, out_dir, sweep_axis=None):
    """Write results CSV, per-run traces, PR points, adjacency dumps and a JSON summary."""
    out = Path(out_dir)
    runs_dir = out / "runs"
    config_keys = [f.name for f in fields(ExperimentConfig)]
    for rec in records:
        if rec.error is not None:
            continue
        rdir = runs_dir / rec.run_id
        rec.paths["trace"] = str(write_trace(rdir / "trace.csv", rec))
        rec.paths["adjacency_hat"] = str(storage.save_adjacency(rdir / "adjacency_hat.csv", rec.A_hat))
        if rec.A_true is not None:
            rec.paths["adjacency_true"] = str(storage.save_adjacency(rdir / "adjacency_true.csv", rec.A_true))
        if rec.pr_points is not None:
            rec.paths["pr_curve"] = str(write_pr_curve(rdir / "pr_curve.csv", rec.pr_points, rec.replicate))
        if rec.params:
            rec.paths["checkpoint"] = str(storage.save_checkpoint(rdir / "checkpoint.json",
                                                                  rec.params, rec.config))

    header = config_keys + ["replicate", "run_id", "duration_s", "error"] + list(METRIC_NAMES)
    rows = []
    for rec in records:
        m = rec.metrics or {}
        rows.append([rec.config[k] for k in config_keys]
                    + [rec.replicate, rec.run_id, rec.duration_s, rec.error]
                    + [m.get(k) for k in METRIC_NAMES])
    results = _write_csv(out / "results.csv", header, rows)

    by = SWEEP_AXES.get(sweep_axis) if sweep_axis else None
    table = aggregate(records, by)
    table_path = _write_csv(out / "summary_table.csv", [by or "value", "runs", "failed"] + list(METRIC_NAMES),
                            [[r["value"], r["runs"], r["failed"]] + [r[m] for m in METRIC_NAMES] for r in table])

    pr_files = {}
    if by:
        for value in dict.fromkeys(rec.config[by] for rec in records):
            pts = [r for r in records if r.config[by] == value and r.pr_points is not None]
            if not pts:
                continue
            rows = []
            for r in pts:
                p, rc, thr = r.pr_points
                thr = np.r_[np.inf, thr]
                rows += [[r.replicate, float(x), float(y), float(t)] for y, x, t in zip(p, rc, thr)]
            name = f"pr_curve_{by}_{value}.csv"
            pr_files[str(value)] = str(_write_csv(out / name, ["replicate", "recall", "precision", "threshold"], rows))

    summary = {
        "sweep_axis": sweep_axis,
        "runs": len(records),
        "failed": sum(r.error is not None for r in records),
        "table": table,
        "results_csv": str(results),
        "summary_table_csv": str(table_path),
        "pr_curves": pr_files,
        "records": [{"run_id": r.run_id, "replicate": r.replicate, "metrics": r.metrics,
                     "error": r.error, "paths": r.paths, "config": r.config} for r in records],
    }
    summary_path = out / "summary.json"
    tmp = summary_path.with_name("summary.json.tmp")
    tmp.write_text(json.dumps(summary, indent=2, default=_json_default) + "\n", encoding="utf-8")
    tmp.replace(summary_path)
    return summary_path


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    raise TypeError(f"cannot serialise {type(obj).__name__}")
