"""Config-driven experiment and sweep runner.

Config files are INI-style ``key = value`` blocks; repeated blocks use a
``kind:name`` section title::

    [experiment]
    output = results            ; relative to the config file
    seed = 7
    methods = nalr, glr, ne
    factors = 4, 16
    k = 100
    search_shape = 3x3
    ridge_lambda = 1e-8
    glr_threshold = 30
    ne_k = 5
    ne_distance = l1
    congestion_threshold = 30
    workers = 1

    [train:nov22]
    low = train/nov22_low.csv   ; cell a x b
    high = train/nov22_high.csv ; cell a/2 x b/2
    high16 = train/nov22_high16.csv  ; cell a/4 x b/4, needed for factor 16

    [test:nov30]
    low = ...
    high = ...
    high16 = ...

    [synth:day1]                ; generated instead of read from disk
    role = train                ; or test
    seed = 1
    cell_time = 30              ; cell of the 'high' level; low is 2x coarser
    cell_space = 50
    extent_time = 2400
    extent_space = 4000
    noise_sd = 2.5

    [sweep]
    kind = k                    ; k | train_size | noise | missing
    values = 50:1000:50         ; list "a, b, c" or range "start:stop:step"

For 16x, NALR and GLR run two chained 4x passes whose second stage is
trained on ``(high, high16)`` (override with ``low2``/``high2``); NE runs
one pass trained on ``(low, high16)``.
"""

from __future__ import annotations

import configparser
import csv
import logging
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines, metrics, nalr
from .ingest import generate_synthetic, synthetic_scenario
from .patches import SampleSet, build_sample_set
from .perturb import add_noise, drop_random, impute_nine_cell
from .tsgrid import CellSize, TSDiagram, downsample_mean, load_matrix, save_matrix

log = logging.getLogger(__name__)

METHODS = ("nalr", "glr", "ne")
METRIC_NAMES = ("mae", "mape", "cmjs", "ssim", "gmsd")
SWEEP_KINDS = ("k", "train_size", "noise", "missing")


class ConfigError(ValueError):
    pass


@dataclass
class DiagramSet:
    """One day/segment at up to three resolutions (low, 2x, 4x per axis)."""

    name: str
    low: TSDiagram
    high: TSDiagram | None = None
    high16: TSDiagram | None = None
    low2: TSDiagram | None = None
    high2: TSDiagram | None = None


@dataclass
class SweepSpec:
    kind: str
    values: list


@dataclass
class ExperimentConfig:
    train: list
    test: list
    output: Path
    methods: tuple = METHODS
    factors: tuple = (4,)
    k: int = 100
    search_shape: str = "3x3"
    ridge_lambda: float = 1e-8
    clamp_output: bool = True
    glr_threshold: float = baselines.CONGESTION_THRESHOLD
    ne_k: int = 5
    ne_distance: str = "l1"
    congestion_threshold: float = 30.0
    seed: int = 0
    workers: int = 1
    sweep: SweepSpec | None = None
    source: Path | None = field(default=None, repr=False)

    def nalr_config(self, k=None) -> nalr.NalrConfig:
        return nalr.NalrConfig(k=self.k if k is None else k, search_shape=self.search_shape,
                               ridge_lambda=self.ridge_lambda, clamp_output=self.clamp_output)


def _csv_list(text, cast=str):
    return [cast(t.strip()) for t in text.split(",") if t.strip()]


def parse_values(text: str) -> list:
    """``"a, b, c"`` or an inclusive ``"start:stop:step"`` range."""
    if ":" in text:
        start, stop, step = (float(t) for t in text.split(":"))
        if step <= 0:
            raise ConfigError(f"sweep step must be positive, got {step}")
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        vals = [start + i * step for i in range(n)]
    else:
        vals = _csv_list(text, float)
    return [int(v) if float(v).is_integer() else v for v in vals]


def _synth_set(name, sec) -> tuple[str, DiagramSet]:
    cell = CellSize(sec.getfloat("cell_time", 30.0), sec.getfloat("cell_space", 50.0))
    extent = (sec.getfloat("extent_time", 2400.0), sec.getfloat("extent_space", 4000.0))
    seed = sec.getint("seed", 0)
    scenario = synthetic_scenario(seed, extent, noise_sd=sec.getfloat("noise_sd", 2.5))
    high = generate_synthetic(scenario, cell, extent, seed=seed)
    # the finer level shares the scenario but draws its own noise
    high16 = generate_synthetic(scenario, cell.halved(), extent, seed=seed + 1_000_003)
    return sec.get("role", "train"), DiagramSet(name, downsample_mean(high), high, high16)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if not parser.read(path):
        raise ConfigError(f"cannot read config {path}")
    base = path.parent
    exp = parser["experiment"] if parser.has_section("experiment") else parser[parser.default_section]

    def load(sec, key):
        if key not in sec:
            return None
        p = Path(sec[key])
        p = p if p.is_absolute() else base / p
        if not p.exists():
            raise ConfigError(f"[{sec.name}] {key}: file not found: {p}")
        return load_matrix(p)

    train, test = [], []
    for title in parser.sections():
        kind, _, name = title.partition(":")
        sec = parser[title]
        if kind in ("train", "test"):
            if "low" not in sec:
                raise ConfigError(f"[{title}] needs a 'low' entry")
            ds = DiagramSet(name or kind, load(sec, "low"), load(sec, "high"), load(sec, "high16"),
                            load(sec, "low2"), load(sec, "high2"))
            (train if kind == "train" else test).append(ds)
        elif kind == "synth":
            role, ds = _synth_set(name or title, sec)
            if role not in ("train", "test"):
                raise ConfigError(f"[{title}] role must be train or test")
            (train if role == "train" else test).append(ds)
        elif kind not in ("experiment", "sweep"):
            raise ConfigError(f"unknown section [{title}]")

    try:
        cfg = ExperimentConfig(
            train=train, test=test,
            output=base / exp.get("output", "results"),
            methods=tuple(_csv_list(exp.get("methods", "nalr, glr, ne"))),
            factors=tuple(_csv_list(exp.get("factors", "4"), int)),
            k=exp.getint("k", 100),
            search_shape=exp.get("search_shape", "3x3"),
            ridge_lambda=exp.getfloat("ridge_lambda", 1e-8),
            clamp_output=exp.getboolean("clamp_output", True),
            glr_threshold=exp.getfloat("glr_threshold", baselines.CONGESTION_THRESHOLD),
            ne_k=exp.getint("ne_k", 5),
            ne_distance=exp.get("ne_distance", "l1"),
            congestion_threshold=exp.getfloat("congestion_threshold", 30.0),
            seed=exp.getint("seed", 0),
            workers=exp.getint("workers", 1),
            source=path,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if parser.has_section("sweep"):
        sw = parser["sweep"]
        cfg.sweep = SweepSpec(sw.get("kind", "k"), parse_values(sw.get("values", "")))
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    if not cfg.train:
        raise ConfigError("no training data ([train:*] or [synth:*] with role=train)")
    if not cfg.test:
        raise ConfigError("no test data ([test:*] or [synth:*] with role=test)")
    bad = set(cfg.methods) - set(METHODS)
    if bad:
        raise ConfigError(f"unknown methods {sorted(bad)}")
    if set(cfg.factors) - {4, 16}:
        raise ConfigError(f"factors must be 4 or 16, got {cfg.factors}")
    if cfg.k < 1 or cfg.ne_k < 1:
        raise ConfigError("k and ne_k must be positive")
    try:
        nalr.NalrConfig(k=cfg.k, search_shape=cfg.search_shape, ridge_lambda=cfg.ridge_lambda)
        baselines.NeConfig(k=cfg.ne_k, distance=cfg.ne_distance)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if not 0 < cfg.glr_threshold < 100:
        raise ConfigError(f"glr_threshold must be in (0, 100), got {cfg.glr_threshold}")
    if cfg.workers < 1:
        raise ConfigError(f"workers must be >= 1, got {cfg.workers}")
    for ds in cfg.train:
        if ds.high is None:
            raise ConfigError(f"training set {ds.name} has no 'high' diagram")
        if 16 in cfg.factors and ds.high16 is None and ds.high2 is None:
            raise ConfigError(f"factor 16 needs 'high16' for training set {ds.name}")
    if cfg.sweep is not None:
        if cfg.sweep.kind not in SWEEP_KINDS:
            raise ConfigError(f"sweep kind must be one of {SWEEP_KINDS}")
        if not cfg.sweep.values:
            raise ConfigError("sweep has no values")
        if cfg.sweep.kind == "k" and min(cfg.sweep.values) < 1:
            raise ConfigError("sweep k values must be positive")


# --- training data --------------------------------------------------------

@dataclass
class Trained:
    stage1: SampleSet
    stage2: SampleSet | None = None
    ne16: SampleSet | None = None
    glr1: baselines.GlrModel | None = None
    glr2: baselines.GlrModel | None = None


def _glr(samples, threshold):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return baselines.glr_train(samples, threshold)


def train_models(cfg: ExperimentConfig, stage1: SampleSet | None = None) -> Trained:
    stage1 = stage1 or SampleSet.concat(build_sample_set(d.low, d.high) for d in cfg.train)
    t = Trained(stage1)
    if "glr" in cfg.methods:
        t.glr1 = _glr(stage1, cfg.glr_threshold)
    if 16 in cfg.factors:
        t.stage2 = SampleSet.concat(
            build_sample_set(d.low2 or d.high, d.high2 or d.high16) for d in cfg.train)
        if "glr" in cfg.methods:
            t.glr2 = _glr(t.stage2, cfg.glr_threshold)
        if "ne" in cfg.methods:
            t.ne16 = SampleSet.concat(build_sample_set(d.low, d.high16) for d in cfg.train
                                      if d.high16 is not None)
    return t


def run_method(method: str, factor: int, low: TSDiagram, trained: Trained,
               cfg: ExperimentConfig, k=None) -> tuple[TSDiagram, float]:
    """Refine ``low`` by ``factor``; returns the diagram and the fit R^2."""
    ncfg = cfg.nalr_config(k)
    if method == "nalr":
        stats = {}
        out = nalr.refine(low, trained.stage1, ncfg, cfg.workers, stats)
        r2 = stats["r2"]
        if factor == 16:
            out = nalr.refine(out, trained.stage2, ncfg, cfg.workers)
        return out, r2
    if method == "glr":
        m = trained.glr1
        out = baselines.glr_refine(low, m)
        if factor == 16:
            out = baselines.glr_refine(out, trained.glr2)
        r2 = [v for v in (m.free_r2, m.congested_r2) if np.isfinite(v)]
        return out, float(np.mean(r2)) if r2 else float("nan")
    if method == "ne":
        samples = trained.stage1 if factor == 4 else trained.ne16
        ne_cfg = baselines.NeConfig(k=cfg.ne_k, distance=cfg.ne_distance, factor=factor)
        return baselines.ne_refine(low, samples, ne_cfg), float("nan")
    raise ValueError(f"unknown method {method!r}")


# --- CSV helpers ----------------------------------------------------------

def _fmt(v):
    if isinstance(v, float):
        return "nan" if np.isnan(v) else repr(v)
    if isinstance(v, np.floating):
        return _fmt(float(v))
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row.get(h, "")) for h in header])


METRIC_HEADER = ["test", "cell_time_s", "cell_space_m", "factor", "method", "status",
                 *METRIC_NAMES, "r2", "mape_excluded_cells", "output"]
SUMMARY_HEADER = ["cell_time_s", "cell_space_m", "factor", "baseline", "n_tests",
                  *[f"nalr_{m}" for m in METRIC_NAMES],
                  *[f"base_{m}" for m in METRIC_NAMES],
                  *[f"improvement_{m}" for m in METRIC_NAMES]]


def summarize(rows: list[dict]) -> list[dict]:
    """Average per-test metrics per (cell size, factor, method) and compare to NALR."""
    ok = [r for r in rows if r["status"] == "ok"]
    groups = {}
    for r in ok:
        groups.setdefault((r["cell_time_s"], r["cell_space_m"], r["factor"]), {}) \
              .setdefault(r["method"], []).append(r)
    out = []
    for (ct, cs, factor), by_method in sorted(groups.items()):
        if "nalr" not in by_method:
            continue
        nal = {m: float(np.mean([r[m] for r in by_method["nalr"]])) for m in METRIC_NAMES}
        for base in ("glr", "ne"):
            if base not in by_method:
                continue
            bas = {m: float(np.mean([r[m] for r in by_method[base]])) for m in METRIC_NAMES}
            row = {"cell_time_s": ct, "cell_space_m": cs, "factor": factor, "baseline": base,
                   "n_tests": len(by_method[base])}
            for m in METRIC_NAMES:
                row[f"nalr_{m}"] = nal[m]
                row[f"base_{m}"] = bas[m]
                row[f"improvement_{m}"] = metrics.improvement_rate(nal[m], bas[m], m)
            check_improvements(row)
            out.append(row)
    return out


def check_improvements(row: dict) -> None:
    """Recompute every improvement rate from the raw columns."""
    for m in METRIC_NAMES:
        n, b = row[f"nalr_{m}"], row[f"base_{m}"]
        want = ((b - n) if metrics.LOWER_IS_BETTER[m] else (n - b)) / b if b else (0.0 if n == b else np.nan)
        got = row[f"improvement_{m}"]
        if not (np.isnan(want) and np.isnan(got)) and abs(want - got) > 1e-12:
            raise AssertionError(f"improvement rate mismatch for {m}: {got} vs {want}")


# --- runners --------------------------------------------------------------

def _truth(ds: DiagramSet, factor: int):
    return ds.high if factor == 4 else ds.high16


def run_experiment(cfg: ExperimentConfig) -> int:
    """Run every (test, factor, method) row.  Returns the number of failed rows."""
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    trained = train_models(cfg)
    rows, timings, failures = [], [], 0
    for ds in cfg.test:
        (out / ds.name).mkdir(exist_ok=True)
        for factor in cfg.factors:
            truth = _truth(ds, factor)
            for method in cfg.methods:
                row = {"test": ds.name, "cell_time_s": ds.low.cell_size.time_span,
                       "cell_space_m": ds.low.cell_size.space_span,
                       "factor": factor, "method": method}
                t0 = time.perf_counter()
                try:
                    pred, r2 = run_method(method, factor, ds.low, trained, cfg)
                    rel = f"{ds.name}/{method}_x{factor}.csv"
                    save_matrix(pred, out / rel)
                    row.update(status="ok", output=rel, r2=r2)
                    if truth is not None:
                        rep = metrics.evaluate(truth, pred, cfg.congestion_threshold, r2)
                        row.update({m: getattr(rep, m) for m in METRIC_NAMES},
                                   mape_excluded_cells=rep.mape_excluded_cells)
                    else:
                        row["status"] = "no_truth"
                except Exception as exc:  # one bad row must not sink the run
                    failures += 1
                    log.error("row %s x%d %s failed: %s", ds.name, factor, method, exc)
                    row.update(status=f"error: {exc}")
                timings.append({**{k: row[k] for k in ("test", "factor", "method")},
                                "seconds": time.perf_counter() - t0})
                rows.append(row)
    write_csv(out / "metrics.csv", METRIC_HEADER, rows)
    write_csv(out / "summary.csv", SUMMARY_HEADER, summarize(rows))
    write_csv(out / "timings.csv", ["test", "factor", "method", "seconds"], timings)
    return failures


SWEEP_HEADER = ["kind", "value", "test", "mae", "mape", "r2", "status"]


def subsample(samples: SampleSet, fraction: float, seed: int) -> SampleSet:
    n = max(1, int(round(fraction * samples.count)))
    rng = np.random.default_rng([seed, int(round(fraction * 1_000_000))])
    return samples.subset(np.sort(rng.choice(samples.count, n, replace=False)))


def run_sweep(cfg: ExperimentConfig) -> int:
    """One NALR 4x run per sweep value and test diagram, plus an ``ALL`` mean row."""
    if cfg.sweep is None:
        raise ConfigError("config has no [sweep] section")
    kind = cfg.sweep.kind
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    full = train_models(ExperimentConfig(**{**cfg.__dict__, "methods": ("nalr",), "factors": (4,)})).stage1
    rows, timings, failures = [], [], 0
    for value in cfg.sweep.values:
        samples, k = full, None
        if kind == "k":
            k = int(value)
        elif kind == "train_size":
            samples = subsample(full, float(value), cfg.seed)
        per_test = []
        for i, ds in enumerate(cfg.test):
            low = ds.low
            if kind == "noise":
                low = add_noise(low, float(value), cfg.seed + i)
            elif kind == "missing":
                low = impute_nine_cell(drop_random(low, float(value), cfg.seed + i))
            row = {"kind": kind, "value": value, "test": ds.name}
            t0 = time.perf_counter()
            try:
                stats = {}
                pred = nalr.refine(low, samples, cfg.nalr_config(k), cfg.workers, stats)
                row.update(status="ok", mae=metrics.mae(ds.high, pred),
                           mape=metrics.mape(ds.high, pred), r2=stats["r2"])
                per_test.append(row)
            except Exception as exc:
                failures += 1
                log.error("sweep %s=%s on %s failed: %s", kind, value, ds.name, exc)
                row["status"] = f"error: {exc}"
            timings.append({"kind": kind, "value": value, "test": ds.name,
                            "seconds": time.perf_counter() - t0})
            rows.append(row)
        if per_test:
            rows.append({"kind": kind, "value": value, "test": "ALL", "status": "ok",
                         **{m: float(np.nanmean([r[m] for r in per_test])) for m in ("mae", "mape", "r2")}})
    write_csv(out / f"sweep_{kind}.csv", SWEEP_HEADER, rows)
    write_csv(out / f"sweep_{kind}_timings.csv", ["kind", "value", "test", "seconds"], timings)
    return failures
