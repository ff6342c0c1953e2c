"""Experiment grid: data per cell, R restarts per variant, bound deviations.

Seed scheme (all streams are ``SeedSequence(master_seed, spawn_key=...)``):

    data        (d, N, 0)
    split       (d, N, 1)
    init        (d, N, 2, arch_code, restart)
    training    (d, N, 3, arch_code, restart)

``arch_code`` is 0 for canonical and 1 for deep.  Both variants of one
restart share their init and training streams, so "plain" and "preinit"
start from identical encoder hidden layers and see the same minibatch order.
Keys only depend on cell values and restart index, so results do not
depend on grid order or on which worker executes a run.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .closedform import fit_closed_form
from .datagen import GenConfig, generate_dataset
from .errors import BvaeError, ConfigurationError
from .vae import TrainConfig, TrainLog, VaeArchitecture, apply_preinit, build_model, fit, split_train_test

log = logging.getLogger(__name__)

ARCH_CODES = {"canonical": 0, "deep": 1}
VARIANTS = ("plain", "preinit")
SPLITS = ("train", "test")
SUMMARY_COLUMNS = ["d", "N", "arch", "variant", "split", "bound", "min_dev_pct",
                   "max_dev_pct", "mean_dev_pct", "std_dev_pct", "runs_ok"]
CURVE_COLUMNS = ["epoch", "train_neg_elbo", "test_neg_elbo", "wall_ms"]

DESK_GRID = [(N, d) for d in (50, 100, 200) for N in (100, 2000, 10000)]
FULL_GRID = [(N, d) for d in (200, 400, 1000) for N in (100, 5000, 10000)]


@dataclass
class ExperimentSpec:
    grid: list = field(default_factory=lambda: list(DESK_GRID))
    k: int = 2
    restarts: int = 10
    architectures: list = field(default_factory=lambda: ["canonical"])
    train: TrainConfig = field(default_factory=TrainConfig)
    master_seed: int = 0
    output_dir: str = "results"
    canonical_first_hidden: int = 2000

    def __post_init__(self):
        self.grid = [(int(N), int(d)) for N, d in self.grid]
        self.architectures = list(self.architectures)
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        if self.restarts < 1:
            raise ConfigurationError("restarts must be >= 1")
        if not self.grid:
            raise ConfigurationError("grid must not be empty")
        unknown = set(self.architectures) - set(ARCH_CODES)
        if unknown or not self.architectures:
            raise ConfigurationError(f"unknown or empty architecture set: {sorted(unknown)}")

    @classmethod
    def from_json(cls, path) -> "ExperimentSpec":
        return cls(**json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["grid"] = [list(c) for c in self.grid]
        return out


@dataclass
class RunOutcome:
    run_id: str
    d: int
    N: int
    arch: str
    variant: str
    restart: int
    log: TrainLog | None
    error: str | None = None


@dataclass
class ExperimentResult:
    d: int
    N: int
    arch: str
    variant: str
    split: str
    bound: float
    final_losses: list
    min_dev_pct: float
    max_dev_pct: float
    mean_dev_pct: float
    std_dev_pct: float
    runs_ok: int
    runs_failed: int = 0


def deviation_pct(loss: float, bound: float) -> float:
    """Signed percent deviation of a loss from the (positive) bound ``-Lhat``."""
    if not bound > 0:
        raise ConfigurationError(f"bound (as -Lhat) must be positive, got {bound}")
    return (loss - bound) / bound * 100.0


def epochs_to_within(losses, bound: float, pct: float):
    """First 1-based epoch whose loss is at most ``bound * (1 + pct/100)``; None if never."""
    for i, v in enumerate(losses):
        if deviation_pct(v, bound) <= pct:
            return i + 1
    return None


def _seed(master: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master, spawn_key=tuple(int(k) for k in key))


def _seed_int(master: int, *key: int) -> int:
    return int(_seed(master, *key).generate_state(2, np.uint32).view(np.uint64)[0])


def run_id(d, N, arch, variant, restart) -> str:
    return f"d{d}_N{N}_{arch}_{variant}_r{restart:03d}"


def _architecture(spec: ExperimentSpec, arch: str, d: int, variant: str) -> VaeArchitecture:
    if arch == "canonical":
        return VaeArchitecture.canonical_for(d, spec.k, variant, spec.canonical_first_hidden)
    return VaeArchitecture.deep(spec.k, variant)


@dataclass
class _Cell:
    d: int
    N: int
    train: object
    test: object
    sol: object
    bounds: dict


def prepare_cell(spec: ExperimentSpec, N: int, d: int) -> _Cell:
    data = generate_dataset(GenConfig(N=N, d=d, k=spec.k, seed=_seed_int(spec.master_seed, d, N, 0)))
    train, test = split_train_test(data, spec.train.split_ratio, _seed_int(spec.master_seed, d, N, 1))
    sol = fit_closed_form(train, spec.k)
    bounds = {"train": -sol.bound, "test": -sol.bound_on(test)}
    return _Cell(d, N, train, test, sol, bounds)


def _run_one(spec: ExperimentSpec, cell: _Cell, arch: str, variant: str, restart: int) -> RunOutcome:
    rid = run_id(cell.d, cell.N, arch, variant, restart)
    code = ARCH_CODES[arch]
    try:
        init_rng = np.random.Generator(np.random.PCG64(_seed(spec.master_seed, cell.d, cell.N, 2, code, restart)))
        model = build_model(_architecture(spec, arch, cell.d, "plain"), cell.d, init_rng)
        if variant == "preinit":
            model = apply_preinit(model, cell.sol)
        cfg = TrainConfig(**{**asdict(spec.train),
                             "seed": _seed_int(spec.master_seed, cell.d, cell.N, 3, code, restart)})
        tlog = fit(model, cell.train, cell.test, cfg)
        tlog.model = None  # keep results light; parameters are not aggregated
        return RunOutcome(rid, cell.d, cell.N, arch, variant, restart, tlog)
    except BvaeError as exc:
        log.warning("run %s failed: %s", rid, exc)
        return RunOutcome(rid, cell.d, cell.N, arch, variant, restart, None, str(exc))


def _run_task(args):
    return _run_one(*args)


def aggregate(cells: dict, runs: list[RunOutcome], spec: ExperimentSpec) -> list[ExperimentResult]:
    """Deterministic fold over runs sorted by run id."""
    runs = sorted(runs, key=lambda r: r.run_id)
    results = []
    for N, d in spec.grid:
        cell = cells[(N, d)]
        for arch in spec.architectures:
            for variant in VARIANTS:
                group = [r for r in runs if (r.d, r.N, r.arch, r.variant) == (d, N, arch, variant)]
                ok = [r for r in group if r.log is not None and r.log.records]
                failed = len(group) - len(ok)
                for split in SPLITS:
                    bound = cell.bounds[split]
                    attr = "train_neg_elbo" if split == "train" else "test_neg_elbo"
                    losses = [getattr(r.log.records[-1], attr) for r in ok]
                    devs = np.array([deviation_pct(v, bound) for v in losses])
                    stats = ((float(devs.min()), float(devs.max()), float(devs.mean()), float(devs.std()))
                             if devs.size else (math.nan,) * 4)
                    results.append(ExperimentResult(d, N, arch, variant, split, bound, losses,
                                                    *stats, runs_ok=len(ok), runs_failed=failed))
    return results


def run_experiment(spec: ExperimentSpec, jobs: int = 1):
    """Run every (cell, arch, variant, restart) and aggregate.

    Returns ``(results, runs)``; runs are sorted by run id.
    """
    cells = {(N, d): prepare_cell(spec, N, d) for N, d in spec.grid}
    tasks = [(spec, cells[(N, d)], arch, variant, r)
             for N, d in spec.grid for arch in spec.architectures
             for variant in VARIANTS for r in range(spec.restarts)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_run_task, tasks))
    else:
        runs = [_run_task(t) for t in tasks]
    runs.sort(key=lambda r: r.run_id)
    return aggregate(cells, runs, spec), runs


def _fmt(x) -> str:
    return repr(float(x))


def write_curve(tlog: TrainLog, path, include_timing: bool = False) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for r in tlog.records:
            w.writerow([r.epoch, _fmt(r.train_neg_elbo), _fmt(r.test_neg_elbo),
                        f"{r.wall_ms:.3f}" if include_timing else ""])


def emit_results(results: list[ExperimentResult], out_dir, runs=(), spec: ExperimentSpec | None = None,
                 include_timing: bool = False) -> dict:
    """Write ``summary.csv``, ``summary.json`` and ``curves/<run-id>.csv``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = {"summary_csv": out / "summary.csv", "summary_json": out / "summary.json"}
        with open(paths["summary_csv"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SUMMARY_COLUMNS)
            for r in results:
                w.writerow([r.d, r.N, r.arch, r.variant, r.split, _fmt(r.bound), _fmt(r.min_dev_pct),
                            _fmt(r.max_dev_pct), _fmt(r.mean_dev_pct), _fmt(r.std_dev_pct), r.runs_ok])
        for run in runs:
            if run.log is not None:
                write_curve(run.log, out / "curves" / f"{run.run_id}.csv", include_timing)
        payload = {
            "spec": spec.to_dict() if spec else None,
            "results": [asdict(r) for r in results],
            "failures": {r.run_id: r.error for r in runs if r.error},
        }
        paths["summary_json"].write_text(json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + "\n")
    except OSError as exc:
        raise OSError(f"could not write results under {out}: {exc}") from exc
    return paths


def load_results(path) -> list[ExperimentResult]:
    payload = json.loads(Path(path).read_text())
    return [ExperimentResult(**r) for r in payload["results"]]
