"""Six-configuration component study over edge projection, gating and residual."""

from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

from .data import Task, pair_sequences
from .model import ModelConfig, TreeGPTModel
from .optim import TrainConfig
from .training import evaluate, train

# (name, (edge_projection, gating, residual)), in reporting order
CONFIGURATIONS: tuple[tuple[str, tuple[bool, bool, bool]], ...] = (
    ("Edge Projection Only", (True, False, False)),
    ("Edge Proj + Gating", (True, True, False)),
    ("Edge Proj + Residual", (True, False, True)),
    ("All Components", (True, True, True)),
    ("Gating Only", (False, True, False)),
    ("Baseline TreeFFN", (False, False, False)),
)

COLUMNS = ("Configuration", "Val Acc", "Test Acc", "Time(s)")


class AblationError(RuntimeError):
    pass


@dataclass
class AblationRow:
    config_name: str
    flags: tuple[bool, bool, bool]
    val_accuracy: float
    test_accuracy: float
    training_seconds: float
    val_runs: tuple[float, ...] = ()
    test_runs: tuple[float, ...] = ()
    timing_comparable: bool = True

    def __post_init__(self):
        for acc in (self.val_accuracy, self.test_accuracy, *self.val_runs, *self.test_runs):
            if not 0.0 <= acc <= 1.0:
                raise ValueError(f"{self.config_name}: accuracy {acc} outside [0, 1]")
        if self.training_seconds <= 0:
            raise ValueError(f"{self.config_name}: training_seconds must be positive")

    @property
    def val_range(self) -> tuple[float, float]:
        runs = self.val_runs or (self.val_accuracy,)
        return min(runs), max(runs)

    @property
    def test_range(self) -> tuple[float, float]:
        runs = self.test_runs or (self.test_accuracy,)
        return min(runs), max(runs)


def _one_run(model_cfg: ModelConfig, train_cfg: TrainConfig, train_tasks, val_tasks, test_tasks, seed):
    # seed drives both init and data order; flags are the only other difference between rows
    model = TreeGPTModel.init(model_cfg, seed)
    cfg = replace(train_cfg, seed=seed)
    seqs = pair_sequences(train_tasks, "train", model_cfg.max_seq_len)
    start = time.perf_counter()
    train(model, seqs, cfg)
    seconds = time.perf_counter() - start
    return evaluate(model, val_tasks).token_accuracy, evaluate(model, test_tasks).token_accuracy, seconds


def run_matrix(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    train_tasks: Sequence[Task],
    heldout_tasks: Sequence[Task],
    seeds: Sequence[int],
    parallel: bool = False,
) -> list[AblationRow]:
    """Train every configuration once per seed.

    Validation scores the test pairs of the training tasks (pairs never
    trained on); test scores the test pairs of the held-out tasks.
    """
    if not heldout_tasks:
        raise AblationError("dataset has no held-out split")
    if not seeds:
        raise AblationError("need at least one seed")
    jobs = []
    for name, (proj, gating, residual) in CONFIGURATIONS:
        cfg = replace(model_cfg, use_edge_projection=proj, use_gating=gating, use_residual=residual)
        for seed in seeds:
            jobs.append((name, (cfg, train_cfg, list(train_tasks), list(train_tasks), list(heldout_tasks), seed)))

    results: dict[str, list] = {name: [] for name, _ in CONFIGURATIONS}
    if parallel:
        with ProcessPoolExecutor() as pool:
            futures = [(name, pool.submit(_one_run, *args)) for name, args in jobs]
            for name, fut in futures:
                try:
                    results[name].append(fut.result())
                except Exception as exc:
                    raise AblationError(f"run for {name!r} failed: {exc}") from exc
    else:
        for name, args in jobs:
            try:
                results[name].append(_one_run(*args))
            except Exception as exc:
                raise AblationError(f"run for {name!r} failed: {exc}") from exc

    rows = []
    for name, flags in CONFIGURATIONS:
        runs = results[name]
        vals = tuple(r[0] for r in runs)
        tests = tuple(r[1] for r in runs)
        secs = sum(r[2] for r in runs) / len(runs)
        rows.append(AblationRow(name, flags, sum(vals) / len(vals), sum(tests) / len(tests), secs,
                                vals, tests, timing_comparable=not parallel))
    return rows


def render_table(rows: Sequence[AblationRow], format: str = "text") -> str:
    if not rows:
        raise ValueError("no rows to render")
    if format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS + ("edge_projection", "gating", "residual", "val_min", "val_max",
                              "test_min", "test_max", "runs", "timing_comparable"))
        for r in rows:
            w.writerow([r.config_name, repr(r.val_accuracy), repr(r.test_accuracy), repr(r.training_seconds),
                        *(int(f) for f in r.flags), *map(repr, r.val_range), *map(repr, r.test_range),
                        max(len(r.val_runs), 1), int(r.timing_comparable)])
        return buf.getvalue()
    if format != "text":
        raise ValueError(f"unknown format {format!r}")

    def acc(mean, lo, hi, n):
        cell = f"{100 * mean:.1f}%"
        return cell + f" [{100 * lo:.1f}, {100 * hi:.1f}]" if n > 1 else cell

    body = []
    for r in rows:
        n = len(r.val_runs)
        t = f"{r.training_seconds:.1f}" + ("" if r.timing_comparable else "*")
        body.append((r.config_name, acc(r.val_accuracy, *r.val_range, n), acc(r.test_accuracy, *r.test_range, n), t))
    widths = [max(len(COLUMNS[i]), *(len(b[i]) for b in body)) for i in range(4)]

    def line(cells):
        return " | ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()

    out = [line(COLUMNS), "-+-".join("-" * w for w in widths)] + [line(b) for b in body]
    if any(not r.timing_comparable for r in rows):
        out.append("* runs executed in parallel; timings are not comparable")
    return "\n".join(out) + "\n"


def parse_csv(text: str) -> list[AblationRow]:
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        n = int(rec["runs"])
        rows.append(AblationRow(
            rec["Configuration"],
            (rec["edge_projection"] == "1", rec["gating"] == "1", rec["residual"] == "1"),
            float(rec["Val Acc"]), float(rec["Test Acc"]), float(rec["Time(s)"]),
            (float(rec["val_min"]), float(rec["val_max"])) if n > 1 else (),
            (float(rec["test_min"]), float(rec["test_max"])) if n > 1 else (),
            rec["timing_comparable"] == "1",
        ))
    return rows
