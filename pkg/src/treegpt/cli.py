"""Command-line entry point: gen-data, train, eval, gradcheck, ablate.

Configuration is a flat INI-style file whose sections mirror the modules::

    [model]
    hidden_dim = 64
    [train]
    total_steps = 500

Precedence is defaults < config file < ``--seed``/``--out``/``--set KEY=VALUE``.
Unknown sections or keys are errors.  Exit codes: 0 success, 1 usage or
configuration error, 2 runtime or numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import sys
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .ablation import AblationError, render_table, run_matrix
from .checkpoint import CheckpointError, TrainState, load_checkpoint, save_checkpoint
from .data import FAMILIES, ArcFormatError, generate_synthetic, load_arc_dir, pair_sequences, task_bytes
from .model import ModelConfig, TreeGPTModel, count_messages, parameter_count
from .optim import TrainConfig
from .plotting import plot_ablation, plot_training
from .training import METRIC_COLUMNS, evaluate, train

log = logging.getLogger("treegpt")

# published component-study numbers, shown beside measured values for comparison only
REFERENCE_RESULTS = {
    "Edge Projection Only": (1.00, 0.94, 563.5),
    "Edge Proj + Gating": (1.00, 0.96, 578.7),
    "Edge Proj + Residual": (1.00, 0.83, 526.8),
    "All Components": (1.00, 0.92, 573.4),
    "Gating Only": (0.90, 0.74, 619.7),
    "Baseline TreeFFN": (0.00, 0.00, 894.5),
}


class UsageError(Exception):
    """Bad invocation or configuration (exit status 1)."""


@dataclass(frozen=True)
class DataConfig:
    train_dir: str = ""
    eval_dir: str = ""
    family: str = "copy"
    count: int = 100
    n_train: int = 3
    n_test: int = 1
    min_size: int = 1
    max_size: int = 5
    heldout: int = 20


@dataclass(frozen=True)
class RunSection:
    out_dir: str = ""


@dataclass(frozen=True)
class AblationConfig:
    seeds: str = "0,1"
    parallel: bool = False

    @property
    def seed_list(self) -> list[int]:
        return [int(s) for s in self.seeds.split(",") if s.strip()]


@dataclass(frozen=True)
class GradCheckConfig:
    vocab_size: int = 16
    hidden_dim: int = 8
    num_layers: int = 1
    iterations: int = 1
    edge_dim: int = 4
    seq_len: int = 6
    max_seq_len: int = 8
    use_edge_projection: bool = True
    use_gating: bool = True
    use_residual: bool = True
    combination_mode: str = "sequential"
    eps: float = 1e-5
    tol: float = 1e-4
    max_params: int = 50_000


SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "data": DataConfig,
    "run": RunSection,
    "ablation": AblationConfig,
    "gradcheck": GradCheckConfig,
}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    run: RunSection = field(default_factory=RunSection)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    gradcheck: GradCheckConfig = field(default_factory=GradCheckConfig)
    explicit: frozenset = frozenset()


def _coerce(key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise UsageError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw.strip()


def _apply(values: dict[str, dict], key: str, raw: str) -> None:
    section, _, name = key.partition(".")
    if section not in SECTIONS or not name:
        raise UsageError(f"unknown config key {key!r} (expected <section>.<key>, sections: {', '.join(SECTIONS)})")
    defaults = {f.name: f.default for f in fields(SECTIONS[section])}
    if name not in defaults:
        raise UsageError(f"unknown config key {key!r}")
    values[section][name] = _coerce(key, raw, defaults[name])


def load_run_config(path: str | None = None, overrides: list[str] = (), seed: int | None = None,
                    out: str | None = None) -> RunConfig:
    values: dict[str, dict] = {s: {} for s in SECTIONS}
    if path:
        parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
        parser.optionxform = str
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise UsageError(f"cannot parse config {path}: {exc}") from exc
        for section in parser.sections():
            if section not in SECTIONS:
                raise UsageError(f"unknown config section [{section}]")
            for name, raw in parser.items(section):
                _apply(values, f"{section}.{name}", raw)
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        _apply(values, key.strip(), raw)
    if seed is not None:
        values["train"]["seed"] = seed
    if out is not None:
        values["run"]["out_dir"] = out
    explicit = frozenset(f"{s}.{k}" for s, kv in values.items() for k in kv)
    built = {}
    for section, cls in SECTIONS.items():
        try:
            built[section] = cls(**values[section])
        except (TypeError, ValueError) as exc:
            raise UsageError(f"[{section}] {exc}") from exc
    return RunConfig(**built, explicit=explicit)


def run_dir(cfg: RunConfig) -> Path:
    if cfg.run.out_dir:
        path = Path(cfg.run.out_dir)
    else:
        path = Path("runs") / f"{time.strftime('%Y%m%d-%H%M%S')}-seed{cfg.train.seed}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_tasks(directory: str, what: str):
    if not directory:
        raise UsageError(f"no {what} directory configured (set data.{what}_dir)")
    if not Path(directory).is_dir():
        raise UsageError(f"{what} directory {directory} does not exist")
    tasks = load_arc_dir(directory)
    if not tasks:
        raise UsageError(f"{what} directory {directory} contains no task files")
    return tasks


# -- subcommands ----------------------------------------------------------------

def cmd_gen_data(cfg: RunConfig, args) -> int:
    family = args.family or cfg.data.family
    count = args.count if args.count is not None else cfg.data.count
    if family not in FAMILIES:
        raise UsageError(f"unknown family {family!r}; valid families: {', '.join(FAMILIES)}")
    out = run_dir(cfg)
    d = cfg.data
    tasks = generate_synthetic(family, cfg.train.seed, count, d.n_train, d.n_test, d.min_size, d.max_size)
    names = []
    for task in tasks:
        name = f"{task.task_id}.json"
        (out / name).write_bytes(task_bytes(task))
        names.append(name)
    manifest = {"family": family, "seed": cfg.train.seed, "count": count, "n_train": d.n_train,
                "n_test": d.n_test, "min_size": d.min_size, "max_size": d.max_size, "files": names}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    print(f"wrote {count} {family} tasks to {out}")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    train_tasks = _load_tasks(cfg.data.train_dir, "train")
    eval_tasks = _load_tasks(cfg.data.eval_dir, "eval") if cfg.data.eval_dir else train_tasks
    out = run_dir(cfg)
    state = None
    if args.resume:
        model, state = load_checkpoint(args.resume)
        if state is None:
            raise UsageError(f"{args.resume} holds no training state")
        _check_model_matches(cfg, model.config)
        if state.train_config is not None and state.train_config != cfg.train:
            raise UsageError("train config differs from the checkpoint's; resume with the same [train] settings")
    else:
        model = TreeGPTModel.init(cfg.model, cfg.train.seed)
    seqs = pair_sequences(train_tasks, "train", model.config.max_seq_len)

    mode = "a" if args.resume and (out / "metrics.csv").exists() else "w"
    with open(out / "metrics.csv", mode, newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if mode == "w":
            writer.writerow(METRIC_COLUMNS)
        start = time.perf_counter()
        result = train(model, seqs, cfg.train, eval_tasks=eval_tasks, state=state, until=args.until,
                       checkpoint_dir=out / "checkpoints", on_record=lambda r: writer.writerow(r.row()))
        seconds = time.perf_counter() - start
    save_checkpoint(model, result.state, out / "final.ckpt")

    final = evaluate(model, eval_tasks)
    longest = max(len(s) for s in seqs)
    model.hidden(np.full(longest, 0))
    summary = {
        "steps": result.state.step,
        "parameter_count": parameter_count(model.config),
        "message_count": {"seq_len": longest, "instrumented": model.message_count,
                          "closed_form": count_messages(model.config, longest)},
        "final_loss": result.records[-1].loss if result.records else None,
        "token_accuracy": final.token_accuracy,
        "exact_match": final.exact_match,
        "train_seconds": seconds,
        "model": model.config.to_dict(),
        "train": cfg.train.to_dict(),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    if result.records:
        plot_training(result.records, out / "figures" / "training.png")
    print(f"trained to step {result.state.step}: token_acc {final.token_accuracy:.4f}, "
          f"exact_match {final.exact_match:.4f} -> {out}")
    return 0


def _check_model_matches(cfg: RunConfig, ckpt_cfg: ModelConfig) -> None:
    for key in cfg.explicit:
        section, _, name = key.partition(".")
        if section == "model" and getattr(cfg.model, name) != getattr(ckpt_cfg, name):
            raise UsageError(f"config sets model.{name}={getattr(cfg.model, name)!r} "
                             f"but the checkpoint has {getattr(ckpt_cfg, name)!r}")


def cmd_eval(cfg: RunConfig, args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    _check_model_matches(cfg, model.config)
    tasks = _load_tasks(args.data or cfg.data.eval_dir, "eval")
    try:
        res = evaluate(model, tasks)
    except ValueError as exc:
        raise UsageError(f"data does not fit the checkpoint: {exc}") from exc
    out = run_dir(cfg)
    with open(out / "eval_tasks.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task_id", "correct", "total", "token_acc", "pairs_exact", "pairs", "exact_match"])
        for s in res.per_task:
            w.writerow([s.task_id, s.correct, s.total, repr(s.token_accuracy), s.pairs_exact, s.pairs,
                        repr(s.exact_match)])
    report = {"checkpoint": str(args.checkpoint), "tasks": len(tasks), "token_accuracy": res.token_accuracy,
              "exact_match": res.exact_match,
              "per_task": [{"task_id": s.task_id, "correct": s.correct, "total": s.total,
                            "pairs_exact": s.pairs_exact, "pairs": s.pairs} for s in res.per_task]}
    (out / "eval.json").write_text(json.dumps(report, indent=1) + "\n")
    print(f"tasks {len(tasks)}  token_accuracy {res.token_accuracy:.4f}  exact_match {res.exact_match:.4f}")
    for s in res.per_task:
        print(f"  {s.task_id:32s} {s.correct:5d}/{s.total:<5d} exact {s.pairs_exact}/{s.pairs}")
    return 0


def gradcheck_model(g: GradCheckConfig, seed: int) -> tuple[TreeGPTModel, callable]:
    mc = ModelConfig(vocab_size=g.vocab_size, hidden_dim=g.hidden_dim, num_layers=g.num_layers,
                     max_seq_len=max(g.max_seq_len, g.seq_len), edge_dim=g.edge_dim, iterations=g.iterations,
                     use_edge_projection=g.use_edge_projection, use_gating=g.use_gating,
                     use_residual=g.use_residual, combination_mode=g.combination_mode, dtype="float64")
    model = TreeGPTModel.init(mc, seed)
    rng = np.random.default_rng(seed)
    tokens = rng.integers(0, g.vocab_size, size=g.seq_len)
    targets = rng.integers(0, g.vocab_size, size=g.seq_len)
    # larger embeddings keep activations away from relu kinks
    for name, p in model.params.items():
        if name.endswith("embedding"):
            p.data[...] = rng.normal(0.0, 0.5, size=p.shape)
    return model, lambda: ad.cross_entropy(model.forward(tokens), targets)


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    g = cfg.gradcheck if args.tol is None else replace(cfg.gradcheck, tol=args.tol)
    try:
        model, f = gradcheck_model(g, cfg.train.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    n = parameter_count(model.config)
    if n > g.max_params:
        raise UsageError(f"model has {n} parameters; finite differences are capped at {g.max_params} "
                         f"(two forward passes per parameter). Shrink the [gradcheck] dimensions.")
    report = ad.grad_check(f, model.params, eps=g.eps, tol=g.tol)
    lines = report.lines()
    verdict = "PASS" if report.passed else f"FAIL ({len(report.failures)} of {len(lines)} groups above tol {g.tol:g})"
    text = "\n".join(lines + [verdict]) + "\n"
    out = run_dir(cfg)
    (out / "gradcheck.txt").write_text(text)
    print(text, end="")
    return 0 if report.passed else 2


def cmd_ablate(cfg: RunConfig, args) -> int:
    d = cfg.data
    if d.train_dir:
        train_tasks = _load_tasks(d.train_dir, "train")
        heldout = _load_tasks(d.eval_dir, "eval")
    else:
        if d.family not in FAMILIES:
            raise UsageError(f"unknown family {d.family!r}; valid families: {', '.join(FAMILIES)}")
        if not 0 < d.heldout < d.count:
            raise UsageError("data.heldout must be between 1 and data.count - 1")
        tasks = generate_synthetic(d.family, cfg.train.seed, d.count, d.n_train, d.n_test, d.min_size, d.max_size)
        train_tasks, heldout = tasks[:-d.heldout], tasks[-d.heldout:]
    seeds = cfg.ablation.seed_list
    if not seeds:
        raise UsageError("ablation.seeds is empty")
    out = run_dir(cfg)
    rows = run_matrix(cfg.model, cfg.train, train_tasks, heldout, seeds, parallel=cfg.ablation.parallel)
    text = render_table(rows, "text")
    ref = ["", "reference values (published component study, not reproduced here):"]
    for r in rows:
        v, t, s = REFERENCE_RESULTS[r.config_name]
        ref.append(f"  {r.config_name:22s} val {100 * v:5.1f}%  test {100 * t:5.1f}%  time {s:.1f}s")
    (out / "ablation.txt").write_text(text + "\n".join(ref) + "\n")
    (out / "ablation.csv").write_text(render_table(rows, "csv"))
    plot_ablation(rows, out / "figures" / "ablation.png")
    print(text, end="")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI-style config file")
    common.add_argument("--seed", type=int, help="run seed (overrides train.seed)")
    common.add_argument("--out", help="output directory (default runs/<timestamp>-seed<N>)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key, e.g. --set model.hidden_dim=32 (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="treegpt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", parents=[common], help="write synthetic ARC-format tasks")
    p.add_argument("--family", help=f"one of {', '.join(FAMILIES)}")
    p.add_argument("--count", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--until", type=int, help="stop after this step (schedule still spans train.total_steps)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a task directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="task directory (default data.eval_dir)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of a tiny full model")
    p.add_argument("--tol", type=float)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", parents=[common], help="run the six-configuration component study")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = load_run_config(args.config, args.set, args.seed, args.out)
        return args.func(cfg, args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ArcFormatError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FloatingPointError, AblationError, ValueError, KeyError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
