"""Masked-loss training loop and token / exact-match evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .checkpoint import TrainState, save_checkpoint
from .data import Batch, Task, TokenSequence, pad_batch, tokenize_pair
from .model import TreeGPTModel
from .optim import AdamWState, TrainConfig, adamw_step, clip_grads, lr_at

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("step", "lr", "loss", "token_acc", "exact_match")


class TrainingDiverged(FloatingPointError):
    pass


def batch_loss(model: TreeGPTModel, b: Batch) -> ad.Tensor:
    rows = b.loss_rows
    logits = model.forward(b.inputs, b.pad_mask, rows=rows)
    return ad.cross_entropy(logits, b.tokens.reshape(-1)[rows])


def predict(model: TreeGPTModel, b: Batch) -> np.ndarray:
    """Argmax predictions at the scored positions of ``b`` (flattened order)."""
    logits = model.forward(b.inputs, b.pad_mask, rows=b.loss_rows)
    return logits.data.argmax(axis=1)


@dataclass
class TaskScore:
    task_id: str
    correct: int
    total: int
    pairs_exact: int
    pairs: int

    @property
    def token_accuracy(self) -> float:
        return self.correct / self.total

    @property
    def exact_match(self) -> float:
        return self.pairs_exact / self.pairs


@dataclass
class EvalResult:
    token_accuracy: float
    exact_match: float
    per_task: list[TaskScore]


def evaluate(model: TreeGPTModel, tasks: Sequence[Task], batch_size: int = 32) -> EvalResult:
    """Score every test pair with MASK placeholders in the output region."""
    items: list[tuple[int, TokenSequence]] = []
    for k, task in enumerate(tasks):
        for inp, out in task.test_pairs:
            items.append((k, tokenize_pair(inp, out, "train", model.config.max_seq_len)))
    if not items:
        raise ValueError("no test pairs to evaluate")
    scores = [TaskScore(t.task_id, 0, 0, 0, 0) for t in tasks]
    for start in range(0, len(items), batch_size):
        chunk = items[start:start + batch_size]
        b = pad_batch([s for _, s in chunk])
        hit = predict(model, b) == b.targets
        owner = np.repeat(np.arange(len(chunk)), b.loss_mask.sum(axis=1))
        for j, (k, _) in enumerate(chunk):
            h = hit[owner == j]
            s = scores[k]
            s.correct += int(h.sum())
            s.total += int(h.size)
            s.pairs += 1
            s.pairs_exact += int(h.all())
    correct = sum(s.correct for s in scores)
    tokens = sum(s.total for s in scores)
    exact = sum(s.pairs_exact for s in scores)
    pairs = sum(s.pairs for s in scores)
    return EvalResult(correct / tokens, exact / pairs, scores)


@dataclass
class StepRecord:
    step: int
    lr: float
    loss: float
    token_acc: float | None = None
    exact_match: float | None = None

    def row(self) -> list[str]:
        def fmt(x):
            return "" if x is None else repr(float(x))
        return [str(self.step), fmt(self.lr), fmt(self.loss), fmt(self.token_acc), fmt(self.exact_match)]


@dataclass
class TrainResult:
    records: list[StepRecord] = field(default_factory=list)
    state: TrainState | None = None

    @property
    def losses(self) -> list[float]:
        return [r.loss for r in self.records]


def new_state(model: TreeGPTModel, config: TrainConfig) -> TrainState:
    rng = np.random.default_rng(config.seed)
    return TrainState(0, AdamWState.for_params(model.params, config), rng.bit_generator.state, config)


def train(
    model: TreeGPTModel,
    sequences: Sequence[TokenSequence],
    config: TrainConfig,
    eval_tasks: Sequence[Task] | None = None,
    state: TrainState | None = None,
    until: int | None = None,
    checkpoint_dir: Path | None = None,
    on_record: Callable[[StepRecord], None] | None = None,
) -> TrainResult:
    """Train from ``state`` (fresh if None) up to step ``until`` (default ``total_steps``).

    Every random draw comes from the generator stored in the state, so a run
    resumed from a checkpoint reproduces the uninterrupted run exactly.
    """
    if not sequences:
        raise ValueError("training set is empty")
    state = state or new_state(model, config)
    until = config.total_steps if until is None else min(until, config.total_steps)
    rng = np.random.default_rng()
    rng.bit_generator.state = state.rng_state
    opt = state.optimizer
    result = TrainResult()
    whole = len(sequences) <= config.batch_size
    fixed = pad_batch(list(sequences)) if whole else None

    while state.step < until:
        step = state.step + 1
        if whole:
            b = fixed
        else:
            picks = rng.choice(len(sequences), size=config.batch_size, replace=False)
            b = pad_batch([sequences[i] for i in picks])
        model.zero_grad()
        loss = batch_loss(model, b)
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingDiverged(f"non-finite loss at step {step}")
        loss.backward()
        grads = {n: p.grad for n, p in model.params.items()}
        clip_grads(grads, config.grad_clip_norm)
        lr = lr_at(step, config)
        adamw_step(model.params, grads, opt, lr=lr)
        state.step = step
        state.rng_state = rng.bit_generator.state
        rec = StepRecord(step, lr, value)
        if eval_tasks and (step % config.eval_every == 0 or step == config.total_steps):
            ev = evaluate(model, eval_tasks)
            rec.token_acc, rec.exact_match = ev.token_accuracy, ev.exact_match
            log.info("step %d loss %.4f token_acc %.4f exact %.4f", step, value, ev.token_accuracy, ev.exact_match)
        result.records.append(rec)
        if on_record:
            on_record(rec)
        if checkpoint_dir is not None and config.checkpoint_every and step % config.checkpoint_every == 0:
            save_checkpoint(model, state, Path(checkpoint_dir) / f"step_{step:06d}.ckpt")
    result.state = state
    return result
