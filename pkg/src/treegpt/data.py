"""ARC grids: loading, serialization to token sequences, synthetic task families, batching.

Token vocabulary (16 ids):

    0-9   cell colours
    10    PAD
    11    BOS
    12    EOS
    13    ROW_SEP   (after every grid row)
    14    IO_SEP    (between input and output grids)
    15    MASK      (unknown output cell)

A pair is laid out as ``BOS, input rows, IO_SEP, output rows, EOS``.  The
model is scored on the output region: its colour cells, its ROW_SEP tokens
and the closing EOS.  At inference the output colour cells are MASK; the
separators stay visible, so the output shape is assumed known.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, BOS, EOS, ROW_SEP, IO_SEP, MASK = 10, 11, 12, 13, 14, 15
VOCAB_SIZE = 16
MAX_GRID = 30
FAMILIES = ("copy", "color_map", "pattern_tiling", "rect_fill")


class ArcFormatError(ValueError):
    """Base class for malformed task files."""


class MalformedTaskError(ArcFormatError):
    pass


class CellRangeError(ArcFormatError):
    pass


class RaggedGridError(ArcFormatError):
    pass


class EmptyGridError(ArcFormatError):
    pass


class SequenceTooLongError(ValueError):
    pass


class Grid:
    __slots__ = ("cells",)

    def __init__(self, cells, where: str = "grid"):
        self.cells = validate_grid(cells, where)

    @property
    def rows(self) -> int:
        return self.cells.shape[0]

    @property
    def cols(self) -> int:
        return self.cells.shape[1]

    def to_list(self) -> list[list[int]]:
        return self.cells.tolist()

    def __eq__(self, other) -> bool:
        return isinstance(other, Grid) and np.array_equal(self.cells, other.cells)

    def __repr__(self) -> str:
        return f"Grid({self.to_list()})"


def validate_grid(cells, where: str = "grid") -> np.ndarray:
    if isinstance(cells, np.ndarray):
        rows = cells.tolist() if cells.ndim == 2 else None
    else:
        rows = cells
    if not isinstance(rows, list) or not rows:
        raise EmptyGridError(f"{where}: grid must be a non-empty list of rows")
    width = None
    for r, row in enumerate(rows):
        if not isinstance(row, list) or not row:
            raise EmptyGridError(f"{where}: row {r} is empty or not a list")
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise RaggedGridError(f"{where}: row {r} has length {len(row)}, expected {width}")
        for c, v in enumerate(row):
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise MalformedTaskError(f"{where}: cell ({r},{c}) is not an integer: {v!r}")
            if not 0 <= v <= 9:
                raise CellRangeError(f"{where}: cell ({r},{c}) = {v} outside [0, 9]")
    if len(rows) > MAX_GRID or width > MAX_GRID:
        raise MalformedTaskError(f"{where}: grid {len(rows)}x{width} exceeds {MAX_GRID}x{MAX_GRID}")
    return np.array(rows, dtype=np.int64)


@dataclass
class Task:
    task_id: str
    train_pairs: list[tuple[Grid, Grid]]
    test_pairs: list[tuple[Grid, Grid]]

    def __post_init__(self):
        if not self.train_pairs or not self.test_pairs:
            raise MalformedTaskError(f"{self.task_id}: needs at least one train and one test pair")

    def to_json(self) -> dict:
        def conv(pairs):
            return [{"input": i.to_list(), "output": o.to_list()} for i, o in pairs]
        return {"train": conv(self.train_pairs), "test": conv(self.test_pairs)}


def parse_task(obj, task_id: str, where: str) -> Task:
    if not isinstance(obj, dict):
        raise MalformedTaskError(f"{where}: top level must be an object")
    split = {}
    for key in ("train", "test"):
        entries = obj.get(key)
        if not isinstance(entries, list) or not entries:
            raise MalformedTaskError(f"{where}: '{key}' must be a non-empty array")
        pairs = []
        for k, pair in enumerate(entries):
            if not isinstance(pair, dict) or "input" not in pair or "output" not in pair:
                raise MalformedTaskError(f"{where}: {key}[{k}] needs 'input' and 'output'")
            pairs.append((Grid(pair["input"], f"{where}: {key}[{k}].input"),
                          Grid(pair["output"], f"{where}: {key}[{k}].output")))
        split[key] = pairs
    return Task(task_id, split["train"], split["test"])


def load_arc_file(path) -> Task:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MalformedTaskError(f"{path}: invalid JSON ({exc})") from exc
    return parse_task(obj, path.stem, str(path))


def load_arc_dir(directory) -> list[Task]:
    directory = Path(directory)
    return [load_arc_file(p) for p in sorted(directory.glob("*.json")) if p.name != "manifest.json"]


def task_bytes(task: Task) -> bytes:
    return (json.dumps(task.to_json(), separators=(",", ":")) + "\n").encode()


def write_task(task: Task, path) -> None:
    Path(path).write_bytes(task_bytes(task))


@dataclass
class TokenSequence:
    tokens: np.ndarray
    loss_mask: np.ndarray
    pad_mask: np.ndarray

    def __post_init__(self):
        n = len(self.tokens)
        if len(self.loss_mask) != n or len(self.pad_mask) != n:
            raise ValueError("tokens and masks must have equal lengths")
        if np.any(self.loss_mask & ~self.pad_mask):
            raise ValueError("loss_mask must be a subset of pad_mask")
        if not self.loss_mask.any():
            raise ValueError("sequence has no scored positions")

    def __len__(self) -> int:
        return len(self.tokens)

    def model_input(self) -> np.ndarray:
        return masked_input(self.tokens, self.loss_mask)


def masked_input(tokens: np.ndarray, loss_mask: np.ndarray) -> np.ndarray:
    """Hide scored colour cells behind MASK, keeping separators visible."""
    out = tokens.copy()
    out[loss_mask & (tokens < 10)] = MASK
    return out


def _grid_tokens(g: Grid) -> np.ndarray:
    body = np.concatenate([g.cells, np.full((g.rows, 1), ROW_SEP)], axis=1)
    return body.reshape(-1)


def sequence_length(inp: Grid, out: Grid) -> int:
    return 3 + inp.rows * (inp.cols + 1) + out.rows * (out.cols + 1)


def tokenize_pair(inp: Grid, out: Grid, mode: str = "train", max_seq_len: int = 2048) -> TokenSequence:
    if mode not in ("train", "inference"):
        raise ValueError(f"mode must be 'train' or 'inference', got {mode!r}")
    n = sequence_length(inp, out)
    if n > max_seq_len:
        raise SequenceTooLongError(f"pair needs {n} tokens, max_seq_len is {max_seq_len}")
    head = np.concatenate([[BOS], _grid_tokens(inp), [IO_SEP]])
    tail = np.concatenate([_grid_tokens(out), [EOS]])
    tokens = np.concatenate([head, tail]).astype(np.int64)
    loss_mask = np.zeros(n, dtype=bool)
    loss_mask[len(head):] = True
    if mode == "inference":
        tokens = masked_input(tokens, loss_mask)
    return TokenSequence(tokens, loss_mask, np.ones(n, dtype=bool))


def _parse_rows(tokens: Sequence[int]) -> list[list[int]]:
    rows, cur = [], []
    for t in tokens:
        if t == ROW_SEP:
            rows.append(cur)
            cur = []
        else:
            cur.append(int(t))
    if cur:
        raise ValueError("grid region does not end with ROW_SEP")
    return rows


def detokenize(tokens) -> tuple[Grid, Grid]:
    """Inverse of :func:`tokenize_pair` in train mode."""
    toks = [int(t) for t in np.asarray(tokens) if t != PAD]
    if len(toks) < 3 or toks[0] != BOS or toks[-1] != EOS or toks.count(IO_SEP) != 1:
        raise ValueError("token sequence is not a BOS ... IO_SEP ... EOS pair")
    sep = toks.index(IO_SEP)
    return Grid(_parse_rows(toks[1:sep]), "input"), Grid(_parse_rows(toks[sep + 1:-1]), "output")


# -- synthetic task families ------------------------------------------------

def _random_grid(rng, min_size, max_size, colors=10) -> np.ndarray:
    r, c = rng.integers(min_size, max_size + 1, size=2)
    return rng.integers(0, colors, size=(r, c))


def _copy_task(rng, n_pairs, min_size, max_size):
    pairs = []
    for _ in range(n_pairs):
        g = _random_grid(rng, min_size, max_size)
        pairs.append((g, g.copy()))
    return pairs


def _color_map_task(rng, n_pairs, min_size, max_size):
    while True:
        perm = rng.permutation(10)
        if np.any(perm != np.arange(10)):
            break
    pairs = []
    for _ in range(n_pairs):
        g = _random_grid(rng, min_size, max_size)
        pairs.append((g, perm[g]))
    return pairs


def _tiling_task(rng, n_pairs, min_size, max_size):
    reps = rng.integers(2, 4, size=2)
    motif_max = max(1, min(max_size, MAX_GRID // int(reps.max())))
    pairs = []
    for _ in range(n_pairs):
        motif = _random_grid(rng, 1, min(3, motif_max))
        pairs.append((motif, np.tile(motif, reps)))
    return pairs


def _rect_fill_task(rng, n_pairs, min_size, max_size):
    lo, hi = max(3, min_size), max(3, max_size)
    border, fill = rng.choice(np.arange(1, 10), size=2, replace=False)
    pairs = []
    for _ in range(n_pairs):
        r, c = rng.integers(lo, hi + 1, size=2)
        inp = np.zeros((r, c), dtype=np.int64)
        out = inp.copy()
        for _ in range(int(rng.integers(1, 3))):
            h, w = rng.integers(3, r + 1), rng.integers(3, c + 1)
            top, left = rng.integers(0, r - h + 1), rng.integers(0, c - w + 1)
            if np.any(inp[top:top + h, left:left + w]):
                continue  # keep rectangles disjoint
            for g in (inp, out):
                g[top:top + h, left:left + w] = border
            out[top + 1:top + h - 1, left + 1:left + w - 1] = fill
            inp[top + 1:top + h - 1, left + 1:left + w - 1] = 0
        pairs.append((inp, out))
    return pairs


_GENERATORS = {
    "copy": _copy_task,
    "color_map": _color_map_task,
    "pattern_tiling": _tiling_task,
    "rect_fill": _rect_fill_task,
}


def generate_synthetic(family: str, rng_seed: int, count: int, n_train: int = 3, n_test: int = 1,
                       min_size: int = 1, max_size: int = 5) -> list[Task]:
    """``count`` tasks of one family; a pure function of its arguments."""
    if family not in _GENERATORS:
        raise ValueError(f"unknown family {family!r}; valid families: {', '.join(FAMILIES)}")
    if count < 1:
        raise ValueError("count must be >= 1")
    if not 1 <= min_size <= max_size <= MAX_GRID:
        raise ValueError(f"need 1 <= min_size <= max_size <= {MAX_GRID}")
    rng = np.random.default_rng([rng_seed, FAMILIES.index(family)])
    tasks = []
    for k in range(count):
        pairs = _GENERATORS[family](rng, n_train + n_test, min_size, max_size)
        grids = [(Grid(i, "synthetic"), Grid(o, "synthetic")) for i, o in pairs]
        tasks.append(Task(f"{family}-s{rng_seed}-{k:04d}", grids[:n_train], grids[n_train:]))
    return tasks


# -- batching -----------------------------------------------------------------

@dataclass
class Batch:
    tokens: np.ndarray      # (B, P) true tokens, PAD-filled
    inputs: np.ndarray      # (B, P) model input with scored colour cells masked
    loss_mask: np.ndarray
    pad_mask: np.ndarray

    @property
    def loss_rows(self) -> np.ndarray:
        return np.flatnonzero(self.loss_mask.reshape(-1))

    @property
    def targets(self) -> np.ndarray:
        return self.tokens.reshape(-1)[self.loss_rows]


def pad_batch(sequences: Sequence[TokenSequence], pad_to: int | None = None) -> Batch:
    if not sequences:
        raise ValueError("empty batch")
    longest = max(len(s) for s in sequences)
    pad_to = longest if pad_to is None else pad_to
    if longest > pad_to:
        raise SequenceTooLongError(f"sequence of length {longest} exceeds pad_to={pad_to}")
    b = len(sequences)
    tokens = np.full((b, pad_to), PAD, dtype=np.int64)
    loss = np.zeros((b, pad_to), dtype=bool)
    real = np.zeros((b, pad_to), dtype=bool)
    for k, s in enumerate(sequences):
        n = len(s)
        tokens[k, :n] = s.tokens
        loss[k, :n] = s.loss_mask
        real[k, :n] = s.pad_mask
    return Batch(tokens, masked_input(tokens, loss), loss, real)


def batch(sequences: Sequence[TokenSequence], batch_size: int, pad_to: int | None = None) -> list[Batch]:
    """Split into consecutive right-padded batches."""
    return [pad_batch(sequences[i:i + batch_size], pad_to) for i in range(0, len(sequences), batch_size)]


def pair_sequences(tasks: Iterable[Task], split: str = "train", max_seq_len: int = 2048) -> list[TokenSequence]:
    out = []
    for task in tasks:
        pairs = task.train_pairs if split == "train" else task.test_pairs
        out.extend(tokenize_pair(i, o, "train", max_seq_len) for i, o in pairs)
    return out
