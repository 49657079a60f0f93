"""TreeGPT: embeddings, stacked encoder/decoder TreeFFN layers, output head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .treeffn import TreeFFNConfig, TreeFFNWeights, batch_edges, init_tensor, treeffn_forward, weight_shapes

COMBINATION_MODES = ("sequential", "parallel")
DTYPES = {"float64": np.float64, "float32": np.float32}


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 16
    hidden_dim: int = 64
    num_layers: int = 2
    max_seq_len: int = 2048
    edge_dim: int = 32
    iterations: int = 2
    use_edge_projection: bool = True
    use_gating: bool = True
    use_residual: bool = False
    combination_mode: str = "sequential"
    position_embedding: bool = True
    dtype: str = "float64"

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.max_seq_len < 2:
            raise ValueError("max_seq_len must be >= 2")
        if self.combination_mode not in COMBINATION_MODES:
            raise ValueError(f"combination_mode must be one of {COMBINATION_MODES}")
        if self.dtype not in DTYPES:
            raise ValueError(f"dtype must be one of {tuple(DTYPES)}")
        self.treeffn  # validates dims and iterations

    @property
    def treeffn(self) -> TreeFFNConfig:
        return TreeFFNConfig(self.hidden_dim, self.edge_dim, self.iterations,
                             self.use_edge_projection, self.use_gating, self.use_residual)

    @property
    def np_dtype(self):
        return DTYPES[self.dtype]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every declared tensor of the model, in a fixed order."""
    d, v = config.hidden_dim, config.vocab_size
    shapes = {"token_embedding": (v, d)}
    if config.position_embedding:
        shapes["position_embedding"] = (config.max_seq_len, d)
    cell = weight_shapes(config.treeffn)
    for layer in range(config.num_layers):
        for part in ("encoder", "decoder"):
            for name, shape in cell.items():
                shapes[f"layers.{layer}.{part}.{name}"] = shape
    shapes["output_head.weight"] = (d, v)
    shapes["output_head.bias"] = (v,)
    return shapes


def parameter_count(config: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in parameter_shapes(config).values())


def count_messages(config: ModelConfig, n: int) -> int:
    """Messages computed by one forward pass over a single length-``n`` sequence."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return 2 * config.num_layers * config.iterations * (n - 1)


class TreeGPTModel:
    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        shapes = parameter_shapes(config)
        if list(params) != list(shapes):
            missing = set(shapes) - set(params)
            extra = set(params) - set(shapes)
            raise KeyError(f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, shape in shapes.items():
            if params[name].shape != shape:
                raise ad.DimensionError(f"{name}: expected shape {shape}, got {params[name].shape}")
        self.config = config
        self.params = params
        self.message_count = 0
        cell = config.treeffn
        self.layers = []
        for layer in range(config.num_layers):
            pair = []
            for part in ("encoder", "decoder"):
                prefix = f"layers.{layer}.{part}."
                local = {n[len(prefix):]: t for n, t in params.items() if n.startswith(prefix)}
                pair.append(TreeFFNWeights(cell, local))
            self.layers.append(tuple(pair))

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "TreeGPTModel":
        dtype = config.np_dtype
        params = {}
        for name, shape in parameter_shapes(config).items():
            if name.endswith("embedding"):
                fan_in = None
            elif name.startswith("output_head"):
                fan_in = config.hidden_dim
            elif ".message.w2" in name or ".message.b2" in name:
                fan_in = config.hidden_dim
            elif ".message." in name:
                fan_in = 2 * config.hidden_dim + config.edge_dim
            elif ".gate." in name:
                fan_in = 2 * config.hidden_dim
            else:
                fan_in = config.edge_dim
            params[name] = init_tensor(name, shape, fan_in, seed, dtype)
        return cls(config, params)

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def embed(self, tokens: np.ndarray) -> Tensor:
        b, n = tokens.shape
        if n > self.config.max_seq_len:
            raise ValueError(f"sequence length {n} exceeds max_seq_len {self.config.max_seq_len}")
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.config.vocab_size):
            raise ValueError(f"token ids must lie in [0, {self.config.vocab_size})")
        H = ad.take_rows(self.params["token_embedding"], tokens.reshape(-1))
        if self.config.position_embedding:
            H = H + ad.take_rows(self.params["position_embedding"], np.tile(np.arange(n), b))
        return H

    def hidden(self, tokens, pad_mask=None) -> Tensor:
        """Final states, flattened to ``(B*N, d)``."""
        tokens, pad_mask = _as_batch(tokens, pad_mask)
        fwd = batch_edges(pad_mask, "forward")
        bwd = batch_edges(pad_mask, "backward")
        counter = [0]
        cell = self.config.treeffn
        H = self.embed(tokens)
        for enc, dec in self.layers:
            if self.config.combination_mode == "sequential":
                H = H + treeffn_forward(H, fwd, enc, cell, counter=counter)
                H = H + treeffn_forward(H, bwd, dec, cell, counter=counter)
            else:
                H = H + treeffn_forward(H, fwd, enc, cell, counter=counter) \
                      + treeffn_forward(H, bwd, dec, cell, counter=counter)
        self.message_count = counter[0]
        return H

    def head(self, H: Tensor) -> Tensor:
        return H @ self.params["output_head.weight"] + self.params["output_head.bias"]

    def forward(self, tokens, pad_mask=None, rows: np.ndarray | None = None) -> Tensor:
        """Logits ``(B*N, V)`` (``(N, V)`` for a single sequence).

        ``rows`` restricts the head to selected flattened positions.
        """
        H = self.hidden(tokens, pad_mask)
        if rows is not None:
            H = ad.take_rows(H, rows)
        return self.head(H)

    __call__ = forward


def _as_batch(tokens, pad_mask):
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
        if pad_mask is not None:
            pad_mask = np.asarray(pad_mask, dtype=bool)[None, :]
    if pad_mask is None:
        pad_mask = np.ones(tokens.shape, dtype=bool)
    pad_mask = np.asarray(pad_mask, dtype=bool)
    if pad_mask.shape != tokens.shape:
        raise ValueError(f"pad_mask shape {pad_mask.shape} differs from tokens {tokens.shape}")
    return tokens, pad_mask
