"""TreeFFN cell: gated message passing along directed chain edges.

Messages travel along edges ``(source, target)`` and update the target.
Within one iteration every message is computed from the pre-iteration
states before any state changes (synchronous update), so the pass does not
depend on edge order.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, NonFiniteError, Tensor

DIRECTIONS = ("forward", "backward")


@dataclass(frozen=True)
class TreeFFNConfig:
    hidden_dim: int
    edge_dim: int = 32
    iterations: int = 2
    use_edge_projection: bool = True
    use_gating: bool = True
    use_residual: bool = False

    def __post_init__(self):
        if self.hidden_dim < 1 or self.edge_dim < 1:
            raise ValueError("hidden_dim and edge_dim must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


@dataclass(frozen=True)
class EdgeSet:
    sources: np.ndarray
    targets: np.ndarray
    direction: str

    def __len__(self) -> int:
        return int(self.sources.shape[0])

    @property
    def edges(self) -> list[tuple[int, int]]:
        return list(zip(self.sources.tolist(), self.targets.tolist()))

    def restrict(self, real: np.ndarray) -> "EdgeSet":
        """Drop edges with a padded endpoint (``real`` is a flat boolean mask)."""
        keep = real[self.sources] & real[self.targets]
        return EdgeSet(self.sources[keep], self.targets[keep], self.direction)


def build_edges(n: int, direction: str) -> EdgeSet:
    """Adjacent connections over ``n`` nodes.

    forward: (0,1), (1,2), ..., (n-2, n-1)
    backward: (n-1, n-2), ..., (1, 0)
    """
    if n < 1:
        raise ValueError(f"sequence length must be >= 1, got {n}")
    if direction == "forward":
        src = np.arange(0, n - 1)
        return EdgeSet(src, src + 1, direction)
    if direction == "backward":
        src = np.arange(n - 1, 0, -1)
        return EdgeSet(src, src - 1, direction)
    raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")


def batch_edges(pad_mask: np.ndarray, direction: str) -> EdgeSet:
    """Chain edges for a ``(B, N)`` batch flattened to ``B*N`` rows, padding excluded."""
    b, n = pad_mask.shape
    one = build_edges(n, direction)
    offsets = (np.arange(b) * n)[:, None]
    src = (offsets + one.sources[None, :]).reshape(-1)
    tgt = (offsets + one.targets[None, :]).reshape(-1)
    return EdgeSet(src, tgt, direction).restrict(pad_mask.reshape(-1))


def weight_shapes(config: TreeFFNConfig) -> dict[str, tuple[int, ...]]:
    d, e = config.hidden_dim, config.edge_dim
    shapes: dict[str, tuple[int, ...]] = {"edge_embedding": (1, e)}
    if config.use_edge_projection:
        shapes["edge_projection.weight"] = (e, e)
        shapes["edge_projection.bias"] = (e,)
    shapes["message.w1"] = (2 * d + e, d)
    shapes["message.b1"] = (d,)
    shapes["message.w2"] = (d, d)
    shapes["message.b2"] = (d,)
    if config.use_gating:
        shapes["gate.weight"] = (2 * d, d)
        shapes["gate.bias"] = (d,)
    return shapes


def _fan_in(name: str, shapes: dict[str, tuple[int, ...]]) -> int:
    prefix = name.rsplit(".", 1)[0]
    if prefix == "message" and name.endswith(("w1", "b1")):
        return shapes["message.w1"][0]
    if prefix == "message":
        return shapes["message.w2"][0]
    return shapes[prefix + ".weight"][0]


def init_tensor(name: str, shape: tuple[int, ...], fan_in: int | None, seed: int, dtype) -> Tensor:
    """Initialise one named tensor from its own seed stream.

    Seeding per name keeps shared tensors identical across configurations
    that differ only in which optional components exist.
    """
    rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
    if fan_in is None:
        data = rng.normal(0.0, 0.02, size=shape)
    else:
        bound = 1.0 / np.sqrt(fan_in)
        data = rng.uniform(-bound, bound, size=shape)
    return Tensor(data.astype(dtype), requires_grad=True)


class TreeFFNWeights:
    """Learned tensors of one TreeFFN cell, keyed by local name."""

    def __init__(self, config: TreeFFNConfig, tensors: dict[str, Tensor]):
        expected = weight_shapes(config)
        if set(tensors) != set(expected):
            raise KeyError(f"expected tensors {sorted(expected)}, got {sorted(tensors)}")
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise DimensionError(f"{name}: expected shape {shape}, got {tensors[name].shape}")
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    @classmethod
    def init(cls, config: TreeFFNConfig, seed: int, prefix: str = "", dtype=np.float64) -> "TreeFFNWeights":
        shapes = weight_shapes(config)
        tensors = {}
        for name, shape in shapes.items():
            fan_in = None if name == "edge_embedding" else _fan_in(name, shapes)
            tensors[name] = init_tensor(prefix + name, shape, fan_in, seed, dtype)
        return cls(config, tensors)

    @classmethod
    def zeros(cls, config: TreeFFNConfig, dtype=np.float64) -> "TreeFFNWeights":
        return cls(config, {n: Tensor(np.zeros(s, dtype=dtype), requires_grad=True)
                            for n, s in weight_shapes(config).items()})


def edge_feature(weights: TreeFFNWeights, config: TreeFFNConfig) -> Tensor:
    e = weights["edge_embedding"]
    if config.use_edge_projection:
        e = e @ weights["edge_projection.weight"] + weights["edge_projection.bias"]
    return e


def message(h_src: Tensor, h_dst: Tensor, weights: TreeFFNWeights, config: TreeFFNConfig,
            edge: Tensor | None = None) -> Tensor:
    """MLP over ``[source; target; edge]`` for a stack of edges, shape ``(E, d)``."""
    d = config.hidden_dim
    if h_src.shape != h_dst.shape or h_src.ndim != 2 or h_src.shape[1] != d:
        raise DimensionError(f"message: endpoint states {h_src.shape}, {h_dst.shape} for hidden_dim {d}")
    if edge is None:
        edge = edge_feature(weights, config)
    rows = ad.take_rows(edge, np.zeros(h_src.shape[0], dtype=np.intp))
    x = ad.concat([h_src, h_dst, rows], axis=1)
    hidden = ad.relu(x @ weights["message.w1"] + weights["message.b1"])
    return hidden @ weights["message.w2"] + weights["message.b2"]


def gate(h_dst: Tensor, h_src: Tensor, weights: TreeFFNWeights) -> Tensor:
    """Sigmoid gate from ``[receiver; sender]`` states, one value per feature."""
    return ad.sigmoid(ad.concat([h_dst, h_src], axis=1) @ weights["gate.weight"] + weights["gate.bias"])


def aggregate(messages: Tensor, h_dst: Tensor, h_src: Tensor, targets: np.ndarray, n_nodes: int,
              weights: TreeFFNWeights, config: TreeFFNConfig) -> Tensor:
    """Sum (optionally gated) messages into their target nodes; ``(n_nodes, d)``."""
    if messages.shape[0] != len(targets):
        raise DimensionError(f"aggregate: {messages.shape[0]} messages for {len(targets)} targets")
    if config.use_gating:
        messages = messages * gate(h_dst, h_src, weights)
    return ad.scatter_rows(messages, targets, n_nodes)


def treeffn_forward(H: Tensor, edges: EdgeSet, weights: TreeFFNWeights, config: TreeFFNConfig,
                    pad_mask: np.ndarray | None = None, counter: list[int] | None = None) -> Tensor:
    """Run ``config.iterations`` synchronous message-passing rounds over ``edges``.

    Returns ``H + dH`` with the residual connection and the accumulated
    update ``dH`` without it.  Padded rows receive and send nothing.
    ``counter[0]`` is incremented by the number of messages computed.
    """
    if H.ndim != 2 or H.shape[1] != config.hidden_dim:
        raise DimensionError(f"treeffn: states {H.shape} for hidden_dim {config.hidden_dim}")
    n = H.shape[0]
    if pad_mask is not None:
        edges = edges.restrict(np.asarray(pad_mask, dtype=bool).reshape(-1))
    if len(edges) and (edges.sources.max() >= n or edges.targets.max() >= n):
        raise IndexError(f"edge index out of range for {n} nodes")
    if not len(edges):
        return H if config.use_residual else Tensor(np.zeros_like(H.data))

    edge = edge_feature(weights, config)
    state, delta = H, None
    for t in range(config.iterations):
        try:
            src = ad.take_rows(state, edges.sources)
            dst = ad.take_rows(state, edges.targets)
            m = message(src, dst, weights, config, edge=edge)
            upd = aggregate(m, dst, src, edges.targets, n, weights, config)
            state = state + upd
            delta = upd if delta is None else delta + upd
        except NonFiniteError as exc:
            raise NonFiniteError(f"treeffn iteration {t}: {exc}") from exc
        if counter is not None:
            counter[0] += len(edges)
    return state if config.use_residual else delta
