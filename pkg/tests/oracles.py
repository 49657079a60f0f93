"""Independent reference implementations used only by the tests.

None of these import the autodiff engine; they work on plain numpy arrays
or Python floats so they cannot share a bug with the code they check.
"""

import collections
import math

import numpy as np


def _sigmoid(x):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def treeffn_reference(H, edges, w, cfg):
    """One TreeFFN cell, written directly from the message/gate/aggregate formulas.

    ``w`` maps local weight names to arrays; ``edges`` is a list of (source, target).
    """
    e = w["edge_embedding"]
    if cfg.use_edge_projection:
        e = e @ w["edge_projection.weight"] + w["edge_projection.bias"]
    src = np.array([s for s, _ in edges], dtype=np.intp)
    dst = np.array([t for _, t in edges], dtype=np.intp)
    state = H
    delta = np.zeros_like(H)
    if not edges:
        return H if cfg.use_residual else delta
    for _ in range(cfg.iterations):
        hs, ht = state[src], state[dst]
        x = np.concatenate([hs, ht, np.repeat(e, len(edges), axis=0)], axis=1)
        hidden = x @ w["message.w1"] + w["message.b1"]
        hidden = np.where(hidden > 0, hidden, 0.0)
        m = hidden @ w["message.w2"] + w["message.b2"]
        if cfg.use_gating:
            m = m * _sigmoid(np.concatenate([ht, hs], axis=1) @ w["gate.weight"] + w["gate.bias"])
        agg = np.zeros_like(H)
        for k, t in enumerate(dst):
            agg[t] += m[k]
        state = state + agg
        delta = agg if _ == 0 else delta + agg
    return state if cfg.use_residual else delta


def algorithm1_logits(params, cfg, tokens):
    """Line-by-line transcription of the encoder/decoder loop for one sequence.

    Each pass of the loop body is one layer: encoder over (i, i+1), fold into
    H, decoder over (i, i-1), fold into H.
    """
    n = len(tokens)
    H = params["token_embedding"][tokens]
    if cfg.position_embedding:
        H = H + params["position_embedding"][np.arange(n)]
    cell = cfg.treeffn
    for layer in range(cfg.num_layers):
        enc = {k.split(".", 3)[3]: v for k, v in params.items() if k.startswith(f"layers.{layer}.encoder.")}
        dec = {k.split(".", 3)[3]: v for k, v in params.items() if k.startswith(f"layers.{layer}.decoder.")}
        E_enc = [(i, i + 1) for i in range(0, n - 1)]
        H_enc = treeffn_reference(H, E_enc, enc, cell)
        H = H + H_enc
        E_dec = [(i, i - 1) for i in range(n - 1, 0, -1)]
        H_dec = treeffn_reference(H, E_dec, dec, cell)
        H = H + H_dec
    return H @ params["output_head.weight"] + params["output_head.bias"]


def scalar_adamw(theta, grads, lrs, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
    """Textbook AdamW on one float; returns the trajectory after each step."""
    m = v = 0.0
    out = []
    for t, (g, lr) in enumerate(zip(grads, lrs), start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        theta = theta - lr * (m_hat / (math.sqrt(v_hat) + eps) + weight_decay * theta)
        out.append(theta)
    return out


def sum_of_shapes(model):
    """Parameter count by walking the tensors the model actually holds."""
    total = 0
    for p in model.params.values():
        n = 1
        for s in p.data.shape:
            n *= s
        total += n
    return total


def context_floor(sequences, radius):
    """Best loss and token accuracy reachable by any predictor that sees only
    the absolute position and the model-input tokens within ``radius``.

    Scored positions are grouped by that view; inside a group the optimal
    prediction is the empirical target distribution.
    """
    groups = collections.defaultdict(list)
    for s in sequences:
        x = s.model_input()
        n = len(x)
        for p in np.flatnonzero(s.loss_mask):
            view = (int(p),) + tuple(int(x[q]) if 0 <= q < n else -1 for q in range(p - radius, p + radius + 1))
            groups[view].append(int(s.tokens[p]))
    total = wrong = 0
    entropy = 0.0
    for targets in groups.values():
        counts = collections.Counter(targets)
        k = len(targets)
        total += k
        entropy -= sum(c * math.log(c / k) for c in counts.values())
        wrong += k - max(counts.values())
    return entropy / total, 1 - wrong / total
