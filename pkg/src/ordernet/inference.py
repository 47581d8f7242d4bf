"""Greedy and beam-search decoding of orderings.

Decoders talk to the model through two calls: ``model.prepare(x)`` returns
an opaque per-set context and ``model.next_logits(context, prefixes)``
returns next-step logits of shape (K, n) for K prefixes of equal length.
Any object with those two methods (and ``input_dim``) can be decoded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ConfigError

__all__ = ["BeamHypothesis", "greedy_decode", "beam_search", "sequence_log_prob", "masked_log_softmax"]


@dataclass(frozen=True)
class BeamHypothesis:
    prefix: tuple[int, ...]
    log_prob: float
    finished: bool = False


def masked_log_softmax(logits: np.ndarray, visited: np.ndarray) -> np.ndarray:
    """Row-wise log softmax with ``visited`` entries set to -inf."""
    z = np.where(visited, -np.inf, logits.astype(np.float64))
    top = z.max(axis=-1, keepdims=True)
    shifted = z - top
    with np.errstate(divide="ignore"):
        return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _window(model) -> int | None:
    config = getattr(model, "config", None)
    return getattr(config, "receptive_field", None)


def _check_input(model, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError(f"expected a set of shape (n >= 2, d), got {x.shape}")
    dim = getattr(model, "input_dim", None)
    if dim is not None and x.shape[1] != dim:
        raise ConfigError(f"model expects {dim}-dimensional elements, got {x.shape[1]}")
    return x


def greedy_decode(model, x, return_log_prob: bool = False):
    """Pick the most probable unvisited element at each step (lowest index on ties)."""
    x = _check_input(model, x)
    n = x.shape[0]
    context = model.prepare(x)
    window = _window(model)
    prefix: list[int] = []
    visited = np.zeros(n, dtype=bool)
    total = 0.0
    for _ in range(n):
        logits = model.next_logits(context, np.array([prefix], dtype=np.int64), window=window)[0]
        scores = total + masked_log_softmax(logits, visited)
        j = int(np.argmax(scores))
        total = float(scores[j])
        prefix.append(j)
        visited[j] = True
    order = np.array(prefix, dtype=np.int64)
    return (order, total) if return_log_prob else order


def beam_search(model, x, beam: int = 5, return_hypotheses: bool = False):
    """Keep the ``beam`` best prefixes per step by summed log probability.

    Ties are broken by lexicographically smaller prefix. Returns the best
    complete order (and optionally the final beam, best first).
    """
    if beam < 1:
        raise ValueError(f"beam must be >= 1, got {beam}")
    x = _check_input(model, x)
    n = x.shape[0]
    context = model.prepare(x)
    window = _window(model)
    prefixes = np.zeros((1, 0), dtype=np.int64)
    scores = np.zeros(1)
    for _ in range(n):
        logits = model.next_logits(context, prefixes, window=window)
        visited = np.zeros(logits.shape, dtype=bool)
        if prefixes.shape[1]:
            np.put_along_axis(visited, prefixes, True, axis=1)
        cand = scores[:, None] + masked_log_softmax(logits, visited)
        rows, cols = np.nonzero(~visited)
        values = cand[rows, cols]
        extended = np.concatenate([prefixes[rows], cols[:, None]], axis=1)
        # lexsort: last key is primary; descending score, then ascending prefix
        keys = [extended[:, c] for c in range(extended.shape[1] - 1, -1, -1)] + [-values]
        keep = np.lexsort(keys)[:beam]
        prefixes = extended[keep]
        scores = values[keep]
    best = prefixes[0].copy()
    if return_hypotheses:
        hyps = [BeamHypothesis(tuple(int(v) for v in p), float(s), True) for p, s in zip(prefixes, scores)]
        return best, hyps
    return best


def sequence_log_prob(model, x, order) -> float:
    """Score a complete order with the same masked softmax the decoders use."""
    x = _check_input(model, x)
    order = np.asarray(order, dtype=np.int64)
    n = x.shape[0]
    if sorted(order.tolist()) != list(range(n)):
        raise ValueError("order must be a permutation of range(n)")
    if hasattr(model, "teacher_forced_logits"):
        logits = model.teacher_forced_logits(x, order)
    else:
        context = model.prepare(x)
        logits = np.stack([model.next_logits(context, order[None, :t])[0] for t in range(n)])
    visited = np.zeros((n, n), dtype=bool)
    for t in range(1, n):
        visited[t] = visited[t - 1]
        visited[t, order[t - 1]] = True
    logp = masked_log_softmax(logits, visited)
    return float(logp[np.arange(n), order].sum())
