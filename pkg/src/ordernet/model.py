"""OrderNet: a pairwise set encoder plus a causal convolutional pointer decoder."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import BatchNormState, ParamStore, Tensor

__all__ = [
    "ModelConfig",
    "OrderNet",
    "InvalidPrefixError",
    "SetTooSmallError",
    "ConfigError",
    "parameter_count",
    "visited_mask",
]


class InvalidPrefixError(ValueError):
    """A target prefix repeats an index or points outside the set."""


class SetTooSmallError(ValueError):
    """Sets need at least two elements."""


class ConfigError(ValueError):
    """Data and model disagree on feature dimension or similar settings."""


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 2
    encoder_blocks: int = 4
    encoder_layer1_depth: int = 128
    encoder_layer2_depth: int = 16
    encoder_pool: str = "max"
    decoder_blocks: int = 4
    decoder_block_depth: int = 16
    precision: str = "float32"

    def __post_init__(self):
        for name in ("input_dim", "encoder_layer1_depth", "encoder_layer2_depth", "decoder_blocks", "decoder_block_depth"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.encoder_blocks < 0:
            raise ValueError(f"encoder_blocks must be >= 0, got {self.encoder_blocks}")
        if self.encoder_pool not in ("max", "avg"):
            raise ValueError(f"encoder_pool must be 'max' or 'avg', got {self.encoder_pool!r}")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"precision must be 'float32' or 'float64', got {self.precision!r}")

    @classmethod
    def tsp(cls, **overrides) -> "ModelConfig":
        return cls(**overrides)

    @classmethod
    def word_order(cls, **overrides) -> "ModelConfig":
        base = dict(
            input_dim=50,
            encoder_blocks=8,
            encoder_layer1_depth=256,
            encoder_layer2_depth=32,
            encoder_pool="avg",
            decoder_blocks=8,
            decoder_block_depth=32,
        )
        base.update(overrides)
        return cls(**base)

    @property
    def encoded_dim(self) -> int:
        return self.input_dim + self.encoder_blocks * self.encoder_layer2_depth

    def encoder_input_depth(self, block: int) -> int:
        return self.input_dim + block * self.encoder_layer2_depth

    def decoder_input_depth(self, block: int) -> int:
        return 2 * self.encoded_dim + block * 2 * self.decoder_block_depth

    @property
    def receptive_field(self) -> int:
        """Columns (including the current one) a decoder output can see."""
        return 2 * self.decoder_blocks + 1

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def parameter_count(config: ModelConfig) -> int:
    """Learnable scalars implied by ``config``; running BN statistics excluded."""
    total = 0
    h1, h2 = config.encoder_layer1_depth, config.encoder_layer2_depth
    for k in range(config.encoder_blocks):
        pair = 2 * config.encoder_input_depth(k)
        total += pair * h1 + h1 + 2 * h1
        total += h1 * h2 + h2 + 2 * h2
    depth = config.decoder_block_depth
    for k in range(config.decoder_blocks):
        total += 3 * config.decoder_input_depth(k) * depth + depth + 2 * depth
    total += config.decoder_input_depth(config.decoder_blocks) + 1
    total += config.encoded_dim
    return total


def visited_mask(prefix: np.ndarray, n: int, columns: np.ndarray) -> np.ndarray:
    """Boolean (B, n, len(columns)): True where cell (i, t) keeps its value.

    Element i stays live at column t until it has been emitted, i.e. while
    it does not appear in ``prefix[:, :t]``.
    """
    batch, length = prefix.shape
    position = np.full((batch, n), np.iinfo(np.int64).max, dtype=np.int64)
    rows = np.repeat(np.arange(batch), length)
    position[rows, prefix.reshape(-1)] = np.tile(np.arange(length), batch)
    return position[:, :, None] >= columns[None, None, :]


def _check_prefix(prefix: np.ndarray, n: int) -> None:
    if prefix.size == 0:
        return
    if prefix.min() < 0 or prefix.max() >= n:
        raise InvalidPrefixError(f"prefix entries must lie in [0, {n}), got range [{prefix.min()}, {prefix.max()}]")
    ordered = np.sort(prefix, axis=1)
    if np.any(ordered[:, 1:] == ordered[:, :-1]):
        raise InvalidPrefixError("prefix repeats an index")


class OrderNet:
    """Encoder/decoder ordering model.

    Parameters live in ``self.params``; batch-norm running statistics in
    ``self.bn``. ``train()``/``eval()`` switch batch-norm behaviour.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.params = ParamStore()
        self.bn: dict[str, BatchNormState] = {}
        self.training = True
        rng = np.random.Generator(np.random.Philox(key=seed))
        with T.precision(config.precision):
            self._build(rng)

    # -- construction -----------------------------------------------------

    def _conv(self, name: str, shape: tuple[int, ...], fan_in: int, rng, gain: float = 2.0) -> None:
        weight = rng.standard_normal(shape) * np.sqrt(gain / fan_in)
        self.params.add(f"{name}.weight", weight)
        self.params.add(f"{name}.bias", np.zeros(shape[-1]))

    def _norm(self, name: str, channels: int) -> None:
        self.params.add(f"{name}.scale", np.ones(channels))
        self.params.add(f"{name}.shift", np.zeros(channels))
        self.bn[name] = BatchNormState.fresh(channels)

    def _build(self, rng) -> None:
        cfg = self.config
        self.params.add("start_token", rng.standard_normal(cfg.encoded_dim) * 0.1)
        h1, h2 = cfg.encoder_layer1_depth, cfg.encoder_layer2_depth
        for k in range(cfg.encoder_blocks):
            pair = 2 * cfg.encoder_input_depth(k)
            self._conv(f"enc.{k}.conv1", (pair, h1), pair, rng)
            self._norm(f"enc.{k}.bn1", h1)
            self._conv(f"enc.{k}.conv2", (h1, h2), h1, rng)
            self._norm(f"enc.{k}.bn2", h2)
        depth = cfg.decoder_block_depth
        for k in range(cfg.decoder_blocks):
            d_in = cfg.decoder_input_depth(k)
            self._conv(f"dec.{k}.conv", (3, d_in, depth), 3 * d_in, rng)
            self._norm(f"dec.{k}.bn", depth)
        d_last = cfg.decoder_input_depth(cfg.decoder_blocks)
        # small output layer so the initial softmax is close to uniform
        self._conv("out", (d_last, 1), d_last, rng, gain=0.01)

    def train(self) -> "OrderNet":
        self.training = True
        return self

    def eval(self) -> "OrderNet":
        self.training = False
        return self

    @property
    def input_dim(self) -> int:
        return self.config.input_dim

    def _p(self, name: str) -> Tensor:
        return self.params[name]

    def _relu_bn(self, x: Tensor, name: str) -> Tensor:
        return T.relu_batch_norm(x, self._p(f"{name}.scale"), self._p(f"{name}.shift"), self.bn[name], self.training)

    # -- encoder ----------------------------------------------------------

    def encoder_block(self, k: int, h: Tensor) -> Tensor:
        """One pairwise block: (B, n, D_k) -> (B, n, encoder_layer2_depth)."""
        n = h.shape[-2]
        # same as pointwise_linear(pair_tensor(h)), minus the (n, n, 2D) intermediate
        z = T.pair_linear(h, self._p(f"enc.{k}.conv1.weight"), self._p(f"enc.{k}.conv1.bias"))
        z = self._relu_bn(z, f"enc.{k}.bn1")
        z = T.pointwise_linear(z, self._p(f"enc.{k}.conv2.weight"), self._p(f"enc.{k}.conv2.bias"))
        z = self._relu_bn(z, f"enc.{k}.bn2")
        z = T.zero_diagonal(z)
        if self.config.encoder_pool == "avg":
            # divisor n-1: the zeroed diagonal is left out
            return T.pool_over_axis(z, axis=-2, kind="avg", exclude_mask=np.eye(n, dtype=bool)[:, :, None])
        return T.pool_over_axis(z, axis=-2, kind="max")

    def encode(self, x) -> Tensor:
        """(B, n, d) -> (B, n, d + encoder_blocks * encoder_layer2_depth)."""
        with T.precision(self.config.precision):
            h = x if isinstance(x, Tensor) else Tensor(x)
            if h.ndim != 3 or h.shape[-1] != self.config.input_dim:
                raise T.ShapeError(f"encode expects (B, n, {self.config.input_dim}), got {h.shape}")
            if h.shape[1] < 2:
                raise SetTooSmallError(f"sets need at least 2 elements, got {h.shape[1]}")
            for k in range(self.config.encoder_blocks):
                h = T.concat([h, self.encoder_block(k, h)], axis=-1)
            return h

    # -- decoder ----------------------------------------------------------

    def source_target(self, enc: Tensor, prefix, steps: int, first_column: int = 0) -> Tensor:
        """Build the (B, n, steps - first_column, 2 d') source-target tensor.

        Column t pairs every element with the encoding of the element chosen
        at step t-1 (the start token at t=0). Cells of elements already
        emitted before column t are zero.
        """
        with T.precision(self.config.precision):
            batch, n, d = enc.shape
            prefix = np.asarray(prefix, dtype=np.int64).reshape(batch, -1)[:, : max(steps - 1, 0)]
            if prefix.shape[1] < steps - 1:
                raise InvalidPrefixError(f"{steps} columns need a prefix of length {steps - 1}, got {prefix.shape[1]}")
            _check_prefix(prefix, n)
            columns = np.arange(first_column, steps)
            width = len(columns)
            parts = []
            if first_column == 0:
                start = self._p("start_token").reshape(1, 1, d)
                parts.append(T.broadcast_over_axis(start, 0, batch))
                if steps > 1:
                    parts.append(T.gather_rows(enc, prefix))
            else:
                parts.append(T.gather_rows(enc, prefix[:, first_column - 1 :]))
            targets = parts[0] if len(parts) == 1 else T.concat(parts, axis=1)
            src = T.broadcast_over_axis(enc.reshape(batch, n, 1, d), 2, width)
            tgt = T.broadcast_over_axis(targets.reshape(batch, 1, width, d), 1, n)
            live = visited_mask(prefix, n, columns)[..., None]
            return T.concat([src, tgt], axis=-1) * live

    def decoder_block(self, k: int, s: Tensor) -> Tensor:
        """(B, n, T, D_k) -> (B, n, T, D_k + 2 * decoder_block_depth)."""
        conv = T.causal_conv_1x3(s, self._p(f"dec.{k}.conv.weight"), self._p(f"dec.{k}.conv.bias"))
        conv = self._relu_bn(conv, f"dec.{k}.bn")
        n = s.shape[1]
        pooled = T.broadcast_over_axis(T.pool_over_axis(conv, axis=1, kind="max", keepdims=True), 1, n)
        return T.concat([s, conv, pooled], axis=-1)

    def decode_logits(self, st: Tensor) -> Tensor:
        """(B, n, T, 2 d') -> logits (B, T, n)."""
        with T.precision(self.config.precision):
            h = st
            for k in range(self.config.decoder_blocks):
                h = self.decoder_block(k, h)
            out = T.pointwise_linear(h, self._p("out.weight"), self._p("out.bias"))
            batch, n, steps, _ = out.shape
            return out.reshape(batch, n, steps).transpose(0, 2, 1)

    # -- whole model ------------------------------------------------------

    def forward(self, x, target) -> Tensor:
        """Teacher-forced logits (B, n, n) for gold orders ``target`` (B, n)."""
        enc = self.encode(x)
        n = enc.shape[1]
        return self.decode_logits(self.source_target(enc, target, n))

    def loss(self, x, target) -> Tensor:
        """Mean per-step cross entropy against the gold orders."""
        logits = self.forward(x, target)
        with T.precision(self.config.precision):
            return T.masked_softmax_cross_entropy(logits, np.asarray(target, dtype=np.int64))

    # -- autoregressive interface ----------------------------------------

    def prepare(self, x: np.ndarray) -> np.ndarray:
        """Encode one set (n, d) in eval mode; returns (n, d') array."""
        x = np.asarray(x)
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise T.ShapeError(f"expected a set of shape (n, {self.config.input_dim}), got {x.shape}")
        with T.no_grad():
            was = self.training
            self.training = False
            try:
                return self.encode(x[None]).data[0]
            finally:
                self.training = was

    def next_logits(self, encoded: np.ndarray, prefixes, window: int | None = None) -> np.ndarray:
        """Logits (K, n) for the next element after each prefix in ``prefixes`` (K, t).

        With ``window`` set, only the trailing columns that can influence the
        last output are evaluated; eval-mode batch-norm makes this exact up
        to float rounding whenever ``window >= receptive_field``.
        """
        prefixes = np.asarray(prefixes, dtype=np.int64)
        if prefixes.ndim == 1:
            prefixes = prefixes[None]
        k, t = prefixes.shape
        steps = t + 1
        first = 0 if window is None else max(0, steps - window)
        with T.no_grad(), T.precision(self.config.precision):
            was = self.training
            self.training = False
            try:
                enc = Tensor(np.broadcast_to(encoded, (k,) + encoded.shape))
                st = self.source_target(enc, prefixes, steps, first_column=first)
                logits = self.decode_logits(st).data
            finally:
                self.training = was
        return logits[:, -1, :].astype(np.float64)

    def teacher_forced_logits(self, x: np.ndarray, order) -> np.ndarray:
        """Eval-mode logits (n, n) for one set and a full order."""
        with T.no_grad():
            was = self.training
            self.training = False
            try:
                return self.forward(np.asarray(x)[None], np.asarray(order)[None]).data[0].astype(np.float64)
            finally:
                self.training = was
