"""Single-head looped Transformer.

A batch of ``B`` sequences of length ``L`` is carried as one ``(B*L) x d``
matrix; attention only mixes rows of the same sequence (``block = L``).
"""

import math
from dataclasses import dataclass, field, fields, replace
from typing import Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from .entropy import GateParams, entropy_gate, row_tsallis
from .errors import DomainError, ShapeError
from .tensor import (
    GradTape,
    Tensor,
    add,
    block_matmul,
    block_matmul_nt,
    gather_rows,
    gelu,
    matmul,
    mean_rows,
    mul,
    power,
    row_softmax,
    scale,
    sub,
)

SENTINEL = -1
LAYER_NORM_EPS = 1e-5
POSITION_BASE = 10000.0

UPDATE_MODES = ("block", "map")
EVAL_MODES = ("all", "last")


@dataclass
class ModelWeights:
    """Every trainable array of the looped model."""

    embed: np.ndarray
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    mlp_in: np.ndarray
    mlp_in_bias: np.ndarray
    mlp_out: np.ndarray
    mlp_out_bias: np.ndarray
    norm_gain: np.ndarray
    norm_bias: np.ndarray
    readout: np.ndarray

    def __post_init__(self):
        for name in self.names():
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        self.validate()

    @staticmethod
    def names() -> Tuple[str, ...]:
        return tuple(f.name for f in fields(ModelWeights))

    @property
    def d(self) -> int:
        return self.w_q.shape[0]

    @property
    def d_ff(self) -> int:
        return self.mlp_in.shape[1]

    @property
    def vocab(self) -> int:
        return self.embed.shape[0]

    def validate(self) -> None:
        """Check shapes against ``d``, ``d_ff`` and ``vocab`` and that entries are finite.

        Raises:
            ShapeError: If a field has the wrong shape
            DomainError: If a field has non-finite entries
        """
        expected = expected_shapes(self.w_q.shape[0], self.mlp_in.shape[-1], self.embed.shape[0])
        for name, shape in expected.items():
            value = getattr(self, name)
            if value.shape != shape:
                raise ShapeError(name, value.shape, shape)
            if not np.isfinite(value).all():
                raise DomainError(f"weight '{name}' has non-finite entries")

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.names()}

    def as_tensors(self, tape: Optional[GradTape] = None) -> Dict[str, Tensor]:
        """Wrap every field as a tensor; tracked leaves when a tape is given."""
        if tape is None:
            return {name: Tensor(value, name=name) for name, value in self.arrays().items()}
        return {name: tape.watch(value, name=name) for name, value in self.arrays().items()}

    def replace(self, **changes) -> "ModelWeights":
        return replace(self, **changes)

    def copy(self) -> "ModelWeights":
        return ModelWeights(**{name: value.copy() for name, value in self.arrays().items()})

    @classmethod
    def zeros(cls, d: int, d_ff: int, vocab: int) -> "ModelWeights":
        shapes = expected_shapes(d, d_ff, vocab)
        return cls(**{name: np.zeros(shape) for name, shape in shapes.items()})


def expected_shapes(d: int, d_ff: int, vocab: int) -> Dict[str, Tuple[int, int]]:
    """Shape of every ``ModelWeights`` field."""
    return {
        "embed": (vocab, d),
        "w_q": (d, d),
        "w_k": (d, d),
        "w_v": (d, d),
        "mlp_in": (d, d_ff),
        "mlp_in_bias": (1, d_ff),
        "mlp_out": (d_ff, d),
        "mlp_out_bias": (1, d),
        "norm_gain": (1, d),
        "norm_bias": (1, d),
        "readout": (d, vocab),
    }


def init_weights(
    rng: np.random.Generator,
    d: int = 8,
    d_ff: int = 32,
    vocab: int = 4,
    embed_scale: float = 0.1,
    norm_gain: float = 1.0,
) -> ModelWeights:
    """Centered uniform initialization.

    Matrices draw from ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``, embeddings from
    ``U(-embed_scale, embed_scale)``; biases start at zero and every entry of
    the norm gain at ``norm_gain``.
    """
    shapes = expected_shapes(d, d_ff, vocab)

    def uniform(name: str) -> np.ndarray:
        shape = shapes[name]
        bound = 1.0 / math.sqrt(shape[0])
        return rng.uniform(-bound, bound, size=shape)

    return ModelWeights(
        embed=rng.uniform(-embed_scale, embed_scale, size=shapes["embed"]),
        w_q=uniform("w_q"),
        w_k=uniform("w_k"),
        w_v=uniform("w_v"),
        mlp_in=uniform("mlp_in"),
        mlp_in_bias=np.zeros(shapes["mlp_in_bias"]),
        mlp_out=uniform("mlp_out"),
        mlp_out_bias=np.zeros(shapes["mlp_out_bias"]),
        norm_gain=np.full(shapes["norm_gain"], float(norm_gain)),
        norm_bias=np.zeros(shapes["norm_bias"]),
        readout=uniform("readout"),
    )


WeightsLike = Union[ModelWeights, Mapping[str, Tensor]]


def _params(weights: WeightsLike) -> Mapping[str, Tensor]:
    if isinstance(weights, ModelWeights):
        return weights.as_tensors()
    return weights


@dataclass
class SequenceBatch:
    """Token grid with per-position induction targets (``SENTINEL`` = no target)."""

    tokens: np.ndarray
    targets: np.ndarray
    vocab: int

    def __post_init__(self):
        self.tokens = np.atleast_2d(np.asarray(self.tokens, dtype=np.int64))
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=np.int64))
        if self.tokens.shape != self.targets.shape:
            raise ShapeError("sequence batch", self.tokens.shape, self.targets.shape)
        if self.tokens.size and (self.tokens.min() < 0 or self.tokens.max() >= self.vocab):
            raise DomainError(f"token outside [0, {self.vocab})")
        labelled = self.targets[self.targets != SENTINEL]
        if labelled.size and (labelled.min() < 0 or labelled.max() >= self.vocab):
            raise DomainError(f"target outside [0, {self.vocab})")

    @property
    def batch_size(self) -> int:
        return self.tokens.shape[0]

    @property
    def length(self) -> int:
        return self.tokens.shape[1]

    @property
    def lengths(self) -> List[int]:
        return [self.length] * self.batch_size

    def flat_targets(self) -> np.ndarray:
        return self.targets.reshape(-1)


@dataclass
class LoopTrace:
    """Iterates, attention maps and logits of one looped forward pass."""

    z_per_iter: List[Tensor]
    attn_per_iter: List[Tensor]
    final_logits: Tensor
    block: int
    gate_alphas: List[np.ndarray] = field(default_factory=list)

    @property
    def t_steps(self) -> int:
        return len(self.attn_per_iter)

    @property
    def final_state(self) -> Tensor:
        return self.z_per_iter[-1]

    @property
    def final_map(self) -> Tensor:
        return self.attn_per_iter[-1]


def sinusoidal_positions(length: int, d: int) -> np.ndarray:
    """Interleaved sin/cos position table, ``length x d``.

    Column ``2k`` holds ``sin(i / 10000^(2k/d))`` and column ``2k+1`` the cosine.
    """
    positions = np.arange(length, dtype=np.float64)[:, None]
    pairs = np.arange(0, d, 2, dtype=np.float64)
    angles = positions / np.power(POSITION_BASE, pairs / d)
    table = np.zeros((length, d))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)[:, : d // 2]
    return table


def embed_sequence(tokens, weights: WeightsLike, pe_scale: float = 0.15) -> Tensor:
    """Token embeddings plus scaled sinusoidal positions.

    Args:
        tokens: One sequence (length ``L``) or a ``B x L`` grid
        weights: Model weights
        pe_scale: Position encoding factor

    Returns:
        ``(B*L) x d`` tensor, sequences stacked in order
    """
    params = _params(weights)
    grid = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
    table = params["embed"]
    batch, length = grid.shape
    if grid.size and (grid.min() < 0 or grid.max() >= table.rows):
        raise DomainError(f"token outside [0, {table.rows})")
    raw = gather_rows(table, grid.reshape(-1))
    positions = np.tile(sinusoidal_positions(length, table.cols), (batch, 1))
    return add(raw, Tensor(pe_scale * positions))


def attention_operator(
    h: Tensor, weights: WeightsLike, temperature: float = 1.0, block: Optional[int] = None
) -> Tuple[Tensor, Tensor]:
    """``softmax(h W_Q (h W_K)^T / (tau sqrt(d))) h W_V`` per sequence.

    Args:
        h: ``(B*L) x d`` input
        weights: Model weights
        temperature: Softmax temperature ``tau``
        block: Sequence length ``L``; defaults to the full row count

    Returns:
        Tuple of (output ``(B*L) x d``, attention map ``(B*L) x L``)
    """
    params = _params(weights)
    block = h.rows if block is None else block
    d = params["w_q"].rows
    queries = matmul(h, params["w_q"])
    keys = matmul(h, params["w_k"])
    values = matmul(h, params["w_v"])
    logits = scale(block_matmul_nt(queries, keys, block), 1.0 / math.sqrt(d))
    attn = row_softmax(logits, temperature)
    return block_matmul(attn, values, block), attn


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Per-row normalization to zero mean and unit variance, then gain and bias."""
    centered = sub(x, mean_rows(x))
    variance = mean_rows(mul(centered, centered))
    inv_std = power(add(variance, Tensor(eps)), -0.5)
    return add(mul(mul(centered, inv_std), gain), bias)


def mlp(a: Tensor, weights: WeightsLike) -> Tensor:
    params = _params(weights)
    hidden = gelu(add(matmul(a, params["mlp_in"]), params["mlp_in_bias"]))
    return add(matmul(hidden, params["mlp_out"]), params["mlp_out_bias"])


def loop_block(
    h: Tensor, weights: WeightsLike, temperature: float = 1.0, block: Optional[int] = None
) -> Tuple[Tensor, Tensor]:
    """``LayerNorm(MLP(A) + A)`` with ``A`` the attention output of ``h``.

    Returns:
        Tuple of (delta to add to the latent state, attention map)
    """
    params = _params(weights)
    attended, attn = attention_operator(h, params, temperature, block)
    mixed = add(mlp(attended, params), attended)
    return layer_norm(mixed, params["norm_gain"], params["norm_bias"]), attn


def _gate_column(attn: Tensor, block: int, gate: GateParams, q: float) -> np.ndarray:
    entropies = row_tsallis(attn.data, q).reshape(-1, block).mean(axis=1)
    alphas = np.array([entropy_gate(max(0.0, float(s)), gate) for s in entropies])
    return alphas


def looped_forward(
    batch: SequenceBatch,
    weights: WeightsLike,
    t_steps: int,
    temperature: float = 1.0,
    gate: Optional[GateParams] = None,
    q: float = 1.5,
    pe_scale: float = 0.15,
    update: str = "block",
    keep_history: bool = True,
    z0: Optional[np.ndarray] = None,
) -> LoopTrace:
    """Run ``Z_{t+1} = Z_t + alpha_t * step_t`` for ``t_steps`` iterations from ``Z_0``.

    ``update="block"`` steps by the block output ``LayerNorm(MLP(A) + A)`` of
    ``Z_t + X``. ``update="map"`` steps by ``F(X + Z_t) - Z_t`` with ``F`` the
    bare attention operator. Without a gate ``alpha_t = 1``; with one, each
    sequence uses ``entropy_gate`` of its mean row Tsallis entropy (the gate
    value is treated as a constant by the gradient).

    Args:
        batch: Token grid
        weights: Model weights, or tracked tensors from ``ModelWeights.as_tensors``
        t_steps: Number of iterations, at least 1
        temperature: Attention temperature
        gate: Optional entropy gate
        q: Tsallis index used by the gate
        pe_scale: Position encoding factor
        update: ``"block"`` or ``"map"``
        keep_history: When False only ``Z_0``, ``Z_T`` and the last map are kept
        z0: Initial latent state, zero when omitted

    Returns:
        LoopTrace
    """
    if t_steps < 1:
        raise DomainError(f"t_steps must be at least 1, got {t_steps}")
    if update not in UPDATE_MODES:
        raise DomainError(f"unknown update mode '{update}'")
    params = _params(weights)
    x = embed_sequence(batch.tokens, params, pe_scale)
    block = batch.length
    z = Tensor(np.zeros(x.shape) if z0 is None else z0)
    if z.shape != x.shape:
        raise ShapeError("initial state", z.shape, x.shape)
    states = [z]
    maps: List[Tensor] = []
    alphas: List[np.ndarray] = []
    for _ in range(t_steps):
        h = add(z, x)
        if update == "block":
            step, attn = loop_block(h, params, temperature, block)
        else:
            attended, attn = attention_operator(h, params, temperature, block)
            step = sub(attended, z)
        if gate is not None:
            alpha = _gate_column(attn, block, gate, q)
            alphas.append(alpha)
            step = mul(step, Tensor(np.repeat(alpha, block)[:, None]))
        z = add(z, step)
        if keep_history:
            states.append(z)
            maps.append(attn)
        else:
            maps = [attn]
    if not keep_history:
        states.append(z)
    logits = matmul(z, params["readout"])
    return LoopTrace(states, maps, logits, block, alphas)


def correct_counts(trace: LoopTrace, batch: SequenceBatch, mode: str = "all") -> Tuple[int, int]:
    """Number of correct argmax predictions and of scored positions.

    ``mode="all"`` scores every position with a target; ``mode="last"`` only
    the final position of each sequence.
    """
    if mode not in EVAL_MODES:
        raise DomainError(f"unknown eval mode '{mode}'")
    logits = trace.final_logits.data
    if logits.shape[0] != batch.tokens.size:
        raise ShapeError("accuracy", logits.shape, batch.tokens.shape)
    targets = batch.targets
    if mode == "last":
        rows = np.arange(batch.batch_size) * batch.length + batch.length - 1
        wanted = targets[:, -1]
    else:
        rows = np.arange(targets.size)
        wanted = targets.reshape(-1)
    valid = wanted != SENTINEL
    predictions = logits[rows[valid]].argmax(axis=1)
    return int((predictions == wanted[valid]).sum()), int(valid.sum())


def predict_accuracy(trace: LoopTrace, batch: SequenceBatch, mode: str = "all") -> float:
    """Fraction of scored positions whose argmax logit equals the target.

    Raises:
        DomainError: If no position carries a target
    """
    correct, total = correct_counts(trace, batch, mode)
    if total == 0:
        raise DomainError("no targets to score")
    return correct / total
