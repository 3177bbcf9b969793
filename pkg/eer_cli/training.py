"""Training and evaluation loops for the energy-entropy regularized objective."""

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import click
import numpy as np

from .data import TASK_MODES, generate_induction_batch
from .entropy import GateParams
from .errors import ConfigError, DomainError, NonFiniteError, NumericalAbort
from .losses import LOSS_POSITIONS, LossBreakdown, total_loss
from .metrics import MetricsRow
from .model import (
    EVAL_MODES,
    ModelWeights,
    SequenceBatch,
    correct_counts,
    init_weights,
    looped_forward,
)
from .optimizer import AdamState, optimizer_step
from .tensor import GradTape, backward

# Upper bound on B * L * L attention entries per evaluation chunk.
EVAL_CELL_BUDGET = 2_000_000


def _choices(options) -> str:
    return f"must be one of {', '.join(options)}"


@dataclass
class EERConfig:
    """Hyperparameters of one training run. Defaults follow the reference configuration."""

    lambda_p: float = 0.1
    lambda_k: float = 0.001
    lambda_s: float = 0.02
    q: float = 1.5
    eta: float = 0.0
    tau: float = 1.0
    d: int = 8
    d_ff: int = 32
    vocab: int = 4
    t_steps: int = 25
    lr: float = 1e-3
    weight_decay: float = 0.1
    batch_size: int = 32
    train_len_min: int = 16
    train_len_max: int = 64
    epochs: int = 20000
    seed: int = 0
    eval_lengths: Tuple[int, ...] = (10, 100, 1000)
    pe_scale: float = 0.15
    loss_positions: str = "last-iteration"
    ablation_ce_only: bool = False
    t_eval: int = 25
    eval_interval: int = 500
    eval_samples: int = 32
    eval_mode: str = "all"
    task_mode: str = "full-sequence"
    use_gate: bool = False
    gate_alpha_min: float = 0.2
    embed_init_scale: float = 0.1
    norm_gain_init: float = 0.0

    def __post_init__(self):
        self.eval_lengths = tuple(int(n) for n in self.eval_lengths)

    def validate(self) -> "EERConfig":
        """Check every field against its allowed range.

        Raises:
            ConfigError: Naming the first offending field in ``key``
        """
        checks = [
            ("q", 1.0 < self.q <= 2.0, "must lie in (1, 2]"),
            ("lambda_p", self.lambda_p >= 0, "must be >= 0"),
            ("lambda_k", self.lambda_k >= 0, "must be >= 0"),
            ("lambda_s", self.lambda_s >= 0, "must be >= 0"),
            ("tau", self.tau > 0, "must be positive"),
            ("d", self.d >= 2, "must be >= 2"),
            ("d_ff", self.d_ff >= 1, "must be >= 1"),
            ("vocab", self.vocab >= 2, "must be >= 2"),
            ("t_steps", self.t_steps >= 1, "must be >= 1"),
            ("t_eval", self.t_eval >= 1, "must be >= 1"),
            ("lr", self.lr > 0, "must be positive"),
            ("weight_decay", self.weight_decay >= 0, "must be >= 0"),
            ("batch_size", self.batch_size >= 1, "must be >= 1"),
            ("train_len_min", self.train_len_min >= 3, "must be >= 3"),
            ("train_len_max", self.train_len_min <= self.train_len_max, "must be >= train_len_min"),
            ("epochs", self.epochs >= 0, "must be >= 0"),
            ("eval_interval", self.eval_interval >= 1, "must be >= 1"),
            ("eval_samples", self.eval_samples >= 1, "must be >= 1"),
            ("eval_lengths", all(n >= 3 for n in self.eval_lengths), "must all be >= 3"),
            ("pe_scale", self.pe_scale >= 0, "must be >= 0"),
            ("loss_positions", self.loss_positions in LOSS_POSITIONS, _choices(LOSS_POSITIONS)),
            ("eval_mode", self.eval_mode in EVAL_MODES, _choices(EVAL_MODES)),
            ("task_mode", self.task_mode in TASK_MODES, _choices(TASK_MODES)),
            ("gate_alpha_min", 0 < self.gate_alpha_min <= 1, "must lie in (0, 1]"),
            ("embed_init_scale", self.embed_init_scale >= 0, "must be >= 0"),
            ("norm_gain_init", self.norm_gain_init >= 0, "must be >= 0"),
        ]
        for key, ok, message in checks:
            if not ok:
                raise ConfigError(f"{key} {message}", key=key)
        return self

    def initial_gain(self) -> float:
        """LayerNorm gain at initialization; ``norm_gain_init = 0`` picks ``1 / t_steps``."""
        return self.norm_gain_init or 1.0 / self.t_steps

    def gate_for(self, length: int) -> Optional[GateParams]:
        if not self.use_gate:
            return None
        return GateParams.for_length(length, self.q, self.gate_alpha_min)

    def to_dict(self) -> Dict[str, object]:
        values = asdict(self)
        values["eval_lengths"] = list(self.eval_lengths)
        return values


@dataclass
class TrainingResult:
    weights: ModelWeights
    history: List[MetricsRow] = field(default_factory=list)
    aborted: bool = False
    abort_reason: Optional[str] = None
    steps: int = 0


def _streams(seed: int) -> Tuple[np.random.Generator, np.random.Generator]:
    init_seq, data_seq = np.random.SeedSequence(seed).spawn(2)
    return (
        np.random.Generator(np.random.PCG64(init_seq)),
        np.random.Generator(np.random.PCG64(data_seq)),
    )


def _eval_rng(seed: int, length: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, length])))


def initial_weights(config: EERConfig) -> ModelWeights:
    init_rng, _ = _streams(config.seed)
    return init_weights(
        init_rng,
        config.d,
        config.d_ff,
        config.vocab,
        config.embed_init_scale,
        config.initial_gain(),
    )


def eval_chunk_size(length: int, samples: int) -> int:
    return max(1, min(samples, EVAL_CELL_BUDGET // (length * length)))


def evaluate(
    weights: ModelWeights,
    lengths: Sequence[int],
    samples: int = 32,
    t_eval: int = 25,
    seed: int = 0,
    config: Optional[EERConfig] = None,
) -> Dict[int, float]:
    """Accuracy at each length on freshly generated full-sequence batches.

    Each length draws ``samples`` sequences from a stream keyed on
    ``(seed, length)`` and runs them in chunks so ``B * L * L`` stays within
    ``EVAL_CELL_BUDGET``. Correct counts are pooled over chunks.

    Args:
        weights: Model weights
        lengths: Sequence lengths to evaluate
        samples: Sequences per length
        t_eval: Loop iterations
        seed: Evaluation seed
        config: Supplies temperature, positions, gate and eval mode; defaults otherwise

    Returns:
        Dict mapping length to accuracy
    """
    config = config or EERConfig(vocab=weights.vocab, d=weights.d, d_ff=weights.d_ff)
    results = {}
    for length in lengths:
        batch = generate_induction_batch(
            _eval_rng(seed, length), weights.vocab, samples, length, "full-sequence"
        )
        chunk = eval_chunk_size(length, samples)
        correct = scored = 0
        for start in range(0, samples, chunk):
            rows = slice(start, start + chunk)
            part = SequenceBatch(batch.tokens[rows], batch.targets[rows], batch.vocab)
            trace = looped_forward(
                part,
                weights,
                t_eval,
                temperature=config.tau,
                gate=config.gate_for(length),
                q=config.q,
                pe_scale=config.pe_scale,
                keep_history=False,
            )
            hits, total = correct_counts(trace, part, config.eval_mode)
            correct += hits
            scored += total
        if scored == 0:
            raise DomainError(f"no targets to score at length {length}")
        results[int(length)] = correct / scored
    return results


def _progress(row: MetricsRow) -> str:
    parts = [f"epoch {row.epoch}: total={row.total_loss:.4f}", f"task={row.task_loss:.4f}"]
    for name in ("acc_l10", "acc_l100", "acc_l1000"):
        value = getattr(row, name)
        if value is not None:
            parts.append(f"{name}={value:.3f}")
    return " ".join(parts)


def train(
    config: EERConfig,
    metrics_sink=None,
    checkpoint_sink=None,
    quiet: bool = False,
    weights: Optional[ModelWeights] = None,
) -> TrainingResult:
    """Run ``config.epochs`` optimizer steps, one fresh batch per step.

    Each step samples ``L`` uniformly from ``[train_len_min, train_len_max]``.
    At every ``eval_interval`` epochs and at the final epoch the current
    weights are evaluated and a ``MetricsRow`` is appended to the history and
    written to the sinks. A non-finite loss or evaluation stops the run: the result is
    flagged ``aborted`` and carries the last finite weights; the checkpoint
    sink keeps whatever it last wrote.

    Args:
        config: Run configuration
        metrics_sink: Object with ``write(MetricsRow)``
        checkpoint_sink: Object with ``write(ModelWeights, epoch)``
        quiet: Suppress progress lines on stderr
        weights: Starting weights, initialized from ``config.seed`` when omitted

    Returns:
        TrainingResult
    """
    config.validate()
    _, data_rng = _streams(config.seed)
    if weights is None:
        weights = initial_weights(config)
    result = TrainingResult(weights)
    if config.epochs == 0:
        return result

    state = AdamState()
    for epoch in range(config.epochs + 1):
        length = int(data_rng.integers(config.train_len_min, config.train_len_max + 1))
        batch = generate_induction_batch(
            data_rng, config.vocab, config.batch_size, length, config.task_mode
        )
        tape = GradTape()
        params = weights.as_tensors(tape)
        try:
            trace = looped_forward(
                batch,
                params,
                config.t_steps,
                temperature=config.tau,
                gate=config.gate_for(length),
                q=config.q,
                pe_scale=config.pe_scale,
            )
            loss = total_loss(trace, batch, config)
            if not math.isfinite(loss.total):
                raise NumericalAbort(f"non-finite loss {loss.total!r}", epoch)
            final = epoch == config.epochs
            row = None
            if epoch % config.eval_interval == 0 or final:
                row = _record(epoch, loss, weights, config)
        except (NonFiniteError, NumericalAbort) as e:
            result.aborted = True
            result.abort_reason = f"epoch {epoch}: {e}"
            click.echo(f"Warning: training aborted at epoch {epoch}: {e}", err=True)
            return result

        if row is not None:
            result.history.append(row)
            if metrics_sink is not None:
                metrics_sink.write(row)
            if checkpoint_sink is not None:
                checkpoint_sink.write(weights, epoch)
            if not quiet:
                click.echo(_progress(row), err=True)
        if final:
            break

        backward(loss.root)
        grads = {name: tensor.grad for name, tensor in params.items()}
        weights = optimizer_step(weights, grads, config.lr, config.weight_decay, state)
        result.weights = weights
        result.steps = state.t
    return result


def _record(
    epoch: int, loss: LossBreakdown, weights: ModelWeights, config: EERConfig
) -> MetricsRow:
    accuracy = evaluate(
        weights, config.eval_lengths, config.eval_samples, config.t_eval, config.seed + 1, config
    )
    return MetricsRow.from_eval(epoch, loss, accuracy)
