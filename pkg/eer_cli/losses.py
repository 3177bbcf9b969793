"""Energy-entropy regularized objective.

``total = task + lambda_p * potential + lambda_k * kinetic + lambda_s * entropy``
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np

from .errors import DomainError
from .model import SENTINEL, LoopTrace, SequenceBatch
from .tensor import (
    Tensor,
    absolute,
    add,
    log,
    log_softmax,
    mean,
    pick,
    power,
    row_max,
    row_norm,
    scale,
    sub,
    sum_rows,
)

LOSS_POSITIONS = ("last-iteration", "all-iterations")

Maps = Union[Tensor, Sequence[Tensor]]


def _map_list(attn: Maps) -> List[Tensor]:
    maps = [attn] if isinstance(attn, Tensor) else list(attn)
    if not maps:
        raise DomainError("need at least one attention map")
    return maps


def _average(terms: List[Tensor]) -> Tensor:
    acc = terms[0]
    for term in terms[1:]:
        acc = add(acc, term)
    return scale(acc, 1.0 / len(terms))


def select_maps(trace: LoopTrace, positions: str = "last-iteration") -> List[Tensor]:
    """Attention maps the regularizers read: the final one, or every iteration's."""
    if positions not in LOSS_POSITIONS:
        raise DomainError(f"unknown loss positions '{positions}'")
    if positions == "last-iteration":
        return [trace.final_map]
    return list(trace.attn_per_iter)


def task_loss(trace: LoopTrace, batch: SequenceBatch) -> Tensor:
    """Mean cross-entropy of ``final_logits`` over positions that carry a target.

    Raises:
        DomainError: If no position carries a target
    """
    targets = batch.flat_targets()
    if trace.final_logits.rows != targets.size:
        raise DomainError(
            f"trace has {trace.final_logits.rows} rows but batch has {targets.size} positions"
        )
    rows = np.flatnonzero(targets != SENTINEL)
    if rows.size == 0:
        raise DomainError("no targets to score")
    picked = pick(log_softmax(trace.final_logits), rows, targets[rows])
    return scale(mean(picked), -1.0)


def kinetic_loss(trace: LoopTrace) -> Tensor:
    """Half the mean Euclidean norm of the per-token displacement ``Z_T - Z_0``."""
    displacement = sub(trace.final_state, trace.z_per_iter[0])
    return scale(mean(row_norm(displacement)), 0.5)


def potential_loss(attn: Maps) -> Tensor:
    """Mean over query rows of ``-log max_j p_j``, averaged over the given maps."""
    terms = [scale(mean(log(row_max(m))), -1.0) for m in _map_list(attn)]
    return _average(terms)


def mean_entropy(attn: Maps, q: float) -> Tensor:
    """Mean row Tsallis entropy, averaged over the given maps."""
    if not 1.0 < q <= 2.0:
        raise DomainError(f"q must lie in (1, 2], got {q}")
    terms = []
    for m in _map_list(attn):
        mass = mean(sum_rows(power(m, q)))
        terms.append(scale(sub(Tensor(1.0), mass), 1.0 / (q - 1.0)))
    return _average(terms)


def entropy_loss(attn: Maps, q: float, eta: float) -> Tensor:
    """``|mean S_q - eta|``."""
    return absolute(sub(mean_entropy(attn, q), Tensor(eta)))


@dataclass(frozen=True)
class LossBreakdown:
    """Scalar loss components and the weights that combined them."""

    task: float
    kinetic: float
    potential: float
    entropy: float
    total: float
    lambda_p: float = 0.0
    lambda_k: float = 0.0
    lambda_s: float = 0.0
    mean_entropy: float = 0.0
    kinetic_sum: float = 0.0
    root: Optional[Tensor] = field(default=None, compare=False, repr=False)

    def recomputed_total(self) -> float:
        return (
            self.task
            + self.lambda_p * self.potential
            + self.lambda_k * self.kinetic
            + self.lambda_s * self.entropy
        )


def loss_weights(config):
    """``(lambda_p, lambda_k, lambda_s)``, all zero for the cross-entropy ablation."""
    if config.ablation_ce_only:
        return 0.0, 0.0, 0.0
    return config.lambda_p, config.lambda_k, config.lambda_s


def total_loss(trace: LoopTrace, batch: SequenceBatch, config) -> LossBreakdown:
    """Weighted objective of one forward pass.

    Args:
        trace: Forward pass over ``batch``
        batch: Sequences with targets
        config: Object carrying ``lambda_p``, ``lambda_k``, ``lambda_s``, ``q``,
            ``eta``, ``loss_positions`` and ``ablation_ce_only``

    Returns:
        LossBreakdown; ``root`` is the 1x1 total for ``backward``
    """
    lambda_p, lambda_k, lambda_s = loss_weights(config)
    maps = select_maps(trace, config.loss_positions)

    task = task_loss(trace, batch)
    kinetic = kinetic_loss(trace)
    potential = potential_loss(maps)
    entropy_mean = mean_entropy(maps, config.q)
    entropy = absolute(sub(entropy_mean, Tensor(config.eta)))

    root = task
    for weight, term in ((lambda_p, potential), (lambda_k, kinetic), (lambda_s, entropy)):
        if weight:
            root = add(root, scale(term, weight))

    return LossBreakdown(
        task=task.item(),
        kinetic=kinetic.item(),
        potential=potential.item(),
        entropy=entropy.item(),
        total=root.item(),
        lambda_p=lambda_p,
        lambda_k=lambda_k,
        lambda_s=lambda_s,
        mean_entropy=entropy_mean.item(),
        kinetic_sum=kinetic.item() * batch.tokens.size,
        root=root,
    )
