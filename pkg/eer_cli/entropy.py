"""Tsallis entropy and the attention contraction certificate."""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import click
import numpy as np

from .errors import DomainError
from .tensor import Tensor, seeded_rng

# Upper bound on the operator norm of the softmax Jacobian.
SOFTMAX_LIPSCHITZ = 0.5

STOCHASTIC_TOL = 1e-9
POWER_ITERATION_CAP = 1000
POWER_ITERATION_TOL = 1e-10
POWER_ITERATION_SEED = 0


def _as_array(value) -> np.ndarray:
    return np.asarray(value.data if isinstance(value, Tensor) else value, dtype=np.float64)


def validate_probability_row(p) -> np.ndarray:
    """Return ``p`` as a 1-D array after checking it lies on the simplex.

    Raises:
        DomainError: If an entry is negative or the entries do not sum to 1
    """
    row = _as_array(p).reshape(-1)
    if row.size == 0:
        raise DomainError("probability row is empty")
    if (row < 0).any():
        raise DomainError("probability row has a negative entry")
    if abs(row.sum() - 1.0) > STOCHASTIC_TOL:
        raise DomainError(f"probability row sums to {row.sum()!r}, not 1")
    return row


def validate_stochastic(s) -> np.ndarray:
    """Return ``s`` as a 2-D array after checking every row is a distribution.

    Raises:
        DomainError: If any row is not a probability vector
    """
    mat = _as_array(s)
    if mat.ndim != 2:
        raise DomainError(f"attention map must be 2-D, got {mat.ndim}-D")
    if (mat < 0).any():
        raise DomainError("attention map has a negative entry")
    sums = mat.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > STOCHASTIC_TOL)
    if bad.size:
        raise DomainError(f"attention row {int(bad[0])} sums to {sums[bad[0]]!r}, not 1")
    return mat


def _check_bound_range(q: float) -> None:
    if not 1.0 < q <= 2.0:
        raise DomainError(f"q must lie in (1, 2], got {q}")


def tsallis_entropy(p, q: float) -> float:
    """Tsallis entropy ``(1 - sum p_i^q) / (q - 1)``.

    The Boltzmann constant is fixed to 1. Zero-probability outcomes contribute
    nothing.

    Raises:
        DomainError: If ``q == 1`` (use ``shannon_entropy``) or ``p`` is invalid
    """
    if q == 1.0:
        raise DomainError("q = 1 is the Shannon limit; use shannon_entropy")
    row = validate_probability_row(p)
    support = row[row > 0]
    return float((1.0 - np.power(support, q).sum()) / (q - 1.0))


def shannon_entropy(p) -> float:
    """``-sum p_i ln p_i`` with ``0 ln 0 = 0``."""
    row = validate_probability_row(p)
    support = row[row > 0]
    return float(-(support * np.log(support)).sum())


def uniform_tsallis(n: int, q: float) -> float:
    """Tsallis entropy of the uniform distribution over ``n`` outcomes."""
    if n < 1:
        raise DomainError(f"need at least one outcome, got {n}")
    if q == 1.0:
        return math.log(n)
    return (1.0 - n ** (1.0 - q)) / (q - 1.0)


def row_tsallis(s, q: float) -> np.ndarray:
    """Tsallis entropy of every row of a row-stochastic map."""
    mat = validate_stochastic(s)
    return (1.0 - np.power(mat, q).sum(axis=1)) / (q - 1.0)


def mean_row_tsallis(s, q: float) -> float:
    return float(row_tsallis(s, q).mean())


def lemma_row_bound(p, q: float) -> Tuple[float, float]:
    """Both sides of ``||p||_2^2 <= (1 - (q-1) S_q(p))^(2/q)``.

    The right side equals ``(sum p_i^q)^(2/q)``.

    Returns:
        Tuple of (lhs, rhs)

    Raises:
        DomainError: If ``q`` is outside (1, 2] or ``p`` is invalid
    """
    _check_bound_range(q)
    row = validate_probability_row(p)
    lhs = float(np.dot(row, row))
    rhs = float(np.power(np.power(row, q).sum(), 2.0 / q))
    return lhs, rhs


def attention_frobenius_bound(s, q: float) -> Tuple[float, float]:
    """Squared Frobenius norm of an attention map and its entropy bound.

    Returns:
        Tuple of (``sum_i ||r_i||^2``, ``sum_i (1 - (q-1) S_q(r_i))^(2/q)``)
    """
    _check_bound_range(q)
    mat = validate_stochastic(s)
    fro_sq = float((mat * mat).sum())
    bound = float(np.power(np.power(mat, q).sum(axis=1), 2.0 / q).sum())
    return fro_sq, bound


@dataclass(frozen=True)
class SpectralEstimate:
    """Power-iteration estimate of a largest singular value."""

    value: float
    iterations: int
    converged: bool


def power_iteration(
    w, tol: float = POWER_ITERATION_TOL, max_iter: int = POWER_ITERATION_CAP
) -> SpectralEstimate:
    """Largest singular value of ``w`` by power iteration on ``w^T w``.

    The start vector is drawn from a fixed seed, so the estimate is
    deterministic. Iteration stops once the relative change of the estimate
    drops below ``tol``.
    """
    mat = _as_array(w)
    if mat.ndim != 2:
        raise DomainError("operator norm needs a matrix")
    if not np.isfinite(mat).all():
        raise DomainError("operator norm of a non-finite matrix")
    if not mat.any():
        return SpectralEstimate(0.0, 0, True)
    gram = mat.T @ mat
    v = seeded_rng(POWER_ITERATION_SEED).standard_normal(gram.shape[0])
    v /= np.linalg.norm(v)
    estimate = 0.0
    for iteration in range(1, max_iter + 1):
        u = gram @ v
        norm = np.linalg.norm(u)
        if norm == 0.0:
            # start vector landed in the null space; nudge it
            v = np.ones_like(v) / math.sqrt(v.size)
            continue
        v = u / norm
        current = float(math.sqrt(v @ gram @ v))
        if abs(current - estimate) <= tol * max(current, 1e-300):
            return SpectralEstimate(current, iteration, True)
        estimate = current
    return SpectralEstimate(estimate, max_iter, False)


def operator_norm(w, tol: float = POWER_ITERATION_TOL) -> float:
    """Spectral norm of ``w``; warns on stderr if the iteration cap was hit."""
    estimate = power_iteration(w, tol=tol)
    if not estimate.converged:
        click.echo(
            f"Warning: power iteration did not converge after {estimate.iterations} "
            f"iterations; best estimate {estimate.value!r}",
            err=True,
        )
    return estimate.value


@dataclass(frozen=True)
class ContractionCertificate:
    """Upper bound on the loop map's derivative and the k-step verdict."""

    wq_norm: float
    wk_norm: float
    wv_fro: float
    attn_term: float
    per_step_bound: float
    k: int
    k_power_bound: float
    contractive: bool
    q: float
    softmax_lipschitz: float = SOFTMAX_LIPSCHITZ
    norms_converged: bool = True

    def weight_term(self) -> float:
        return 4.0 * self.softmax_lipschitz * self.wq_norm * self.wk_norm

    def recomputed_bound(self) -> float:
        return (self.weight_term() + self.attn_term) * self.wv_fro

    def as_dict(self) -> Dict[str, object]:
        return {
            "wq_norm": self.wq_norm,
            "wk_norm": self.wk_norm,
            "wv_fro": self.wv_fro,
            "attn_term": self.attn_term,
            "per_step_bound": self.per_step_bound,
            "k": self.k,
            "k_power_bound": self.k_power_bound,
            "contractive": self.contractive,
            "q": self.q,
            "softmax_lipschitz": self.softmax_lipschitz,
            "norms_converged": self.norms_converged,
        }


def _attention_term(s, q: float, worst_case: bool) -> float:
    if worst_case:
        return math.sqrt(_as_array(s).shape[0])
    _, bound = attention_frobenius_bound(s, q)
    return math.sqrt(bound)


def _power_bound(per_step: float, k: int) -> float:
    try:
        return per_step**k
    except OverflowError:
        return math.inf


def contraction_certificate(
    weights, s, q: float, k: int, worst_case: bool = False
) -> ContractionCertificate:
    """Certify the k-step contraction of the single-head attention loop.

    Evaluates ``(4 L_softmax ||W_Q|| ||W_K|| + sqrt(sum_i (1 - (q-1) S_q(r_i))^(2/q))) ||W_V||_F``
    on the supplied attention map, and compares its k-th power with 1.

    Args:
        weights: Object exposing ``w_q``, ``w_k``, ``w_v`` arrays
        s: Row-stochastic ``n x n`` attention map
        q: Tsallis index in (1, 2]
        k: Loop count, at least 1
        worst_case: Replace the attention term by its one-hot envelope ``sqrt(n)``

    Returns:
        ContractionCertificate
    """
    _check_bound_range(q)
    if k < 1:
        raise DomainError(f"loop count must be at least 1, got {k}")
    validate_stochastic(s)
    q_est = power_iteration(weights.w_q)
    k_est = power_iteration(weights.w_k)
    for label, estimate in (("W_Q", q_est), ("W_K", k_est)):
        if not estimate.converged:
            click.echo(
                f"Warning: {label} norm estimate did not converge; using {estimate.value!r}",
                err=True,
            )
    wv_fro = float(np.linalg.norm(_as_array(weights.w_v)))
    attn_term = _attention_term(s, q, worst_case)
    weight_term = 4.0 * SOFTMAX_LIPSCHITZ * q_est.value * k_est.value
    per_step = (weight_term + attn_term) * wv_fro
    k_power = _power_bound(per_step, k)
    return ContractionCertificate(
        wq_norm=q_est.value,
        wk_norm=k_est.value,
        wv_fro=wv_fro,
        attn_term=attn_term,
        per_step_bound=per_step,
        k=k,
        k_power_bound=k_power,
        contractive=k_power < 1.0,
        q=q,
        norms_converged=q_est.converged and k_est.converged,
    )


@dataclass(frozen=True)
class TrajectoryCertificate:
    """Certificates for each loop iteration and their product."""

    per_iteration: List[ContractionCertificate] = field(default_factory=list)
    product_bound: float = 1.0

    @property
    def contractive(self) -> bool:
        return self.product_bound < 1.0

    @property
    def k(self) -> int:
        return len(self.per_iteration)


def certify_trajectory(
    weights, maps: Sequence, q: float, worst_case: bool = False
) -> TrajectoryCertificate:
    """Certify a loop run from the attention map of each iteration.

    Each map yields a one-step bound; the k-loop test uses their product
    because the attention changes from one iteration to the next.
    """
    if not maps:
        raise DomainError("need at least one attention map")
    certificates = [
        contraction_certificate(weights, s, q, 1, worst_case=worst_case) for s in maps
    ]
    product = 1.0
    for certificate in certificates:
        product *= certificate.per_step_bound
    return TrajectoryCertificate(certificates, product)


@dataclass(frozen=True)
class GateParams:
    """Entropy gate: linear ramp from ``alpha_min`` to 1 at ``saturation_entropy``."""

    alpha_min: float = 0.2
    saturation_entropy: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.alpha_min <= 1.0:
            raise DomainError(f"alpha_min must lie in (0, 1], got {self.alpha_min}")
        if not self.saturation_entropy > 0.0:
            raise DomainError("saturation_entropy must be positive")

    @classmethod
    def for_length(cls, length: int, q: float, alpha_min: float = 0.2) -> "GateParams":
        """Gate that saturates at the entropy of a uniform row over ``length`` keys."""
        return cls(alpha_min=alpha_min, saturation_entropy=uniform_tsallis(length, q))


def entropy_gate(s_q: float, params: GateParams) -> float:
    """Residual step size ``alpha(S_q)``.

    Positive, non-decreasing in ``S_q``, at most 1, and exactly 1 once
    ``S_q >= saturation_entropy``.
    """
    if s_q < 0:
        raise DomainError(f"entropy must be non-negative, got {s_q}")
    if s_q >= params.saturation_entropy:
        return 1.0
    return params.alpha_min + (1.0 - params.alpha_min) * s_q / params.saturation_entropy
