"""Induction-head sequence generation."""

import numpy as np

from .errors import DomainError
from .model import SENTINEL, SequenceBatch

TASK_MODES = ("full-sequence", "last-token")


def induction_targets(tokens: np.ndarray, vocab: int) -> np.ndarray:
    """Most-recent-occurrence targets for a ``B x L`` token grid.

    Position ``t`` whose token last appeared at ``j < t`` gets ``tokens[j + 1]``;
    positions seeing their token for the first time get ``SENTINEL``.
    """
    grid = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
    batch, length = grid.shape
    targets = np.full(grid.shape, SENTINEL, dtype=np.int64)
    last_seen = np.full((batch, vocab), -1, dtype=np.int64)
    rows = np.arange(batch)
    for t in range(length):
        current = grid[:, t]
        previous = last_seen[rows, current]
        seen = previous >= 0
        targets[seen, t] = grid[rows[seen], previous[seen] + 1]
        last_seen[rows, current] = t
    return targets


def generate_induction_batch(
    rng: np.random.Generator, vocab: int, batch: int, length: int, mode: str = "full-sequence"
) -> SequenceBatch:
    """Draw a batch of induction-head sequences.

    Args:
        rng: Random stream
        vocab: Vocabulary size, at least 2
        batch: Number of sequences, at least 1
        length: Sequence length, at least 3
        mode: ``"full-sequence"`` labels every repeated token; ``"last-token"``
            copies a random earlier token to the final position, re-draws any
            later copies of it, and labels only the final position with the
            token after the cue

    Returns:
        SequenceBatch

    Raises:
        DomainError: If a dimension is out of range or the mode is unknown
    """
    if vocab < 2:
        raise DomainError(f"vocab must be at least 2, got {vocab}")
    if batch < 1:
        raise DomainError(f"batch must be at least 1, got {batch}")
    if length < 3:
        raise DomainError(f"length must be at least 3, got {length}")
    if mode not in TASK_MODES:
        raise DomainError(f"unknown task mode '{mode}'")

    tokens = rng.integers(0, vocab, size=(batch, length), dtype=np.int64)
    if mode == "full-sequence":
        return SequenceBatch(tokens, induction_targets(tokens, vocab), vocab)

    rows = np.arange(batch)
    cue = rng.integers(0, length - 1, size=batch)
    shifts = rng.integers(1, vocab, size=tokens.shape)
    cue_token = tokens[rows, cue]
    # the cue stays the most recent earlier copy of the final token
    later = (np.arange(length) > cue[:, None]) & (tokens == cue_token[:, None])
    tokens = np.where(later, (tokens + shifts) % vocab, tokens)
    tokens[:, -1] = cue_token
    targets = np.full(tokens.shape, SENTINEL, dtype=np.int64)
    targets[:, -1] = tokens[rows, cue + 1]
    return SequenceBatch(tokens, targets, vocab)
