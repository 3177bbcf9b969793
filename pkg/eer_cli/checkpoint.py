"""Versioned checkpoint container for model weights.

A checkpoint is an ``.npz`` archive holding one array per ``ModelWeights``
field plus ``header``, a YAML document with the format version, the model
dims and an echo of the run configuration.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np
import yaml

from .errors import CheckpointError, EERError
from .model import ModelWeights

CHECKPOINT_VERSION = 1
HEADER_KEY = "header"
LATEST_NAME = "latest.npz"


@dataclass
class Checkpoint:
    weights: ModelWeights
    version: int = CHECKPOINT_VERSION
    config: Dict[str, Any] = field(default_factory=dict)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return self.weights.d, self.weights.d_ff, self.weights.vocab


def _header(weights: ModelWeights, config: Optional[Mapping[str, Any]]) -> str:
    return yaml.safe_dump(
        {
            "version": CHECKPOINT_VERSION,
            "dims": {"d": weights.d, "d_ff": weights.d_ff, "vocab": weights.vocab},
            "config": dict(config or {}),
        },
        sort_keys=False,
    )


def save_checkpoint(
    path: Union[str, Path], weights: ModelWeights, config: Optional[Mapping[str, Any]] = None
) -> Path:
    """Write ``weights`` and the header to ``path``.

    Args:
        path: Destination file; written as given, no suffix is appended
        weights: Weights to store
        config: Flat run configuration to echo in the header

    Returns:
        The written path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        np.savez(f, **weights.arrays(), **{HEADER_KEY: np.array(_header(weights, config))})
    return path


def load_checkpoint(
    path: Union[str, Path], expected_dims: Optional[Tuple[int, int, int]] = None
) -> Checkpoint:
    """Read a checkpoint written by ``save_checkpoint``.

    Args:
        path: Checkpoint file
        expected_dims: Optional ``(d, d_ff, vocab)`` the weights must match

    Returns:
        Checkpoint

    Raises:
        CheckpointError: If the file is unreadable, the version is unknown, a
            field is missing, or the shapes disagree with the header or
            ``expected_dims``
    """
    try:
        with np.load(path, allow_pickle=False) as archive:
            if HEADER_KEY not in archive.files:
                raise CheckpointError(f"{path}: missing header")
            header = yaml.safe_load(str(archive[HEADER_KEY][()]))
            missing = [name for name in ModelWeights.names() if name not in archive.files]
            if missing:
                raise CheckpointError(f"{path}: missing arrays {', '.join(missing)}")
            arrays = {name: archive[name] for name in ModelWeights.names()}
    except (OSError, ValueError, yaml.YAMLError) as e:
        raise CheckpointError(f"{path}: cannot read checkpoint ({e})") from e

    if not isinstance(header, dict) or header.get("version") != CHECKPOINT_VERSION:
        version = header.get("version") if isinstance(header, dict) else None
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {version!r}, expected {CHECKPOINT_VERSION}"
        )
    try:
        weights = ModelWeights(**arrays)
    except EERError as e:
        raise CheckpointError(f"{path}: {e}") from e

    dims = header.get("dims", {})
    stored = (dims.get("d"), dims.get("d_ff"), dims.get("vocab"))
    actual = (weights.d, weights.d_ff, weights.vocab)
    if stored != actual:
        raise CheckpointError(f"{path}: header dims {stored} disagree with arrays {actual}")
    if expected_dims is not None and tuple(expected_dims) != actual:
        raise CheckpointError(
            f"{path}: checkpoint dims {actual} do not match expected {tuple(expected_dims)}"
        )
    return Checkpoint(weights, header["version"], header.get("config") or {})


class CheckpointWriter:
    """Writes ``epoch_NNNNNN.npz`` plus a ``latest.npz`` copy into a directory."""

    def __init__(self, directory: Union[str, Path], config: Optional[Mapping[str, Any]] = None):
        self.directory = Path(directory)
        self.config = dict(config or {})
        self.last_path: Optional[Path] = None

    def write(self, weights: ModelWeights, epoch: int) -> Path:
        path = save_checkpoint(self.directory / f"epoch_{epoch:06d}.npz", weights, self.config)
        save_checkpoint(self.directory / LATEST_NAME, weights, self.config)
        self.last_path = path
        return path
