"""
Checkpoint persistence for pretrained models.
A checkpoint is one JSON document validated by pydantic; writes are atomic.
"""

import logging
import os
from pathlib import Path
from typing import Annotated, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from .exceptions import (
    CheckpointDecodeError,
    MissingCheckpointError,
)
from .models import ArchitectureSpec, NormKind
from .network import Dense, Layer, ModelState, ReLU, build_model
from .normalization import NormalizationLayer

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


class DenseRecord(BaseModel):
    type: Literal["dense"] = "dense"
    weight: List[List[float]]
    bias: List[float]


class NormRecord(BaseModel):
    type: Literal["norm"] = "norm"
    kind: NormKind
    gamma: List[float]
    beta: List[float]
    running_mean: Optional[List[float]] = None
    running_var: Optional[List[float]] = None
    eps: float
    momentum: float
    r_max: float
    d_max: float
    groups: int


class ReluRecord(BaseModel):
    type: Literal["relu"] = "relu"


LayerRecord = Annotated[
    Union[DenseRecord, NormRecord, ReluRecord], Field(discriminator="type")
]


class CheckpointDocument(BaseModel):
    """On-disk checkpoint layout."""

    format_version: int
    architecture: ArchitectureSpec
    layers: List[LayerRecord]
    source_accuracy: Optional[float] = None


def _to_list(arr: Optional[np.ndarray]) -> Optional[List[float]]:
    return None if arr is None else arr.tolist()


def _encode_layer(layer: Layer) -> Union[DenseRecord, NormRecord, ReluRecord]:
    if isinstance(layer, Dense):
        return DenseRecord(weight=layer.weight.tolist(), bias=layer.bias.tolist())
    if isinstance(layer, NormalizationLayer):
        return NormRecord(
            kind=layer.kind,
            gamma=layer.gamma.tolist(),
            beta=layer.beta.tolist(),
            running_mean=_to_list(layer.running_mean),
            running_var=_to_list(layer.running_var),
            eps=layer.eps,
            momentum=layer.momentum,
            r_max=layer.r_max,
            d_max=layer.d_max,
            groups=layer.groups,
        )
    return ReluRecord()


def _decode_layer(record: Union[DenseRecord, NormRecord, ReluRecord]) -> Layer:
    if isinstance(record, DenseRecord):
        return Dense(
            np.asarray(record.weight, dtype=np.float64),
            np.asarray(record.bias, dtype=np.float64),
        )
    if isinstance(record, NormRecord):
        return NormalizationLayer(
            kind=record.kind,
            gamma=np.asarray(record.gamma),
            beta=np.asarray(record.beta),
            running_mean=None
            if record.running_mean is None
            else np.asarray(record.running_mean),
            running_var=None
            if record.running_var is None
            else np.asarray(record.running_var),
            eps=record.eps,
            momentum=record.momentum,
            r_max=record.r_max,
            d_max=record.d_max,
            groups=record.groups,
        )
    return ReLU()


def save_checkpoint(
    model: ModelState, path: Union[str, Path], source_accuracy: Optional[float] = None
) -> Path:
    """Write ``model`` to ``path`` atomically and return the path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = CheckpointDocument(
        format_version=FORMAT_VERSION,
        architecture=model.architecture,
        layers=[_encode_layer(layer) for layer in model.layers],
        source_accuracy=source_accuracy,
    )
    temp_file = path.with_name(path.name + ".tmp")
    try:
        temp_file.write_text(document.model_dump_json(), encoding="utf-8")
        os.replace(temp_file, path)
    finally:
        if temp_file.exists():
            temp_file.unlink()
    logger.info(f"Saved checkpoint to {path}")
    return path


def read_checkpoint(path: Union[str, Path]) -> CheckpointDocument:
    """Read and validate a checkpoint document without building the model.

    Raises:
        MissingCheckpointError: If the file does not exist.
        CheckpointDecodeError: If the file is corrupt, truncated or of another
            format version.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingCheckpointError(f"no checkpoint at {path}")
    try:
        document = CheckpointDocument.model_validate_json(
            path.read_text(encoding="utf-8")
        )
    except (ValidationError, UnicodeDecodeError) as e:
        raise CheckpointDecodeError(f"cannot decode checkpoint {path}: {e}") from e
    if document.format_version != FORMAT_VERSION:
        raise CheckpointDecodeError(
            f"checkpoint {path} has format version {document.format_version}, "
            f"expected {FORMAT_VERSION}"
        )
    return document


def load_checkpoint(path: Union[str, Path]) -> ModelState:
    """Load a model saved by ``save_checkpoint``.

    Raises:
        MissingCheckpointError: If the file does not exist.
        CheckpointDecodeError: If the document is invalid or its layers do not
            match its architecture.
    """
    document = read_checkpoint(path)
    try:
        model = ModelState(
            document.architecture, [_decode_layer(r) for r in document.layers]
        )
    except ValueError as e:
        raise CheckpointDecodeError(f"invalid layer in checkpoint {path}: {e}") from e
    expected = build_model(document.architecture, np.random.default_rng(0))
    if model.signature() != expected.signature():
        raise CheckpointDecodeError(
            f"checkpoint {path} layers do not match its architecture"
        )
    return model
