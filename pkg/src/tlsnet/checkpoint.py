"""Model checkpoints: a ``TLSM`` container.

Sections: the model config as JSON text, then the eight tensors as float64
arrays in the order of :data:`tlsnet.model.TENSOR_NAMES`.
"""

from __future__ import annotations

from pathlib import Path

from . import container
from .model import TENSOR_NAMES, ModelConfig, ModelParams

MAGIC = b"TLSM"
VERSION = 1


def checkpoint_bytes(config: ModelConfig, params: ModelParams) -> bytes:
    params.check_shapes(config)
    sections = [container.text_section(config.to_dict())]
    sections += [container.array_section(getattr(params, name)) for name in TENSOR_NAMES]
    return container.pack(MAGIC, VERSION, sections)


def write_checkpoint(path, config: ModelConfig, params: ModelParams) -> None:
    container.atomic_write(path, checkpoint_bytes(config, params))


def read_checkpoint(path) -> tuple[ModelConfig, ModelParams]:
    _, sections = container.unpack(Path(path).read_bytes(), MAGIC, VERSION)
    if len(sections) != 1 + len(TENSOR_NAMES):
        raise container.FormatError(f"expected {1 + len(TENSOR_NAMES)} sections, found {len(sections)}")
    try:
        config = ModelConfig.from_dict(container.read_text(sections[0]))
    except (TypeError, ValueError) as exc:
        raise container.FormatError(f"invalid model config: {exc}") from exc
    params = ModelParams(**{name: container.read_array(s) for name, s in zip(TENSOR_NAMES, sections[1:])})
    try:
        params.check_shapes(config)
    except ValueError as exc:
        raise container.FormatError(str(exc)) from exc
    return config, params
