"""
Feature sequences and the W2SF feature container.

Container layout (little-endian): magic b'W2SF', version u32, T u32, d u32,
then T*d float32 values, time-major.
"""

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
import torch

from src.utils.errors import ArgumentError, FormatError

CONTENT_16K = "content-16k"
LATENT = "latent"
ALIGNED_22K = "aligned-22k"
DOMAINS = (CONTENT_16K, LATENT, ALIGNED_22K)

MAGIC = b"W2SF"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


@dataclass
class FeatureSequence:
    """Time-major feature matrix tagged with its frame domain."""

    frames: torch.Tensor
    domain: str = CONTENT_16K
    pair_id: Optional[str] = field(default=None, compare=False)
    utt_id: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        if not isinstance(self.frames, torch.Tensor):
            self.frames = torch.as_tensor(np.asarray(self.frames, dtype=np.float32))
        if self.frames.dim() != 2 or self.frames.shape[0] < 1:
            raise ArgumentError(f"features must be (T>=1, d), got {tuple(self.frames.shape)}")
        if self.domain not in DOMAINS:
            raise ArgumentError(f"unknown feature domain {self.domain!r}")
        if not bool(torch.isfinite(self.frames).all()):
            raise ArgumentError("feature sequence contains non-finite values")

    @property
    def T(self) -> int:
        return int(self.frames.shape[0])

    @property
    def d(self) -> int:
        return int(self.frames.shape[1])

    def numpy(self) -> np.ndarray:
        return self.frames.detach().cpu().numpy()


def write_feature_file(matrix: np.ndarray, path: Union[str, Path]) -> str:
    """Write a (T, d) matrix as a W2SF container."""
    matrix = np.ascontiguousarray(np.asarray(matrix, dtype="<f4"))
    if matrix.ndim != 2:
        raise ArgumentError(f"feature matrix must be 2-D, got shape {matrix.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, matrix.shape[0], matrix.shape[1]))
        f.write(matrix.tobytes(order="C"))
    return str(path)


def read_feature_file(path: Union[str, Path]) -> np.ndarray:
    """Read a W2SF container into a float32 (T, d) matrix."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"feature file not found: {path}")
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, t, d = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    expected = _HEADER.size + 4 * t * d
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for T={t}, d={d}, found {len(data)}")
    return np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(t, d).copy()
