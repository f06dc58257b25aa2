"""Token pyramids and their binary file format.

File layout (little-endian): magic "SATP", version u16, K u16, V u32,
K scale lengths as u32, then each scale's indices as u16.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ValidationError
from .schedule import ScaleSchedule

_MAGIC = b"SATP"
_VERSION = 1


@dataclass
class TokenPyramid:
    """K index sequences, one per scale, matching a schedule."""

    scales: list[np.ndarray]
    schedule: ScaleSchedule

    def __post_init__(self):
        self.scales = [np.asarray(s, dtype=np.int64).ravel() for s in self.scales]
        if len(self.scales) != self.schedule.K:
            raise ValidationError(
                f"pyramid has {len(self.scales)} scales, schedule expects {self.schedule.K}"
            )
        for k, (s, l) in enumerate(zip(self.scales, self.schedule.lengths)):
            if s.size != l:
                raise ValidationError(f"scale {k + 1} has {s.size} tokens, expected {l}")
            if s.size and s.min() < 0:
                raise ValidationError("negative token index")

    @property
    def total_tokens(self) -> int:
        return sum(s.size for s in self.scales)

    def validate_vocab(self, vocab: int) -> None:
        for k, s in enumerate(self.scales):
            if s.size and s.max() >= vocab:
                raise ValidationError(f"scale {k + 1} has index >= vocab {vocab}")

    def flatten(self) -> np.ndarray:
        """Scale-major raster of all indices (coarse to fine)."""
        return np.concatenate(self.scales)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TokenPyramid):
            return NotImplemented
        return (self.schedule.lengths == other.schedule.lengths
                and all(np.array_equal(a, b) for a, b in zip(self.scales, other.scales)))


def save_pyramid(path: str | Path, pyramid: TokenPyramid, vocab: int) -> None:
    if vocab > 0xFFFF + 1:
        raise ValidationError("file format stores u16 indices; vocab too large")
    pyramid.validate_vocab(vocab)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<HHI", _VERSION, pyramid.schedule.K, vocab))
        fh.write(struct.pack(f"<{pyramid.schedule.K}I", *pyramid.schedule.lengths))
        for s in pyramid.scales:
            fh.write(s.astype("<u2").tobytes())


def load_pyramid(path: str | Path) -> tuple[TokenPyramid, int]:
    """Read a pyramid file; returns (pyramid, vocab)."""
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != _MAGIC:
        raise ValidationError(f"{path} is not a pyramid file")
    version, K, vocab = struct.unpack_from("<HHI", data, 4)
    if version != _VERSION:
        raise ValidationError(f"unsupported pyramid version {version}")
    offset = 4 + 8
    lengths = struct.unpack_from(f"<{K}I", data, offset)
    offset += 4 * K
    scales = []
    for l in lengths:
        arr = np.frombuffer(data, dtype="<u2", count=l, offset=offset).astype(np.int64)
        scales.append(arr)
        offset += 2 * l
    schedule = ScaleSchedule(kind="explicit", lengths=tuple(lengths))
    pyr = TokenPyramid(scales=scales, schedule=schedule)
    pyr.validate_vocab(vocab)
    return pyr, vocab
