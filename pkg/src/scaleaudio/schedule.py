"""Scale schedules: the ordered token lengths of the pyramid.

A schedule lists how many tokens each quantization stage emits, from coarse
(l_1) to fine (l_K = encoder frame count). Linear and quadratic kinds use a
floor rule, logarithmic uses round-half-up; every entry is clamped to >= 1 and
the last entry is forced to top_length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .exceptions import ValidationError

SCHEDULE_KINDS = ("linear", "quadratic", "logarithmic", "explicit")


@dataclass(frozen=True)
class ScaleSchedule:
    kind: str
    lengths: tuple[int, ...]

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValidationError(f"unknown schedule kind {self.kind!r}")
        if len(self.lengths) < 1:
            raise ValidationError("schedule needs at least one scale")
        if any(l < 1 for l in self.lengths):
            raise ValidationError("scale lengths must be >= 1")
        if any(a > b for a, b in zip(self.lengths, self.lengths[1:])):
            raise ValidationError(f"scale lengths must be nondecreasing, got {self.lengths}")

    @property
    def K(self) -> int:
        return len(self.lengths)

    @property
    def top_length(self) -> int:
        return self.lengths[-1]

    @property
    def total(self) -> int:
        return sum(self.lengths)


def make_schedule(
    kind: str,
    K: int | None = None,
    top_length: int | None = None,
    lengths: list[int] | tuple[int, ...] | None = None,
) -> ScaleSchedule:
    """Build a schedule of K lengths ending at top_length.

    explicit kind validates a user-provided nondecreasing list instead of
    generating one.
    """
    if kind == "explicit":
        if not lengths:
            raise ValidationError("explicit schedule requires lengths")
        if top_length is not None and lengths[-1] != top_length:
            raise ValidationError(
                f"explicit schedule must end at top_length {top_length}, got {lengths[-1]}"
            )
        return ScaleSchedule(kind="explicit", lengths=tuple(int(l) for l in lengths))

    if kind not in SCHEDULE_KINDS:
        raise ValidationError(f"unknown schedule kind {kind!r}")
    if K is None or top_length is None:
        raise ValidationError("generated schedules require K and top_length")
    if K < 1 or top_length < 1:
        raise ValidationError("K and top_length must be >= 1")
    if K == 1:
        return ScaleSchedule(kind=kind, lengths=(top_length,))

    out = []
    for k in range(1, K + 1):
        frac = (k - 1) / (K - 1)
        if kind == "linear":
            val = math.floor(1 + (top_length - 1) * frac)
        elif kind == "quadratic":
            val = math.floor(1 + (top_length - 1) * frac * frac)
        else:  # logarithmic, round half up
            val = math.floor(top_length ** frac + 0.5)
        out.append(max(1, val))
    out[-1] = top_length
    return ScaleSchedule(kind=kind, lengths=tuple(out))
