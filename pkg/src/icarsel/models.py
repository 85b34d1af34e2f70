"""Candidate model descriptors."""

from __future__ import annotations

from dataclasses import dataclass

__all__ = ["ModelSpec"]


@dataclass(frozen=True, order=True)
class ModelSpec:
    """One candidate model.

    ``mask`` selects regressors: bit ``j`` set means candidate ``j`` (design
    column ``j + 1``) is included. The intercept is always in the model.
    """

    mask: int
    spatial: bool

    def __post_init__(self):
        if self.mask < 0:
            raise ValueError("mask must be non-negative")

    @property
    def k_c(self) -> int:
        return bin(self.mask).count("1")

    @property
    def p(self) -> int:
        return 1 + self.k_c

    def columns(self) -> list[int]:
        """Design-column indices, intercept first."""
        return [0] + [j + 1 for j in range(self.mask.bit_length()) if self.mask >> j & 1]

    def includes(self, j: int) -> bool:
        return bool(self.mask >> j & 1)

    def label(self, names: list[str] | None = None) -> str:
        cols = self.columns()[1:]
        terms = [names[c - 1] if names else f"x{c}" for c in cols]
        body = "+".join(["1", *terms])
        return f"{body}|{'icar' if self.spatial else 'iid'}"
