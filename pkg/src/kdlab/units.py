"""Unit identities and sparsity masks, shared across scoring and pruning.

A unit is an attention head, an FFN inner neuron, or a single scalar
parameter (tensor name + flat offset). Masks carry the removed unit set
together with the sparsity level and how the mask was produced.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

KINDS = ("head", "neuron", "parameter")


@dataclass(frozen=True, order=True)
class UnitId:
    """One prunable unit. Ordering is (layer, kind, index, tensor)."""

    layer: int
    kind: str
    index: int
    tensor: str = ""  # parameter units only: owning tensor name

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown unit kind {self.kind!r}")

    def to_dict(self) -> dict:
        d = {"layer": self.layer, "kind": self.kind, "index": self.index}
        if self.tensor:
            d["tensor"] = self.tensor
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "UnitId":
        return cls(
            layer=int(d["layer"]),
            kind=str(d["kind"]),
            index=int(d["index"]),
            tensor=str(d.get("tensor", "")),
        )


def round_count(fraction: float, total: int) -> int:
    """Half-up rounding of fraction * total; the mask cardinality rule."""
    return int(fraction * total + 0.5)


@dataclass
class SparsityMask:
    """Set of removed units at one sparsity level."""

    kind: str  # "structured" | "unstructured"
    removed: frozenset
    sparsity: float
    provenance: str

    def __post_init__(self):
        if self.kind not in ("structured", "unstructured"):
            raise ValueError(f"unknown mask kind {self.kind!r}")
        self.removed = frozenset(self.removed)

    def removed_sorted(self) -> list:
        return sorted(self.removed)

    def by_kind(self, kind: str) -> list:
        return sorted(u for u in self.removed if u.kind == kind)

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": self.kind,
                "sparsity": self.sparsity,
                "provenance": self.provenance,
                "removed": [u.to_dict() for u in self.removed_sorted()],
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "SparsityMask":
        d = json.loads(text)
        return cls(
            kind=d["kind"],
            removed=frozenset(UnitId.from_dict(u) for u in d["removed"]),
            sparsity=float(d["sparsity"]),
            provenance=str(d["provenance"]),
        )


EMPTY_MASK = SparsityMask(
    kind="structured", removed=frozenset(), sparsity=0.0, provenance="empty"
)
