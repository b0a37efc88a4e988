"""Per-dataset joint layouts and the kinematic ordering the HMT regressor follows.

The index maps live in ``data/topologies.json``:

``J``               joint count
``root``            wrist/palm joint every chain hangs from
``chains``          five finger chains keyed T, I, M, R, P, each proximal -> distal
``palm``            extra palm/wrist joints attached directly to the root (NYU only)
``names``           human-readable joint names in dataset order
``source_indices``  optional: positions of the kept joints in the raw annotation
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

from .errors import ConfigurationError

FINGERS = ("T", "I", "M", "R", "P")


@dataclass(frozen=True)
class Topology:
    name: str
    J: int
    root: int
    chains: tuple[tuple[int, ...], ...]
    palm: tuple[int, ...] = ()
    names: tuple[str, ...] = ()
    source_indices: tuple[int, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.chains) != len(FINGERS):
            raise ConfigurationError(f"{self.name}: expected five finger chains, got {len(self.chains)}")
        members = [self.root, *self.palm, *(j for chain in self.chains for j in chain)]
        if sorted(members) != list(range(self.J)):
            raise ConfigurationError(
                f"{self.name}: root, palm and chains must partition joints 0..{self.J - 1}"
            )
        if self.names and len(self.names) != self.J:
            raise ConfigurationError(f"{self.name}: {len(self.names)} names for {self.J} joints")

    def describe(self) -> str:
        """Human-readable audit listing of the layout."""
        label = (lambda j: f"{j}:{self.names[j]}") if self.names else str
        lines = [f"topology {self.name}: J={self.J}", f"  root  {label(self.root)}"]
        if self.palm:
            lines.append("  palm  " + ", ".join(label(j) for j in self.palm))
        for finger, chain in zip(FINGERS, self.chains):
            lines.append(f"  {finger}     " + " -> ".join(label(j) for j in chain))
        return "\n".join(lines)


@lru_cache(maxsize=None)
def _table() -> dict:
    text = resources.files("hmtnet").joinpath("data/topologies.json").read_text()
    return json.loads(text)


def topology_for(dataset: str) -> Topology:
    entry = _table().get(dataset.lower())
    if entry is None:
        raise ConfigurationError(f"unknown dataset {dataset!r}; expected one of {sorted(_table())}")
    src = entry.get("source_indices")
    return Topology(
        name=dataset.lower(),
        J=entry["J"],
        root=entry["root"],
        chains=tuple(tuple(entry["chains"][f]) for f in FINGERS),
        palm=tuple(entry.get("palm", ())),
        names=tuple(entry.get("names", ())),
        source_indices=tuple(src) if src is not None else None,
    )


def hmt_order(t: Topology) -> list[tuple[int, int]]:
    """``(joint, predecessor)`` for every non-root joint, parents before children.

    Palm joints come first (attached to the root), then each finger chain
    proximal to distal; a chain's first joint depends on the root.
    """
    order = [(j, t.root) for j in t.palm]
    for chain in t.chains:
        prev = t.root
        for j in chain:
            order.append((j, prev))
            prev = j
    return order
