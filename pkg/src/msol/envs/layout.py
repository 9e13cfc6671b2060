"""Grid layouts for the taxi family, loaded from versioned JSON files.

Coordinates are ``(x, y)`` with ``y`` growing downwards; walls block the edge
between two 4-adjacent cells.  Movement directions are indexed
``0=N (y-1), 1=E (x+1), 2=S (y+1), 3=W (x-1)``.
"""

from __future__ import annotations

import json
from collections import deque
from importlib import resources
from pathlib import Path

import numpy as np

from ..errors import ConfigError

LAYOUT_FORMAT_VERSION = 1
DIRECTIONS = ((0, -1), (1, 0), (0, 1), (-1, 0))
BUILTIN_LAYOUTS = ("taxi30", "taxi8x8", "taxi10x10")

Cell = tuple[int, int]


class GridLayout:
    """Walls, special cells and the derived location graph of one grid."""

    def __init__(
        self,
        layout_id: str,
        width: int,
        height: int,
        walls,
        special,
        shift=None,
        locations: int | None = None,
    ):
        if width < 1 or height < 1:
            raise ConfigError(f"layout {layout_id}: width/height must be >= 1")
        self.layout_id = layout_id
        self.width = int(width)
        self.height = int(height)
        self.walls = frozenset(frozenset((tuple(a), tuple(b))) for a, b in walls)
        for edge in self.walls:
            a, b = tuple(edge)
            if abs(a[0] - b[0]) + abs(a[1] - b[1]) != 1:
                raise ConfigError(f"layout {layout_id}: wall {a}-{b} is not between adjacent cells")
        self.special: tuple[Cell, ...] = tuple(tuple(int(v) for v in c) for c in special)
        if len(self.special) != 4 or len(set(self.special)) != 4:
            raise ConfigError(f"layout {layout_id}: need exactly 4 distinct special cells")
        self.shift = tuple(tuple(int(v) for v in s) for s in shift) if shift is not None else None

        start = self.special[0]
        if not self.in_bounds(start):
            raise ConfigError(f"layout {layout_id}: special cell {start} outside grid")
        self.cells: tuple[Cell, ...] = self._reachable(start)
        self.index = {c: i for i, c in enumerate(self.cells)}
        for c in self.special:
            if c not in self.index:
                raise ConfigError(f"layout {layout_id}: special cell {c} unreachable")
        if locations is not None and locations != len(self.cells):
            raise ConfigError(
                f"layout {layout_id}: advertises {locations} locations, {len(self.cells)} reachable"
            )
        n = len(self.cells)
        self.neighbors = np.empty((n, 4), dtype=np.int64)
        for i, c in enumerate(self.cells):
            for d in range(4):
                nxt = self.move(c, d)
                self.neighbors[i, d] = self.index[nxt]
        self.special_idx = np.array([self.index[c] for c in self.special], dtype=np.int64)

    @property
    def n_locations(self) -> int:
        return len(self.cells)

    def in_bounds(self, c: Cell) -> bool:
        return 0 <= c[0] < self.width and 0 <= c[1] < self.height

    def blocked(self, a: Cell, b: Cell) -> bool:
        return frozenset((a, b)) in self.walls

    def move(self, c: Cell, direction: int) -> Cell:
        dx, dy = DIRECTIONS[direction]
        nxt = (c[0] + dx, c[1] + dy)
        if not self.in_bounds(nxt) or self.blocked(c, nxt):
            return c
        return nxt

    def _reachable(self, start: Cell) -> tuple[Cell, ...]:
        seen = {start}
        queue = deque([start])
        while queue:
            c = queue.popleft()
            for d in range(4):
                nxt = self.move(c, d)
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
        return tuple(sorted(seen, key=lambda c: (c[1], c[0])))

    def to_dict(self) -> dict:
        walls = sorted(sorted(list(e)) for e in self.walls)
        out = {
            "format_version": LAYOUT_FORMAT_VERSION,
            "id": self.layout_id,
            "width": self.width,
            "height": self.height,
            "walls": [[list(a), list(b)] for a, b in walls],
            "special": [list(c) for c in self.special],
            "locations": self.n_locations,
        }
        if self.shift is not None:
            out["shift"] = [list(s) for s in self.shift]
        return out

    def __repr__(self) -> str:
        return f"GridLayout({self.layout_id!r}, {self.width}x{self.height}, {self.n_locations} locations)"


def layout_from_dict(data: dict) -> GridLayout:
    version = data.get("format_version")
    if version != LAYOUT_FORMAT_VERSION:
        raise ConfigError(f"layout format version {version!r}, expected {LAYOUT_FORMAT_VERSION}")
    try:
        return GridLayout(
            data["id"],
            data["width"],
            data["height"],
            data.get("walls", []),
            data["special"],
            data.get("shift"),
            data.get("locations"),
        )
    except KeyError as exc:
        raise ConfigError(f"layout file missing key {exc}") from None


def load_layout(name_or_path: str | Path) -> GridLayout:
    """Load a built-in layout by id, or any layout JSON file by path."""
    name = str(name_or_path)
    if name.endswith("-shifted"):
        return shifted_layout(load_layout(name[: -len("-shifted")]))
    if name in BUILTIN_LAYOUTS:
        text = resources.files("msol.envs").joinpath("layouts", f"{name}.json").read_text()
    else:
        path = Path(name)
        if not path.exists():
            raise ConfigError(f"unknown layout {name!r}; built-ins: {BUILTIN_LAYOUTS}")
        text = path.read_text()
    return layout_from_dict(json.loads(text))


def shifted_layout(layout: GridLayout) -> GridLayout:
    """Move every special cell by its configured one-cell offset."""
    if layout.shift is None:
        raise ConfigError(f"layout {layout.layout_id} has no shift configuration")
    moved = []
    for cell, (dx, dy) in zip(layout.special, layout.shift):
        if abs(dx) + abs(dy) != 1:
            raise ConfigError(f"layout {layout.layout_id}: shift {(dx, dy)} is not a single-cell move")
        nxt = (cell[0] + dx, cell[1] + dy)
        if not layout.in_bounds(nxt) or nxt not in layout.index:
            raise ConfigError(f"layout {layout.layout_id}: shifted cell {nxt} is not a free location")
        if layout.blocked(cell, nxt):
            raise ConfigError(f"layout {layout.layout_id}: shift of {cell} crosses a wall")
        moved.append(nxt)
    return GridLayout(
        f"{layout.layout_id}-shifted",
        layout.width,
        layout.height,
        [tuple(e) for e in layout.walls],
        moved,
        None,
        layout.n_locations,
    )
