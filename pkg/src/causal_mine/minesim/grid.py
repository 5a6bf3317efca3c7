"""ASCII mine maps."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import ParseError, ValidationError

WALL, FREE, HOME, LAND, VENT = "#", ".", "H", "L", "V"
CELL_CHARS = frozenset(WALL + FREE + HOME + LAND + VENT)

# action index -> (dx, dy); y grows southwards
ACTIONS = ("N", "S", "E", "W", "Hover", "Land")
N, S, E, W, HOVER, LAND_ACTION = range(6)
DIRECTIONS = {"N": (0, -1), "S": (0, 1), "E": (1, 0), "W": (-1, 0)}
MOVES = {N: DIRECTIONS["N"], S: DIRECTIONS["S"], E: DIRECTIONS["E"], W: DIRECTIONS["W"]}


@dataclass(frozen=True)
class MineMap:
    """Static grid geometry.

    Attributes:
        rows: one string per grid row, north first.
        comments: ``;`` comment lines preceding the grid (kept for emit).
    """

    rows: tuple[str, ...]
    comments: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        object.__setattr__(self, "comments", tuple(self.comments))

    @property
    def width(self) -> int:
        return len(self.rows[0])

    @property
    def height(self) -> int:
        return len(self.rows)

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    def cell(self, x: int, y: int) -> str:
        if not (0 <= x < self.width and 0 <= y < self.height):
            return WALL
        return self.rows[y][x]

    def index(self, x: int, y: int) -> int:
        return y * self.width + x

    def coords(self, i: int) -> tuple[int, int]:
        return i % self.width, i // self.width

    def is_wall(self, x: int, y: int) -> bool:
        return self.cell(x, y) == WALL

    def landable(self, x: int, y: int) -> bool:
        return self.cell(x, y) in (HOME, LAND)

    def cells_of(self, *kinds: str) -> list[tuple[int, int]]:
        return [(x, y) for y in range(self.height) for x in range(self.width) if self.rows[y][x] in kinds]

    @property
    def open_cells(self) -> list[tuple[int, int]]:
        """Every non-wall cell."""
        return self.cells_of(FREE, HOME, LAND, VENT)

    @property
    def diagonal(self) -> float:
        return float((self.width**2 + self.height**2) ** 0.5)

    def wall_distance(self, x: int, y: int, direction: str) -> int:
        """Open cells between (x, y) and the first wall along ``direction``."""
        dx, dy = DIRECTIONS[direction]
        d = 0
        while not self.is_wall(x + dx * (d + 1), y + dy * (d + 1)):
            d += 1
        return d


def load_map(text: str) -> MineMap:
    """Parse an ASCII map; lines starting with ``;`` are comments.

    Raises:
        ParseError: unknown character or ragged rows.
        ValidationError: no Home cell or an open boundary.
    """
    comments, rows = [], []
    for line in text.splitlines():
        if line.startswith(";"):
            if not rows:
                comments.append(line)
            continue
        if not line.strip():
            continue
        rows.append(line.rstrip())
    if not rows:
        raise ParseError("map has no rows")
    width = len(rows[0])
    for r, row in enumerate(rows):
        if len(row) != width:
            raise ParseError(f"ragged row: expected {width} columns, got {len(row)}", r, len(row))
        for c, ch in enumerate(row):
            if ch not in CELL_CHARS:
                raise ParseError(f"unknown map character {ch!r}", r, c)
    m = MineMap(tuple(rows), tuple(comments))
    for r, row in enumerate(rows):
        for c, ch in enumerate(row):
            edge = r in (0, m.height - 1) or c in (0, width - 1)
            if edge and ch != WALL:
                raise ValidationError(f"boundary cell at row {r}, col {c} is not a wall")
    if not m.cells_of(HOME):
        raise ValidationError("map has no Home cell")
    return m


def emit_map(m: MineMap) -> str:
    return "".join(line + "\n" for line in (*m.comments, *m.rows))
