"""Space-filling-curve orderings of rectangular patch grids."""
import enum
import functools
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tokens import GridShape


class CurveKind(str, enum.Enum):
    ROW = "row"
    HILBERT = "hilbert"
    BOUSTRO = "boustro"
    Z = "z"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"rowmajor": "row", "row-major": "row", "boustrophedon": "boustro",
                   "snake": "boustro", "zorder": "z", "morton": "z", "gilbert": "hilbert"}
        key = str(value).strip().lower()
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(f"unknown curve kind {value!r}") from None


@dataclass(frozen=True, eq=False)
class CurveOrder:
    """A bijection between grid cells and sequence positions.

    ``perm[k]`` is the ``(row, col)`` visited at sequence position ``k``;
    ``inverse[row, col]`` is the position of that cell.
    """

    shape: GridShape
    kind: CurveKind
    perm: np.ndarray
    inverse: np.ndarray

    @property
    def flat(self):
        """Row-major cell id visited at each sequence position."""
        return self.perm[:, 0] * self.shape.cols + self.perm[:, 1]

    @property
    def inverse_flat(self):
        return self.inverse.reshape(-1)

    def __len__(self):
        return self.shape.size


def _sgn(v):
    return (v > 0) - (v < 0)


def _gilbert(x, y, ax, ay, bx, by, out):
    # Recursive generalized Hilbert curve; (x, y) is (col, row), a is the
    # major axis vector and b the minor one.
    w = abs(ax + ay)
    h = abs(bx + by)
    dax, day = _sgn(ax), _sgn(ay)
    dbx, dby = _sgn(bx), _sgn(by)

    if h == 1:
        for _ in range(w):
            out.append((y, x))
            x, y = x + dax, y + day
        return
    if w == 1:
        for _ in range(h):
            out.append((y, x))
            x, y = x + dbx, y + dby
        return

    ax2, ay2 = ax // 2, ay // 2
    bx2, by2 = bx // 2, by // 2
    w2 = abs(ax2 + ay2)
    h2 = abs(bx2 + by2)

    if 2 * w > 3 * h:
        if w2 % 2 and w > 2:
            ax2, ay2 = ax2 + dax, ay2 + day
        _gilbert(x, y, ax2, ay2, bx, by, out)
        _gilbert(x + ax2, y + ay2, ax - ax2, ay - ay2, bx, by, out)
    else:
        if h2 % 2 and h > 2:
            bx2, by2 = bx2 + dbx, by2 + dby
        _gilbert(x, y, bx2, by2, ax2, ay2, out)
        _gilbert(x + bx2, y + by2, ax, ay, bx - bx2, by - by2, out)
        _gilbert(x + (ax - dax) + (bx2 - dbx), y + (ay - day) + (by2 - dby),
                 -bx2, -by2, -(ax - ax2), -(ay - ay2), out)


def _hilbert_cells(rows, cols):
    out = []
    major_cols = cols >= rows
    long_side, short_side = max(rows, cols), min(rows, cols)
    # A corner-to-corner walk along an odd long side over an even short side
    # must take a diagonal step; running along the even side avoids it.
    if long_side % 2 == 1 and short_side % 2 == 0:
        major_cols = not major_cols
    if major_cols:
        _gilbert(0, 0, cols, 0, 0, rows, out)
    else:
        _gilbert(0, 0, 0, rows, cols, 0, out)
    return out


def _z_cells(rows, cols):
    def spread(v):
        code = 0
        bit = 0
        while v:
            code |= (v & 1) << (2 * bit)
            v >>= 1
            bit += 1
        return code

    cells = [(r, c) for r in range(rows) for c in range(cols)]
    return sorted(cells, key=lambda rc: (spread(rc[0]) << 1) | spread(rc[1]))


def _cells(rows, cols, kind):
    if kind is CurveKind.ROW:
        return [(r, c) for r in range(rows) for c in range(cols)]
    if kind is CurveKind.BOUSTRO:
        return [(r, c if r % 2 == 0 else cols - 1 - c) for r in range(rows) for c in range(cols)]
    if kind is CurveKind.Z:
        return _z_cells(rows, cols)
    return _hilbert_cells(rows, cols)


@functools.lru_cache(maxsize=None)
def _build_cached(rows, cols, kind):
    perm = np.array(_cells(rows, cols, kind), dtype=np.int64).reshape(-1, 2)
    inverse = np.empty((rows, cols), dtype=np.int64)
    inverse[perm[:, 0], perm[:, 1]] = np.arange(rows * cols)
    perm.setflags(write=False)
    inverse.setflags(write=False)
    return CurveOrder(GridShape(rows, cols), kind, perm, inverse)


def build_order(shape, kind="hilbert"):
    """Return the (cached, immutable) curve order for a grid.

    Hilbert orders use the generalized rectangle-splitting construction, so
    any ``rows x cols`` grid gets a walk with unit steps. The walk starts at
    (0, 0); on a 2x2 grid it visits (0,0), (1,0), (1,1), (0,1).
    """
    if not isinstance(shape, GridShape):
        shape = GridShape(*shape)
    return _build_cached(int(shape.rows), int(shape.cols), CurveKind.parse(kind))


def reorder_tokens(tokens, order):
    """Lay the image tokens of ``tokens`` out along ``order``.

    Every non-protected token must hold exactly one grid cell (no reduction
    has happened yet). The token at cell ``(r, c)`` moves to sequence slot
    ``protected + order.inverse[r, c]``; sizes and provenance travel with it.
    Reordering with the row-major order undoes any earlier reordering.
    """
    if tokens.grid != order.shape:
        raise ShapeError(f"order is for a {order.shape} grid, tokens are on {tokens.grid}")
    p = tokens.protected
    if tokens.fused or tokens.num_tokens - p != order.shape.size:
        raise ShapeError(
            f"{tokens.num_tokens - p} non-protected tokens cannot be laid out on a {order.shape} grid")
    new_slot = p + order.inverse_flat                      # cell -> new position
    index = np.empty((tokens.batch, tokens.num_tokens), dtype=np.int64)
    index[:, :p] = np.arange(p)
    rows = np.arange(tokens.batch)[:, None]
    index[rows, new_slot[None, :]] = tokens.owner
    return tokens.gather(index)


def locality_score(order, radius=1):
    """Mean Manhattan grid distance between sequence positions k and k+radius."""
    radius = int(radius)
    n = len(order)
    if radius < 1:
        raise ValueError("radius must be >= 1")
    if radius >= n:
        raise ValueError(f"radius {radius} must be smaller than the sequence length {n}")
    step = np.abs(order.perm[radius:] - order.perm[:-radius]).sum(axis=1)
    return float(step.mean())


def order_image(order):
    """8-bit image whose pixel (r, c) is the sequence index of that cell scaled to 0-255."""
    n = len(order)
    scale = 255.0 / (n - 1) if n > 1 else 0.0
    return np.rint(order.inverse * scale).astype(np.uint8)
