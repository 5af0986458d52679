"""Token batch container shared by every reduction method."""
from dataclasses import dataclass, replace

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class GridShape:
    rows: int
    cols: int

    def __post_init__(self):
        if int(self.rows) < 1 or int(self.cols) < 1:
            raise ShapeError(f"grid must be at least 1x1, got {self.rows}x{self.cols}")

    @property
    def size(self):
        return self.rows * self.cols

    @classmethod
    def parse(cls, text):
        rows, _, cols = str(text).lower().partition("x")
        try:
            return cls(int(rows), int(cols))
        except ValueError:
            raise ShapeError(f"grid must look like ROWSxCOLS, got {text!r}") from None

    def __str__(self):
        return f"{self.rows}x{self.cols}"


@dataclass(frozen=True, eq=False)
class TokenBatch:
    """A batch of token sequences plus the bookkeeping reductions need.

    ``x`` is ``(B, T, C)``. The first ``protected`` tokens (class/distill)
    are never pruned or merged. ``sizes`` counts how many original patches
    each token stands for. ``owner[b, cell]`` is the index of the token that
    currently holds grid cell ``cell`` (row-major flat id), which encodes
    per-token provenance as a partition of the grid. When ``fused`` is set,
    the last token is the representative of everything pruned so far.
    """

    x: np.ndarray
    sizes: np.ndarray
    owner: np.ndarray
    grid: GridShape
    protected: int = 1
    fused: bool = False

    def __post_init__(self):
        if self.x.ndim != 3:
            raise ShapeError(f"tokens must be (B, T, C), got shape {self.x.shape}")
        b, t, _ = self.x.shape
        if self.sizes.shape != (b, t):
            raise ShapeError(f"sizes shape {self.sizes.shape} does not match tokens {(b, t)}")
        if self.owner.shape != (b, self.grid.size):
            raise ShapeError(f"owner shape {self.owner.shape} does not match grid {self.grid}")
        if t < self.protected + int(self.fused):
            raise ShapeError("fewer tokens than protected slots")

    @classmethod
    def from_grid(cls, x, grid, protected=1):
        """Wrap freshly embedded tokens laid out in row-major grid order."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        b, t, _ = x.shape
        if t - protected != grid.size:
            raise ShapeError(f"{t - protected} image tokens cannot fill a {grid} grid")
        owner = np.broadcast_to(np.arange(grid.size, dtype=np.int64) + protected, (b, grid.size)).copy()
        return cls(x=x, sizes=np.ones((b, t)), owner=owner, grid=grid, protected=protected)

    @classmethod
    def from_sequence(cls, x, protected=1):
        """Wrap tokens that have no image behind them (a 1 x M grid)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        return cls.from_grid(x, GridShape(1, x.shape[1] - protected), protected)

    @property
    def batch(self):
        return self.x.shape[0]

    @property
    def num_tokens(self):
        return self.x.shape[1]

    @property
    def dim(self):
        return self.x.shape[2]

    @property
    def num_image(self):
        """Non-protected tokens that are not the fused representative."""
        return self.num_tokens - self.protected - int(self.fused)

    def replace(self, **changes):
        return replace(self, **changes)

    def provenance(self, b=0):
        """Grid cells held by each token of sample ``b`` as a list of frozensets."""
        cells = [set() for _ in range(self.num_tokens)]
        for cell, tok in enumerate(self.owner[b]):
            cells[tok].add(cell)
        return [frozenset(c) for c in cells]

    def min_cell(self):
        """Smallest grid cell held by each token, ``-1`` for protected ones."""
        out = np.full((self.batch, self.num_tokens), np.iinfo(np.int64).max, dtype=np.int64)
        cells = np.broadcast_to(np.arange(self.grid.size), self.owner.shape)
        rows = np.broadcast_to(np.arange(self.batch)[:, None], self.owner.shape)
        np.minimum.at(out, (rows, self.owner), cells)
        out[:, :self.protected] = -1
        return out

    def gather(self, index):
        """New batch whose token ``j`` is old token ``index[b, j]``.

        Every token holding grid cells must survive (this is a permutation
        or a subset of cell-free tokens).
        """
        index = np.asarray(index, dtype=np.int64)
        if index.ndim == 1:
            index = np.broadcast_to(index, (self.batch, index.size))
        x = np.take_along_axis(self.x, index[..., None], axis=1)
        sizes = np.take_along_axis(self.sizes, index, axis=1)
        where = np.full((self.batch, self.num_tokens), -1, dtype=np.int64)
        np.put_along_axis(where, index, np.broadcast_to(np.arange(index.shape[1]), index.shape), axis=1)
        owner = np.take_along_axis(where, self.owner, axis=1)
        if (owner < 0).any():
            raise ShapeError("gather dropped a token that still holds grid cells")
        return self.replace(x=x, sizes=sizes, owner=owner)

    def size_weighted_sum(self):
        """Sum of size * features over non-protected tokens, per sample."""
        p = self.protected
        return np.einsum("bt,btc->bc", self.sizes[:, p:], self.x[:, p:])
