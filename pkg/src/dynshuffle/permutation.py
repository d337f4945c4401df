"""Exact permutation-matrix arithmetic on index maps.

A size-C channel reordering is stored as ``map`` with ``map[r]`` the source
channel feeding output row r (equivalently, the column of the single 1 in row
r of the dense binary view). Dense matrices are materialized only for tests,
verification, and file export; composition, Kronecker products, and feature
shuffling all run on the index maps (memory shifting, no float arithmetic).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError


class PermutationMatrix:
    """A bijective channel reordering with a dense binary view on demand."""

    __slots__ = ("map",)

    def __init__(self, index_map):
        m = np.asarray(index_map, dtype=np.int64)
        if m.ndim != 1:
            raise DimensionError(f"index map must be a vector, got shape {m.shape}")
        if m.size == 0 or not np.array_equal(np.sort(m), np.arange(m.size)):
            raise ConfigurationError("index map is not a bijection on [0, C)")
        self.map = m

    @property
    def size(self) -> int:
        return int(self.map.size)

    def dense(self, dtype=np.float32) -> np.ndarray:
        d = np.zeros((self.size, self.size), dtype=dtype)
        d[np.arange(self.size), self.map] = 1
        return d

    def inverse(self) -> "PermutationMatrix":
        inv = np.empty_like(self.map)
        inv[self.map] = np.arange(self.size)
        return PermutationMatrix(inv)

    def __matmul__(self, other: "PermutationMatrix") -> "PermutationMatrix":
        """Matrix product: dense(p @ q) == dense(p) @ dense(q)."""
        if self.size != other.size:
            raise DimensionError(f"size mismatch: {self.size} vs {other.size}")
        return PermutationMatrix(other.map[self.map])

    def __eq__(self, other):
        return isinstance(other, PermutationMatrix) and np.array_equal(self.map, other.map)

    def __repr__(self):
        return f"PermutationMatrix({self.map.tolist()})"


@dataclass(frozen=True)
class PermutationVerdict:
    """Outcome of the three permutation conditions plus the bijection check."""

    is_permutation: bool
    cond1: bool  # all entries nonnegative
    cond2: bool  # every row sums to one
    cond3: bool  # orthogonal: ‖MMᵀ − I‖_F within tolerance


def check_permutation_conditions(m, tol: float = 1e-5) -> PermutationVerdict:
    """Test the three conditions under which a square matrix is a permutation.

    cond1: entries ≥ −tol; cond2: row sums within tol of 1;
    cond3: Frobenius norm of MMᵀ − I at most tol. is_permutation additionally
    requires the row-argmax binarization to be a bijection.
    """
    md = np.asarray(getattr(m, "data", m), dtype=np.float64)
    if md.ndim != 2 or md.shape[0] != md.shape[1]:
        raise DimensionError(f"condition check needs a square matrix, got {md.shape}")
    c = md.shape[0]
    cond1 = bool((md >= -tol).all())
    cond2 = bool(np.abs(md.sum(axis=1) - 1.0).max() <= tol)
    gram = md @ md.T
    cond3 = bool(np.linalg.norm(gram - np.eye(c)) <= tol)
    cols = md.argmax(axis=1)
    bijection = np.unique(cols).size == c
    return PermutationVerdict(cond1 and cond2 and cond3 and bijection, cond1, cond2, cond3)


def build_manual_shuffle(groups: int, channels: int) -> PermutationMatrix:
    """The fixed ShuffleNet reordering: reshape (g, C/g), transpose, flatten.

    Input channel g0·(C/g)+k lands at output position k·g+g0.
    """
    if groups < 1 or channels < 1:
        raise ConfigurationError(f"need positive groups/channels, got {groups}/{channels}")
    if channels % groups != 0:
        raise ConfigurationError(f"groups={groups} does not divide channels={channels}")
    per = channels // groups
    idx = np.arange(channels).reshape(groups, per).T.reshape(-1)
    return PermutationMatrix(idx)


def kron_perm(p: PermutationMatrix, q: PermutationMatrix) -> PermutationMatrix:
    """Kronecker product computed directly on index maps.

    dense(kron_perm(p, q)) equals the dense Kronecker product; row i·|q|+s
    has its 1 at column p.map[i]·|q| + q.map[s].
    """
    nq = q.size
    out = (p.map[:, None] * nq + q.map[None, :]).reshape(-1)
    return PermutationMatrix(out)


def apply_shift(p: PermutationMatrix, f):
    """Reorder the channel axis (axis 1) of f by the permutation.

    out[:, r, ...] = f[:, p.map[r], ...]; bitwise equal to left-multiplying
    the per-sample channel-flattened matrix by the dense view, because the
    dense view contains exact ones and zeros.
    """
    fd = np.asarray(getattr(f, "data", f))
    if fd.ndim < 2:
        raise DimensionError(f"expected a batched channel tensor, got shape {fd.shape}")
    if fd.shape[1] != p.size:
        raise DimensionError(f"feature channels {fd.shape[1]} != permutation size {p.size}")
    return np.take(fd, p.map, axis=1)


def clip_and_repair(m_soft, m_bin, target: int) -> np.ndarray:
    """Keep the top-left target×target block of a row-one-hot matrix.

    Rows whose 1 fell outside the kept columns get their 1 re-placed at the
    argmax of the soft matrix's first `target` columns in that row, so the
    output keeps exactly one 1 per row.
    """
    ms = np.asarray(getattr(m_soft, "data", m_soft))
    mb = np.asarray(getattr(m_bin, "data", m_bin))
    if ms.shape != mb.shape:
        raise DimensionError(f"soft/binary shapes differ: {ms.shape} vs {mb.shape}")
    r, q = mb.shape
    if r < target or q < target:
        raise ConfigurationError(f"cannot clip {r}x{q} up to {target}x{target}")
    out = mb[:target, :target].astype(np.float32).copy()
    lost = np.where(out.sum(axis=1) == 0)[0]
    if lost.size:
        repair_cols = ms[lost, :target].argmax(axis=1)
        out[lost, repair_cols] = 1.0
    return out


# ---------------------------------------------------------------------------
# exports (matrix visualization dumps)
# ---------------------------------------------------------------------------


def save_matrix_csv(path, matrix):
    """Row-major integer CSV of a binary matrix."""
    md = np.asarray(getattr(matrix, "data", matrix))
    with open(path, "w") as fh:
        for row in md:
            fh.write(",".join(str(int(round(v))) for v in row) + "\n")


def save_matrix_pgm(path, matrix):
    """8-bit binary PGM (P5, maxval 255); ones render black, zeros white."""
    md = np.asarray(getattr(matrix, "data", matrix))
    if md.ndim != 2:
        raise DimensionError(f"PGM export needs a matrix, got shape {md.shape}")
    img = np.where(md >= 0.5, 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def load_matrix_csv(path) -> np.ndarray:
    with open(path) as fh:
        rows = [[float(v) for v in line.strip().split(",")] for line in fh if line.strip()]
    return np.asarray(rows, dtype=np.float32)
