"""Partitioned two-layer networks and the matrix utilities shared by the rest of the package.

Agents of each layer are laid out contiguously by community, so every adjacency
block is block-diagonal with respect to the community partition. Cross-layer
blocks pair community ``c`` of the technology layer with community ``c`` of the
science layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import DimensionError, DomainError, NumericError

DENSE_EIG_CUTOFF = 200
POWER_ITER_BUDGET = 20_000

NETWORK_KINDS = ("binary", "probability", "weighted")


@dataclass(frozen=True)
class CommunityPartition:
    """Community sizes of one layer; agents are indexed contiguously per community."""

    sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if not sizes:
            raise DomainError("a partition needs at least one community")
        if any(s < 1 for s in sizes):
            raise DomainError(f"community sizes must be >= 1, got {sizes}")
        object.__setattr__(self, "sizes", sizes)

    @classmethod
    def equal(cls, n_communities: int, size: int) -> "CommunityPartition":
        return cls((size,) * n_communities)

    @classmethod
    def from_labels(cls, labels: Sequence[int]) -> "CommunityPartition":
        """Build a partition from per-node community labels (must be contiguous, 0..c-1)."""
        labels = np.asarray(labels, dtype=int)
        if labels.size == 0:
            raise DomainError("empty label vector")
        if np.any(np.diff(labels) < 0):
            raise DomainError("nodes must be laid out contiguously by community")
        uniq, counts = np.unique(labels, return_counts=True)
        if not np.array_equal(uniq, np.arange(uniq.size)):
            raise DomainError(f"community labels must be 0..c-1, got {uniq.tolist()}")
        return cls(tuple(int(c) for c in counts))

    @property
    def total(self) -> int:
        return sum(self.sizes)

    @property
    def n_communities(self) -> int:
        return len(self.sizes)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)])

    def slices(self) -> list[slice]:
        off = self.offsets
        return [slice(int(off[c]), int(off[c + 1])) for c in range(self.n_communities)]

    def labels(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_communities), self.sizes)

    def within_index(self) -> np.ndarray:
        """Position of every agent inside its own community."""
        return np.concatenate([np.arange(s) for s in self.sizes])

    def mask(self) -> np.ndarray:
        """Boolean n x n mask of same-community pairs."""
        lab = self.labels()
        return lab[:, None] == lab[None, :]


def cross_mask(rows: CommunityPartition, cols: CommunityPartition) -> np.ndarray:
    if rows.n_communities != cols.n_communities:
        raise DimensionError(
            f"cross blocks need equal community counts, got {rows.n_communities} and {cols.n_communities}"
        )
    return rows.labels()[:, None] == cols.labels()[None, :]


@dataclass(frozen=True)
class LayeredNetwork:
    """The four adjacency blocks of a technology (T) / science (S) network pair.

    ``kind`` distinguishes observed binary graphs, predicted link probabilities and
    generic nonnegative weights (e.g. row-normalized). Symmetry of the within-layer
    blocks is enforced for the first two kinds only.
    """

    g_T: np.ndarray
    g_S: np.ndarray
    g_TS: np.ndarray
    g_ST: np.ndarray
    partition_T: CommunityPartition
    partition_S: CommunityPartition
    kind: str = "binary"

    def __post_init__(self):
        if self.kind not in NETWORK_KINDS:
            raise DomainError(f"unknown network kind {self.kind!r}")
        nT, nS = self.partition_T.total, self.partition_S.total
        shapes = {"g_T": (nT, nT), "g_S": (nS, nS), "g_TS": (nT, nS), "g_ST": (nS, nT)}
        for name, shape in shapes.items():
            m = np.array(getattr(self, name), dtype=float)
            if m.shape != shape:
                raise DimensionError(f"{name} has shape {m.shape}, expected {shape}")
            if not np.all(np.isfinite(m)):
                raise DomainError(f"{name} has non-finite entries")
            if np.any(m < 0):
                raise DomainError(f"{name} has negative entries")
            if self.kind == "binary" and not np.all((m == 0) | (m == 1)):
                raise DomainError(f"{name} is not binary")
            if self.kind == "probability" and np.any(m > 1):
                raise DomainError(f"{name} has probabilities above 1")
            m.setflags(write=False)
            object.__setattr__(self, name, m)

        for name, part in (("g_T", self.partition_T), ("g_S", self.partition_S)):
            m = getattr(self, name)
            if np.any(np.diag(m) != 0):
                raise DomainError(f"{name} must have a zero diagonal")
            if self.kind != "weighted" and not np.array_equal(m, m.T):
                raise DomainError(f"{name} must be symmetric")
            if np.any(m[~part.mask()] != 0):
                raise DomainError(f"{name} has links across communities")
        if nT and nS:
            cm = cross_mask(self.partition_T, self.partition_S)
            if np.any(self.g_TS[~cm] != 0) or np.any(self.g_ST[~cm.T] != 0):
                raise DomainError("cross-layer blocks link different communities")

    @property
    def n_T(self) -> int:
        return self.partition_T.total

    @property
    def n_S(self) -> int:
        return self.partition_S.total

    @classmethod
    def empty(cls, partition_T: CommunityPartition, partition_S: CommunityPartition) -> "LayeredNetwork":
        nT, nS = partition_T.total, partition_S.total
        return cls(np.zeros((nT, nT)), np.zeros((nS, nS)), np.zeros((nT, nS)), np.zeros((nS, nT)),
                   partition_T, partition_S)

    def blocks(self) -> dict[str, np.ndarray]:
        return {"G_T": self.g_T, "G_S": self.g_S, "G_TS": self.g_TS, "G_ST": self.g_ST}

    def row_normalized(self) -> "LayeredNetwork":
        return LayeredNetwork(
            row_normalize(self.g_T), row_normalize(self.g_S),
            row_normalize(self.g_TS), row_normalize(self.g_ST),
            self.partition_T, self.partition_S, kind="weighted",
        )

    def replace(self, kind: str | None = None, **blocks) -> "LayeredNetwork":
        cur = dict(g_T=self.g_T, g_S=self.g_S, g_TS=self.g_TS, g_ST=self.g_ST)
        cur.update(blocks)
        return LayeredNetwork(partition_T=self.partition_T, partition_S=self.partition_S,
                              kind=kind or self.kind, **cur)

    def community_blocks(self) -> Iterator[tuple[slice, slice]]:
        """Yield (T slice, S slice) per community; requires equal community counts."""
        sT, sS = self.partition_T.slices(), self.partition_S.slices()
        if len(sT) != len(sS):
            raise DimensionError("layers have different community counts")
        yield from zip(sT, sS)


@dataclass(frozen=True)
class GameParameters:
    """Interaction strengths.

    ``lambda_T``/``lambda_S`` are within-layer peer effects and ``beta`` the
    own-activity interdependence of the game. ``lambda_TS``/``lambda_ST`` are the
    cross-activity effects of the econometric model; ``econometric=True`` enforces
    ``|lambda_T| + |lambda_TS| < 1`` and ``|lambda_S| + |lambda_ST| < 1``.
    """

    lambda_T: float = 0.0
    lambda_S: float = 0.0
    beta: float = 0.0
    lambda_TS: float = 0.0
    lambda_ST: float = 0.0
    econometric: bool = field(default=False, compare=False)

    def __post_init__(self):
        if not abs(self.beta) < 1:
            raise DomainError(f"|beta| must be < 1, got {self.beta}")
        if self.econometric:
            if not abs(self.lambda_T) + abs(self.lambda_TS) < 1:
                raise DomainError("need |lambda_T| + |lambda_TS| < 1")
            if not abs(self.lambda_S) + abs(self.lambda_ST) < 1:
                raise DomainError("need |lambda_S| + |lambda_ST| < 1")
        else:
            if self.lambda_T < 0 or self.lambda_S < 0:
                raise DomainError("game peer effects must be nonnegative")


@dataclass(frozen=True)
class AgentAbilities:
    alpha_T: np.ndarray
    alpha_S: np.ndarray

    def __post_init__(self):
        for name in ("alpha_T", "alpha_S"):
            v = np.array(getattr(self, name), dtype=float).reshape(-1)
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    def check(self, net: LayeredNetwork) -> None:
        if self.alpha_T.size != net.n_T or self.alpha_S.size != net.n_S:
            raise DimensionError(
                f"abilities of length ({self.alpha_T.size}, {self.alpha_S.size}) "
                f"do not match network sizes ({net.n_T}, {net.n_S})"
            )

    def __mul__(self, c: float) -> "AgentAbilities":
        return AgentAbilities(self.alpha_T * c, self.alpha_S * c)

    __rmul__ = __mul__


@dataclass(frozen=True)
class Stability:
    stable: bool
    margin: float
    radius_T: float
    radius_S: float

    def __bool__(self):
        return self.stable


def _power_radius(m: np.ndarray, tol: float, max_iter: int) -> float:
    """Dominant |eigenvalue| of a nonnegative or symmetric matrix by power iteration.

    Nonnegative matrices are shifted by the identity so that periodic (e.g.
    bipartite) graphs still converge; symmetric matrices with negative entries
    iterate on ``m @ m``.
    """
    n = m.shape[0]
    symmetric = np.array_equal(m, m.T)
    if np.all(m >= 0):
        op, shift, squared = m + np.eye(n), 1.0, False
    elif symmetric:
        op, shift, squared = m @ m, 0.0, True
    else:
        return float(np.max(np.abs(np.linalg.eigvals(m))))
    x = np.ones(n) / np.sqrt(n)
    est = 0.0
    for _ in range(max_iter):
        y = op @ x
        ny = np.linalg.norm(y)
        if ny == 0:
            return 0.0
        new = float(x @ y) if symmetric else ny  # Rayleigh quotient / norm ratio
        x = y / ny
        if abs(new - est) <= tol * new and np.linalg.norm(op @ x - new * x) <= 1e-7 * new:
            est = new
            break
        est = new
    else:
        raise NumericError(f"power iteration did not converge within {max_iter} iterations")
    r = est - shift
    return float(np.sqrt(max(r, 0.0)) if squared else max(r, 0.0))


def spectral_radius(m, *, tol: float = 1e-13, max_iter: int = POWER_ITER_BUDGET) -> float:
    """Largest absolute eigenvalue of a square matrix.

    Dense eigendecomposition below ``DENSE_EIG_CUTOFF`` rows, power iteration with a
    Rayleigh-quotient stopping rule above it.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"spectral_radius needs a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DomainError("matrix has non-finite entries")
    n = m.shape[0]
    if n == 0 or not np.any(m):
        return 0.0
    if n < DENSE_EIG_CUTOFF:
        if np.array_equal(m, m.T):
            return float(np.max(np.abs(np.linalg.eigvalsh(m))))
        return float(np.max(np.abs(np.linalg.eigvals(m))))
    return _power_radius(m, tol, max_iter)


def block_spectral_radius(m: np.ndarray, partition: CommunityPartition) -> float:
    """Spectral radius of a block-diagonal matrix, computed community by community."""
    return max((spectral_radius(m[s, s]) for s in partition.slices()), default=0.0)


def check_stability(p: GameParameters, net: LayeredNetwork, *, scale: float = 1.0) -> Stability:
    """``max(lambda_T rho(G_T), lambda_S rho(G_S)) < 1 - |beta|`` with its signed margin.

    ``scale`` multiplies both peer effects (2 gives the planner's condition).
    """
    rT = block_spectral_radius(net.g_T, net.partition_T)
    rS = block_spectral_radius(net.g_S, net.partition_S)
    load = max(scale * p.lambda_T * rT, scale * p.lambda_S * rS)
    margin = (1.0 - abs(p.beta)) - load
    return Stability(bool(margin > 0), float(margin), rT, rS)


def row_normalize(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if np.any(m < 0):
        raise DomainError("row_normalize needs nonnegative entries")
    sums = m.sum(axis=1, keepdims=True)
    out = m.copy()
    nz = sums[:, 0] > 0
    out[nz] = m[nz] / sums[nz]
    return out


def assemble_block_diagonal(blocks: Sequence[np.ndarray]) -> np.ndarray:
    if len(blocks) == 0:
        raise DomainError("no blocks to assemble")
    mats = [np.atleast_2d(np.asarray(b, dtype=float)) for b in blocks]
    for b in mats:
        if b.ndim != 2 or not np.all(np.isfinite(b)):
            raise DomainError("blocks must be finite 2-d arrays")
    rows = sum(b.shape[0] for b in mats)
    cols = sum(b.shape[1] for b in mats)
    out = np.zeros((rows, cols))
    r = c = 0
    for b in mats:
        out[r:r + b.shape[0], c:c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out
