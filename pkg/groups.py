"""
Group structures over coefficient indices and the reweighting that turns the ℓ2,1 norm into a
weighted 2-norm.

Groups are stored flat: `index` holds the concatenated member indices and `owner` the group id
of each entry, so group norms and weights are single np.bincount calls even for tens of
thousands of overlapping groups.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

import file_utils
from transforms import ORIENTATIONS, WaveletLayout

logger = logging.getLogger(__name__)

DEFAULT_TAU = 1e-10
STRATEGIES = ("G1", "G2")


@dataclass(frozen=True)
class GroupStructure:
    n: int
    groups: tuple
    index: np.ndarray = field(init=False, repr=False)
    owner: np.ndarray = field(init=False, repr=False)
    counts: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be positive, got {self.n}")
        groups = tuple(np.asarray(g, dtype=np.int64).ravel() for g in self.groups)
        if not groups:
            raise ValueError("at least one group is required")
        for i, g in enumerate(groups):
            if g.size == 0:
                raise ValueError(f"group {i} is empty")
            if g.min() < 0 or g.max() >= self.n:
                raise ValueError(f"group {i} has indices outside [0, {self.n})")
            if np.unique(g).size != g.size:
                raise ValueError(f"group {i} repeats an index")
        index = np.concatenate(groups)
        owner = np.repeat(np.arange(len(groups)), [g.size for g in groups])
        counts = np.bincount(index, minlength=self.n)
        uncovered = np.flatnonzero(counts == 0)
        if uncovered.size:
            raise ValueError(f"{uncovered.size} indices belong to no group (first: {uncovered[0]})")
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "index", index)
        object.__setattr__(self, "owner", owner)
        object.__setattr__(self, "counts", counts)

    @property
    def size(self) -> int:
        return len(self.groups)

    @property
    def overlapping(self) -> bool:
        return bool(self.counts.max() > 1)

    @property
    def membership(self) -> List[List[int]]:
        """G_j: the groups containing each index j."""
        result = [[] for _ in range(self.n)]
        for j, i in zip(self.index.tolist(), self.owner.tolist()):
            result[j].append(i)
        return result

    def group_norms(self, z: np.ndarray) -> np.ndarray:
        z = _check_vector(z, self.n)
        return np.sqrt(np.bincount(self.owner, weights=z[self.index] ** 2, minlength=self.size))


@dataclass(frozen=True)
class WeightVector:
    diag: np.ndarray
    tau: float

    @property
    def inverse(self) -> np.ndarray:
        return 1.0 / self.diag

    @staticmethod
    def identity(n: int) -> "WeightVector":
        return WeightVector(np.ones(n), 0.0)


def _check_vector(z, n: int) -> np.ndarray:
    z = np.asarray(z, dtype=float).ravel()
    if z.size != n:
        raise ValueError(f"expected a vector of length {n}, got {z.size}")
    return z


def singleton_groups(n: int) -> GroupStructure:
    return GroupStructure(n, tuple(np.arange(n)[:, None]))


def temporal_groups(n_space: int, n_time: int) -> GroupStructure:
    """One group per spatial location over all time points (space-fastest storage)."""
    if n_space < 1 or n_time < 1:
        raise ValueError(f"n_space and n_time must be positive, got {n_space}, {n_time}")
    strided = np.arange(n_space)[:, None] + n_space * np.arange(n_time)[None, :]
    return GroupStructure(n_space * n_time, tuple(strided))


def wavelet_tree_groups(layout: WaveletLayout, strategy: str = "G1") -> GroupStructure:
    """
    Parent/child groups of the wavelet tree.

    G1: one {parent, child} group per parent-child pair. G2: one {parent, 4 children} group per
    parent. Coefficients in no tree group (the coarsest LL block) become singleton groups.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown grouping strategy {strategy!r}, expected one of {STRATEGIES}")
    if layout.levels < 2:
        raise ValueError("wavelet tree groups need at least 2 levels")

    blocks = []
    for level in range(2, layout.levels + 1):
        for orientation in ORIENTATIONS:
            parents = layout.block_indices(level, orientation).reshape(-1, 1)
            children = layout.children(level, orientation).reshape(-1, 4)
            if strategy == "G1":
                blocks.append(np.column_stack([np.repeat(parents[:, 0], 4), children.ravel()]))
            else:
                blocks.append(np.hstack([parents, children]))

    tree = [row for block in blocks for row in block]
    covered = np.zeros(layout.size, dtype=bool)
    for block in blocks:
        covered[block.ravel()] = True
    singles = [np.array([j]) for j in np.flatnonzero(~covered)]
    logger.debug(f"{strategy} groups on {layout.rows}x{layout.cols}/{layout.levels}: "
                 f"{len(tree)} tree groups + {len(singles)} singletons")
    return GroupStructure(layout.size, tuple(tree) + tuple(singles))


def group_norm(gs: GroupStructure, z) -> float:
    """‖z‖₂,₁ = Σ_i ‖z_{g_i}‖₂"""
    return float(gs.group_norms(z).sum())


def smoothed_group_norm(gs: GroupStructure, z, tau: float) -> float:
    return float(np.sqrt(gs.group_norms(z) ** 2 + tau ** 2).sum())


def compute_weights(gs: GroupStructure, z, tau: float = DEFAULT_TAU) -> WeightVector:
    """W_jj = sqrt( Σ_{i ∈ G_j} 1 / sqrt(‖z_{g_i}‖² + τ²) )"""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    inverse_norms = 1.0 / np.sqrt(gs.group_norms(z) ** 2 + tau ** 2)
    squared = np.bincount(gs.index, weights=inverse_norms[gs.owner], minlength=gs.n)
    return WeightVector(np.sqrt(squared), tau)


def combined_weights(w1: WeightVector, w2: WeightVector, tau_lambda: float) -> WeightVector:
    """Diagonal R factor of the stacked [W1; τ_λ W2]: its column norms."""
    if w1.diag.shape != w2.diag.shape:
        raise ValueError(f"weight lengths differ: {w1.diag.size} vs {w2.diag.size}")
    if tau_lambda <= 0:
        raise ValueError(f"tau_lambda must be positive, got {tau_lambda}")
    return WeightVector(np.sqrt(w1.diag ** 2 + tau_lambda ** 2 * w2.diag ** 2), w1.tau)


##############################
### TEXT FORMAT
##############################

def format_groups(gs: GroupStructure) -> str:
    lines = [f"# n = {gs.n}"]
    lines.extend(f"{i}: {' '.join(str(j) for j in g.tolist())}" for i, g in enumerate(gs.groups))
    return "\n".join(lines) + "\n"


def parse_groups(text: str) -> GroupStructure:
    n = None
    groups: List[Sequence[int]] = []
    for line_number, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            if key.strip() == "n":
                n = int(value)
            continue
        group_id, sep, members = line.partition(":")
        if not sep:
            raise ValueError(f"line {line_number}: expected 'group_id: i1 i2 ...'")
        if int(group_id) != len(groups):
            raise ValueError(f"line {line_number}: group ids must be consecutive from 0")
        groups.append([int(t) for t in members.split()])
    if not groups:
        raise ValueError("no groups found")
    if n is None:
        n = max(max(g) for g in groups if g) + 1
    return GroupStructure(n, tuple(groups))


def write_groups(gs: GroupStructure, filename: str, output_dir: str = None) -> str:
    filename = file_utils.append_dir_to_file_name(filename, output_dir)
    with open(filename, "w", encoding="utf-8", newline="\n") as f:
        f.write(format_groups(gs))
    logger.debug(f"{gs.size} groups saved in '{filename}'")
    return filename


def read_groups(file_path: str) -> GroupStructure:
    with open(file_path, "r", encoding="utf-8") as f:
        return parse_groups(f.read())
