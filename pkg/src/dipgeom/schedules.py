"""Rearrangement protocols on a 1D chain and their coupling schedules.

A configuration assigns every molecule a site of a 1D array.  Moves between
configurations are treated as instantaneous, so only the configurations
themselves carry interaction time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dipolar import NULL_ANGLE, DipoleSpec, angular_factor, coupling_constant, dipolar_kernel
from .dtwa import CouplingSchedule
from .errors import DegenerateCouplingError, DomainError

PROTOCOL_KINDS = ("static", "conveyor", "dim_emulation", "tree")


@dataclass(frozen=True, eq=False)
class ArrangementStep:
    """``site_assignment[m]`` is the site of molecule ``m``.

    ``block`` splits the chain into consecutive blocks of that length for
    adjacency bookkeeping (pairs straddling a block boundary are not counted
    as protocol edges); ``None`` means one block.
    """

    site_assignment: np.ndarray
    duration: float = 1.0
    block: int | None = None

    def __post_init__(self):
        a = np.asarray(self.site_assignment, dtype=int)
        n = a.size
        if a.ndim != 1 or not np.array_equal(np.sort(a), np.arange(n)):
            raise DomainError("site_assignment must be a permutation of 0..N-1")
        if not self.duration > 0:
            raise DomainError("duration must be positive")
        if self.block is not None and (self.block < 1 or n % self.block):
            raise DomainError("block length must divide N")
        object.__setattr__(self, "site_assignment", a)

    @property
    def n_spins(self) -> int:
        return self.site_assignment.size

    @property
    def order(self) -> np.ndarray:
        """Molecule occupying each site."""
        return np.argsort(self.site_assignment)

    def edges(self) -> set[tuple[int, int]]:
        """Nearest-neighbour molecule pairs, excluding block seams."""
        order = self.order
        blk = self.block or self.n_spins
        return {tuple(sorted((int(order[s]), int(order[s + 1]))))
                for s in range(self.n_spins - 1) if (s + 1) % blk}

    def all_edges(self) -> set[tuple[int, int]]:
        order = self.order
        return {tuple(sorted((int(order[s]), int(order[s + 1])))) for s in range(self.n_spins - 1)}


def _identity(n: int, duration: float) -> list[ArrangementStep]:
    return [ArrangementStep(np.arange(n), duration)]


# ---------------------------------------------------------------- conveyor


def conveyor_ring(n: int) -> np.ndarray:
    """Ring position of every chain site: even sites run out, odd sites run back."""
    s = np.arange(n)
    return np.where(s % 2 == 0, s // 2, n - 1 - s // 2)


def conveyor_permutation(n: int) -> np.ndarray:
    """Site map of one conveyor cycle: ``new_site = perm[old_site]``."""
    if n < 3:
        raise DomainError("conveyor needs N >= 3")
    ring = conveyor_ring(n)
    site_of_ring = np.argsort(ring)
    return site_of_ring[(ring + 1) % n]


def conveyor_moves(n: int) -> list[np.ndarray]:
    """The three sub-moves of a cycle as site maps, applied in order.

    1. even sites advance by two (the last even site wraps to site 0);
    2. odd sites retreat by two (site 1 wraps to the last odd site);
    3. site 0 and the last odd site swap.
    """
    if n < 3:
        raise DomainError("conveyor needs N >= 3")
    s = np.arange(n)
    last_even = n - 1 if (n - 1) % 2 == 0 else n - 2
    last_odd = n - 1 if (n - 1) % 2 == 1 else n - 2
    adv = s.copy()
    adv[0:last_even:2] += 2
    adv[last_even] = 0
    ret = s.copy()
    ret[3::2] -= 2
    ret[1] = last_odd
    swap = s.copy()
    swap[0], swap[last_odd] = last_odd, 0
    return [adv, ret, swap]


def conveyor_protocol(n: int, cycles: int, step_duration: float = 1.0) -> list[ArrangementStep]:
    """One interacting configuration per cycle; configuration ``k`` is ``perm^k``.

    With ``cycles == 0`` the chain stays static.
    """
    if n < 3:
        raise DomainError("conveyor needs N >= 3")
    if cycles < 0:
        raise DomainError("cycles must be non-negative")
    if cycles == 0:
        return _identity(n, step_duration)
    perm = conveyor_permutation(n)
    steps = []
    assign = np.arange(n)
    for _ in range(cycles):
        steps.append(ArrangementStep(assign, step_duration))
        assign = perm[assign]
    return steps


# ---------------------------------------------------------- dim emulation


def _side(n: int, d: int) -> int:
    if d < 1:
        raise DomainError("d must be >= 1")
    side = round(n ** (1.0 / d))
    for cand in (side - 1, side, side + 1):
        if cand >= 2 and cand**d == n:
            return cand
    raise DomainError(f"N = {n} is not a perfect {d}-th power of an integer >= 2")


def _axis_major_assignment(n: int, d: int, axis: int) -> np.ndarray:
    side = _side(n, d)
    digits = np.array(np.unravel_index(np.arange(n), (side,) * d, order="F"))
    # digit `axis` varies fastest along the chain
    perm_axes = [axis] + [a for a in range(d) if a != axis]
    return np.ravel_multi_index(digits[perm_axes], (side,) * d, order="F")


def dim_emulation_protocol(n: int, d: int, cycles: int, step_duration: float = 1.0) -> list[ArrangementStep]:
    """Each cycle visits ``d`` configurations; in configuration ``a`` molecules
    sharing all grid coordinates except coordinate ``a`` sit in one contiguous
    block of length ``N^(1/d)``.  Molecule ``i`` has coordinates given by its
    base-``L`` digits, least significant first, so for ``d = 2`` the second
    configuration gathers each class ``i = k mod L``.
    """
    if cycles < 0:
        raise DomainError("cycles must be non-negative")
    if d == 1:
        if n < 2:
            raise DomainError("need at least two molecules")
        return _identity(n, step_duration)
    side = _side(n, d)
    if cycles == 0:
        return [ArrangementStep(np.arange(n), step_duration, side)]
    configs = [_axis_major_assignment(n, d, a) for a in range(d)]
    return [ArrangementStep(c, step_duration, side) for _ in range(cycles) for c in configs]


def dim_emulation_moves(n: int, d: int) -> list[list[np.ndarray]]:
    """Gathering moves for every configuration change of one cycle.

    Entry ``a`` lists, for the change into configuration ``a + 1`` (wrapping
    back to the base), the molecule groups that are made contiguous: one group
    per block of the target configuration.  For ``d = 2`` move ``k`` of the
    first change gathers ``{k, k + L, k + 2L, ...}``.
    """
    side = _side(n, d)
    out = []
    for a in range(d):
        target = _axis_major_assignment(n, d, (a + 1) % d)
        order = np.argsort(target)
        out.append([order[b * side:(b + 1) * side] for b in range(n // side)])
    return out


def grid_edges(n: int, d: int) -> set[tuple[int, int]]:
    """Nearest-neighbour edges of the open ``L^d`` grid over molecule indices."""
    side = _side(n, d)
    coords = np.array(np.unravel_index(np.arange(n), (side,) * d, order="F")).T
    edges = set()
    for i, c in enumerate(coords):
        for a in range(d):
            if c[a] + 1 < side:
                j = i + side**a
                edges.add((i, j))
    return edges


# ------------------------------------------------------------------- tree


def tree_stage_orders(n: int) -> list[np.ndarray]:
    """Site order (molecule per site) for each stage of one tree cycle."""
    m = int(round(math.log2(n))) if n > 0 else 0
    if n < 4 or 2**m != n:
        raise DomainError("tree protocol needs N = 2^m with m >= 2")
    orders = [np.arange(n)]
    for stage in range(1, m):
        prev = orders[-1]
        size = n >> (stage - 1)
        blocks = [prev[b:b + size] for b in range(0, n, size)]
        orders.append(np.concatenate([np.concatenate((blk[0::2], blk[1::2])) for blk in blocks]))
    return orders


def tree_protocol(n: int, cycles: int, step_duration: float = 1.0) -> list[ArrangementStep]:
    """``log2 N`` configurations per cycle; in stage ``i`` neighbours within each
    block of ``N / 2^i`` sites differ by ``2^i`` in molecule index."""
    orders = tree_stage_orders(n)
    if cycles < 0:
        raise DomainError("cycles must be non-negative")
    if cycles == 0:
        return _identity(n, step_duration)
    stages = [ArrangementStep(np.argsort(o), step_duration, n >> i) for i, o in enumerate(orders)]
    return [s for _ in range(cycles) for s in stages]


# ---------------------------------------------------------- common helpers


@dataclass(frozen=True)
class ProtocolSpec:
    kind: str
    n_spins: int
    cycles: int
    d: int = 2
    step_duration: float = 1.0

    def __post_init__(self):
        if self.kind not in PROTOCOL_KINDS:
            raise DomainError(f"unknown protocol kind {self.kind!r}; expected one of {PROTOCOL_KINDS}")
        if self.kind == "dim_emulation":
            if self.d > 1:
                _side(self.n_spins, self.d)
        if self.kind == "tree":
            tree_stage_orders(self.n_spins)
        if self.n_spins < 2:
            raise DomainError("need at least two spins")

    def steps(self) -> list[ArrangementStep]:
        if self.kind == "static" or self.cycles == 0 and self.kind != "dim_emulation":
            return _identity(self.n_spins, self.step_duration)
        if self.kind == "conveyor":
            return conveyor_protocol(self.n_spins, self.cycles, self.step_duration)
        if self.kind == "dim_emulation":
            return dim_emulation_protocol(self.n_spins, self.d, self.cycles, self.step_duration)
        return tree_protocol(self.n_spins, self.cycles, self.step_duration)

    @property
    def steps_per_cycle(self) -> int:
        if self.kind == "conveyor":
            return 1
        if self.kind == "dim_emulation":
            return self.d
        if self.kind == "tree":
            return len(tree_stage_orders(self.n_spins))
        return 1


def adjacency_time(steps, n: int | None = None) -> np.ndarray:
    """Symmetric matrix of total time each pair spends as protocol neighbours."""
    n = steps[0].n_spins if n is None else n
    out = np.zeros((n, n))
    for st in steps:
        for i, j in st.edges():
            out[i, j] += st.duration
            out[j, i] += st.duration
    return out


def compose(perms) -> np.ndarray:
    """Composite site map of site maps applied left to right."""
    out = np.arange(len(perms[0]))
    for p in perms:
        out = np.asarray(p)[out]
    return out


def is_single_cycle(perm) -> bool:
    perm = np.asarray(perm)
    seen, x = 1, perm[0]
    while x != 0:
        x = perm[x]
        seen += 1
        if seen > len(perm):
            return False
    return seen == len(perm)


def realize_couplings(steps, spacing: float, dipole: DipoleSpec, theta: float = math.pi / 2,
                      truncation: float | None = None) -> CouplingSchedule:
    """Couplings for sites ``s * spacing`` along a line at ``theta`` to the field.

    Durations are kept dimensionless with reference ``|J|`` of a nearest-
    neighbour pair.  All pairs interact through the full ``1/r^3`` kernel
    unless ``truncation`` (meters) sets a cutoff radius.
    """
    if not spacing > 0:
        raise DomainError("spacing must be positive")
    if min(abs(theta - NULL_ANGLE), abs(theta - (math.pi - NULL_ANGLE))) < 1e-3:
        raise DegenerateCouplingError("theta is at the zero of the angular factor")
    n = steps[0].n_spins
    axis = np.array([1.0, 0.0, 0.0])
    line = np.array([math.cos(theta), math.sin(theta), 0.0])
    sites = np.arange(n)[:, None] * spacing * line
    const = coupling_constant(dipole)
    reference = abs(const * angular_factor(theta)) / spacing**3
    cache: dict[bytes, np.ndarray] = {}
    mats = []
    for st in steps:
        if st.n_spins != n:
            raise DomainError("all steps must have the same N")
        key = st.site_assignment.tobytes()
        if key not in cache:
            pos = sites[st.site_assignment]
            bonds = pos[None, :, :] - pos[:, None, :]
            with np.errstate(divide="ignore", invalid="ignore"):
                mat = const * dipolar_kernel(bonds, axis)
            np.fill_diagonal(mat, 0.0)
            if truncation is not None:
                dist = np.linalg.norm(bonds, axis=2)
                mat[dist > truncation] = 0.0
            cache[key] = mat
        mats.append(cache[key])
    return CouplingSchedule(tuple(mats), tuple(st.duration for st in steps), reference)


def move_budget(coupling_hz: float, move_distance: float, move_speed: float) -> int:
    """Moves that fit in one interaction period ``1/J``."""
    if not (coupling_hz > 0 and move_distance > 0 and move_speed > 0):
        raise DomainError("coupling, distance and speed must be positive")
    return int(math.floor((1.0 / coupling_hz) / (move_distance / move_speed) + 1e-9))
