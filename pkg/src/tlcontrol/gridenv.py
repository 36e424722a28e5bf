"""Corridor/intersection maps and their pair-state motion models.

Map file format: an ASCII grid (``#`` wall, ``.`` open, any other character
an open cell carrying a legend marker), then a ``legend`` section binding
markers or ``@row,col`` coordinates to observation names, then a start line
naming one cell in the previous region and one in the current region:

    ##########
    #........#
    ####.#####
    legend
    a: upload
    @1,1: unsafe
    start 1,1 1,2

Cells with at least three open neighbors are intersections (always
single-cell regions); the remaining open cells form corridor regions as
maximal straight runs, horizontal runs first, so an L-bend splits into two
adjacent corridor regions. A motion state is an ordered pair of adjacent
regions (previous, current): road following is the only control available
in corridors, while intersections offer turn controls named relative to the
direction of travel. The noise model sends each control to its intended
adjacent region with probability eta and spreads the rest uniformly over
the other feasible forward outcomes.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .models import LabeledModel, NTS, MDP, validate_model

ACTIONS = ("FollowRoad", "GoLeft", "GoRight", "GoStraight")

_N, _E, _S, _W = (-1, 0), (0, 1), (1, 0), (0, -1)
_DIRS = (_N, _E, _S, _W)
_OPPOSITE = {_N: _S, _S: _N, _E: _W, _W: _E}
_ROT_LEFT = {_N: _W, _W: _S, _S: _E, _E: _N}
_ROT_RIGHT = {_N: _E, _E: _S, _S: _W, _W: _N}


class MapError(ValueError):
    """Malformed map file or infeasible query against it."""


@dataclass(frozen=True)
class Region:
    ident: int
    kind: str  # "corridor" | "intersection"
    cells: tuple[tuple[int, int], ...]
    name: str


@dataclass(frozen=True)
class EnvMap:
    grid: tuple[str, ...]
    regions: tuple[Region, ...]
    adjacency: Mapping[int, tuple[int, ...]]
    region_obs: Mapping[int, frozenset[str]]
    props: tuple[str, ...]
    start: tuple[int, int] | None  # (previous region, current region)

    def region_at(self, cell: tuple[int, int]) -> int:
        for region in self.regions:
            if cell in region.cells:
                return region.ident
        raise MapError(f"cell {cell} belongs to no region")


def parse_map(text: str) -> EnvMap:
    lines = text.splitlines()
    try:
        split = next(i for i, ln in enumerate(lines) if ln.strip() == "legend")
    except StopIteration:
        raise MapError("missing 'legend' section") from None
    # Comment lines start with '#' and contain a space; wall rows never do.
    grid = [ln.rstrip("\n") for ln in lines[:split]
            if ln.strip() and not (ln.startswith("#") and " " in ln.strip())]
    if not grid:
        raise MapError("empty grid")
    width = len(grid[0])
    if any(len(row) != width for row in grid):
        raise MapError("grid is not rectangular")

    marker_obs: dict[str, frozenset[str]] = {}
    cell_obs: dict[tuple[int, int], frozenset[str]] = {}
    start_cells = None
    for raw in lines[split + 1:]:
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("start"):
            parts = line.split()
            if len(parts) != 3:
                raise MapError("expected 'start r1,c1 r2,c2'")
            start_cells = (_parse_cell(parts[1]), _parse_cell(parts[2]))
            continue
        if ":" not in line:
            raise MapError(f"bad legend line {line!r}")
        head, rest = line.split(":", 1)
        obs = frozenset(rest.split())
        head = head.strip()
        if head.startswith("@"):
            cell_obs[_parse_cell(head[1:])] = obs
        elif len(head) == 1:
            marker_obs[head] = obs
        else:
            raise MapError(f"bad legend key {head!r}")

    open_cells = set()
    for r, row in enumerate(grid):
        for c, ch in enumerate(row):
            if ch == "#":
                continue
            open_cells.add((r, c))
            if ch != "." and ch not in marker_obs:
                raise MapError(f"unknown legend symbol {ch!r} at {(r, c)}")

    def open_neighbors(cell):
        r, c = cell
        return [(r + dr, c + dc) for dr, dc in _DIRS if (r + dr, c + dc) in open_cells]

    crossings = {cell for cell in open_cells if len(open_neighbors(cell)) >= 3}
    for cell in crossings:
        for nb in open_neighbors(cell):
            if nb in crossings:
                raise MapError(
                    f"corridor-free intersection adjacency between {cell} and {nb}")

    corridor_cells = open_cells - crossings
    taken: set[tuple[int, int]] = set()
    runs: list[list[tuple[int, int]]] = []
    for r in range(len(grid)):
        run: list[tuple[int, int]] = []
        for c in range(width + 1):
            if (r, c) in corridor_cells:
                run.append((r, c))
            else:
                if len(run) >= 2:
                    runs.append(run)
                    taken.update(run)
                run = []
    vertical: list[list[tuple[int, int]]] = []
    for c in range(width):
        run = []
        for r in range(len(grid) + 1):
            if (r, c) in corridor_cells and (r, c) not in taken:
                run.append((r, c))
            else:
                if run:
                    vertical.append(run)
                run = []
    corridor_groups = sorted(runs + vertical, key=lambda cells: min(cells))

    regions: list[Region] = []
    for i, cell in enumerate(sorted(crossings)):
        regions.append(Region(ident=len(regions), kind="intersection",
                              cells=(cell,), name=f"I{i + 1}"))
    for i, cells in enumerate(corridor_groups):
        regions.append(Region(ident=len(regions), kind="corridor",
                              cells=tuple(sorted(cells)), name=f"C{i + 1}"))

    where = {cell: region.ident for region in regions for cell in region.cells}
    adjacency: dict[int, set[int]] = {region.ident: set() for region in regions}
    for cell in open_cells:
        for nb in open_neighbors(cell):
            a, b = where[cell], where[nb]
            if a != b:
                adjacency[a].add(b)
                adjacency[b].add(a)

    region_obs: dict[int, set[str]] = {region.ident: set() for region in regions}
    for region in regions:
        for (r, c) in region.cells:
            ch = grid[r][c]
            if ch not in (".", "#"):
                region_obs[region.ident].update(marker_obs[ch])
            if (r, c) in cell_obs:
                region_obs[region.ident].update(cell_obs[(r, c)])
    props = tuple(sorted(set().union(*region_obs.values()) if region_obs else set()))

    start = None
    if start_cells is not None:
        prev_cell, cur_cell = start_cells
        if prev_cell not in open_cells or cur_cell not in open_cells:
            raise MapError(f"start cells {start_cells} are not both open")
        prev_region, cur_region = where[prev_cell], where[cur_cell]
        if prev_region == cur_region:
            raise MapError("start cells lie in the same region")
        if cur_region not in adjacency[prev_region]:
            raise MapError("start regions are not adjacent")
        start = (prev_region, cur_region)

    return EnvMap(
        grid=tuple(grid),
        regions=tuple(regions),
        adjacency={k: tuple(sorted(v)) for k, v in adjacency.items()},
        region_obs={k: frozenset(v) for k, v in region_obs.items()},
        props=props,
        start=start,
    )


def _parse_cell(token: str) -> tuple[int, int]:
    try:
        r, c = token.split(",")
        return (int(r), int(c))
    except ValueError:
        raise MapError(f"bad cell coordinate {token!r}") from None


# ---------------------------------------------------------------------------
# Pair states


def pair_states(env: EnvMap) -> list[tuple[int, int]]:
    """All ordered (previous, current) adjacent region pairs, sorted."""
    return sorted((p, c) for p in env.adjacency for c in env.adjacency[p])


def _arms(env: EnvMap, region: Region) -> dict[tuple[int, int], int]:
    (r, c) = region.cells[0]
    where = {cell: reg.ident for reg in env.regions for cell in reg.cells}
    arms = {}
    for d in _DIRS:
        nb = (r + d[0], c + d[1])
        if nb in where:
            arms[d] = where[nb]
    return arms


def enabled_actions(env: EnvMap, pair: tuple[int, int]) -> list[str]:
    prev, cur = pair
    region = env.regions[cur]
    if region.kind == "corridor":
        return ["FollowRoad"]
    arms = _arms(env, region)
    back = next(d for d, reg in arms.items() if reg == prev)
    heading = _OPPOSITE[back]
    available = []
    for name, d in (("GoLeft", _ROT_LEFT[heading]),
                    ("GoRight", _ROT_RIGHT[heading]),
                    ("GoStraight", heading)):
        if d in arms:
            available.append(name)
    return sorted(available, key=ACTIONS.index)


CONFUSION_MODES = ("uniform", "undershoot")


def outcome_support(env: EnvMap, pair: tuple[int, int], action: str,
                    confusion: str = "uniform") -> tuple[int, tuple[int, ...]]:
    """(intended region, wrong-but-feasible regions) for one control.

    ``uniform`` lets a failed control end up in any other forward arm;
    ``undershoot`` lets a failed turn carry straight through the junction
    while straight motion stays reliable (wrong-outcome supports then
    distinguish the controls at every junction geometry).
    """
    if confusion not in CONFUSION_MODES:
        raise MapError(f"unknown confusion model {confusion!r}")
    prev, cur = pair
    region = env.regions[cur]
    if region.kind == "corridor":
        if action != "FollowRoad":
            raise MapError(f"{action} is not enabled in corridor {region.name}")
        ends = [reg for reg in env.adjacency[cur] if reg != prev]
        if len(ends) > 1:
            raise MapError(f"corridor {region.name} has an ambiguous far end")
        # Dead ends turn the robot around.
        return (ends[0] if ends else prev), ()
    arms = _arms(env, region)
    back = next(d for d, reg in arms.items() if reg == prev)
    heading = _OPPOSITE[back]
    targets = {"GoLeft": _ROT_LEFT[heading], "GoRight": _ROT_RIGHT[heading],
               "GoStraight": heading}
    if action not in targets or targets[action] not in arms:
        raise MapError(f"{action} is not enabled at {region.name} entered from "
                       f"{env.regions[prev].name}")
    intended = arms[targets[action]]
    if confusion == "uniform":
        wrong = tuple(sorted(arms[d] for d in arms
                             if d != back and d != targets[action]))
    else:
        wrong = ()
        if action in ("GoLeft", "GoRight") and heading in arms:
            wrong = (arms[heading],)
    return intended, wrong


def build_nts(env: EnvMap, confusion: str = "uniform") -> LabeledModel:
    """Possibilistic pair-state model of the environment (support matches
    the noise model run with the same confusion mode)."""
    pairs = pair_states(env)
    if env.start is None:
        raise MapError("map has no 'start' line")
    if env.start not in pairs:
        raise MapError("start pair is not a reachable motion state")
    index = {pair: i for i, pair in enumerate(pairs)}
    enabled: list[tuple[int, ...]] = []
    transitions: dict[tuple[int, int], tuple[tuple[int, float], ...]] = {}
    labels = []
    for i, (prev, cur) in enumerate(pairs):
        names = enabled_actions(env, (prev, cur))
        ids = tuple(ACTIONS.index(n) for n in names)
        enabled.append(ids)
        for name, u in zip(names, ids):
            intended, wrong = outcome_support(env, (prev, cur), name, confusion)
            succs = sorted({index[(cur, out)] for out in (intended, *wrong)})
            transitions[(i, u)] = tuple((s, 1.0) for s in succs)
        mask = 0
        for obs in env.region_obs[cur]:
            mask |= 1 << env.props.index(obs)
        labels.append(mask)
    model = LabeledModel(
        n_states=len(pairs),
        initial=index[env.start],
        actions=ACTIONS,
        enabled=tuple(enabled),
        transitions=transitions,
        props=env.props,
        labels=tuple(labels),
        mode=NTS,
        state_names=tuple(f"{env.regions[p].name}-{env.regions[c].name}"
                          for p, c in pairs),
    )
    validate_model(model)
    return model


# ---------------------------------------------------------------------------
# Noise model


@dataclass(frozen=True)
class NoiseModel:
    """Closed-form control noise: the intended outcome with probability eta,
    the rest split uniformly over the other feasible outcomes. ``mc_runs``
    switches to Monte-Carlo frequency estimates from that distribution,
    seeded per (state, action) so repeated queries agree."""

    eta: float | Mapping[str, float] = 0.9
    confusion: str = "uniform"
    mc_runs: int | None = None
    seed: int = 0

    def success_probability(self, action: str) -> float:
        eta = self.eta[action] if isinstance(self.eta, Mapping) else self.eta
        if not (0.0 < eta <= 1.0):
            raise MapError(f"success probability {eta} for {action} outside (0, 1]")
        return float(eta)


def transition_probs(env: EnvMap, noise: NoiseModel, pair: tuple[int, int],
                     action: str) -> tuple[tuple[tuple[int, int], float], ...]:
    """Outcome distribution over successor pair states for one control."""
    prev, cur = pair
    intended, wrong = outcome_support(env, pair, action, noise.confusion)
    if not wrong:
        dist = [((cur, intended), 1.0)]
    else:
        eta = noise.success_probability(action)
        slip = (1.0 - eta) / len(wrong)
        dist = [((cur, intended), eta)] + [((cur, out), slip) for out in wrong]
        dist = [(succ, p) for succ, p in dist if p > 0]
    if noise.mc_runs:
        rng = np.random.default_rng([noise.seed, prev, cur, ACTIONS.index(action)])
        outcomes = rng.choice(len(dist), size=noise.mc_runs,
                              p=[p for _, p in dist])
        counts = np.bincount(outcomes, minlength=len(dist))
        dist = [(succ, count / noise.mc_runs)
                for (succ, _), count in zip(dist, counts) if count]
    return tuple(sorted(dist))


def build_mdp(env: EnvMap, noise: NoiseModel) -> LabeledModel:
    """Materialize the full probabilistic model (for the exact oracles; the
    lazy path never needs it)."""
    nts = build_nts(env, noise.confusion)
    pairs = pair_states(env)
    index = {pair: i for i, pair in enumerate(pairs)}
    transitions = {}
    for i, pair in enumerate(pairs):
        for u in nts.enabled[i]:
            dist = transition_probs(env, noise, pair, ACTIONS[u])
            transitions[(i, u)] = tuple(sorted((index[succ], p) for succ, p in dist))
    model = LabeledModel(
        n_states=nts.n_states,
        initial=nts.initial,
        actions=nts.actions,
        enabled=nts.enabled,
        transitions=transitions,
        props=nts.props,
        labels=nts.labels,
        mode=MDP,
        state_names=nts.state_names,
    )
    validate_model(model)
    return model


class GridTransitionSource:
    """Lazy, memoized transition probabilities over pair-state indices.

    Each distinct (state, action) pair is computed once; the counter only
    moves on first computation. Reads are lock-free, insertion is exclusive.
    """

    def __init__(self, env: EnvMap, noise: NoiseModel):
        self._env = env
        self._noise = noise
        self._pairs = pair_states(env)
        self._index = {pair: i for i, pair in enumerate(self._pairs)}
        self._memo: dict[tuple[int, int], tuple[tuple[int, float], ...]] = {}
        self._lock = threading.Lock()

    def __call__(self, state: int, action: int) -> tuple[tuple[int, float], ...]:
        key = (state, action)
        row = self._memo.get(key)
        if row is None:
            dist = transition_probs(self._env, self._noise,
                                    self._pairs[state], ACTIONS[action])
            row = tuple(sorted((self._index[succ], p) for succ, p in dist))
            with self._lock:
                self._memo.setdefault(key, row)
        return self._memo[key]

    @property
    def pairs_computed(self) -> int:
        return len(self._memo)
