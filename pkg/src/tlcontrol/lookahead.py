"""Multi-step lookahead softmax policy over a possibilistic SSP.

The policy scores every length-t action sequence from the current state by
two features computed from possibilistic reachability alone: the summed
safety score of reachable neighborhood states, and the summed change in
goal distance over the same states. Sequence scores exp(theta . f) are
normalized into a distribution and marginalized onto first actions; the
log-policy gradient has the closed form

    psi(i, u) = E[f | first action = u] - E[f]

with expectations under the sequence softmax. Features do not depend on
theta, so per-state tables are built once (lazily) and reused as theta
moves.
"""

from __future__ import annotations

from collections import deque
from typing import Iterable

import numpy as np

from .models import LabeledModel, ModelError
from .synthesis import SspModel


class SequenceCapExceeded(RuntimeError):
    """Lookahead expansion produced more sequences than the configured cap."""


def min_distances(
    m: LabeledModel, targets: Iterable[int], blocked_sources: frozenset[int] = frozenset()
) -> np.ndarray:
    """Minimum possibilistic step count from every state to ``targets``.

    Multi-source BFS on the reversed edge relation (any enabled action);
    unreachable states map to inf. Edges leaving ``blocked_sources`` are
    ignored.
    """
    targets = set(targets)
    if not targets:
        raise ModelError("min_distances needs a nonempty target set")
    reverse: dict[int, list[int]] = {q: [] for q in range(m.n_states)}
    for (q, _u), row in m.transitions.items():
        if q in blocked_sources:
            continue
        for succ, _ in row:
            reverse[succ].append(q)
    dist = np.full(m.n_states, np.inf)
    queue = deque()
    for t in targets:
        dist[t] = 0.0
        queue.append(t)
    while queue:
        q = queue.popleft()
        for prev in reverse[q]:
            if not np.isfinite(dist[prev]):
                dist[prev] = dist[q] + 1.0
                queue.append(prev)
    return dist


def neighborhood(m: LabeledModel, state: int, radius: int) -> frozenset[int]:
    """States within forward possibilistic distance ``radius`` of ``state``."""
    if radius < 1:
        raise ModelError("neighborhood radius must be >= 1")
    seen = {state}
    frontier = [state]
    for _ in range(radius):
        nxt = []
        for q in frontier:
            for u in m.enabled[q]:
                for succ, _ in m.transitions[(q, u)]:
                    if succ not in seen:
                        seen.add(succ)
                        nxt.append(succ)
        if not nxt:
            break
        frontier = nxt
    return frozenset(seen)


def safety_score(m: LabeledModel, state: int, radius: int, bad: frozenset[int]) -> float:
    """Fraction of the state's neighborhood lying outside ``bad``."""
    nb = neighborhood(m, state, radius)
    return sum(1 for j in nb if j not in bad) / len(nb)


def action_sequences(
    m: LabeledModel, state: int, horizon: int, cap: int = 10_000
) -> list[tuple[tuple[int, ...], frozenset[int]]]:
    """All depth-``horizon`` action sequences from ``state`` with their exact
    possibilistic reach sets.

    A sequence u1..ut is admissible when each u_k is enabled at some state
    reachable from ``state`` via u1..u_{k-1}; the reach set is propagated
    forward, skipping branch states where the next action is disabled.
    Sequences come out in lexicographic action-id order.
    """
    if horizon < 1:
        raise ModelError("lookahead horizon must be >= 1")
    out: list[tuple[tuple[int, ...], frozenset[int]]] = []

    def expand(prefix: tuple[int, ...], reach: frozenset[int]) -> None:
        if len(prefix) == horizon:
            out.append((prefix, reach))
            if len(out) > cap:
                raise SequenceCapExceeded(
                    f"more than {cap} action sequences from state {state}")
            return
        options = sorted({u for q in reach for u in m.enabled[q]})
        for u in options:
            nxt: set[int] = set()
            for q in reach:
                if u in m.enabled[q]:
                    nxt.update(m.support(q, u))
            expand(prefix + (u,), frozenset(nxt))

    expand((), frozenset([state]))
    return out


class LookaheadPolicy:
    """Randomized stationary policy parameterized by theta = [theta1, theta2].

    Built over an NTS-mode SSP. ``progress`` is the minimum step count to
    the terminal computed without the restart edges, so zero-probability
    states sit at infinity and are clamped to ``progress_penalty`` when
    features are formed.
    """

    def __init__(self, ssp: SspModel, horizon: int = 2, radius: int | None = None,
                 theta: Iterable[float] = (5.0, -0.5), progress_penalty: float | None = None,
                 sequence_cap: int = 10_000):
        if horizon < 1:
            raise ModelError("lookahead horizon must be >= 1")
        self.ssp = ssp
        self.model = ssp.base
        self.horizon = horizon
        self.radius = horizon if radius is None else radius
        if self.radius < 1:
            raise ModelError("neighborhood radius must be >= 1")
        self.theta = np.asarray(tuple(theta), dtype=float)
        if self.theta.shape != (2,):
            raise ModelError("theta must have exactly two components")
        self.sequence_cap = sequence_cap
        self.progress = min_distances(self.model, [ssp.terminal], blocked_sources=ssp.bad)
        self.progress_penalty = (
            float(self.model.n_states) if progress_penalty is None else float(progress_penalty))
        self._safe: dict[int, float] = {}
        self._nbhd: dict[int, frozenset[int]] = {}
        self._tables: dict[int, tuple[tuple[tuple[int, ...], ...], np.ndarray, np.ndarray]] = {}

    # -- score tables -------------------------------------------------------

    def neighborhood_of(self, state: int) -> frozenset[int]:
        nb = self._nbhd.get(state)
        if nb is None:
            nb = neighborhood(self.model, state, self.radius)
            self._nbhd[state] = nb
        return nb

    def safe(self, state: int) -> float:
        val = self._safe.get(state)
        if val is None:
            nb = self.neighborhood_of(state)
            val = sum(1 for j in nb if j not in self.ssp.bad) / len(nb)
            self._safe[state] = val
        return val

    def _clamped_progress(self, state: int) -> float:
        d = self.progress[state]
        return self.progress_penalty if not np.isfinite(d) else float(d)

    def sequence_table(self, state: int):
        """Sequences from ``state`` with first actions and feature pairs."""
        cached = self._tables.get(state)
        if cached is not None:
            return cached
        seqs = action_sequences(self.model, state, self.horizon, self.sequence_cap)
        nb = self.neighborhood_of(state)
        here = self._clamped_progress(state)
        first = np.fromiter((e[0] for e, _ in seqs), dtype=np.int64, count=len(seqs))
        feats = np.zeros((len(seqs), 2))
        for k, (_e, reach) in enumerate(seqs):
            inside = reach & nb
            feats[k, 0] = sum(self.safe(j) for j in inside)
            feats[k, 1] = sum(self._clamped_progress(j) - here for j in inside)
        table = (tuple(e for e, _ in seqs), first, feats)
        self._tables[state] = table
        return table

    def features(self, state: int, sequence: tuple[int, ...]) -> np.ndarray:
        seqs, _first, feats = self.sequence_table(state)
        return feats[seqs.index(sequence)].copy()

    def sequence_score(self, state: int, sequence: tuple[int, ...]) -> float:
        """exp(theta . f) for one sequence (may overflow to inf for extreme
        theta; distributions are always formed in log space)."""
        return float(np.exp(self.features(state, sequence) @ self.theta))

    # -- distributions ------------------------------------------------------

    def _weights(self, state: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        _seqs, first, feats = self.sequence_table(state)
        logits = feats @ self.theta
        w = np.exp(logits - logits.max())
        return first, feats, w

    def action_distribution(self, state: int) -> tuple[np.ndarray, np.ndarray]:
        """(action ids, probabilities), actions sorted ascending."""
        if state == self.ssp.terminal:
            acts = np.arange(len(self.model.actions))
            return acts, np.full(len(acts), 1.0 / len(acts))
        first, _feats, w = self._weights(state)
        acts = np.unique(first)
        probs = np.array([w[first == u].sum() for u in acts])
        probs /= probs.sum()
        return acts, probs

    def action_probability(self, state: int, action: int) -> float:
        acts, probs = self.action_distribution(state)
        hit = np.nonzero(acts == action)[0]
        return float(probs[hit[0]]) if hit.size else 0.0

    def log_policy_gradient(self, state: int, action: int) -> np.ndarray:
        """Gradient of ln mu_theta(state, action) with respect to theta."""
        if state == self.ssp.terminal:
            return np.zeros(2)
        first, feats, w = self._weights(state)
        mask = first == action
        wu = w[mask].sum()
        if wu <= 0.0:
            raise ModelError(f"action {action} has zero probability at state {state}")
        mean_given = (w[mask] @ feats[mask]) / wu
        mean_all = (w @ feats) / w.sum()
        return mean_given - mean_all

    def sample_action(self, state: int, rng: np.random.Generator) -> int:
        acts, probs = self.action_distribution(state)
        if len(acts) == 1:
            return int(acts[0])
        idx = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
        return int(acts[min(idx, len(acts) - 1)])

    def as_policy_table(self):
        """Full per-state action distribution at the current theta."""
        from .models import StationaryPolicy

        table = {}
        for state in range(self.model.n_states):
            acts, probs = self.action_distribution(state)
            table[state] = {int(u): float(p) for u, p in zip(acts, probs)}
        return StationaryPolicy(kind="randomized", table=table)
