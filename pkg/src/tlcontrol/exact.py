"""Exact dynamic programming used as ground truth.

Maximal reachability is solved by value iteration from zero (monotone,
after removing the zero-probability set) followed by a policy-iteration
polish: the greedy policy is extracted, evaluated exactly by a linear
solve, and re-extracted until stable, so the returned value is exact to
solver precision rather than to the sweep residual. Greedy extraction
breaks ties toward actions that make progress to the target set (within
ties, lowest action id), which keeps the policy proper.
"""

from __future__ import annotations

import csv
import itertools
import math
from typing import Iterable, Iterator

import numpy as np

from .models import LabeledModel, MDP, ModelError, StationaryPolicy
from .synthesis import SspModel

VALUE_TOL = 1e-12
DENSE_LIMIT = 5000


class PolicyDivergence(RuntimeError):
    """Expected total cost diverges: the policy never reaches the terminal."""


def max_reach(m: LabeledModel, targets: frozenset[int], zeros: frozenset[int],
              *, tol: float = VALUE_TOL, max_sweeps: int = 10 ** 6,
              dense_limit: int = DENSE_LIMIT) -> tuple[np.ndarray, StationaryPolicy]:
    """Maximal probability of reaching ``targets`` and an optimal
    deterministic policy; value is 1 on targets and 0 on ``zeros``."""
    if m.mode != MDP:
        raise ModelError("max_reach needs an MDP-mode model")
    if targets & zeros:
        raise ModelError("target and zero sets intersect")
    rows, row_state, row_action, row_ptr, state_ptr, cols, vals = _flat_rows(m)
    free = np.ones(m.n_states, dtype=bool)
    for q in targets | zeros:
        free[q] = False

    v = np.zeros(m.n_states)
    v[list(targets)] = 1.0
    for _ in range(max_sweeps):
        q_vals = np.add.reduceat(vals * v[cols], row_ptr[:-1])
        best = np.maximum.reduceat(q_vals, state_ptr[:-1])
        delta = np.abs(np.where(free, best, v) - v).max()
        v = np.where(free, best, v)
        if delta <= tol:
            break

    # Policy-iteration polish: greedy extraction + exact evaluation until
    # the policy repeats.
    prev_table = None
    policy = _attractor_greedy(m, v, targets, zeros,
                               (rows, row_state, row_action, row_ptr, state_ptr, cols, vals))
    for _ in range(100):
        v = _policy_reach_vector(m, policy, targets, zeros, dense_limit=dense_limit)
        refreshed = _attractor_greedy(m, v, targets, zeros,
                                      (rows, row_state, row_action, row_ptr, state_ptr, cols, vals))
        if prev_table == refreshed.table or refreshed.table == policy.table:
            policy = refreshed
            break
        prev_table, policy = policy.table, refreshed
    v = _policy_reach_vector(m, policy, targets, zeros, dense_limit=dense_limit)
    return np.clip(v, 0.0, 1.0), policy


def _flat_rows(m: LabeledModel):
    """Flatten (state, action) rows for vectorized sweeps; rows are grouped
    by state in enabled order so the first row of a tie is the lowest id."""
    rows = []
    state_ptr = [0]
    for q in range(m.n_states):
        for u in sorted(m.enabled[q]):
            rows.append((q, u))
        state_ptr.append(len(rows))
    row_ptr = [0]
    cols, vals = [], []
    for q, u in rows:
        for succ, w in m.transitions[(q, u)]:
            cols.append(succ)
            vals.append(w)
        row_ptr.append(len(cols))
    return (rows, np.array([r[0] for r in rows]), np.array([r[1] for r in rows]),
            np.array(row_ptr), np.array(state_ptr), np.array(cols), np.array(vals))


def _attractor_greedy(m, v, targets, zeros, flat) -> StationaryPolicy:
    rows, _row_state, row_action, row_ptr, state_ptr, cols, vals = flat
    q_vals = np.add.reduceat(vals * v[cols], row_ptr[:-1])
    table: dict[int, dict[int, float]] = {}
    optimal: dict[int, list[int]] = {}
    for q in range(m.n_states):
        lo, hi = state_ptr[q], state_ptr[q + 1]
        if q in targets or q in zeros or v[q] <= 0.0:
            table[q] = {int(sorted(m.enabled[q])[0]): 1.0}
            continue
        best = q_vals[lo:hi].max()
        optimal[q] = [int(row_action[i]) for i in range(lo, hi)
                      if q_vals[i] >= best - 1e-12]
    # Attractor layering over optimal actions: pick, in BFS order from the
    # targets, an optimal action with a possible successor already layered.
    layered = set(targets)
    pending = set(optimal)
    while pending:
        assigned = []
        for q in sorted(pending):
            for u in optimal[q]:
                if any(s in layered for s in m.support(q, u)):
                    table[q] = {u: 1.0}
                    assigned.append(q)
                    break
        if not assigned:
            # Remaining optimal-value states cannot progress (value must be
            # 0 there up to solver noise); pin them down deterministically.
            for q in sorted(pending):
                table[q] = {optimal[q][0]: 1.0}
            break
        pending.difference_update(assigned)
        layered.update(assigned)
    return StationaryPolicy(kind="deterministic", table=table)


def policy_kernel(m: LabeledModel, policy: StationaryPolicy) -> dict[int, dict[int, float]]:
    """Policy-averaged transition kernel as sparse row dicts."""
    kernel: dict[int, dict[int, float]] = {}
    for q, dist in policy.table.items():
        row: dict[int, float] = {}
        for u, p in dist.items():
            if p <= 0:
                continue
            edges = m.transitions.get((q, u))
            if edges is None:
                raise ModelError(f"policy uses disabled action {u} at state {q}")
            for succ, w in edges:
                row[succ] = row.get(succ, 0.0) + p * w
        kernel[q] = row
    return kernel


def _support_reaches(kernel: dict[int, dict[int, float]], targets: Iterable[int],
                     n_states: int) -> set[int]:
    reverse: dict[int, list[int]] = {q: [] for q in range(n_states)}
    for q, row in kernel.items():
        for succ, w in row.items():
            if w > 0:
                reverse[succ].append(q)
    seen = set(targets)
    stack = list(seen)
    while stack:
        q = stack.pop()
        for prev in reverse.get(q, []):
            if prev not in seen:
                seen.add(prev)
                stack.append(prev)
    return seen


def _solve_linear(unknown: list[int], kernel, rhs: np.ndarray,
                  dense_limit: int) -> np.ndarray:
    """Solve (I - P) x = rhs restricted to ``unknown`` states."""
    n = len(unknown)
    pos = {q: i for i, q in enumerate(unknown)}
    if n <= dense_limit:
        a = np.eye(n)
        for q in unknown:
            i = pos[q]
            for succ, w in kernel[q].items():
                j = pos.get(succ)
                if j is not None:
                    a[i, j] -= w
        return np.linalg.solve(a, rhs)
    # Gauss-Seidel for big systems.
    x = np.zeros(n)
    for _ in range(10 ** 6):
        delta = 0.0
        for q in unknown:
            i = pos[q]
            acc = rhs[i]
            for succ, w in kernel[q].items():
                j = pos.get(succ)
                if j is not None:
                    acc += w * x[j]
            delta = max(delta, abs(acc - x[i]))
            x[i] = acc
        if delta <= VALUE_TOL:
            return x
    raise ModelError("Gauss-Seidel failed to converge")


def _policy_reach_vector(m, policy, targets, zeros, *, dense_limit=DENSE_LIMIT) -> np.ndarray:
    kernel = policy_kernel(m, policy)
    can_reach = _support_reaches(kernel, targets, m.n_states)
    v = np.zeros(m.n_states)
    for q in targets:
        v[q] = 1.0
    unknown = [q for q in range(m.n_states)
               if q in can_reach and q not in targets and q not in zeros]
    if not unknown:
        return v
    rhs = np.array([sum(w for succ, w in kernel[q].items() if succ in targets)
                    for q in unknown])
    sol = _solve_linear(unknown, kernel, rhs, dense_limit)
    for q, val in zip(unknown, sol):
        v[q] = val
    return np.clip(v, 0.0, 1.0)


def policy_reach_vector(m: LabeledModel, policy: StationaryPolicy,
                        targets: frozenset[int], zeros: frozenset[int]) -> np.ndarray:
    """Exact reachability value of a fixed policy, all states.

    Boundary: 1 on targets, 0 on ``zeros``; states whose policy support
    cannot reach the targets are 0 as well (that preprocessing is what
    keeps the linear system nonsingular).
    """
    if m.mode != MDP:
        raise ModelError("policy evaluation needs an MDP-mode model")
    needed = set(range(m.n_states)) - set(targets) - set(zeros)
    missing = needed - set(policy.table)
    if missing:
        raise ModelError(f"policy undefined at states {sorted(missing)[:5]}")
    return _policy_reach_vector(m, policy, targets, zeros)


def eval_policy_reach(m: LabeledModel, policy: StationaryPolicy,
                      targets: frozenset[int], zeros: frozenset[int]) -> float:
    """Probability that ``policy`` reaches ``targets`` from the initial state."""
    return float(policy_reach_vector(m, policy, targets, zeros)[m.initial])


def expected_total_cost(ssp: SspModel, policy: StationaryPolicy,
                        *, dense_limit: int = DENSE_LIMIT) -> float:
    """Expected total cost of a proper policy on an MDP-mode SSP.

    Raises PolicyDivergence when some state reachable under the policy
    cannot reach the terminal (the cost then diverges, which corresponds
    to reachability probability 0 for the restart construction).
    """
    m = ssp.base
    if m.mode != MDP:
        raise ModelError("expected cost needs an MDP-mode model")
    kernel = policy_kernel(m, policy)
    reachable = {m.initial}
    stack = [m.initial]
    while stack:
        q = stack.pop()
        if q == ssp.terminal:
            continue
        for succ, w in kernel[q].items():
            if w > 0 and succ not in reachable:
                reachable.add(succ)
                stack.append(succ)
    proper = _support_reaches(kernel, [ssp.terminal], m.n_states)
    trapped = sorted(reachable - proper)
    if trapped:
        raise PolicyDivergence(
            f"expected total cost diverges: states {trapped[:5]} never reach the terminal")
    unknown = [q for q in sorted(reachable) if q != ssp.terminal]
    if not unknown:
        return 0.0
    rhs = np.array([ssp.cost(q) for q in unknown])
    sol = _solve_linear(unknown, kernel, rhs, dense_limit)
    return float(sol[unknown.index(m.initial)])


def enumerate_policies(m: LabeledModel, limit: int = 10 ** 6) -> Iterator[StationaryPolicy]:
    """Every deterministic stationary policy, exactly once."""
    count = math.prod(len(acts) for acts in m.enabled)
    if count > limit:
        raise ModelError(f"{count} deterministic policies exceed the cap of {limit}")
    for choice in itertools.product(*m.enabled):
        yield StationaryPolicy(
            kind="deterministic",
            table={q: {u: 1.0} for q, u in enumerate(choice)})


def write_value_csv(f, values: np.ndarray) -> None:
    writer = csv.writer(f)
    writer.writerow(["state", "value"])
    for q, val in enumerate(values):
        writer.writerow([q, repr(float(val))])
