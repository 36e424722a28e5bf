"""Least-squares temporal-difference actor-critic on a restart SSP.

One simulation step per iteration: query the transition probabilities of the
current (state, action) pair from a lazy source (memoized, so each pair is
computed at most once per run), sample the successor, restart at the
terminal, and sample the next action from the lookahead policy. The critic
accumulates eligibility-trace statistics

    z' = lam * z + psi(x_k, u_k)
    b' = b + gamma_k * (g(x_k, u_k) * z - b)
    A' = A + gamma_k * (z (psi(x_{k+1}, u_{k+1}) - psi(x_k, u_k))^T - A)

and refreshes its solution r = -A^{-1} b once the statistics are usable;
the actor then descends theta along (r . psi') psi'. The published update
uses the pre-update z, A, b and the pre-update r throughout; a flag switches
the solve to the post-update statistics.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .lookahead import LookaheadPolicy
from .synthesis import SspModel, TransitionSource


@dataclass(frozen=True)
class CriticState:
    z: np.ndarray
    b: np.ndarray
    A: np.ndarray
    r: np.ndarray
    lam: float

    @classmethod
    def zeros(cls, lam: float = 0.9) -> "CriticState":
        return cls(z=np.zeros(2), b=np.zeros(2), A=np.zeros((2, 2)),
                   r=np.zeros(2), lam=lam)


@dataclass(frozen=True)
class ActorState:
    theta: np.ndarray
    grad_ema: float = 0.0


@dataclass
class ActorCriticConfig:
    """Step sizes, gates, and termination for a single run.

    gamma_k = (1 + k)^-gamma_exponent and beta_k = beta_scale *
    (1 + k)^-beta_exponent satisfy the two-timescale requirement
    beta_k / gamma_k -> 0 (the critic adapts faster than the actor).
    """

    lam: float = 0.9
    gamma_exponent: float = 0.6
    beta_scale: float = 0.05
    beta_exponent: float = 0.85
    clip: float = 10.0               # bound C in Gamma(r) = min(1, C / ||r||)
    epsilon: float = 1e-4            # stop once the gradient-norm EMA falls below
    max_iters: int = 5000
    min_iters: int = 100             # no stopping test before this many iterations
    gate_iters: int = 50             # no critic solve before this many iterations
    gate_sigma: float = 1e-8         # smallest singular value A must reach
    ema_decay: float = 0.99
    reset_trace_on_restart: bool = False
    solve_with_updated_stats: bool = False
    seed: int = 0
    eval_every: int = 0              # exact evaluation cadence; 0 disables

    def gamma(self, k: int) -> float:
        return (1.0 + k) ** -self.gamma_exponent

    def beta(self, k: int) -> float:
        return self.beta_scale * (1.0 + k) ** -self.beta_exponent


@dataclass
class RunTrace:
    """Per-iteration record of one actor-critic run."""

    ks: list[int] = field(default_factory=list)
    thetas: list[tuple[float, float]] = field(default_factory=list)
    rs: list[tuple[float, float]] = field(default_factory=list)
    costs: list[float] = field(default_factory=list)
    episodes: list[int] = field(default_factory=list)
    pairs: list[int] = field(default_factory=list)
    exact: dict[int, float] = field(default_factory=dict)
    states: list[int] = field(default_factory=list)
    stale_solves: list[int] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0

    def append(self, k, theta, r, cost, episodes, pairs):
        self.ks.append(k)
        self.thetas.append((float(theta[0]), float(theta[1])))
        self.rs.append((float(r[0]), float(r[1])))
        self.costs.append(float(cost))
        self.episodes.append(episodes)
        self.pairs.append(pairs)

    def write_csv(self, f) -> None:
        f.write("k,theta1,theta2,r1,r2,cost,episodes,pairs_computed,exact_prob\n")
        for i, k in enumerate(self.ks):
            t1, t2 = self.thetas[i]
            r1, r2 = self.rs[i]
            ex = self.exact.get(k)
            tail = "" if ex is None else repr(ex)
            f.write(f"{k},{t1!r},{t2!r},{r1!r},{r2!r},{self.costs[i]!r},"
                    f"{self.episodes[i]},{self.pairs[i]},{tail}\n")

    def csv_text(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()


def critic_update(c: CriticState, psi_now: np.ndarray, psi_next: np.ndarray,
                  cost: float, gamma_k: float, k: int, *,
                  solve_with_updated_stats: bool = False,
                  gate_iters: int = 50, gate_sigma: float = 1e-8
                  ) -> tuple[CriticState, bool]:
    """One critic step; returns the new state and whether r was refreshed."""
    if gamma_k <= 0:
        raise ValueError("critic step size must be positive")
    z_new = c.lam * c.z + psi_now
    b_new = c.b + gamma_k * (cost * c.z - c.b)
    A_new = c.A + gamma_k * (np.outer(c.z, psi_next - psi_now) - c.A)
    A_solve, b_solve = (A_new, b_new) if solve_with_updated_stats else (c.A, c.b)
    r_new, solved = c.r, False
    if k >= gate_iters and np.linalg.svd(A_solve, compute_uv=False)[-1] >= gate_sigma:
        try:
            r_new = -np.linalg.solve(A_solve, b_solve)
            solved = True
        except np.linalg.LinAlgError:
            pass
    return CriticState(z=z_new, b=b_new, A=A_new, r=r_new, lam=c.lam), solved


def actor_update(a: ActorState, r: np.ndarray, psi_next: np.ndarray, beta_k: float,
                 *, clip: float = 10.0, ema_decay: float = 0.99) -> ActorState:
    """One actor step along (r . psi') psi', norm-clipped by Gamma(r)."""
    if beta_k <= 0:
        raise ValueError("actor step size must be positive")
    direction = float(r @ psi_next) * psi_next
    r_norm = float(np.linalg.norm(r))
    gain = 1.0 if r_norm <= clip else clip / r_norm
    theta = a.theta - beta_k * gain * direction
    ema = ema_decay * a.grad_ema + (1.0 - ema_decay) * float(np.linalg.norm(direction))
    return ActorState(theta=theta, grad_ema=ema)


def gradient_norm_estimate(magnitudes: Sequence[float], decay: float = 0.99) -> float:
    """EMA of update-direction magnitudes; the stopping-rule surrogate for
    the objective's gradient norm."""
    ema = 0.0
    for m in magnitudes:
        ema = decay * ema + (1.0 - decay) * float(m)
    return ema


def run(ssp: SspModel, prob_source: TransitionSource, policy: LookaheadPolicy,
        cfg: ActorCriticConfig,
        evaluator: Callable[[np.ndarray], float] | None = None
        ) -> tuple[np.ndarray, RunTrace]:
    """Run the actor-critic loop until the gradient-norm EMA drops below
    epsilon (after ``min_iters``) or ``max_iters`` is hit.

    ``prob_source`` is queried once per distinct (state, action) pair; the
    terminal state never touches it (the restart rule replaces its sampled
    successor). ``evaluator``, when given with a positive ``eval_every``,
    is called on the recorded theta every cadence point and its value lands
    in the trace row.
    """
    rng = np.random.default_rng(cfg.seed)
    memo: dict[tuple[int, int], tuple[tuple[int, float], ...]] = {}

    def probs(state: int, action: int) -> tuple[tuple[int, float], ...]:
        key = (state, action)
        row = memo.get(key)
        if row is None:
            row = tuple(prob_source(state, action))
            memo[key] = row
        return row

    def sample(row: tuple[tuple[int, float], ...]) -> int:
        if len(row) == 1:
            return row[0][0]
        x = rng.random()
        acc = 0.0
        for succ, w in row:
            acc += w
            if x < acc:
                return succ
        return row[-1][0]

    critic = CriticState.zeros(cfg.lam)
    actor = ActorState(theta=policy.theta.copy())
    trace = RunTrace()
    episodes = 0
    solved_once = False

    x = ssp.initial
    u = policy.sample_action(x, rng)
    for k in range(cfg.max_iters):
        if cfg.eval_every and evaluator is not None and k % cfg.eval_every == 0:
            trace.exact[k] = float(evaluator(actor.theta))

        trace.states.append(x)
        cost = ssp.cost(x, u)
        psi_now = policy.log_policy_gradient(x, u)
        if x == ssp.terminal:
            x_next = ssp.initial
        else:
            x_next = sample(probs(x, u))
        if x_next == ssp.terminal:
            episodes += 1
        u_next = policy.sample_action(x_next, rng)
        psi_next = policy.log_policy_gradient(x_next, u_next)

        if cfg.reset_trace_on_restart and x == ssp.terminal:
            critic = replace(critic, z=np.zeros(2))

        r_now = critic.r
        critic, solved = critic_update(
            critic, psi_now, psi_next, cost, cfg.gamma(k), k,
            solve_with_updated_stats=cfg.solve_with_updated_stats,
            gate_iters=cfg.gate_iters, gate_sigma=cfg.gate_sigma)
        solved_once = solved_once or solved
        if k >= cfg.gate_iters and not solved:
            trace.stale_solves.append(k)
        trace.append(k, actor.theta, r_now, cost, episodes,
                     getattr(prob_source, "pairs_computed", len(memo)))
        actor = actor_update(actor, r_now, psi_next, cfg.beta(k),
                             clip=cfg.clip, ema_decay=cfg.ema_decay)
        policy.theta = actor.theta

        trace.iterations = k + 1
        # The stopping test only arms once the critic has produced a
        # solution, or once it provably would return zero (b identically
        # zero means r = -A^{-1} b = 0 whenever it solves at all).
        armed = solved_once or (k >= cfg.gate_iters and not critic.b.any())
        if armed and k + 1 >= cfg.min_iters and actor.grad_ema <= cfg.epsilon:
            trace.converged = True
            break
        x, u = x_next, u_next

    return actor.theta, trace
