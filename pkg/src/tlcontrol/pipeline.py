"""End-to-end synthesis: load inputs, build the product and SSP, optimize
the lookahead policy with the actor-critic, and report.

A task is either a map file (the pair-state model and its noisy motion
probabilities are generated, probabilities lazily) or an MDP-mode model
file, plus a Rabin automaton file sharing the proposition set. The exact
oracles consume a fully materialized probabilistic model and are used for
the optimal reference value and for the periodic evaluation curve; the
actor-critic itself only ever sees the possibilistic structure and the
lazy probability source.
"""

from __future__ import annotations

import dataclasses
import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import exact, gridenv
from .actor_critic import ActorCriticConfig, RunTrace, run
from .lookahead import LookaheadPolicy
from .models import (
    MDP,
    LabeledModel,
    ModelError,
    RabinAutomaton,
    StationaryPolicy,
    nts_from_mdp,
    parse_dra,
    parse_model,
    parse_policy,
    save_policy,
    serialize_model,
)
from .synthesis import (
    Amec,
    ModelTransitionSource,
    ProductModel,
    SspModel,
    SspTransitionSource,
    amecs,
    build_product,
    goal_and_bad_sets,
    mrp_to_ssp,
    prune_unreachable,
    serialize_ssp,
    with_probabilities,
)

EXIT_CONVERGED = 0
EXIT_CAPPED = 2
EXIT_ZERO_PROBABILITY = 3


@dataclass
class RunConfig:
    """Everything a pipeline invocation needs; JSON-loadable, flag-overridable."""

    dra: str = ""
    map: str | None = None
    model: str | None = None
    task_name: str = "task"
    outdir: str = "out"
    # lookahead policy
    horizon: int = 2
    radius: int | None = None
    theta0: tuple[float, float] = (5.0, -0.5)
    progress_penalty: float | None = None
    sequence_cap: int = 10_000
    # actor-critic
    lam: float = 0.9
    gamma_exponent: float = 0.6
    beta_scale: float = 0.05
    beta_exponent: float = 0.85
    clip: float = 10.0
    epsilon: float = 1e-4
    max_iters: int = 5000
    min_iters: int = 100
    gate_iters: int = 50
    gate_sigma: float = 1e-8
    reset_trace_on_restart: bool = False
    solve_with_updated_stats: bool = False
    seed: int = 0
    # evaluation and construction
    eval_every: int = 25
    exact_reference: bool = True
    label_rule: str = "next"
    # map noise
    eta: float = 0.9
    confusion: str = "uniform"
    mc_runs: int | None = None
    noise_seed: int = 0

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        data = json.loads(Path(path).read_text())
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ModelError(f"unknown configuration keys {sorted(unknown)}")
        if "theta0" in data:
            data["theta0"] = tuple(data["theta0"])
        return cls(**data)

    def validate(self) -> None:
        if not self.dra:
            raise ModelError("configuration needs a 'dra' path")
        if bool(self.map) == bool(self.model):
            raise ModelError("configuration needs exactly one of 'map' or 'model'")
        if self.epsilon <= 0 or self.horizon < 1 or self.eval_every < 0:
            raise ModelError("epsilon must be positive, horizon >= 1, eval_every >= 0")

    def actor_critic(self) -> ActorCriticConfig:
        return ActorCriticConfig(
            lam=self.lam, gamma_exponent=self.gamma_exponent,
            beta_scale=self.beta_scale, beta_exponent=self.beta_exponent,
            clip=self.clip, epsilon=self.epsilon, max_iters=self.max_iters,
            min_iters=self.min_iters, gate_iters=self.gate_iters,
            gate_sigma=self.gate_sigma,
            reset_trace_on_restart=self.reset_trace_on_restart,
            solve_with_updated_stats=self.solve_with_updated_stats,
            seed=self.seed, eval_every=self.eval_every)


@dataclass
class TaskContext:
    """All artifacts shared by the subcommands, built once per invocation."""

    cfg: RunConfig
    dra: RabinAutomaton
    base_nts: LabeledModel
    base_mdp: LabeledModel | None
    base_source: object
    product: ProductModel
    product_mdp: ProductModel | None
    amec_list: list[Amec]
    goal: frozenset[int]
    bad: frozenset[int]

    @property
    def trivial(self) -> bool:
        return self.product.base.initial in self.goal

    @property
    def zero_probability(self) -> bool:
        return not self.amec_list or self.product.base.initial in self.bad


def load_task(cfg: RunConfig) -> TaskContext:
    cfg.validate()
    dra = parse_dra(Path(cfg.dra).read_text())
    if cfg.map:
        env = gridenv.parse_map(Path(cfg.map).read_text())
        noise = gridenv.NoiseModel(eta=cfg.eta, confusion=cfg.confusion,
                                   mc_runs=cfg.mc_runs, seed=cfg.noise_seed)
        base_nts = gridenv.build_nts(env, cfg.confusion)
        base_mdp = gridenv.build_mdp(env, noise) if cfg.exact_reference else None
        base_source = gridenv.GridTransitionSource(env, noise)
    else:
        base = parse_model(Path(cfg.model).read_text())
        if base.mode != MDP:
            raise ModelError("model-file tasks need an MDP-mode model")
        base_mdp = base
        base_nts = nts_from_mdp(base)
        base_source = ModelTransitionSource(base_mdp)
    product = prune_unreachable(build_product(base_nts, dra, cfg.label_rule))
    amec_list = amecs(product)
    goal, bad = goal_and_bad_sets(product, amec_list)
    product_mdp = with_probabilities(product, base_mdp) if base_mdp is not None else None
    return TaskContext(cfg=cfg, dra=dra, base_nts=base_nts, base_mdp=base_mdp,
                       base_source=base_source, product=product,
                       product_mdp=product_mdp, amec_list=amec_list,
                       goal=goal, bad=bad)


def rsp_product_policy(policy: LookaheadPolicy, ssp: SspModel) -> StationaryPolicy:
    """The lookahead policy's distribution re-indexed over product states
    (goal states need no entry: they are evaluation boundary)."""
    table = {}
    for state, old in enumerate(ssp.origin):
        if old < 0:
            continue
        acts, probs = policy.action_distribution(state)
        table[old] = {int(u): float(p) for u, p in zip(acts, probs)}
    return StationaryPolicy(kind="randomized", table=table)


@dataclass
class Report:
    cfg: RunConfig
    exit_code: int
    status: str
    lines: list[tuple[str, object]] = field(default_factory=list)
    trace: RunTrace | None = None
    theta: tuple[float, float] | None = None
    final_probability: float | None = None
    optimal_probability: float | None = None

    def summary_text(self) -> str:
        out = [f"{key}: {value}" for key, value in self.lines]
        out.append(f"status: {self.status}")
        return "\n".join(out) + "\n"


def _base_lines(ctx: TaskContext) -> list[tuple[str, object]]:
    return [
        ("task", ctx.cfg.task_name),
        ("model states", ctx.base_nts.n_states),
        ("model enabled pairs", ctx.base_nts.n_enabled_pairs()),
        ("automaton states", ctx.dra.n_states),
        ("accepting pairs", len(ctx.dra.pairs)),
        ("product states (unpruned)", ctx.product.unpruned_states),
        ("product states (pruned)", ctx.product.base.n_states),
        ("amecs", len(ctx.amec_list)),
        ("goal states", len(ctx.goal)),
        ("zero states", len(ctx.bad)),
    ]


def synthesize(cfg: RunConfig, ctx: TaskContext | None = None) -> Report:
    """The full pipeline; writes trace.csv, policy.tsv, and summary.txt."""
    ctx = ctx or load_task(cfg)
    outdir = Path(cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    lines = _base_lines(ctx)

    if ctx.zero_probability:
        lines.append(("final exact probability", 0.0))
        report = Report(cfg=cfg, exit_code=EXIT_ZERO_PROBABILITY,
                        status="satisfaction probability is 0 for all policies",
                        lines=lines, final_probability=0.0)
        (outdir / "summary.txt").write_text(report.summary_text())
        return report

    if ctx.trivial:
        # The initial state already sits inside an accepting component; the
        # uniform retained-action policy satisfies the task almost surely.
        lines.append(("final exact probability", 1.0))
        report = Report(cfg=cfg, exit_code=EXIT_CONVERGED,
                        status="initial state is in the goal set; "
                               "uniform component policy is optimal",
                        lines=lines, final_probability=1.0)
        (outdir / "summary.txt").write_text(report.summary_text())
        return report

    ssp = mrp_to_ssp(ctx.product, ctx.goal, ctx.bad)
    policy = LookaheadPolicy(
        ssp, horizon=cfg.horizon, radius=cfg.radius, theta=cfg.theta0,
        progress_penalty=cfg.progress_penalty, sequence_cap=cfg.sequence_cap)
    source = SspTransitionSource(ssp, ctx.product, ctx.dra, ctx.base_nts,
                                 ctx.base_source)

    evaluator = None
    optimal = None
    if ctx.product_mdp is not None:
        pm = ctx.product_mdp

        def evaluator(theta, _pm=pm, _ssp=ssp, _pol=policy):
            _pol.theta = np.array(theta, dtype=float)
            product_policy = rsp_product_policy(_pol, _ssp)
            return exact.eval_policy_reach(_pm.base, product_policy, ctx.goal, ctx.bad)

        if cfg.exact_reference:
            values, _ = exact.max_reach(pm.base, ctx.goal, ctx.bad)
            optimal = float(values[pm.base.initial])

    theta, trace = run(ssp, source, policy, cfg.actor_critic(),
                       evaluator=evaluator if cfg.eval_every else None)

    final_prob = evaluator(theta) if evaluator is not None else None
    with open(outdir / "trace.csv", "w") as f:
        trace.write_csv(f)
    policy.theta = np.array(theta, dtype=float)
    with open(outdir / "policy.tsv", "w") as f:
        save_policy(f, policy.as_policy_table(), ssp.base)

    lines += [
        ("iterations", trace.iterations),
        ("episodes", trace.episodes[-1] if trace.episodes else 0),
        ("converged", trace.converged),
        ("pairs computed", trace.pairs[-1] if trace.pairs else 0),
        ("theta", list(map(float, theta))),
    ]
    if final_prob is not None:
        lines.append(("final exact probability", final_prob))
    if optimal is not None:
        lines.append(("optimal probability", optimal))
        if final_prob is not None and optimal > 0:
            lines.append(("ratio", final_prob / optimal))
    status = "converged" if trace.converged else "iteration-capped"
    report = Report(cfg=cfg, exit_code=EXIT_CONVERGED if trace.converged else EXIT_CAPPED,
                    status=status, lines=lines, trace=trace,
                    theta=(float(theta[0]), float(theta[1])),
                    final_probability=final_prob, optimal_probability=optimal)
    (outdir / "summary.txt").write_text(report.summary_text())
    return report


def compare(cfg: RunConfig) -> Report:
    """Exact optimum vs. actor-critic on the same task, with curve data."""
    ctx = load_task(cfg)
    if ctx.product_mdp is None:
        raise ModelError("compare needs exact probabilities (enable exact_reference)")
    report = synthesize(cfg, ctx)
    outdir = Path(cfg.outdir)
    if report.exit_code == EXIT_ZERO_PROBABILITY or ctx.trivial:
        return report
    optimal = report.optimal_probability
    values, _ = exact.max_reach(ctx.product_mdp.base, ctx.goal, ctx.bad)
    if optimal is None:
        optimal = float(values[ctx.product_mdp.base.initial])
    with open(outdir / "values.csv", "w") as f:
        exact.write_value_csv(f, values)
    with open(outdir / "curve.csv", "w") as f:
        f.write("k,rsp_probability,optimal_probability\n")
        for k in sorted(report.trace.exact):
            f.write(f"{k},{report.trace.exact[k]!r},{optimal!r}\n")
    report.optimal_probability = optimal
    return report


def evaluate_policy_file(cfg: RunConfig, policy_path: str | Path) -> float:
    """Exact reachability probability of a saved per-state distribution."""
    ctx = load_task(cfg)
    if ctx.product_mdp is None:
        raise ModelError("eval needs exact probabilities (enable exact_reference)")
    if ctx.zero_probability:
        return 0.0
    if ctx.trivial:
        return 1.0
    ssp = mrp_to_ssp(ctx.product, ctx.goal, ctx.bad)
    pol = parse_policy(Path(policy_path).read_text(), ssp.base)
    table = {}
    for state, old in enumerate(ssp.origin):
        if old >= 0 and state in pol.table:
            table[old] = dict(pol.table[state])
    product_policy = StationaryPolicy(kind=pol.kind, table=table)
    return exact.eval_policy_reach(ctx.product_mdp.base, product_policy,
                                   ctx.goal, ctx.bad)


def write_models(cfg: RunConfig) -> list[Path]:
    """Emit the pruned product and its SSP conversion as model files."""
    ctx = load_task(cfg)
    outdir = Path(cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = [outdir / "product.model"]
    paths[0].write_text(serialize_model(ctx.product.base))
    if not ctx.trivial:
        ssp = mrp_to_ssp(ctx.product, ctx.goal, ctx.bad)
        paths.append(outdir / "ssp.model")
        paths[1].write_text(serialize_ssp(ssp))
    return paths


def synthesize_seeds(cfg: RunConfig, seeds: list[int]) -> list[Report]:
    """Independent runs, one output directory per seed, plus an aggregate
    summary in the parent directory."""
    reports = []
    for seed in seeds:
        sub = dataclasses.replace(cfg, seed=seed,
                                  outdir=str(Path(cfg.outdir) / f"seed{seed}"))
        reports.append(synthesize(sub))
    probs = [r.final_probability for r in reports if r.final_probability is not None]
    if probs:
        lines = [f"seeds: {seeds}",
                 f"final probabilities: {[round(p, 6) for p in probs]}",
                 f"median final probability: {statistics.median(probs)!r}"]
        opt = reports[0].optimal_probability
        if opt:
            lines.append(f"optimal probability: {opt!r}")
            lines.append(f"median ratio: {statistics.median(probs) / opt!r}")
        Path(cfg.outdir).mkdir(parents=True, exist_ok=True)
        (Path(cfg.outdir) / "seeds-summary.txt").write_text("\n".join(lines) + "\n")
    return reports
