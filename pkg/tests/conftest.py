import numpy as np
import pytest

from tlcontrol.models import MDP, NTS, LabeledModel, validate_model

PROP_NAMES = ("p", "q", "r", "s")


def random_mdp(rng, n_states=5, n_actions=2, max_succ=3, n_props=1, seed_labels=True):
    """Random dense-ish MDP; every state gets a nonempty enabled set."""
    actions = tuple(f"a{i}" for i in range(n_actions))
    enabled = []
    transitions = {}
    for q in range(n_states):
        k = int(rng.integers(1, n_actions + 1))
        acts = tuple(sorted(rng.choice(n_actions, size=k, replace=False).tolist()))
        enabled.append(acts)
        for u in acts:
            m = int(rng.integers(1, min(max_succ, n_states) + 1))
            succs = sorted(rng.choice(n_states, size=m, replace=False).tolist())
            w = rng.random(len(succs)) + 0.1
            w = w / w.sum()
            transitions[(q, u)] = tuple((s, float(p)) for s, p in zip(succs, w))
    labels = tuple(int(rng.integers(0, 1 << n_props)) if seed_labels else 0
                   for _ in range(n_states))
    model = LabeledModel(
        n_states=n_states, initial=0, actions=actions, enabled=tuple(enabled),
        transitions=transitions, props=PROP_NAMES[:n_props],
        labels=labels, mode=MDP)
    validate_model(model)
    return model


def random_nts(rng, n_states=6, n_actions=2, max_succ=3, n_props=1):
    actions = tuple(f"a{i}" for i in range(n_actions))
    enabled = []
    transitions = {}
    for q in range(n_states):
        k = int(rng.integers(1, n_actions + 1))
        acts = tuple(sorted(rng.choice(n_actions, size=k, replace=False).tolist()))
        enabled.append(acts)
        for u in acts:
            m = int(rng.integers(1, min(max_succ, n_states) + 1))
            succs = sorted(rng.choice(n_states, size=m, replace=False).tolist())
            transitions[(q, u)] = tuple((s, 1.0) for s in succs)
    model = LabeledModel(
        n_states=n_states, initial=0, actions=actions, enabled=tuple(enabled),
        transitions=transitions, props=PROP_NAMES[:n_props],
        labels=tuple(int(rng.integers(0, 1 << n_props)) for _ in range(n_states)),
        mode=NTS)
    validate_model(model)
    return model


def support_zeros(m, targets):
    """States with no possibilistic path into ``targets`` (reverse closure)."""
    reverse = {q: set() for q in range(m.n_states)}
    for (q, _u), row in m.transitions.items():
        for succ, _ in row:
            reverse[succ].add(q)
    closed = set(targets)
    stack = list(targets)
    while stack:
        q = stack.pop()
        for prev in reverse[q]:
            if prev not in closed:
                closed.add(prev)
                stack.append(prev)
    return frozenset(range(m.n_states)) - closed


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


F_P_DRA = """
states 2
initial 0
props p
edge 0 {p} 1
edge 0 else 0
edge 1 else 1
pair L={} K={1}
"""


def make_random_ssp(rng, n_states=6, n_actions=2, want_mdp=False):
    """A genuine SSP built through the pipeline from a random model; with
    ``want_mdp`` also returns the probabilistic twin and its product."""
    from tlcontrol.models import nts_from_mdp, parse_dra
    from tlcontrol.synthesis import (
        amecs, build_product, goal_and_bad_sets, mrp_to_ssp,
        prune_unreachable, with_probabilities)

    dra = parse_dra(F_P_DRA)
    for _ in range(300):
        m = random_mdp(rng, n_states=n_states, n_actions=n_actions, n_props=1)
        product = prune_unreachable(build_product(nts_from_mdp(m), dra))
        found = amecs(product)
        if not found:
            continue
        goal, bad = goal_and_bad_sets(product, found)
        if product.base.initial in goal:
            continue
        ssp = mrp_to_ssp(product, goal, bad)
        if not want_mdp:
            return ssp
        product_mdp = with_probabilities(product, m)
        ssp_mdp = mrp_to_ssp(product_mdp, goal, bad)
        return m, dra, product, product_mdp, goal, bad, ssp, ssp_mdp
    raise AssertionError("could not construct a random SSP")
