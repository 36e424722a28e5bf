import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tlcontrol.lookahead import (
    LookaheadPolicy,
    SequenceCapExceeded,
    action_sequences,
    min_distances,
    neighborhood,
    safety_score,
)
from tlcontrol.models import ModelError, parse_model
from tlcontrol.synthesis import SspModel
from conftest import make_random_ssp, random_nts

F_P_DRA = """
states 2
initial 0
props p
edge 0 {p} 1
edge 0 else 0
edge 1 else 1
pair L={} K={1}
"""


# -- distances and neighborhoods ----------------------------------------------

def test_min_distances_trivial_and_chain():
    chain = parse_model("states 4\ninitial 0\nmode nts\n"
                        "trans 0 a 1 1\ntrans 1 a 2 1\ntrans 2 a 3 1\ntrans 3 a 3 1")
    d = min_distances(chain, [3])
    assert list(d) == [3.0, 2.0, 1.0, 0.0]
    assert d[3] == 0.0


def test_min_distances_against_floyd_warshall(rng):
    for _ in range(5):
        n = random_nts(rng, n_states=9, n_actions=2)
        targets = [int(s) for s in rng.choice(9, size=2, replace=False)]
        d = min_distances(n, targets)
        # Floyd-Warshall on the possibilistic edge relation.
        inf = float("inf")
        fw = np.full((9, 9), inf)
        np.fill_diagonal(fw, 0.0)
        for (q, _u), row in n.transitions.items():
            for succ, _ in row:
                fw[q, succ] = min(fw[q, succ], 1.0)
        for k in range(9):
            for i in range(9):
                for j in range(9):
                    fw[i, j] = min(fw[i, j], fw[i, k] + fw[k, j])
        want = fw[:, targets].min(axis=1)
        assert all(a == b or (np.isinf(a) and np.isinf(b)) for a, b in zip(d, want))


def test_min_distances_blocked_sources():
    chain = parse_model("states 3\ninitial 0\nmode nts\n"
                        "trans 0 a 1 1\ntrans 1 a 2 1\ntrans 2 a 2 1")
    d = min_distances(chain, [2], blocked_sources=frozenset({1}))
    assert np.isinf(d[0]) and np.isinf(d[1]) and d[2] == 0.0


def test_neighborhood_trivial_cases(rng):
    n = random_nts(rng, n_states=7, n_actions=2)
    everything = neighborhood(n, 0, 100)
    # Large radius: exactly the forward-reachable set.
    reach = {0}
    stack = [0]
    while stack:
        q = stack.pop()
        for u in n.enabled[q]:
            for s in n.support(q, u):
                if s not in reach:
                    reach.add(s)
                    stack.append(s)
    assert everything == frozenset(reach)
    loner = parse_model("states 1\ninitial 0\nmode nts\ntrans 0 a 0 1")
    assert neighborhood(loner, 0, 3) == frozenset({0})


def test_neighborhood_matches_bfs_ball(rng):
    for _ in range(5):
        n = random_nts(rng, n_states=8, n_actions=2)
        for state in range(8):
            ball = {state}
            frontier = {state}
            for _ in range(2):
                frontier = {s for q in frontier for u in n.enabled[q]
                            for s in n.support(q, u)} - ball
                ball |= frontier
            assert neighborhood(n, state, 2) == frozenset(ball)


def test_safety_score_cases(rng):
    n = parse_model("states 4\ninitial 0\nmode nts\n"
                    "trans 0 a 1 1\ntrans 0 a 2 1\ntrans 0 a 3 1\n"
                    "trans 1 a 1 1\ntrans 2 a 2 1\ntrans 3 a 3 1")
    assert safety_score(n, 0, 1, frozenset()) == 1.0
    # Neighborhood of 0 at radius 1 is {0,1,2,3}; one of four is flagged.
    assert safety_score(n, 0, 1, frozenset({3})) == 0.75
    for _ in range(5):
        m = random_nts(rng, n_states=8, n_actions=2)
        bad = frozenset(int(s) for s in rng.choice(8, size=2, replace=False))
        for state in range(8):
            nb = neighborhood(m, state, 2)
            want = sum(1 for j in nb if j not in bad) / len(nb)
            assert safety_score(m, state, 2, bad) == want


# -- sequence enumeration -----------------------------------------------------

def test_action_sequences_horizon_one(rng):
    n = random_nts(rng, n_states=6, n_actions=3)
    for state in range(6):
        seqs = action_sequences(n, state, 1)
        assert [e for e, _ in seqs] == [(u,) for u in sorted(n.enabled[state])]
        for (u,), reach in seqs:
            assert reach == frozenset(n.support(state, u))


def test_action_sequences_deterministic_chain():
    chain = parse_model("states 3\ninitial 0\nmode nts\n"
                        "trans 0 a 1 1\ntrans 1 a 2 1\ntrans 2 a 2 1")
    seqs = action_sequences(chain, 0, 2)
    assert seqs == [((0, 0), frozenset({2}))]


def test_action_sequences_match_path_enumeration(rng):
    # Oracle: enumerate every length-2 possibilistic path explicitly; the
    # reach set of a sequence is the set of endpoints over paths labeled
    # with it, and a sequence exists iff the step-wise enabling holds.
    for _ in range(5):
        n = random_nts(rng, n_states=7, n_actions=2)
        for state in range(7):
            got = dict(action_sequences(n, state, 2))
            want: dict[tuple[int, int], set[int]] = {}
            for u1 in n.enabled[state]:
                mid = n.support(state, u1)
                for u2 in sorted({u for q in mid for u in n.enabled[q]}):
                    ends = {s for q in mid if u2 in n.enabled[q]
                            for s in n.support(q, u2)}
                    if ends:
                        want[(u1, u2)] = ends
            assert {e: set(r) for e, r in got.items()} == want


def test_sequence_cap():
    n = random_nts(np.random.default_rng(3), n_states=8, n_actions=3)
    with pytest.raises(SequenceCapExceeded):
        action_sequences(n, 0, 6, cap=10)


# -- the policy ---------------------------------------------------------------

def three_sequence_policy():
    """State 0 has sequences u0u0, u0u1, u1u0 exactly."""
    text = """
states 3
initial 0
mode nts
trans 0 a 1 1
trans 0 b 2 1
trans 1 a 1 1
trans 1 b 2 1
trans 2 a 2 1
"""
    n = parse_model(text)
    return SspModel(base=n, terminal=2, bad=frozenset(), origin=(0, 1, -1))


def test_action_distribution_counts_sequences():
    pol = LookaheadPolicy(three_sequence_policy(), horizon=2, theta=(0.0, 0.0))
    acts, probs = pol.action_distribution(0)
    assert list(acts) == [0, 1]
    assert np.allclose(probs, [2 / 3, 1 / 3])


def test_single_action_state_is_certain(rng):
    ssp = make_random_ssp(rng)
    pol = LookaheadPolicy(ssp, horizon=2, theta=(3.0, -1.0))
    for state in range(ssp.base.n_states):
        if state != ssp.terminal and len(ssp.base.enabled[state]) == 1:
            acts, probs = pol.action_distribution(state)
            assert len(acts) == 1 and probs[0] == 1.0
            break
    else:
        pytest.skip("no single-action state in this draw")


def test_sequence_scores_and_distribution_against_brute_force(rng):
    for _ in range(5):
        ssp = make_random_ssp(rng)
        pol = LookaheadPolicy(ssp, horizon=2, theta=(1.0, 1.0))
        for state in range(ssp.base.n_states):
            if state == ssp.terminal:
                continue
            seqs, first, feats = pol.sequence_table(state)
            # Independent recomputation of features and the softmax.
            nb = neighborhood(ssp.base, state, 2)
            here = pol.progress[state]
            if np.isinf(here):
                here = pol.progress_penalty
            scores = []
            for e, reach in action_sequences(ssp.base, state, 2):
                inside = reach & nb
                f1 = sum(safety_score(ssp.base, j, 2, ssp.bad) for j in inside)
                f2 = 0.0
                for j in inside:
                    pj = pol.progress[j]
                    f2 += (pol.progress_penalty if np.isinf(pj) else pj) - here
                scores.append((e, np.exp(1.0 * f1 + 1.0 * f2)))
            total = sum(s for _, s in scores)
            by_action: dict[int, float] = {}
            for e, s in scores:
                by_action[e[0]] = by_action.get(e[0], 0.0) + s / total
            acts, probs = pol.action_distribution(state)
            assert sorted(by_action) == list(acts)
            for u, p in zip(acts, probs):
                assert abs(by_action[int(u)] - p) <= 1e-9
            # Raw scores agree where finite.
            for e, s in scores:
                assert np.isclose(pol.sequence_score(state, e), s, rtol=1e-9)


def test_sequence_score_exp_of_dot_product():
    pol = LookaheadPolicy(three_sequence_policy(), horizon=2, theta=(5.0, -0.5))
    seqs, first, feats = pol.sequence_table(0)
    # Direct substitution at the default parameter vector: a unit safety
    # feature with zero progress change scores exp(5).
    pol._tables[0] = (seqs, first, np.array([[1.0, 0.0]] * len(seqs)))
    assert np.isclose(pol.sequence_score(0, seqs[0]), np.exp(5.0))


def test_gradient_trivial_cases():
    pol = LookaheadPolicy(three_sequence_policy(), horizon=2, theta=(0.0, 0.0))
    _seqs, first, feats = pol.sequence_table(0)
    psi = pol.log_policy_gradient(0, 0)
    mean_u = feats[first == 0].mean(axis=0)
    mean_all = feats.mean(axis=0)
    assert np.allclose(psi, mean_u - mean_all)
    # A state with a single action and a single sequence has zero gradient.
    chain = parse_model("states 2\ninitial 0\nmode nts\ntrans 0 a 1 1\ntrans 1 a 1 1")
    single = SspModel(base=chain, terminal=1, bad=frozenset(), origin=(0, -1))
    pol1 = LookaheadPolicy(single, horizon=1, theta=(2.0, 2.0))
    assert np.allclose(pol1.log_policy_gradient(0, 0), 0.0)
    assert pol1.action_probability(0, 0) == 1.0


def finite_difference_gradient(pol, state, action, h=1e-5):
    base = pol.theta.copy()
    grad = np.zeros(2)
    for i in range(2):
        for sign in (+1, -1):
            pol.theta = base.copy()
            pol.theta[i] += sign * h
            p = pol.action_probability(state, action)
            grad[i] += sign * np.log(p)
    pol.theta = base
    return grad / (2 * h)


def test_gradient_matches_finite_differences(rng):
    checked = 0
    for _ in range(6):
        ssp = make_random_ssp(rng)
        theta = rng.normal(size=2)
        pol = LookaheadPolicy(ssp, horizon=int(rng.integers(1, 4)), theta=theta)
        for state in range(ssp.base.n_states):
            if state == ssp.terminal:
                continue
            acts, probs = pol.action_distribution(state)
            u = int(acts[np.argmax(probs)])
            psi = pol.log_policy_gradient(state, u)
            fd = finite_difference_gradient(pol, state, u)
            err = np.linalg.norm(fd - psi) / max(1.0, np.linalg.norm(fd))
            assert err <= 1e-5
            checked += 1
    assert checked >= 20


def test_gradient_rejects_zero_probability_actions(rng):
    ssp = make_random_ssp(rng)
    pol = LookaheadPolicy(ssp, horizon=1)
    state = next(s for s in range(ssp.base.n_states) if s != ssp.terminal)
    missing = len(ssp.base.actions) + 5
    with pytest.raises(ModelError, match="zero probability"):
        pol.log_policy_gradient(state, missing)


def test_terminal_state_conventions(rng):
    ssp = make_random_ssp(rng)
    pol = LookaheadPolicy(ssp, horizon=2)
    acts, probs = pol.action_distribution(ssp.terminal)
    assert np.allclose(probs, 1.0 / len(acts))
    assert np.allclose(pol.log_policy_gradient(ssp.terminal, int(acts[0])), 0.0)


@settings(max_examples=30, deadline=None)
@given(t1=st.floats(-8, 8), t2=st.floats(-8, 8), seed=st.integers(0, 50))
def test_distribution_normalizes_and_score_is_zero_mean(t1, t2, seed):
    ssp = make_random_ssp(np.random.default_rng(seed))
    pol = LookaheadPolicy(ssp, horizon=2, theta=(t1, t2))
    for state in range(ssp.base.n_states):
        acts, probs = pol.action_distribution(state)
        assert abs(probs.sum() - 1.0) <= 1e-12
        if state == ssp.terminal:
            continue
        # Expected score identity: sum_u mu(u) psi(u) = 0.
        total = np.zeros(2)
        for u, p in zip(acts, probs):
            total += p * pol.log_policy_gradient(state, int(u))
        assert np.linalg.norm(total) <= 1e-9


def test_softmax_shift_invariance(rng):
    ssp = make_random_ssp(rng)
    pol = LookaheadPolicy(ssp, horizon=2, theta=(1.5, -0.5))
    state = next(s for s in range(ssp.base.n_states)
                 if s != ssp.terminal and len(ssp.base.enabled[s]) > 1)
    acts, probs = pol.action_distribution(state)
    seqs, first, feats = pol.sequence_table(state)
    # Translating every feature row by a constant leaves the softmax alone.
    pol._tables[state] = (seqs, first, feats + np.array([3.7, -1.2]))
    acts2, probs2 = pol.action_distribution(state)
    assert list(acts) == list(acts2)
    assert np.allclose(probs, probs2, atol=1e-12)


def test_concentration_on_max_f1_at_large_theta1(rng):
    for _ in range(5):
        ssp = make_random_ssp(rng)
        pol = LookaheadPolicy(ssp, horizon=2, theta=(50.0, 0.0))
        for state in range(ssp.base.n_states):
            if state == ssp.terminal or len(ssp.base.enabled[state]) < 2:
                continue
            seqs, first, feats = pol.sequence_table(state)
            best = feats[:, 0].max()
            winners = {int(first[i]) for i in range(len(seqs))
                       if feats[i, 0] >= best - 1e-12}
            if len(winners) > 1:
                continue
            acts, probs = pol.action_distribution(state)
            assert int(acts[np.argmax(probs)]) in winners


def test_sampling_determinism_and_concentration(rng):
    ssp = make_random_ssp(rng)
    pol = LookaheadPolicy(ssp, horizon=2, theta=(1.0, -1.0))
    state = next(s for s in range(ssp.base.n_states)
                 if s != ssp.terminal and len(ssp.base.enabled[s]) >= 2)
    r1 = np.random.default_rng(11)
    r2 = np.random.default_rng(11)
    draws1 = [pol.sample_action(state, r1) for _ in range(200)]
    draws2 = [pol.sample_action(state, r2) for _ in range(200)]
    assert draws1 == draws2
    acts, probs = pol.action_distribution(state)
    n = 100_000
    r = np.random.default_rng(5)
    counts = {int(u): 0 for u in acts}
    for _ in range(n):
        counts[pol.sample_action(state, r)] += 1
    for u, p in zip(acts, probs):
        sigma = np.sqrt(p * (1 - p) / n)
        assert abs(counts[int(u)] / n - p) <= 3.5 * sigma + 1e-12


def test_progress_is_infinite_exactly_on_bad_states(rng):
    for _ in range(5):
        ssp = make_random_ssp(rng)
        pol = LookaheadPolicy(ssp, horizon=2)
        for state in range(ssp.base.n_states):
            if state in ssp.bad:
                assert np.isinf(pol.progress[state])
            else:
                assert np.isfinite(pol.progress[state])
        assert pol.progress[ssp.terminal] == 0.0
