import pytest

from tlcontrol.models import (
    MDP,
    ModelError,
    ParseError,
    StationaryPolicy,
    dra_step,
    nts_from_mdp,
    parse_dra,
    parse_model,
    parse_policy,
    save_policy,
    serialize_model,
    validate_policy,
)
from conftest import random_mdp

SINGLETON = """
states 1
initial 0
mode mdp
trans 0 loop 0 1.0
"""

CHAIN_NTS = """
states 4
initial 0
mode nts
props p
label 3: p
trans 0 go 1 1
trans 0 go 2 1
trans 1 go 3 1
trans 2 go 3 1
trans 3 go 3 1
"""

F_P_DRA = """
states 2
initial 0
props p
edge 0 {p} 1
edge 0 else 0
edge 1 else 1
pair L={} K={1}
"""


def test_parse_absorbing_singleton():
    m = parse_model(SINGLETON)
    assert m.n_states == 1 and m.mode == MDP
    assert m.transitions[(0, 0)] == ((0, 1.0),)


def test_stochasticity_violation_names_state_and_action():
    bad = """
states 3
initial 0
mode mdp
trans 0 a 1 0.6
trans 0 a 2 0.3
trans 1 a 1 1.0
trans 2 a 2 1.0
"""
    with pytest.raises(ParseError, match=r"stochasticity violation at \(0, 'a'\)"):
        parse_model(bad)


def test_dangling_state_and_empty_enabled():
    with pytest.raises(ParseError, match="dangling state id 7"):
        parse_model("states 2\ninitial 0\nmode mdp\ntrans 0 a 7 1.0\ntrans 1 a 1 1.0")
    with pytest.raises(ModelError, match="state 1 has no enabled actions"):
        parse_model("states 2\ninitial 0\nmode mdp\ntrans 0 a 0 1.0")


def test_nts_weights_must_be_flags():
    with pytest.raises(ParseError, match="not 0 or 1"):
        parse_model("states 1\ninitial 0\nmode nts\ntrans 0 a 0 0.5")


def test_duplicate_transition_rejected():
    text = "states 1\ninitial 0\nmode mdp\ntrans 0 a 0 0.5\ntrans 0 a 0 0.5"
    with pytest.raises(ParseError, match="duplicate transition"):
        parse_model(text)


def test_nts_file_matches_nts_from_mdp():
    # The possible-transition set of an NTS file equals the positive-support
    # set of the matching MDP file after abstraction.
    mdp_text = """
states 4
initial 0
mode mdp
props p
label 3: p
trans 0 go 1 0.4
trans 0 go 2 0.6
trans 1 go 3 1.0
trans 2 go 3 1.0
trans 3 go 3 1.0
"""
    from_file = parse_model(CHAIN_NTS)
    from_mdp = nts_from_mdp(parse_model(mdp_text))
    assert from_file.transitions == from_mdp.transitions
    assert from_file.enabled == from_mdp.enabled


def test_nts_from_mdp_flags_and_idempotence(rng):
    m = parse_model("states 2\ninitial 0\nmode mdp\n"
                    "trans 0 a 0 0.5\ntrans 0 a 1 0.5\ntrans 1 b 1 1.0")
    n = nts_from_mdp(m)
    assert n.transitions[(0, 0)] == ((0, 1.0), (1, 1.0))
    assert n.transitions[(1, 1)] == ((1, 1.0),)
    assert nts_from_mdp(n) is n
    for _ in range(5):
        m = random_mdp(rng, n_states=5, n_actions=3)
        n = nts_from_mdp(m)
        for key, row in m.transitions.items():
            assert tuple(s for s, _ in n.transitions[key]) == \
                tuple(s for s, w in row if w > 0)


def test_row_sums_of_random_mdps(rng):
    for _ in range(10):
        m = random_mdp(rng, n_states=6, n_actions=3)
        for q, u in m.enabled_pairs():
            assert abs(sum(w for _, w in m.transitions[(q, u)]) - 1.0) <= 1e-9


def test_serialize_round_trip(rng):
    for _ in range(5):
        m = random_mdp(rng, n_states=5, n_actions=2, n_props=2)
        again = parse_model(serialize_model(m))
        assert again == m
    n = parse_model(CHAIN_NTS)
    assert parse_model(serialize_model(n)) == n


def test_parse_dra_reachability_automaton():
    r = parse_dra(F_P_DRA)
    assert r.n_states == 2 and r.initial == 0
    assert r.pairs == ((frozenset(), frozenset({1})),)
    assert dra_step(r, 0, r.prop_mask(["p"])) == 1
    assert dra_step(r, 0, 0) == 0
    assert dra_step(r, 1, 0) == 1


def test_parse_dra_totality_error():
    partial = """
states 2
initial 0
props p
edge 0 {p} 1
edge 1 else 1
pair L={} K={1}
"""
    with pytest.raises(ModelError, match="missing transition for state 0"):
        parse_dra(partial)


def test_parse_dra_unknown_prop_and_empty_pairs():
    with pytest.raises(ParseError, match="unknown proposition"):
        parse_dra("states 1\ninitial 0\nprops p\nedge 0 {q} 0\nedge 0 else 0\n"
                  "pair L={} K={0}")
    with pytest.raises(ModelError, match="no accepting pairs"):
        parse_dra("states 1\ninitial 0\nprops p\nedge 0 else 0")


def test_mission_automaton_has_17_states_and_is_total():
    with open("tasks/mission.dra") as f:
        r = parse_dra(f.read())
    assert r.n_states == 17
    assert len(r.pairs) == 1
    # Totality is exhaustively checkable for |S| x 2^|props|.
    for s in range(r.n_states):
        for letter in range(r.n_letters):
            assert 0 <= dra_step(r, s, letter) < r.n_states


def test_prop_cap_enforced():
    props = " ".join(f"p{i}" for i in range(17))
    with pytest.raises(ParseError, match="more than 16"):
        parse_dra(f"states 1\ninitial 0\nprops {props}\nedge 0 else 0\npair L={{}} K={{0}}")


def test_policy_validation_and_round_trip():
    m = parse_model(CHAIN_NTS)
    pol = StationaryPolicy(kind="randomized", table={0: {0: 1.0}, 1: {0: 1.0}})
    validate_policy(pol, m)
    import io
    buf = io.StringIO()
    save_policy(buf, pol, m)
    again = parse_policy(buf.getvalue(), m)
    assert again.table == pol.table
    bad = StationaryPolicy(kind="randomized", table={0: {1: 1.0}})
    with pytest.raises(ModelError, match="disabled action"):
        validate_policy(bad, m)
    off = StationaryPolicy(kind="randomized", table={0: {0: 0.9}})
    with pytest.raises(ModelError, match="sums to"):
        validate_policy(off, m)
