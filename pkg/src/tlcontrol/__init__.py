"""Temporal-logic control synthesis for Markov decision processes.

Pipeline: labeled model x Rabin automaton product, accepting maximal end
components, reachability-to-shortest-path conversion, and a two-parameter
lookahead policy optimized by an LSTD actor-critic that only ever asks for
transition probabilities along its sample path. Exact dynamic-programming
oracles (value iteration, policy evaluation, policy enumeration) provide
the reference values.
"""

from .models import (
    LabeledModel,
    ModelError,
    ParseError,
    RabinAutomaton,
    StationaryPolicy,
    dra_step,
    nts_from_mdp,
    parse_dra,
    parse_model,
    serialize_model,
)
from .synthesis import (
    Amec,
    ProductModel,
    SspModel,
    amecs,
    build_product,
    goal_and_bad_sets,
    inside_amec_policy,
    max_end_components,
    mrp_to_ssp,
    prune_unreachable,
)
from .lookahead import LookaheadPolicy, action_sequences, min_distances, neighborhood
from .actor_critic import ActorCriticConfig, CriticState, ActorState, RunTrace, run
from .exact import enumerate_policies, eval_policy_reach, expected_total_cost, max_reach
from .pipeline import RunConfig, compare, synthesize

__version__ = "0.1.0"

__all__ = [
    "ActorCriticConfig", "ActorState", "Amec", "CriticState", "LabeledModel",
    "LookaheadPolicy", "ModelError", "ParseError", "ProductModel",
    "RabinAutomaton", "RunConfig", "RunTrace", "SspModel", "StationaryPolicy",
    "action_sequences", "amecs", "build_product", "compare", "dra_step",
    "enumerate_policies", "eval_policy_reach", "expected_total_cost",
    "goal_and_bad_sets", "inside_amec_policy", "max_end_components",
    "max_reach", "min_distances", "mrp_to_ssp", "neighborhood",
    "nts_from_mdp", "parse_dra", "parse_model", "prune_unreachable", "run",
    "serialize_model", "synthesize",
]
