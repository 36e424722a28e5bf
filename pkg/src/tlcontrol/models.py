"""Labeled MDP/NTS models, deterministic Rabin automata, and stationary policies.

Model file format (line oriented, ``#`` starts a comment):

    states N
    initial q0
    mode mdp|nts
    props p1 p2 ...
    label q: p_i p_j
    trans q u q' w

States are integers ``0..N-1``. Action names are free strings and are
interned to dense integer ids in order of first appearance. In ``mdp`` mode
``w`` is a probability and each (state, action) row must sum to 1 within
1e-9; in ``nts`` mode ``w`` must be exactly 0 or 1 and marks a possible
transition (zero-weight entries are dropped in both modes).

Rabin automaton file format:

    states N
    initial s0
    props p1 p2 ...
    edge s {p_i,p_j} s'
    edge s else s'
    pair L={...} K={...}

Letters are exact observation subsets (``{}`` is the empty letter) encoded
as bitmasks over the ``props`` line. A per-state ``else`` edge supplies the
target for every letter without an explicit edge; the transition function
must be total after that expansion.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping

import numpy as np

MDP = "mdp"
NTS = "nts"

ROW_SUM_TOL = 1e-9
DIST_TOL = 1e-12
MAX_PROPS = 16


class ModelError(ValueError):
    """Semantic violation in a model, automaton, or policy."""


class ParseError(ValueError):
    """Malformed input text, reported with its 1-based line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class LabeledModel:
    """A finite state-transition model with observation labels.

    ``transitions`` maps (state, action id) to a tuple of (successor, weight)
    entries sorted by successor; rows exist exactly for enabled actions.
    ``labels`` holds one observation bitmask per state over ``props``.
    Instances are immutable after construction.
    """

    n_states: int
    initial: int
    actions: tuple[str, ...]
    enabled: tuple[tuple[int, ...], ...]
    transitions: Mapping[tuple[int, int], tuple[tuple[int, float], ...]]
    props: tuple[str, ...]
    labels: tuple[int, ...]
    mode: str
    state_names: tuple[str, ...] | None = None

    def successors(self, state: int, action: int) -> tuple[tuple[int, float], ...]:
        return self.transitions[(state, action)]

    def support(self, state: int, action: int) -> tuple[int, ...]:
        return tuple(s for s, _ in self.transitions[(state, action)])

    def action_id(self, name: str) -> int:
        return self.actions.index(name)

    def prop_mask(self, names: Iterable[str]) -> int:
        mask = 0
        for name in names:
            try:
                mask |= 1 << self.props.index(name)
            except ValueError:
                raise ModelError(f"unknown proposition {name!r}") from None
        return mask

    def letter(self, state: int) -> int:
        """Observation set of ``state`` as a single alphabet letter."""
        return self.labels[state]

    def enabled_pairs(self) -> Iterator[tuple[int, int]]:
        for q, acts in enumerate(self.enabled):
            for u in acts:
                yield (q, u)

    def n_enabled_pairs(self) -> int:
        return sum(len(acts) for acts in self.enabled)


def validate_model(m: LabeledModel) -> None:
    """Check every structural invariant of ``m``; raise ModelError otherwise."""
    if m.mode not in (MDP, NTS):
        raise ModelError(f"unknown mode {m.mode!r}")
    if not (0 <= m.initial < m.n_states):
        raise ModelError(f"initial state {m.initial} out of range")
    if len(m.props) > MAX_PROPS:
        raise ModelError(f"{len(m.props)} propositions exceed the cap of {MAX_PROPS}")
    if len(m.enabled) != m.n_states or len(m.labels) != m.n_states:
        raise ModelError("enabled/label tables do not cover all states")
    seen = set()
    for q, acts in enumerate(m.enabled):
        if not acts:
            raise ModelError(f"state {q} has no enabled actions")
        for u in acts:
            if not (0 <= u < len(m.actions)):
                raise ModelError(f"state {q}: action id {u} out of range")
            row = m.transitions.get((q, u))
            if not row:
                raise ModelError(f"state {q}, action {m.actions[u]!r}: no transitions")
            seen.add((q, u))
            total = 0.0
            for succ, w in row:
                if not (0 <= succ < m.n_states):
                    raise ModelError(f"dangling state id {succ} in row ({q}, {m.actions[u]!r})")
                if m.mode == NTS and w != 1.0:
                    raise ModelError(
                        f"state {q}, action {m.actions[u]!r}: NTS weight {w} is not 1")
                if w <= 0.0 or w > 1.0 + ROW_SUM_TOL:
                    raise ModelError(
                        f"state {q}, action {m.actions[u]!r}: weight {w} outside (0, 1]")
                total += w
            if m.mode == MDP and abs(total - 1.0) > ROW_SUM_TOL:
                raise ModelError(
                    f"stochasticity violation at ({q}, {m.actions[u]!r}): row sum {total!r}")
    extra = set(m.transitions) - seen
    if extra:
        q, u = sorted(extra)[0]
        raise ModelError(f"transition row ({q}, {m.actions[u]!r}) for a disabled action")


def parse_model(text: str) -> LabeledModel:
    """Parse the model file format; see the module docstring."""
    n_states = initial = None
    mode = None
    props: list[str] = []
    actions: list[str] = []
    action_ids: dict[str, int] = {}
    enabled: dict[int, list[int]] = {}
    rows: dict[tuple[int, int], dict[int, float]] = {}
    row_line: dict[tuple[int, int], int] = {}
    labels: dict[int, int] = {}

    def intern_action(name: str) -> int:
        if name not in action_ids:
            action_ids[name] = len(actions)
            actions.append(name)
        return action_ids[name]

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        key = tokens[0]
        if key == "states":
            n_states = _int_field(tokens, lineno, "states")
        elif key == "initial":
            initial = _int_field(tokens, lineno, "initial")
        elif key == "mode":
            if len(tokens) != 2 or tokens[1] not in (MDP, NTS):
                raise ParseError(lineno, "mode must be 'mdp' or 'nts'")
            mode = tokens[1]
        elif key == "props":
            props = tokens[1:]
            if len(set(props)) != len(props):
                raise ParseError(lineno, "duplicate proposition names")
        elif key == "label":
            state, names = _parse_label(line, lineno)
            if state in labels:
                raise ParseError(lineno, f"duplicate label line for state {state}")
            mask = 0
            for name in names:
                if name not in props:
                    raise ParseError(lineno, f"unknown proposition {name!r}")
                mask |= 1 << props.index(name)
            labels[state] = mask
        elif key == "trans":
            if len(tokens) != 5:
                raise ParseError(lineno, "expected 'trans q u q' w'")
            try:
                q, succ = int(tokens[1]), int(tokens[3])
                w = float(tokens[4])
            except ValueError:
                raise ParseError(lineno, f"bad transition line {line!r}") from None
            u = intern_action(tokens[2])
            rows.setdefault((q, u), {})
            row_line.setdefault((q, u), lineno)
            if succ in rows[(q, u)]:
                raise ParseError(lineno, f"duplicate transition ({q}, {tokens[2]}, {succ})")
            rows[(q, u)][succ] = w
            enabled.setdefault(q, [])
            if u not in enabled[q]:
                enabled[q].append(u)
        else:
            raise ParseError(lineno, f"unknown directive {key!r}")

    if n_states is None:
        raise ModelError("missing 'states' header")
    if initial is None:
        raise ModelError("missing 'initial' header")
    if mode is None:
        raise ModelError("missing 'mode' header")

    transitions: dict[tuple[int, int], tuple[tuple[int, float], ...]] = {}
    for (q, u), succs in rows.items():
        lineno = row_line[(q, u)]
        if not (0 <= q < n_states):
            raise ParseError(lineno, f"dangling state id {q}")
        total = 0.0
        kept = []
        for succ in sorted(succs):
            w = succs[succ]
            if not (0 <= succ < n_states):
                raise ParseError(lineno, f"dangling state id {succ}")
            if mode == NTS and w not in (0.0, 1.0):
                raise ParseError(lineno, f"NTS weight {w} at ({q}, {actions[u]!r}) is not 0 or 1")
            if w < 0 or w > 1 + ROW_SUM_TOL:
                raise ParseError(lineno, f"weight {w} outside [0, 1]")
            total += w
            if w > 0:
                kept.append((succ, w))
        if mode == MDP and abs(total - 1.0) > ROW_SUM_TOL:
            raise ParseError(
                lineno, f"stochasticity violation at ({q}, {actions[u]!r}): row sum {total!r}")
        if not kept:
            raise ParseError(lineno, f"row ({q}, {actions[u]!r}) has no positive transitions")
        transitions[(q, u)] = tuple(kept)

    for q in range(n_states):
        if q not in enabled:
            raise ModelError(f"state {q} has no enabled actions")
    for q in labels:
        if not (0 <= q < n_states):
            raise ModelError(f"dangling state id {q} in a label line")

    model = LabeledModel(
        n_states=n_states,
        initial=initial,
        actions=tuple(actions),
        enabled=tuple(tuple(enabled[q]) for q in range(n_states)),
        transitions=transitions,
        props=tuple(props),
        labels=tuple(labels.get(q, 0) for q in range(n_states)),
        mode=mode,
    )
    validate_model(model)
    return model


def _int_field(tokens: list[str], lineno: int, name: str) -> int:
    if len(tokens) != 2:
        raise ParseError(lineno, f"expected '{name} <int>'")
    try:
        return int(tokens[1])
    except ValueError:
        raise ParseError(lineno, f"expected '{name} <int>'") from None


def _parse_label(line: str, lineno: int) -> tuple[int, list[str]]:
    body = line[len("label"):]
    if ":" not in body:
        raise ParseError(lineno, "expected 'label q: p ...'")
    head, rest = body.split(":", 1)
    try:
        state = int(head.strip())
    except ValueError:
        raise ParseError(lineno, "expected 'label q: p ...'") from None
    return state, rest.split()


def serialize_model(m: LabeledModel) -> str:
    """Canonical text form; parse_model(serialize_model(m)) reproduces ``m``."""
    out = [f"states {m.n_states}", f"initial {m.initial}", f"mode {m.mode}"]
    if m.props:
        out.append("props " + " ".join(m.props))
    if m.state_names:
        for q, name in enumerate(m.state_names):
            out.append(f"# state {q} {name}")
    for q in range(m.n_states):
        if m.labels[q]:
            names = [p for i, p in enumerate(m.props) if m.labels[q] >> i & 1]
            out.append(f"label {q}: " + " ".join(names))
    for q in range(m.n_states):
        for u in m.enabled[q]:
            for succ, w in m.transitions[(q, u)]:
                out.append(f"trans {q} {m.actions[u]} {succ} {w!r}")
    return "\n".join(out) + "\n"


def nts_from_mdp(m: LabeledModel) -> LabeledModel:
    """Possibilistic abstraction: each positive-probability edge becomes a flag."""
    if m.mode == NTS:
        return m
    transitions = {
        key: tuple((succ, 1.0) for succ, w in row if w > 0)
        for key, row in m.transitions.items()
    }
    return LabeledModel(
        n_states=m.n_states,
        initial=m.initial,
        actions=m.actions,
        enabled=m.enabled,
        transitions=transitions,
        props=m.props,
        labels=m.labels,
        mode=NTS,
        state_names=m.state_names,
    )


# ---------------------------------------------------------------------------
# Rabin automata


@dataclass(frozen=True)
class RabinAutomaton:
    """Deterministic automaton over observation-set letters with accepting pairs.

    ``delta`` is a dense (n_states, 2^len(props)) array; acceptance pairs are
    (L, K) state sets: a run is accepting for pair i when it visits L(i)
    finitely often and K(i) infinitely often.
    """

    n_states: int
    initial: int
    props: tuple[str, ...]
    delta: np.ndarray
    pairs: tuple[tuple[frozenset[int], frozenset[int]], ...]

    @property
    def n_letters(self) -> int:
        return 1 << len(self.props)

    def prop_mask(self, names: Iterable[str]) -> int:
        mask = 0
        for name in names:
            try:
                mask |= 1 << self.props.index(name)
            except ValueError:
                raise ModelError(f"unknown proposition {name!r}") from None
        return mask


def dra_step(r: RabinAutomaton, state: int, letter: int) -> int:
    """Apply the (total) transition function once."""
    return int(r.delta[state, letter])


_PAIR_RE = re.compile(r"^L=\{([^}]*)\}\s+K=\{([^}]*)\}$")


def parse_dra(text: str) -> RabinAutomaton:
    """Parse the Rabin automaton file format; see the module docstring."""
    n_states = initial = None
    props: list[str] = []
    explicit: dict[tuple[int, int], int] = {}
    defaults: dict[int, int] = {}
    pairs: list[tuple[frozenset[int], frozenset[int]]] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        key = tokens[0]
        if key == "states":
            n_states = _int_field(tokens, lineno, "states")
        elif key == "initial":
            initial = _int_field(tokens, lineno, "initial")
        elif key == "props":
            props = tokens[1:]
            if len(props) > MAX_PROPS:
                raise ParseError(lineno, f"more than {MAX_PROPS} propositions")
            if len(set(props)) != len(props):
                raise ParseError(lineno, "duplicate proposition names")
        elif key == "edge":
            if len(tokens) != 4:
                raise ParseError(lineno, "expected 'edge s {letter}|else s''")
            try:
                src, dst = int(tokens[1]), int(tokens[3])
            except ValueError:
                raise ParseError(lineno, f"bad edge line {line!r}") from None
            if tokens[2] == "else":
                if src in defaults:
                    raise ParseError(lineno, f"duplicate default edge for state {src}")
                defaults[src] = dst
            else:
                letter = _parse_letter(tokens[2], props, lineno)
                if (src, letter) in explicit:
                    raise ParseError(lineno, f"duplicate edge for state {src}, letter {tokens[2]}")
                explicit[(src, letter)] = dst
        elif key == "pair":
            match = _PAIR_RE.match(line[len("pair"):].strip())
            if not match:
                raise ParseError(lineno, "expected 'pair L={...} K={...}'")
            pairs.append((_parse_state_set(match.group(1), lineno),
                          _parse_state_set(match.group(2), lineno)))
        else:
            raise ParseError(lineno, f"unknown directive {key!r}")

    if n_states is None:
        raise ModelError("missing 'states' header")
    if initial is None or not (0 <= initial < n_states):
        raise ModelError("missing or invalid 'initial' header")
    if not pairs:
        raise ModelError("automaton has no accepting pairs")

    n_letters = 1 << len(props)
    delta = np.full((n_states, n_letters), -1, dtype=np.int32)
    for (src, letter), dst in explicit.items():
        if not (0 <= src < n_states) or not (0 <= dst < n_states):
            raise ModelError(f"edge ({src} -> {dst}) references an unknown state")
        delta[src, letter] = dst
    for src, dst in defaults.items():
        if not (0 <= src < n_states) or not (0 <= dst < n_states):
            raise ModelError(f"default edge ({src} -> {dst}) references an unknown state")
        row = delta[src]
        row[row < 0] = dst
    if (delta < 0).any():
        src, letter = map(int, np.argwhere(delta < 0)[0])
        raise ModelError(
            f"missing transition for state {src} on letter "
            f"{_letter_names(letter, props)} and no default")
    for left, right in pairs:
        for s in left | right:
            if not (0 <= s < n_states):
                raise ModelError(f"accepting pair references unknown state {s}")

    return RabinAutomaton(
        n_states=n_states,
        initial=initial,
        props=tuple(props),
        delta=delta,
        pairs=tuple(pairs),
    )


def _parse_letter(token: str, props: list[str], lineno: int) -> int:
    if not (token.startswith("{") and token.endswith("}")):
        raise ParseError(lineno, f"letter {token!r} must be a {{...}} subset")
    mask = 0
    body = token[1:-1]
    for name in filter(None, (part.strip() for part in body.split(","))):
        if name not in props:
            raise ParseError(lineno, f"unknown proposition {name!r}")
        mask |= 1 << props.index(name)
    return mask


def _parse_state_set(body: str, lineno: int) -> frozenset[int]:
    try:
        return frozenset(int(part) for part in body.split(",") if part.strip())
    except ValueError:
        raise ParseError(lineno, f"bad state set {{{body}}}") from None


def _letter_names(letter: int, props: list[str]) -> str:
    return "{" + ",".join(p for i, p in enumerate(props) if letter >> i & 1) + "}"


# ---------------------------------------------------------------------------
# Stationary policies


@dataclass(frozen=True)
class StationaryPolicy:
    """Time-invariant policy: a distribution over enabled actions per state."""

    kind: str  # "deterministic" | "randomized"
    table: Mapping[int, Mapping[int, float]]

    def action(self, state: int) -> int:
        """The single action of a deterministic policy at ``state``."""
        dist = self.table[state]
        if len(dist) != 1:
            raise ModelError(f"policy is not deterministic at state {state}")
        return next(iter(dist))


def validate_policy(pol: StationaryPolicy, m: LabeledModel) -> None:
    for state, dist in pol.table.items():
        if not (0 <= state < m.n_states):
            raise ModelError(f"policy references unknown state {state}")
        allowed = set(m.enabled[state])
        total = 0.0
        for action, p in dist.items():
            if action not in allowed:
                name = m.actions[action] if 0 <= action < len(m.actions) else action
                raise ModelError(
                    f"policy puts mass on disabled action {name!r} at {state}")
            if p < 0:
                raise ModelError(f"negative probability at state {state}")
            total += p
        if abs(total - 1.0) > DIST_TOL:
            raise ModelError(f"policy distribution at state {state} sums to {total!r}")
        if pol.kind == "deterministic" and len(dist) != 1:
            raise ModelError(f"deterministic policy has {len(dist)} actions at state {state}")


def save_policy(f, pol: StationaryPolicy, m: LabeledModel) -> None:
    """Write a policy as tab-separated (state, action name, probability) rows."""
    for state in sorted(pol.table):
        for action in sorted(pol.table[state]):
            f.write(f"{state}\t{m.actions[action]}\t{pol.table[state][action]!r}\n")


def parse_policy(text: str, m: LabeledModel) -> StationaryPolicy:
    table: dict[int, dict[int, float]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(lineno, "expected 'state<TAB>action<TAB>prob'")
        try:
            state, prob = int(parts[0]), float(parts[2])
        except ValueError:
            raise ParseError(lineno, f"bad policy row {line!r}") from None
        if parts[1] not in m.actions:
            raise ParseError(lineno, f"unknown action {parts[1]!r}")
        table.setdefault(state, {})[m.actions.index(parts[1])] = prob
    kind = "deterministic" if all(len(d) == 1 for d in table.values()) else "randomized"
    pol = StationaryPolicy(kind=kind, table=table)
    validate_policy(pol, m)
    return pol
