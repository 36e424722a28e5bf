#!/usr/bin/env python3
"""Generate tasks/mission.dra, the hand-built Rabin automaton for the data
collection mission:

  * reach an upload region, and see no unsafe region strictly before it;
  * every risky region visit must eventually be followed by valuable data;
  * every data pickup (valuable or regular) needs a strictly later upload.

State encoding: 'dead' (unsafe before upload), or (phase, owe_vd, owe_up, c)
where phase is seek/done (upload seen), owe_vd marks a pending risky->data
obligation, owe_up a pending data->upload obligation. The counter c tracks
the two recurring obligations in turn (1: waiting for owe_vd to clear,
2: waiting for an upload event or owe_up clear, 3: both just observed);
c = 3 inside the done phase forms the accepting K set, visited infinitely
often exactly when both obligation kinds clear infinitely often. The seek
phase does not count rounds. Reachable states: 7 seek + 9 done + dead = 17.
"""

import sys
from collections import deque
from pathlib import Path

PROPS = ["rd", "ri", "un", "up", "vd"]

WAIT_VD, WAIT_UP, ROUND_DONE = 1, 2, 3
DEAD = "dead"


def step(state, letter):
    if state == DEAD:
        return DEAD
    phase, owe_vd, owe_up, c = state
    rd, ri, un, up, vd = (p in letter for p in PROPS)
    if phase == "seek" and un and not up:
        return DEAD
    phase2 = "done" if (phase == "done" or up) else "seek"
    owe_vd2 = (owe_vd or ri) and not vd
    owe_up2 = (owe_up and not up) or vd or rd
    vd_clear = not owe_vd2
    up_event = up or not owe_up2
    if c in (WAIT_VD, ROUND_DONE):
        c2 = WAIT_UP if vd_clear else WAIT_VD
    else:
        c2 = ROUND_DONE if up_event else WAIT_UP
    return (phase2, owe_vd2, owe_up2, c2)


def build():
    initial = ("seek", False, False, ROUND_DONE)
    letters = [frozenset(p for i, p in enumerate(PROPS) if mask >> i & 1)
               for mask in range(1 << len(PROPS))]
    order = [initial]
    seen = {initial}
    queue = deque([initial])
    while queue:
        state = queue.popleft()
        for letter in letters:
            nxt = step(state, letter)
            if nxt not in seen:
                seen.add(nxt)
                order.append(nxt)
                queue.append(nxt)
    index = {state: i for i, state in enumerate(order)}
    return initial, letters, order, index


def describe(state):
    if state == DEAD:
        return "trap: unsafe before upload"
    phase, owe_vd, owe_up, c = state
    bits = [phase,
            "owes-data" if owe_vd else "data-clear",
            "owes-upload" if owe_up else "upload-clear",
            f"round{c}"]
    return " ".join(bits)


def main():
    initial, letters, order, index = build()
    assert len(order) == 17, f"expected 17 states, got {len(order)}"

    accept = [index[s] for s in order
              if s != DEAD and s[0] == "done" and s[3] == ROUND_DONE]
    assert accept, "no accepting states"

    lines = ["# Data-collection mission automaton (17 states, 1 accepting pair).",
             "# Generated by tools/make_mission_dra.py; do not edit by hand.",
             f"states {len(order)}",
             f"initial {index[initial]}",
             "props " + " ".join(PROPS)]
    for state in order:
        i = index[state]
        lines.append(f"# {i}: {describe(state)}")
        targets = {}
        for letter in letters:
            targets.setdefault(index[step(state, letter)], []).append(letter)
        default = max(targets, key=lambda t: (len(targets[t]), -t))
        for target in sorted(targets):
            if target == default:
                continue
            for letter in sorted(targets[target], key=sorted):
                lines.append(f"edge {i} {{{','.join(sorted(letter))}}} {target}")
        lines.append(f"edge {i} else {default}")
    lines.append(f"pair L={{{index[DEAD]}}} K={{{','.join(map(str, sorted(accept)))}}}")
    text = "\n".join(lines) + "\n"

    out = Path(__file__).resolve().parent.parent / "tasks" / "mission.dra"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    print(f"wrote {out} ({len(order)} states, K = {sorted(accept)})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
