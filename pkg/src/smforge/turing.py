"""Multi-tape Turing machines, the normalizing transforms, symmetrization,
and the bridge turning a symmetric machine into an S-machine.

Commands follow the substitution format: one part ``u q v -> u' q' v'`` per
tape, where u/u' may be a tape letter, the left marker, or empty, and v/v'
likewise with the right marker.  The head sits between u's end and v's start.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

from . import machine as sm
from .words import EMPTY, GroupWord, Letter, a_letter, pos_word, q_letter

ALPHA = "<A>"
OMEGA = "<W>"

Slot = "str | None"  # tape letter name, ALPHA/OMEGA, or None for empty


@dataclass(frozen=True)
class TmPart:
    u: Slot
    q: str
    v: Slot
    u2: Slot
    q2: str
    v2: Slot

    def __post_init__(self):
        if (self.u == ALPHA) != (self.u2 == ALPHA) or (self.v == OMEGA) != (self.v2 == OMEGA):
            raise ValueError("markers cannot be created or destroyed")

    def letters(self) -> list[str]:
        return [x for x in (self.u, self.v, self.u2, self.v2) if x not in (None, ALPHA, OMEGA)]

    def inverse(self) -> "TmPart":
        return TmPart(self.u2, self.q2, self.v2, self.u, self.q, self.v)


@dataclass(frozen=True)
class TmCommand:
    name: str
    parts: tuple[TmPart, ...]

    def letter_count(self) -> int:
        return sum(len(p.letters()) for p in self.parts)

    def inverse(self) -> "TmCommand":
        return TmCommand(self.name + "^-1", tuple(p.inverse() for p in self.parts))

    def lhs_states(self) -> tuple[str, ...]:
        return tuple(p.q for p in self.parts)

    def rhs_states(self) -> tuple[str, ...]:
        return tuple(p.q2 for p in self.parts)


TapeCfg = "tuple[tuple[str, ...], str, tuple[str, ...]]"
Config = "tuple[TapeCfg, ...]"


@dataclass(frozen=True)
class TuringMachine:
    name: str
    tapes: int
    input_alphabet: tuple[str, ...]
    tape_alphabets: tuple[frozenset[str], ...]        # flat per tape
    states: tuple[tuple[str, ...], ...]
    start_vec: tuple[str, ...]
    accept_vec: tuple[str, ...]
    commands: tuple[TmCommand, ...]
    sided: bool = False                               # Lemma 2.2(d) holds
    left_alphabets: tuple[frozenset[str], ...] = ()
    right_alphabets: tuple[frozenset[str], ...] = ()
    input_embed: tuple[tuple[str, str], ...] = ()     # input letter -> tape-1 letter
    symmetric: bool = False

    def command(self, name: str) -> TmCommand:
        for c in self.commands:
            if c.name == name:
                return c
        raise KeyError(name)

    def embed_input(self, w: Sequence[str]) -> tuple[str, ...]:
        emb = dict(self.input_embed)
        return tuple(emb.get(x, x) for x in w)

    def input_config(self, w: Sequence[str]) -> Config:
        for x in w:
            if x not in self.input_alphabet:
                raise ValueError(f"{x!r} not in the input alphabet")
        tapes = [ (self.embed_input(w), self.start_vec[0], ()) ]
        for i in range(1, self.tapes):
            tapes.append(((), self.start_vec[i], ()))
        return tuple(tapes)

    def is_accept(self, cfg: Config) -> bool:
        return all(t[1] == self.accept_vec[i] for i, t in enumerate(cfg))


class TmNotApplicable(Exception):
    pass


class NondeterministicChoice(Exception):
    pass


def _part_applies(p: TmPart, t: TapeCfg) -> bool:
    u, _, v = t
    if p.u == ALPHA:
        if u:
            return False
    elif p.u is not None and (not u or u[-1] != p.u):
        return False
    if p.v == OMEGA:
        if v:
            return False
    elif p.v is not None and (not v or v[0] != p.v):
        return False
    return True


def step(m: TuringMachine, cfg: Config, cmd: TmCommand) -> Config:
    """Apply one command; raises TmNotApplicable on mismatch."""
    out = []
    for p, t in zip(cmd.parts, cfg):
        u, q, v = t
        if q != p.q or not _part_applies(p, t):
            raise TmNotApplicable(cmd.name)
        if p.u not in (None, ALPHA):
            u = u[:-1]
        if p.u2 not in (None, ALPHA):
            u = u + (p.u2,)
        if p.v not in (None, OMEGA):
            v = v[1:]
        if p.v2 not in (None, OMEGA):
            v = (p.v2,) + v
        out.append((u, p.q2, v))
    return tuple(out)


def applicable_commands(m: TuringMachine, cfg: Config, *, include_inverses: bool = False):
    cmds: list[TmCommand] = []
    for c in m.commands:
        if all(p.q == t[1] and _part_applies(p, t) for p, t in zip(c.parts, cfg)):
            cmds.append(c)
    if include_inverses:
        for c in m.commands:
            ci = c.inverse()
            if all(p.q == t[1] and _part_applies(p, t) for p, t in zip(ci.parts, cfg)):
                cmds.append(ci)
    return cmds


@dataclass(frozen=True)
class Accepted:
    time: int


@dataclass(frozen=True)
class Rejected:
    steps: int


@dataclass(frozen=True)
class OutOfFuel:
    steps: int


def run_deterministic(m: TuringMachine, w: Sequence[str], fuel: int):
    """Run a deterministic recognizer; Accepted(t) iff the accept vector is
    reached after t <= fuel steps."""
    if fuel <= 0:
        raise ValueError("fuel must be positive")
    cfg = m.input_config(w)
    for t in range(fuel + 1):
        if m.is_accept(cfg):
            for tape in cfg:
                if tape[0] or tape[2]:
                    raise AssertionError("accept configuration with nonempty tape")
            return Accepted(t)
        if t == fuel:
            return OutOfFuel(t)
        cmds = applicable_commands(m, cfg)
        if not cmds:
            return Rejected(t)
        if len(cmds) > 1:
            raise NondeterministicChoice(", ".join(c.name for c in cmds))
        cfg = step(m, cfg, cmds[0])
    return OutOfFuel(fuel)


def run_trace(m: TuringMachine, w: Sequence[str], fuel: int) -> list[Config]:
    cfg = m.input_config(w)
    out = [cfg]
    for _ in range(fuel):
        if m.is_accept(cfg):
            break
        cmds = applicable_commands(m, cfg)
        if not cmds:
            break
        if len(cmds) > 1:
            raise NondeterministicChoice(", ".join(c.name for c in cmds))
        cfg = step(m, cfg, cmds[0])
        out.append(cfg)
    return out


def accepting_history(m: TuringMachine, w: Sequence[str], fuel: int) -> list[TmCommand] | None:
    cfg = m.input_config(w)
    hist: list[TmCommand] = []
    for _ in range(fuel + 1):
        if m.is_accept(cfg):
            return hist
        cmds = applicable_commands(m, cfg)
        if not cmds:
            return None
        if len(cmds) > 1:
            raise NondeterministicChoice(", ".join(c.name for c in cmds))
        hist.append(cmds[0])
        cfg = step(m, cfg, cmds[0])
    return None


# ---------------------------------------------------------------------------
# Lemma 2.2 normalization


def _compatible_cond(a: Slot, b: Slot) -> bool:
    if a is None or b is None:
        return True
    return a == b


def _lhs_overlap(c1: TmCommand, c2: TmCommand) -> bool:
    if c1.lhs_states() != c2.lhs_states():
        return False
    for p1, p2 in zip(c1.parts, c2.parts):
        if not (_compatible_cond(p1.u, p2.u) and _compatible_cond(p1.v, p2.v)):
            return False
    return True


def check_deterministic(m: TuringMachine) -> None:
    for c1, c2 in itertools.combinations(m.commands, 2):
        if _lhs_overlap(c1, c2):
            raise NondeterministicChoice(f"{c1.name} / {c2.name}")


def normalize(m: TuringMachine) -> TuringMachine:
    """Lemma 2.2: counter tape, command subdivision down to one tape letter,
    unique pure start/accept commands, per-tape and per-side alphabets."""
    k = m.tapes
    tau = "tau"
    while any(tau in alph for alph in m.tape_alphabets):
        tau += "_"

    # start wrapper (fresh start vector, pure state change)
    start_old = m.start_vec
    start_new = tuple(f"{q}@s" for q in start_old) + (f"r@s",)
    run_state = "r"
    acc_old = m.accept_vec
    acc_new = tuple(f"{q}@f" for q in acc_old) + ("rf",)

    for c in m.commands:
        if c.lhs_states() == acc_old or any(p.q == acc_old[i] for i, p in enumerate(c.parts)):
            raise ValueError("seed machine has commands leaving its accept states")

    cmds: list[TmCommand] = []
    cmds.append(
        TmCommand(
            "start",
            tuple(TmPart(None, start_new[i], None, None, start_old[i], None) for i in range(k))
            + (TmPart(None, start_new[k], None, None, run_state, None),),
        )
    )
    # originals, each appending one tau on the counter tape
    for c in m.commands:
        cmds.append(
            TmCommand(
                c.name,
                c.parts + (TmPart(None, run_state, None, tau, run_state, None),),
            )
        )
    # erase loop and the accept wrapper
    cmds.append(
        TmCommand(
            "wipe",
            tuple(TmPart(None, acc_old[i], None, None, acc_old[i], None) for i in range(k))
            + (TmPart(tau, run_state, None, None, run_state, None),),
        )
    )
    cmds.append(
        TmCommand(
            "accept",
            tuple(TmPart(ALPHA, acc_old[i], OMEGA, ALPHA, acc_new[i], OMEGA) for i in range(k))
            + (TmPart(ALPHA, run_state, OMEGA, ALPHA, acc_new[k], OMEGA),),
        )
    )

    # subdivide commands to at most one tape letter apiece (Remark 2.1)
    cmds = [c2 for c in cmds for c2 in _subdivide(c, k + 1)]

    states = tuple(
        tuple(
            dict.fromkeys(
                list(m.states[i] if i < k else (run_state,))
                + [start_new[i], acc_new[i]]
                + ([acc_old[i]] if i < k else [])
                + [p.q for c in cmds for p in (c.parts[i],)]
                + [p.q2 for c in cmds for p in (c.parts[i],)]
            )
        )
        for i in range(k + 1)
    )
    alphabets = tuple(list(m.tape_alphabets) + [frozenset({tau})])
    m1 = TuringMachine(
        m.name + "_n",
        k + 1,
        m.input_alphabet,
        alphabets,
        states,
        start_new,
        acc_new,
        tuple(cmds),
    )
    m1 = _split_sides(m1)
    check_deterministic(m1)
    return m1


def _subdivide(c: TmCommand, k: int) -> list[TmCommand]:
    if c.letter_count() <= 1:
        return [c]
    # One tape-letter action per step.  Consumes run before produces so the
    # first step keeps the distinguishing left-hand-side letters (determinism);
    # marker conditions are checked on the first step, so a produce beside a
    # marker may not land there.
    actions: list[tuple[int, str, str]] = []
    for i, p in enumerate(c.parts):
        if p.u not in (None, ALPHA):
            actions.append((i, "uc", p.u))
        if p.v not in (None, OMEGA):
            actions.append((i, "vc", p.v))
    marked_later: list[tuple[int, str, str]] = []
    for i, p in enumerate(c.parts):
        if p.u2 not in (None, ALPHA):
            (marked_later if p.u == ALPHA else actions).append((i, "up", p.u2))
        if p.v2 not in (None, OMEGA):
            (marked_later if p.v == OMEGA else actions).append((i, "vp", p.v2))
    actions += marked_later
    ti0, act0, _ = actions[0]
    p0 = c.parts[ti0]
    if (act0 == "up" and p0.u == ALPHA) or (act0 == "vp" and p0.v == OMEGA):
        raise ValueError(f"cannot subdivide {c.name}: marker-adjacent insertion first")
    n = len(actions)
    out = []
    for s, (ti, act, letter) in enumerate(actions, start=1):
        parts = []
        for i, p in enumerate(c.parts):
            q0 = p.q if s == 1 else f"{p.q}%{c.name}%{s - 1}"
            q1 = p.q2 if s == n else f"{p.q}%{c.name}%{s}"
            u = u2 = ALPHA if (p.u == ALPHA and s == 1) else None
            v = v2 = OMEGA if (p.v == OMEGA and s == 1) else None
            if i == ti:
                if act == "uc":
                    u = letter
                elif act == "vc":
                    v = letter
                elif act == "up":
                    u2 = letter
                elif act == "vp":
                    v2 = letter
            # a consumed letter disappears: u set, u2 left None (and dually)
            parts.append(TmPart(u, q0, v, u2, q1, v2))
        out.append(TmCommand(f"{c.name}.{s}", tuple(parts)))
    return out


def _split_sides(m: TuringMachine) -> TuringMachine:
    """Property (d): per-tape, per-side disjoint alphabets."""

    def lname(i: int, x: str) -> str:
        return f"{x}:{i}l"

    def rname(i: int, x: str) -> str:
        return f"{x}:{i}r"

    cmds = []
    for c in m.commands:
        parts = []
        for i, p in enumerate(c.parts):
            u = p.u if p.u in (None, ALPHA) else lname(i, p.u)
            u2 = p.u2 if p.u2 in (None, ALPHA) else lname(i, p.u2)
            v = p.v if p.v in (None, OMEGA) else rname(i, p.v)
            v2 = p.v2 if p.v2 in (None, OMEGA) else rname(i, p.v2)
            parts.append(TmPart(u, p.q, v, u2, p.q2, v2))
        cmds.append(TmCommand(c.name, tuple(parts)))
    lefts = tuple(frozenset(lname(i, x) for x in alph) for i, alph in enumerate(m.tape_alphabets))
    rights = tuple(frozenset(rname(i, x) for x in alph) for i, alph in enumerate(m.tape_alphabets))
    return TuringMachine(
        m.name,
        m.tapes,
        m.input_alphabet,
        tuple(l | r for l, r in zip(lefts, rights)),
        m.states,
        m.start_vec,
        m.accept_vec,
        tuple(cmds),
        sided=True,
        left_alphabets=lefts,
        right_alphabets=rights,
        input_embed=tuple((x, lname(0, x)) for x in m.input_alphabet),
    )


def symmetrize(m: TuringMachine) -> TuringMachine:
    """Sym(M): commands plus their inverses; stored positively, negatives on
    demand."""
    return replace(m, name=m.name + "_sym", symmetric=True)


def language_up_to(m: TuringMachine, max_len: int, fuel: int = 100_000) -> set[tuple[str, ...]]:
    out = set()
    for n in range(max_len + 1):
        for w in itertools.product(m.input_alphabet, repeat=n):
            if isinstance(run_deterministic(m, w, fuel), Accepted):
                out.add(w)
    return out


# ---------------------------------------------------------------------------
# TM -> S-machine (the four replacement schemata)


def tm_letters(m: TuringMachine) -> dict:
    if not m.sided:
        raise ValueError("the bridge needs a machine with sided alphabets (Lemma 2.2(d))")
    d = {
        "alpha": [q_letter("al", tp=i) for i in range(m.tapes)],
        "omega": [q_letter("om", tp=i) for i in range(m.tapes)],
        "q": [
            {s: q_letter(s, tp=i) for s in m.states[i]} for i in range(m.tapes)
        ],
        "a": [
            {x: a_letter(x, tp=i) for x in m.tape_alphabets[i]} for i in range(m.tapes)
        ],
    }
    return d


def as_smachine(m: TuringMachine) -> sm.SMachine:
    """View a symmetric sided machine as an S-machine: markers become state
    letters and each command part becomes a three-part rule segment."""
    L = tm_letters(m)
    parts: list[sm.Part] = []
    gaps: list[frozenset[Letter]] = [frozenset()]
    for i in range(m.tapes):
        parts.append(sm.Part(f"A{i}", (L["alpha"][i],)))
        gaps.append(frozenset(L["a"][i][x] for x in m.left_alphabets[i]))
        parts.append(sm.Part(f"Q{i}", tuple(L["q"][i][s] for s in m.states[i])))
        gaps.append(frozenset(L["a"][i][x] for x in m.right_alphabets[i]))
        parts.append(sm.Part(f"W{i}", (L["omega"][i],)))
        gaps.append(frozenset())
    hw = sm.Hardware(tuple(parts), tuple(gaps))

    def slot_word(i: int, x: Slot) -> GroupWord:
        if x in (None, ALPHA, OMEGA):
            return EMPTY
        return pos_word([L["a"][i][x]])

    rules = []
    for c in m.commands:
        rparts: list[sm.RulePart] = []
        galph: list[frozenset | None] = [None] * len(gaps)
        for i, p in enumerate(c.parts):
            al, om = L["alpha"][i], L["omega"][i]
            rparts.append(sm.ident_part(al))
            if p.u == ALPHA:
                galph[3 * i + 1] = frozenset()
            rparts.append(
                sm.RulePart(
                    slot_word(i, p.u), L["q"][i][p.q], slot_word(i, p.v),
                    slot_word(i, p.u2), L["q"][i][p.q2], slot_word(i, p.v2),
                )
            )
            if p.v == OMEGA:
                galph[3 * i + 2] = frozenset()
            rparts.append(sm.ident_part(om))
            galph[3 * i + 3] = frozenset()
        rules.append(sm.SRule(c.name, tuple(rparts), tuple(galph)))

    stop = config_to_word(m, tuple(((), m.accept_vec[i], ()) for i in range(m.tapes)))
    return sm.SMachine(
        m.name + "_S",
        hw,
        tuple(rules),
        stop_word=stop,
        start_rule="start" if any(c.name == "start" for c in m.commands) else None,
        accept_rule="accept" if any(c.name == "accept" for c in m.commands) else None,
    )


def config_to_word(m: TuringMachine, cfg: Config) -> GroupWord:
    L = tm_letters(m)
    pairs = []
    for i, (u, q, v) in enumerate(cfg):
        pairs.append((L["alpha"][i], 1))
        pairs.extend((L["a"][i][x], 1) for x in u)
        pairs.append((L["q"][i][q], 1))
        pairs.extend((L["a"][i][x], 1) for x in v)
        pairs.append((L["omega"][i], 1))
    return GroupWord(pairs)


def word_to_config(m: TuringMachine, w: GroupWord) -> Config | None:
    """Inverse of config_to_word on positive standard-base words."""
    if not w.is_positive():
        return None
    tapes = []
    cur_u: list[str] = []
    cur_v: list[str] = []
    state = None
    side = 0
    it = iter(w)
    for l, s in w:
        nm = l.name
        if l.kind == "q" and nm == "al":
            cur_u, cur_v, state, side = [], [], None, 0
        elif l.kind == "q" and nm == "om":
            if state is None:
                return None
            tapes.append((tuple(cur_u), state, tuple(cur_v)))
        elif l.kind == "q":
            state = nm
            side = 1
        else:
            (cur_u if side == 0 else cur_v).append(nm)
    if len(tapes) != m.tapes:
        return None
    return tuple(tapes)


# ---------------------------------------------------------------------------
# the sparse recognizer of the almost-quadratic construction


def tower_members(cutoff: int, bound: int = 10**9) -> list[int]:
    """n_1 = 1, n_{i+1} = 2^(2^(2^(n_i))); members above ``bound`` are beyond
    every desk-size input and are omitted."""
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    out = [1]
    while len(out) < cutoff:
        prev = out[-1]
        if prev > 64:
            break
        inner = 2 ** prev
        if inner > 64:
            break
        mid = 2 ** inner
        if mid > 64:
            break
        nxt = 2 ** mid
        if nxt > bound:
            break
        out.append(nxt)
    return out


def build_sparse_recognizer(cutoff: int) -> TuringMachine:
    members = tower_members(cutoff)
    top = max(members)
    states = tuple([f"c{i}" for i in range(top + 1)] + ["ok"])
    cmds = []
    for i in range(top):
        cmds.append(TmCommand(f"eat{i}", (TmPart("a", f"c{i}", None, None, f"c{i+1}", None),)))
    for n in members:
        cmds.append(TmCommand(f"hit{n}", (TmPart(ALPHA, f"c{n}", OMEGA, ALPHA, "ok", OMEGA),)))
    return TuringMachine(
        f"sparse{cutoff}",
        1,
        ("a",),
        (frozenset({"a"}),),
        (states,),
        ("c0",),
        ("ok",),
        tuple(cmds),
    )


class BudgetExceeded(Exception):
    pass


def good_number_check(
    m: TuringMachine,
    m_max: int,
    h: Callable[[int], int],
    *,
    budget: int = 200_000,
    fuel: int = 20_000,
) -> bool:
    """True iff every accepted input shorter than m_max is accepted in time t
    with h(t) < m_max; checked by enumerating all inputs below the bound."""
    total = sum(len(m.input_alphabet) ** n for n in range(m_max))
    if total > budget:
        raise BudgetExceeded(f"{total} words exceeds the budget of {budget}")
    for n in range(m_max):
        for w in itertools.product(m.input_alphabet, repeat=n):
            res = run_deterministic(m, w, fuel)
            if isinstance(res, OutOfFuel):
                raise BudgetExceeded(f"run on {''.join(w)!r} did not settle in {fuel} steps")
            if isinstance(res, Accepted) and not h(res.time) < m_max:
                return False
    return True
