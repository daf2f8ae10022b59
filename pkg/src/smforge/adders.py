"""The auxiliary adding machines Z(A), ->Z(A), <-Z(A) and their canonical
histories.

Z(A) runs a unary-exponential cycle between L u p(1) R and L u p(3) R; the
one-way machines sweep the head across the sector once, converting between
the primed and double-primed copies of the alphabet.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from . import machine as sm
from .words import EMPTY, GroupWord, Letter, pos_word, q_letter


def copy0(a: Letter) -> Letter:
    return a


def copy1(a: Letter) -> Letter:
    return a.with_tags(m2=1)


def copy2(a: Letter) -> Letter:
    return a.with_tags(m2=2)


def primed(a: Letter) -> Letter:
    return a.with_tags(pr=1)


def dprimed(a: Letter) -> Letter:
    return a.with_tags(pr=2)


@dataclass(frozen=True)
class AdderSpec:
    base: tuple[Letter, ...]

    def __post_init__(self):
        if len(set(self.base)) != len(self.base):
            raise ValueError("base alphabet has repeats")


def _wd(*pairs) -> GroupWord:
    return GroupWord(pairs)


def z_rule_descriptors(base: Sequence[Letter]):
    """(family, letter-or-None, p_from, p_to, left/left_to/right/right_to maker,
    Y1 mode, Y2 mode) for every positive rule of Z(A)."""
    rules = []
    for a in base:
        rules.append(("r1", a, 1, 1, (EMPTY, _wd((copy1(a), -1)), EMPTY, _wd((copy2(a), 1))), "full", "full"))
        rules.append(("r12", a, 1, 2, (EMPTY, _wd((a, -1), (copy1(a), 1)), EMPTY, EMPTY), "full", "full"))
        rules.append(("r2", a, 2, 2, (EMPTY, _wd((a, 1)), EMPTY, _wd((copy2(a), -1))), "full", "full"))
        rules.append(("r3", a, 3, 3, (EMPTY, _wd((a, 1)), EMPTY, _wd((copy2(a), -1))), "a0", "a2"))
    rules.append(("r21", None, 2, 1, (EMPTY, EMPTY, EMPTY, EMPTY), "full", "lock"))
    rules.append(("r13", None, 1, 3, (EMPTY, EMPTY, EMPTY, EMPTY), "lock", "a2"))
    return rules


def z_rule_name(fam: str, a: Letter | None) -> str:
    return fam if a is None else f"{fam}[{a.token()}]"


def build_Z(base: Iterable[Letter]) -> sm.SMachine:
    """The adding machine Z(A) with state parts {L}, {p(1..3)}, {R}."""
    base = tuple(base)
    if not base and False:
        raise ValueError("empty base")
    L = q_letter("L")
    R = q_letter("R")
    P = {j: q_letter("p", st=j) for j in (1, 2, 3)}
    y1 = frozenset(base) | frozenset(copy1(a) for a in base)
    y2 = frozenset(copy2(a) for a in base)
    hw = sm.Hardware(
        (sm.Part("L", (L,)), sm.Part("P", (P[1], P[2], P[3])), sm.Part("R", (R,))),
        (frozenset(), y1, y2, frozenset()),
    )

    def mode_set(mode: str, gap: int):
        if mode == "full":
            return None
        if mode == "lock":
            return frozenset()
        if mode == "a0":
            return frozenset(base)
        if mode == "a2":
            return frozenset(copy2(a) for a in base)
        raise AssertionError(mode)

    rules = []
    for fam, a, p_from, p_to, (lw, lw2, rw, rw2), m1, m2 in z_rule_descriptors(base):
        parts = (
            sm.ident_part(L),
            sm.RulePart(lw, P[p_from], rw, lw2, P[p_to], rw2),
            sm.ident_part(R),
        )
        galph = (frozenset(), mode_set(m1, 1), mode_set(m2, 2), frozenset())
        rules.append(sm.SRule(z_rule_name(fam, a), parts, galph))
    return sm.SMachine("Z", hw, tuple(rules))


# ---------------------------------------------------------------------------
# canonical history D(u)


def history_refs(u: Sequence[Letter]) -> list[tuple[str, Letter | None]]:
    """The replayable canonical history from L u p(1) R to L u p(3) R as
    (family, letter) descriptors.  The cycle-reset rule r21 is inserted after
    every r2-run; see the decisions ledger for the deviation from the printed
    recursion."""

    def E(v: tuple[Letter, ...]) -> list:
        if not v:
            return []
        a, rest = v[0], v[1:]
        seq = E(rest)
        seq = seq + [("r12", a)] + [("r2", x) for x in rest] + [("r21", None)]
        seq = seq + E(rest) + [("r1", a)]
        return seq

    u = tuple(u)
    return E(u) + [("r13", None)] + [("r3", x) for x in u]


def history_D(u: Sequence[Letter]) -> tuple[tuple[str, int], ...]:
    """D(u) for the standalone Z(A) machine, as (rule-name, sign) refs."""
    return tuple((z_rule_name(fam, a), 1) for fam, a in history_refs(u))


def d_length(k: int) -> int:
    """Closed form of ||D(u)|| for ||u|| = k with the r21 insertions."""
    return 4 * 2**k - 3


def start_word_Z(u: Sequence[Letter], p_state: int = 1) -> GroupWord:
    L = q_letter("L")
    R = q_letter("R")
    p = q_letter("p", st=p_state)
    return GroupWord([(L, 1)] + [(a, 1) for a in u] + [(p, 1), (R, 1)])


# ---------------------------------------------------------------------------
# the one-way machines


def zright_rule_descriptors(base: Sequence[Letter]):
    rules = []
    for a in base:
        rules.append(("x1", a, 1, 1, (EMPTY, _wd((primed(a), 1)), EMPTY, _wd((dprimed(a), -1))), "full", "full"))
    rules.append(("x2", None, 1, 2, (EMPTY, EMPTY, EMPTY, EMPTY), "full", "lock"))
    return rules


def zleft_rule_descriptors(base: Sequence[Letter]):
    rules = []
    for a in base:
        rules.append(("x3", a, 2, 2, (EMPTY, _wd((primed(a), -1)), EMPTY, _wd((dprimed(a), 1))), "full", "full"))
    rules.append(("x4", None, 2, 3, (EMPTY, EMPTY, EMPTY, EMPTY), "lock", "full"))
    return rules


def _build_oneway(base: Iterable[Letter], descriptors, name: str) -> sm.SMachine:
    base = tuple(base)
    L = q_letter("L")
    R = q_letter("R")
    P = {j: q_letter("p", st=j) for j in (1, 2, 3)}
    y1 = frozenset(primed(a) for a in base)
    y2 = frozenset(dprimed(a) for a in base)
    hw = sm.Hardware(
        (sm.Part("L", (L,)), sm.Part("P", (P[1], P[2], P[3])), sm.Part("R", (R,))),
        (frozenset(), y1, y2, frozenset()),
    )
    rules = []
    for fam, a, p_from, p_to, (lw, lw2, rw, rw2), m1, m2 in descriptors(base):
        parts = (
            sm.ident_part(L),
            sm.RulePart(lw, P[p_from], rw, lw2, P[p_to], rw2),
            sm.ident_part(R),
        )
        galph = (
            frozenset(),
            None if m1 == "full" else frozenset(),
            None if m2 == "full" else frozenset(),
            frozenset(),
        )
        rules.append(sm.SRule(z_rule_name(fam, a), parts, galph))
    return sm.SMachine(name, hw, tuple(rules))


def build_Zright(base: Iterable[Letter]) -> sm.SMachine:
    """->Z(A): the head sweeps left to right turning a'' into a'."""
    return _build_oneway(base, zright_rule_descriptors, "Zr")


def build_Zleft(base: Iterable[Letter]) -> sm.SMachine:
    """<-Z(A): the head sweeps right to left turning a' into a''."""
    return _build_oneway(base, zleft_rule_descriptors, "Zl")


def sweep_refs_right(u: Sequence[tuple[Letter, int]]) -> list[tuple[str, Letter | None, int]]:
    """History of the ->Z sweep over double-primed content u (signed base
    letters, left to right); x1(a^-1) := x1(a)^-1."""
    return [("x1", a, s) for a, s in u] + [("x2", None, 1)]


def sweep_refs_left(u: Sequence[tuple[Letter, int]]) -> list[tuple[str, Letter | None, int]]:
    """History of the <-Z sweep over primed content u, right to left."""
    return [("x3", a, s) for a, s in reversed(list(u))] + [("x4", None, 1)]


def canonical_sweep(m: sm.SMachine, start: GroupWord) -> tuple[tuple[str, int], ...]:
    """The unique sweep history from L p(1) u'' R (->Z) or L u' p(2) R (<-Z)."""
    letters = list(start)
    if len(letters) < 3 or letters[0][0].name != "L" or letters[-1][0].name != "R":
        raise ValueError("word is not of sweep shape")
    p_positions = [i for i, (l, _) in enumerate(letters) if l.name == "p"]
    if len(p_positions) != 1:
        raise ValueError("word is not of sweep shape")
    pi = p_positions[0]
    pst = letters[pi][0].tag("st")
    if m.name == "Zr":
        if pst != 1 or pi != 1:
            raise ValueError("->Z sweep starts from L p(1) u'' R")
        content = [(l.with_tags(pr=None), s) for l, s in letters[2:-1]]
        refs = sweep_refs_right(content)
    elif m.name == "Zl":
        if pst != 2 or pi != len(letters) - 2:
            raise ValueError("<-Z sweep starts from L u' p(2) R")
        content = [(l.with_tags(pr=None), s) for l, s in letters[1:pi]]
        refs = sweep_refs_left(content)
    else:
        raise ValueError("not a one-way machine")
    return tuple(
        (z_rule_name(fam, a), sign) for fam, a, sign in refs
    )
