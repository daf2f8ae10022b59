"""The compilation passes M1 -> M2 -> ~M2 -> M3 -> M4 -> M and the level
translation maps.

Each pass produces a TowerLevel holding the machine, the level-local sector
count N, and whatever the next pass or the translation maps need.  Rule names
are stable across a pass (an M4 rule and its M-copy share a name), so
canonical histories lift without renaming.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

from . import adders, machine as sm, turing as tm
from .words import (
    EMPTY,
    GroupWord,
    Letter,
    Q_KIND,
    a_letter,
    pos_word,
    q_letter,
)

Ref = "tuple[str, int]"


class TowerError(Exception):
    pass


@dataclass
class TowerLevel:
    tag: str
    machine: sm.SMachine
    prev: "TowerLevel | None"
    n_sectors: int
    data: dict = field(default_factory=dict)

    def rule_names(self) -> list[str]:
        return [r.name for r in self.machine.rules]


def _eff_alphabet(m: sm.SMachine, rule: sm.SRule, gap: int) -> frozenset[Letter]:
    alph = rule.gap_alphabets[gap]
    return m.hardware.gaps[gap] if alph is None else alph


def _sorted(letters: Iterable[Letter]) -> list[Letter]:
    return sorted(letters, key=lambda l: l.sort_key())


# ---------------------------------------------------------------------------
# level 1: a symmetric Turing machine viewed as an S-machine


def level_M1S(machine: tm.TuringMachine) -> TowerLevel:
    if not machine.symmetric:
        raise TowerError("level 1 needs the symmetrized machine")
    s = tm.as_smachine(machine)
    return TowerLevel("M1S", s, None, s.hardware.size - 1, {"tm": machine})


# ---------------------------------------------------------------------------
# level 2: M2 = M1 o Z


def compose_M2(level1: TowerLevel) -> TowerLevel:
    m1 = level1.machine
    if m1.start_rule is None or m1.accept_rule is None:
        raise TowerError("M1 must have designated start and accept rules")
    hw1 = m1.hardware
    K = hw1.size
    N = K - 1
    thetas = [r.name for r in m1.rules]

    def qc(l: Letter, th: str) -> Letter:
        return l.with_tags(w2=th)

    p_plain = {i: q_letter("p2", sec=i) for i in range(1, K)}
    p_start = {i: q_letter("p2", sec=i, sp="s") for i in range(1, K)}
    p_acc = {i: q_letter("p2", sec=i, sp="f") for i in range(1, K)}
    p_z = {
        (i, th, j): q_letter("p2", sec=i, w2=th, z=j)
        for i in range(1, K)
        for th in thetas
        for j in (1, 2, 3)
    }

    parts: list[sm.Part] = []
    q_down: dict[Letter, Letter] = {}
    for i, part in enumerate(hw1.parts):
        letters = list(part.letters)
        for l in part.letters:
            q_down[l] = l
        for th in thetas:
            for l in part.letters:
                letters.append(qc(l, th))
                q_down[qc(l, th)] = l
        parts.append(sm.Part(part.name, tuple(letters), part.kind))
        if i + 1 < K:
            sec = i + 1
            pl = [p_plain[sec], p_start[sec], p_acc[sec]] + [
                p_z[(sec, th, j)] for th in thetas for j in (1, 2, 3)
            ]
            parts.append(sm.Part(f"P{sec}", tuple(pl), "p"))

    a_down: dict[Letter, Letter] = {}
    gaps: list[frozenset[Letter]] = [frozenset()]
    for i in range(1, K):
        y0 = hw1.gaps[i]
        y1 = frozenset(adders.copy1(l) for l in y0)
        y2 = frozenset(adders.copy2(l) for l in y0)
        for l in y0:
            a_down[l] = l
            a_down[adders.copy1(l)] = l
            a_down[adders.copy2(l)] = l
        gaps.append(y0 | y1)
        gaps.append(y2)
    gaps.append(frozenset())
    hw2 = sm.Hardware(tuple(parts), tuple(gaps))
    G = len(gaps)

    rules: list[sm.SRule] = []

    def bar_name(th: str) -> str:
        return f"b.{th}"

    def z_name(sec: int, th: str, fam: str, a: Letter | None) -> str:
        return f"z{sec}.{th}." + adders.z_rule_name(fam, a)

    def zeta_name(th: str) -> str:
        return f"zz.{th}"

    for r in m1.rules:
        th = r.name
        is_start = th == m1.start_rule
        is_accept = th == m1.accept_rule
        # -- the modified main rule
        parts2: list[sm.RulePart] = []
        galph: list[frozenset[Letter] | None] = [frozenset()] * G
        for i, rp in enumerate(r.parts):
            if i > 0:
                pf = p_start[i] if is_start else p_plain[i]
                parts2.append(sm.RulePart(rp.left, pf, EMPTY, rp.left_to, p_z[(i, th, 1)], EMPTY))
                galph[2 * i] = frozenset()
            elif len(rp.left) or len(rp.left_to):
                raise TowerError("part 0 of an M1 rule cannot carry left words")
            parts2.append(
                sm.RulePart(EMPTY, rp.q_from, rp.right, EMPTY, qc(rp.q_to, th), rp.right_to)
            )
            if i + 1 < K:
                galph[2 * (i + 1) - 1] = _eff_alphabet(m1, r, i + 1)
        rules.append(sm.SRule(bar_name(th), tuple(parts2), tuple(galph)))

        # -- the inserted copies of Z(Y_i(theta))
        for sec in range(1, K):
            base = tuple(_sorted(_eff_alphabet(m1, r, sec)))
            for fam, a, pf, pt, (lw, lw2, rw, rw2), m1mode, m2mode in adders.z_rule_descriptors(base):
                partsz: list[sm.RulePart] = []
                gz: list[frozenset[Letter] | None] = [frozenset()] * G
                for j in range(K):
                    if j > 0:
                        if j == sec:
                            partsz.append(
                                sm.RulePart(lw, p_z[(sec, th, pf)], rw, lw2, p_z[(sec, th, pt)], rw2)
                            )
                        elif j < sec:
                            partsz.append(sm.ident_part(p_z[(j, th, 3)]))
                            gz[2 * j] = frozenset()
                        else:
                            partsz.append(sm.ident_part(p_z[(j, th, 1)]))
                            gz[2 * j] = frozenset()
                    partsz.append(sm.ident_part(qc(r.parts[j].q_to, th)))
                    if 0 < j != sec:
                        gz[2 * j - 1] = _eff_alphabet(m1, r, j)
                full1 = frozenset(base) | frozenset(adders.copy1(x) for x in base)
                full2 = frozenset(adders.copy2(x) for x in base)
                gz[2 * sec - 1] = {
                    "full": full1, "lock": frozenset(), "a0": frozenset(base)
                }[m1mode]
                gz[2 * sec] = {
                    "full": full2, "a2": full2, "lock": frozenset()
                }[m2mode]
                rules.append(sm.SRule(z_name(sec, th, fam, a), tuple(partsz), tuple(gz)))

        # -- the transition rule removing the theta index
        partsz = []
        gz = [frozenset()] * G
        for j in range(K):
            if j > 0:
                pt = p_acc[j] if is_accept else p_plain[j]
                partsz.append(sm.RulePart(EMPTY, p_z[(j, th, 3)], EMPTY, EMPTY, pt, EMPTY))
                gz[2 * j] = frozenset()
            partsz.append(sm.ident_part(qc(r.parts[j].q_to, th)))
            partsz[-1] = sm.RulePart(EMPTY, qc(r.parts[j].q_to, th), EMPTY, EMPTY, r.parts[j].q_to, EMPTY)
            if j > 0:
                gz[2 * j - 1] = _eff_alphabet(m1, r, j)
        rules.append(sm.SRule(zeta_name(th), tuple(partsz), tuple(gz)))

    level = TowerLevel(
        "M2",
        sm.SMachine("M2", hw2, tuple(rules), None, bar_name(m1.start_rule), zeta_name(m1.accept_rule)),
        level1,
        2 * N,
        {
            "q_down": q_down,
            "a_down": a_down,
            "p_plain": p_plain,
            "p_start": p_start,
            "p_acc": p_acc,
            "m1_thetas": thetas,
        },
    )
    stop2 = pi_12(level, m1.stop_word)
    object.__setattr__(level.machine, "stop_word", stop2)
    level.data["n_inner"] = N
    return level


def _state_vector(m: sm.SMachine, w: GroupWord) -> tuple[Letter, ...]:
    return tuple(l for l, _ in w if l.kind == Q_KIND)


def pi_12(level2: TowerLevel, w1: GroupWord) -> GroupWord:
    """Insert the control p-letters left of each state letter and keep tape
    letters as 0-copies."""
    m1 = level2.prev.machine
    start_lhs = tuple(p.q_from for p in m1.rule(m1.start_rule).parts)
    accept_rhs = tuple(p.q_to for p in m1.rule(m1.accept_rule).parts)
    states = _state_vector(m1, w1)
    if states == start_lhs:
        pmap = level2.data["p_start"]
    elif states == accept_rhs:
        pmap = level2.data["p_acc"]
    else:
        pmap = level2.data["p_plain"]
    pairs: list[tuple[Letter, int]] = []
    qi = 0
    for l, s in w1:
        if l.kind == Q_KIND:
            if qi > 0:
                pairs.append((pmap[qi], 1))
            qi += 1
        pairs.append((l, s))
    return GroupWord(pairs)


def pi_21(level2: TowerLevel, w2: GroupWord) -> GroupWord:
    q_down = level2.data["q_down"]
    a_down = level2.data["a_down"]
    pairs = []
    for l, s in w2:
        if l.kind == Q_KIND:
            base = q_down.get(l)
            if base is not None:
                pairs.append((base, s))
            # p-letters drop out
        else:
            pairs.append((a_down[l], s))
    return GroupWord(pairs)


def Pi_12(level2: TowerLevel, theta: str, w2: GroupWord) -> tuple[tuple["str", int], ...]:
    """Canonical M2 history simulating one positive M1 rule at w2: the
    modified rule, then a copy of D(u_i) in every sector, then the index
    eraser."""
    m2 = level2.machine
    refs: list[tuple[str, int]] = [(f"b.{theta}", 1)]
    cur = sm.apply_rule(m2, m2.rule(refs[0][0]), w2)
    K = level2.data["n_inner"] + 1
    for sec in range(1, K):
        content = _sector_content(level2, cur, sec)
        base = []
        for l, s in content:
            if s != 1 or l.tag("m2") is not None:
                raise TowerError("canonical history needs positive 0-copy sector content")
            base.append(l)
        seq = [
            (f"z{sec}.{theta}." + adders.z_rule_name(fam, a), 1)
            for fam, a in adders.history_refs(base)
        ]
        for ref in seq:
            cur = sm.apply_rule(m2, m2.rule(ref[0]), cur)
        refs.extend(seq)
    refs.append((f"zz.{theta}", 1))
    sm.apply_rule(m2, m2.rule(refs[-1][0]), cur)
    return tuple(refs)


def _sector_content(level2: TowerLevel, w: GroupWord, sec: int) -> list[tuple[Letter, int]]:
    """Tape letters in the (Q_{sec-1}, P_sec) gap of a standard-base word."""
    out = []
    qcount = 0
    for l, s in w:
        if l.kind == Q_KIND:
            qcount += 1
            continue
        # letters before the (sec+1)-th state letter and after the sec-th
        if qcount == 2 * sec - 1:
            out.append((l, s))
    return out


def Pi_21(history: Sequence[tuple[str, int]]) -> tuple[tuple[str, int], ...]:
    out = []
    for name, sign in history:
        if name.startswith("b."):
            out.append((name[2:], sign))
    return tuple(out)


# ---------------------------------------------------------------------------
# level 2~: Property 3.1(2)


def tilde_M2(level2: TowerLevel) -> TowerLevel:
    m2 = level2.machine
    m2t, phi = sm.enforce_property_one(m2)
    if m2t.start_rule is None or m2t.accept_rule is None:
        raise TowerError("start/accept rules must stay unsplit")
    level = TowerLevel("M2t", m2t, level2, level2.n_sectors, dict(level2.data))
    level.data["phi"] = phi
    return level


def phi_lift(level2t: TowerLevel, history: Sequence[tuple[str, int]]) -> tuple[tuple[str, int], ...]:
    phi = level2t.data["phi"]
    out: list[tuple[str, int]] = []
    for name, sign in history:
        chain = phi[name]
        if sign > 0:
            out.extend((n, 1) for n in chain)
        else:
            out.extend((n, -1) for n in reversed(chain))
    return tuple(out)


# ---------------------------------------------------------------------------
# level 3: M3 = ~M2 o {->Z, <-Z}


def _unit_sector(rule: sm.SRule) -> tuple[str, int]:
    """('left'|'right'|'neither', sector index of the unit at this level)."""
    for i, p in enumerate(rule.parts):
        if len(p.left) + len(p.left_to):
            return "left", i
        if len(p.right) + len(p.right_to):
            return "right", i + 1
    return "neither", 0


def compose_M3(level2t: TowerLevel) -> TowerLevel:
    if level2t.tag != "M2t":
        raise TowerError("compose_M3 consumes the tilde level")
    mt = level2t.machine
    if not sm.satisfies_property_one(mt):
        raise TowerError("machine does not satisfy Property 3.1(2)")
    hw = mt.hardware
    K = hw.size
    N = K - 1
    thetas = [r.name for r in mt.rules]

    def qc(l: Letter, th: str) -> Letter:
        return l.with_tags(w3=th)

    p_plain = {i: q_letter("p3", sec=i) for i in range(1, K)}
    p_start = {i: q_letter("p3", sec=i, sp="s") for i in range(1, K)}
    p_acc = {i: q_letter("p3", sec=i, sp="f") for i in range(1, K)}
    p_z = {
        (i, th, j): q_letter("p3", sec=i, w3=th, z=j)
        for i in range(1, K)
        for th in thetas
        for j in (1, 2, 3)
    }

    parts: list[sm.Part] = []
    q_down: dict[Letter, Letter] = {}
    for i, part in enumerate(hw.parts):
        letters = list(part.letters)
        for l in part.letters:
            q_down[l] = l
        for th in thetas:
            for l in part.letters:
                letters.append(qc(l, th))
                q_down[qc(l, th)] = l
        parts.append(sm.Part(f"S{i}", tuple(letters), "s"))
        if i + 1 < K:
            sec = i + 1
            pl = [p_plain[sec], p_start[sec], p_acc[sec]] + [
                p_z[(sec, th, j)] for th in thetas for j in (1, 2, 3)
            ]
            parts.append(sm.Part(f"P{sec}~", tuple(pl), "p"))

    a_down: dict[Letter, Letter] = {}
    gaps: list[frozenset[Letter]] = [frozenset()]
    for i in range(1, K):
        y = hw.gaps[i]
        yp = frozenset(adders.primed(l) for l in y)
        ypp = frozenset(adders.dprimed(l) for l in y)
        for l in y:
            a_down[adders.primed(l)] = l
            a_down[adders.dprimed(l)] = l
        gaps.append(yp)
        gaps.append(ypp)
    gaps.append(frozenset())
    hw3 = sm.Hardware(tuple(parts), tuple(gaps))
    G = len(gaps)

    schedules: dict[str, list[tuple]] = {}
    rules: list[sm.SRule] = []

    def aux_name(dirn: str, sec: int, th: str, fam: str, a: Letter | None) -> str:
        return f"a{dirn}{sec}.{th}." + adders.z_rule_name(fam, a)

    for r in mt.rules:
        th = r.name
        is_start = th == mt.start_rule
        is_accept = th == mt.accept_rule
        kind, us = _unit_sector(r)
        if is_start and kind != "neither":
            raise TowerError("the start rule must be a pure state change")
        if kind == "left":
            r_order = list(range(us + 1, N + 1)) + list(range(1, us + 1))
            l_order = list(range(1, N + 1))
        elif kind == "right":
            l_order = list(range(us - 1, 0, -1)) + list(range(N, us - 1, -1))
            r_order = list(range(1, N + 1))
        else:
            r_order = list(range(1, N + 1))
            l_order = list(range(1, N + 1))

        sched: list[tuple] = []
        if not is_start:
            sched.append(("zm",))
        if kind != "right":
            sched.append(("b",))
            sched.extend(("R", s) for s in r_order)
        else:
            sched.extend(("R", s) for s in r_order)
            sched.append(("b",))
        sched.extend(("L", s) for s in l_order)
        sched.append(("zp",))
        schedules[th] = sched

        lhs = [p.q_from for p in r.parts]
        rhs = [p.q_to for p in r.parts]

        def p_state_at(j: int, pos: int) -> int:
            # 1 before sector j's -> sweep, 2 between the sweeps, 3 after
            for k2, entry in enumerate(sched):
                if entry == ("R", j):
                    rpos = k2
                if entry == ("L", j):
                    lpos = k2
            if pos < rpos:
                return 1
            if pos < lpos:
                return 2
            return 3

        def s_letters_at(pos: int) -> list[Letter]:
            bpos = sched.index(("b",))
            return [qc(l, th) for l in (lhs if pos < bpos else rhs)]

        # -- transition zm (skipped for the start rule)
        if not is_start:
            partsz: list[sm.RulePart] = []
            gz: list[frozenset[Letter] | None] = [frozenset()] * G
            for j in range(K):
                if j > 0:
                    partsz.append(sm.RulePart(EMPTY, p_plain[j], EMPTY, EMPTY, p_z[(j, th, 1)], EMPTY))
                    gz[2 * j] = frozenset(
                        adders.dprimed(l) for l in _eff_alphabet(mt, r, j)
                    )
                partsz.append(sm.RulePart(EMPTY, lhs[j], EMPTY, EMPTY, qc(lhs[j], th), EMPTY))
            rules.append(sm.SRule(f"zm.{th}", tuple(partsz), tuple(gz)))

        # -- the modified main rule
        partsz = []
        gz = [frozenset()] * G
        for j in range(K):
            if j > 0:
                pst = 1 if kind != "right" else 2
                pfrom = p_start[j] if is_start else p_z[(j, th, pst)]
                pto = p_z[(j, th, pst)]
                partsz.append(sm.RulePart(EMPTY, pfrom, EMPTY, EMPTY, pto, EMPTY))
            qf = lhs[j] if is_start else qc(lhs[j], th)
            rp = r.parts[j]
            if kind == "right":
                partsz.append(
                    sm.RulePart(
                        EMPTY, qf, _primed_word(rp.right),
                        EMPTY, qc(rhs[j], th), _primed_word(rp.right_to),
                    )
                )
                if j > 0:
                    gz[2 * j - 1] = frozenset(adders.primed(l) for l in _eff_alphabet(mt, r, j))
            else:
                partsz.append(
                    sm.RulePart(
                        _dprimed_word(rp.left), qf, EMPTY,
                        _dprimed_word(rp.left_to), qc(rhs[j], th), EMPTY,
                    )
                )
                if j > 0:
                    gz[2 * j] = frozenset(adders.dprimed(l) for l in _eff_alphabet(mt, r, j))
        rules.append(sm.SRule(f"b3.{th}", tuple(partsz), tuple(gz)))

        # -- the auxiliary sweep copies
        for dirn, descriptors in (("R", adders.zright_rule_descriptors), ("L", adders.zleft_rule_descriptors)):
            for sec in range(1, K):
                pos = sched.index((dirn, sec))
                s_at = s_letters_at(pos)
                base = tuple(_sorted(_eff_alphabet(mt, r, sec)))
                for fam, a, pf, pt, (lw, lw2, rw, rw2), m1mode, m2mode in descriptors(base):
                    partsz = []
                    gz = [frozenset()] * G
                    for j in range(K):
                        if j > 0:
                            if j == sec:
                                partsz.append(
                                    sm.RulePart(lw, p_z[(sec, th, pf)], rw, lw2, p_z[(sec, th, pt)], rw2)
                                )
                            else:
                                st = p_state_at(j, pos)
                                partsz.append(sm.ident_part(p_z[(j, th, st)]))
                                if st == 2:
                                    gz[2 * j - 1] = frozenset(
                                        adders.primed(l) for l in _eff_alphabet(mt, r, j))
                                else:
                                    gz[2 * j] = frozenset(
                                        adders.dprimed(l) for l in _eff_alphabet(mt, r, j))
                        partsz.append(sm.ident_part(s_at[j]))
                    yp = frozenset(adders.primed(x) for x in base)
                    ypp = frozenset(adders.dprimed(x) for x in base)
                    gz[2 * sec - 1] = yp if m1mode == "full" else frozenset()
                    gz[2 * sec] = ypp if m2mode == "full" else frozenset()
                    rules.append(sm.SRule(aux_name(dirn, sec, th, fam, a), tuple(partsz), tuple(gz)))

        # -- transition zp
        partsz = []
        gz = [frozenset()] * G
        for j in range(K):
            if j > 0:
                pto = p_acc[j] if is_accept else p_plain[j]
                partsz.append(sm.RulePart(EMPTY, p_z[(j, th, 3)], EMPTY, EMPTY, pto, EMPTY))
                gz[2 * j] = frozenset(adders.dprimed(l) for l in _eff_alphabet(mt, r, j))
            partsz.append(sm.RulePart(EMPTY, qc(rhs[j], th), EMPTY, EMPTY, rhs[j], EMPTY))
        rules.append(sm.SRule(f"zp.{th}", tuple(partsz), tuple(gz)))

    level = TowerLevel(
        "M3",
        sm.SMachine("M3", hw3, tuple(rules), None, f"b3.{mt.start_rule}", f"zp.{mt.accept_rule}"),
        level2t,
        2 * N,
        {
            "q_down": q_down,
            "a_down": a_down,
            "p_plain": p_plain,
            "p_start": p_start,
            "p_acc": p_acc,
            "schedules": schedules,
            "n_inner": N,
        },
    )
    object.__setattr__(level.machine, "stop_word", pi_23(level, mt.stop_word))
    return level


def _primed_word(w: GroupWord) -> GroupWord:
    return GroupWord(tuple((adders.primed(l), s) for l, s in w), _reduced=True)


def _dprimed_word(w: GroupWord) -> GroupWord:
    return GroupWord(tuple((adders.dprimed(l), s) for l, s in w), _reduced=True)


def pi_23(level3: TowerLevel, w: GroupWord) -> GroupWord:
    mt = level3.prev.machine
    start_lhs = tuple(p.q_from for p in mt.rule(mt.start_rule).parts)
    accept_rhs = tuple(p.q_to for p in mt.rule(mt.accept_rule).parts)
    states = _state_vector(mt, w)
    if states == start_lhs:
        pmap = level3.data["p_start"]
    elif states == accept_rhs:
        pmap = level3.data["p_acc"]
    else:
        pmap = level3.data["p_plain"]
    pairs: list[tuple[Letter, int]] = []
    qi = 0
    for l, s in w:
        if l.kind == Q_KIND:
            pairs.append((l, s))
            qi += 1
            if qi <= level3.data["n_inner"]:
                pairs.append((pmap[qi], 1))
        else:
            pairs.append((adders.dprimed(l), s))
    return GroupWord(pairs)


def pi_32(level3: TowerLevel, w: GroupWord) -> GroupWord:
    q_down = level3.data["q_down"]
    a_down = level3.data["a_down"]
    pairs = []
    for l, s in w:
        if l.kind == Q_KIND:
            base = q_down.get(l)
            if base is not None:
                pairs.append((base, s))
        else:
            pairs.append((a_down[l], s))
    return GroupWord(pairs)


def Pi_23(level3: TowerLevel, theta: str, w3: GroupWord, sign: int = 1) -> tuple[tuple[str, int], ...]:
    """Canonical M3 history simulating one ~M2 rule at the M3 word w3 (which
    must be a resting, index-free word)."""
    if sign < 0:
        mt = level3.prev.machine
        w2 = pi_32(level3, w3)
        w2b = sm.apply_rule(mt, mt.rule(theta).inverse(), w2)
        fwd = Pi_23(level3, theta, pi_23(level3, w2b), 1)
        return tuple((n, -s) for n, s in reversed(fwd))
    m3 = level3.machine
    sched = level3.data["schedules"][theta]
    refs: list[tuple[str, int]] = []
    cur = w3
    for entry in sched:
        if entry == ("zm",):
            seq = [(f"zm.{theta}", 1)]
        elif entry == ("b",):
            seq = [(f"b3.{theta}", 1)]
        elif entry == ("zp",):
            seq = [(f"zp.{theta}", 1)]
        else:
            dirn, sec = entry
            content = _sector_content_m3(level3, cur, sec, dirn)
            if dirn == "R":
                sw = adders.sweep_refs_right(content)
            else:
                sw = adders.sweep_refs_left(content)
            seq = [
                (f"a{dirn}{sec}.{theta}." + adders.z_rule_name(fam, a), s)
                for fam, a, s in sw
            ]
        for ref in seq:
            cur = sm.apply_rule(m3, m3.signed_rule(ref), cur)
        refs.extend(seq)
    return tuple(refs)


def _sector_content_m3(level3: TowerLevel, w: GroupWord, sec: int, dirn: str) -> list[tuple[Letter, int]]:
    """Base-letter content of sector ``sec``: the dprimed gap before a ->
    sweep, the primed gap before a <- sweep."""
    qcount = 0
    out = []
    want = 2 * sec if dirn == "R" else 2 * sec - 1
    for l, s in w:
        if l.kind == Q_KIND:
            qcount += 1
        elif qcount == want:
            out.append((l.with_tags(pr=None), s))
    return out


def Pi_32(history: Sequence[tuple[str, int]]) -> tuple[tuple[str, int], ...]:
    out = []
    for name, sign in history:
        if name.startswith("b3."):
            out.append((name[3:], sign))
    return tuple(out)


def Pi_23_history(level3: TowerLevel, w2: GroupWord, history: Sequence[tuple[str, int]]):
    """Lift a whole ~M2 computation; returns (start word, refs)."""
    mt = level3.prev.machine
    w3 = pi_23(level3, w2)
    refs: list[tuple[str, int]] = []
    cur2 = w2
    cur3 = w3
    for name, sign in history:
        seg = Pi_23(level3, name, cur3, sign)
        refs.extend(seg)
        cur2 = sm.apply_rule(mt, mt.signed_rule((name, sign)), cur2)
        for ref in seg:
            cur3 = sm.apply_rule(level3.machine, level3.machine.signed_rule(ref), cur3)
    return w3, tuple(refs)


# ---------------------------------------------------------------------------
# level 4: the history tapes


def y3_letter(th: str) -> Letter:
    return a_letter("h", r=th)


def y3p_letter(th: str) -> Letter:
    return a_letter("h", r=th, pr=1)


def build_M4(level3: TowerLevel) -> TowerLevel:
    if level3.tag != "M3":
        raise TowerError("build_M4 consumes the M3 level")
    m3 = level3.machine
    hw3 = m3.hardware
    start3, accept3 = m3.start_rule, m3.accept_rule
    theta3 = [r.name for r in m3.rules if r.name not in (start3, accept3)]
    y3 = {th: y3_letter(th) for th in theta3}
    y3p = {th: y3p_letter(th) for th in theta3}

    t = q_letter("t")
    tp = q_letter("tp")
    k = {j: q_letter("k", st=j) for j in (1, 2, 3)}
    kp = {j: q_letter("kp", st=j) for j in (1, 2, 3)}

    parts = (
        (sm.Part("T", (t,), "t"), sm.Part("K", (k[1], k[2], k[3]), "k"))
        + hw3.parts
        + (sm.Part("K'", (kp[1], kp[2], kp[3]), "kp"), sm.Part("T'", (tp,), "tp"))
    )
    y3set = frozenset(y3.values())
    y3pset = frozenset(y3p.values())
    inner = hw3.gaps[1:-1]
    gaps = (frozenset(), y3set, frozenset()) + inner + (frozenset(), y3pset, frozenset())
    hw4 = sm.Hardware(parts, gaps)
    G = len(gaps)
    OFF = 2  # M3 part j sits at position j + 2; M3 gap g at index g + 2

    start_rule3 = m3.rule(start3)
    accept_rule3 = m3.rule(accept3)
    start_lhs = [p.q_from for p in start_rule3.parts]
    accept_rhs = [p.q_to for p in accept_rule3.parts]

    rules: list[sm.SRule] = []

    def locked_inner() -> list:
        return [frozenset()] * G

    # Step 1: write a history letter next to k(1)
    for th in theta3:
        partsz = [sm.ident_part(t), sm.RulePart(EMPTY, k[1], EMPTY, pos_word([y3[th]]), k[1], EMPTY)]
        partsz += [sm.ident_part(l) for l in start_lhs]
        partsz += [sm.ident_part(kp[1]), sm.ident_part(tp)]
        gz = locked_inner()
        gz[1] = y3set
        gz[OFF + 2] = None  # the input sector stays open
        rules.append(sm.SRule(f"w41.{th}", tuple(partsz), tuple(gz), tags=(("step", 1),)))

    # (12): the extension of the start rule of M3
    partsz = [sm.ident_part(t), sm.RulePart(EMPTY, k[1], EMPTY, EMPTY, k[2], EMPTY)]
    partsz += list(start_rule3.parts)
    partsz += [sm.RulePart(EMPTY, kp[1], EMPTY, EMPTY, kp[2], EMPTY), sm.ident_part(tp)]
    gz = locked_inner()
    gz[1] = y3set
    gz[OFF + 2] = _eff_alphabet(m3, start_rule3, 2)
    rules.append(sm.SRule("w4t12", tuple(partsz), tuple(gz), tags=(("trans", "12"),)))

    # Step 2: execute a rule of M3 while moving its letter between the tapes
    for th in theta3:
        r3 = m3.rule(th)
        partsz = [
            sm.ident_part(t),
            sm.RulePart(EMPTY, k[2], EMPTY, GroupWord(((y3[th], -1),)), k[2], EMPTY),
        ]
        partsz += list(r3.parts)
        partsz += [
            sm.RulePart(EMPTY, kp[2], EMPTY, EMPTY, kp[2], pos_word([y3p[th]])),
            sm.ident_part(tp),
        ]
        gz = locked_inner()
        gz[1] = y3set
        gz[G - 2] = y3pset
        for g in range(1, hw3.size):
            for dg in (2 * g - 1, 2 * g):
                pass
        for g3 in range(1, len(hw3.gaps) - 1):
            gz[OFF + g3] = r3.gap_alphabets[g3]
        rules.append(sm.SRule(f"w42.{th}", tuple(partsz), tuple(gz), tags=(("step", 2),)))

    # (23): the extension of the accept rule of M3
    partsz = [sm.ident_part(t), sm.RulePart(EMPTY, k[2], EMPTY, EMPTY, k[3], EMPTY)]
    partsz += list(accept_rule3.parts)
    partsz += [sm.RulePart(EMPTY, kp[2], EMPTY, EMPTY, kp[3], EMPTY), sm.ident_part(tp)]
    gz = locked_inner()
    gz[G - 2] = y3pset
    rules.append(sm.SRule("w4t23", tuple(partsz), tuple(gz), tags=(("trans", "23"),)))

    # Step 3: erase the mirror history from the k't'-sector
    for th in theta3:
        partsz = [sm.ident_part(t), sm.ident_part(k[3])]
        partsz += [sm.ident_part(l) for l in accept_rhs]
        partsz += [
            sm.RulePart(EMPTY, kp[3], EMPTY, EMPTY, kp[3], GroupWord(((y3p[th], -1),))),
            sm.ident_part(tp),
        ]
        gz = locked_inner()
        gz[G - 2] = y3pset
        rules.append(sm.SRule(f"w43.{th}", tuple(partsz), tuple(gz), tags=(("step", 3),)))

    stop4 = GroupWord(
        [(t, 1), (k[3], 1)] + list(m3.stop_word) + [(kp[3], 1), (tp, 1)]
    )
    level = TowerLevel(
        "M4",
        sm.SMachine("M4", hw4, tuple(rules), stop4),
        level3,
        level3.n_sectors + 4,
        {
            "theta3": theta3,
            "y3": y3,
            "y3p": y3p,
            "t": t, "tp": tp, "k": k, "kp": kp,
            "off": OFF,
            "m3_start": start3,
            "m3_accept": accept3,
        },
    )
    return level


def pi_34(level4: TowerLevel, w3: GroupWord) -> GroupWord:
    d = level4.data
    return GroupWord([(d["t"], 1), (d["k"][1], 1)] + list(w3) + [(d["kp"][1], 1), (d["tp"], 1)])


def Pi_34(level4: TowerLevel, h3: Sequence[tuple[str, int]]) -> tuple[tuple[str, int], ...]:
    """Canonical M4 history from an accepting M3 history (start rule first,
    accept rule last, all positive)."""
    d = level4.data
    if not h3 or h3[0] != (d["m3_start"], 1) or h3[-1] != (d["m3_accept"], 1):
        raise TowerError("not an accepting M3 history")
    core = [name for name, sign in h3[1:-1] if sign > 0]
    if len(core) != len(h3) - 2:
        raise TowerError("canonical lift needs a positive history")
    refs: list[tuple[str, int]] = []
    refs += [(f"w41.{th}", 1) for th in reversed(core)]
    refs.append(("w4t12", 1))
    refs += [(f"w42.{th}", 1) for th in core]
    refs.append(("w4t23", 1))
    refs += [(f"w43.{th}", 1) for th in reversed(core)]
    return tuple(refs)


def step_history(level: TowerLevel, history: Sequence[tuple[str, int]]) -> tuple[int, ...]:
    """Maximal-run compression of the rules' Step tags; the transition rules
    (12)/(23) separate steps and carry no step of their own."""
    m = level.machine
    out: list[int] = []
    for name, _ in history:
        r = m.rule(name)
        st = r.tag("step")
        if st is None:
            if r.tag("trans") is None:
                raise ValueError(f"rule {name} has no Step tag")
            continue
        if not out or out[-1] != st:
            out.append(st)
    return tuple(out)


# ---------------------------------------------------------------------------
# level 5: 2L copies and the cyclic base


class ParamError(ValueError):
    pass


@dataclass(frozen=True)
class ParamConfig:
    L: int
    N: int
    J: int
    delta: Fraction
    delta_prime: Fraction
    c: tuple[Fraction, ...]

    CHECKS = (
        "L >= 41",
        "N >= 1",
        "J > 26 L N",
        "0 < delta' < delta < 1",
        "delta^-1 > 100 J",
        "delta'^-1 >= max(2e4, 20 delta^-1 L^2 N^2)",
        "c increasing by factor delta'^-1",
        "c5 > 2000 N^2 delta'^-1",
        "c6 > 2 delta^-1",
    )

    def validate(self, *, relaxed: bool = False) -> list[str]:
        """Returns the list of checked inequality names; raises ParamError
        naming the first violated one.  The list mirrors the inequalities the
        construction cites explicitly and is not exhaustive."""
        if len(self.c) != 8:
            raise ParamError("need c0..c7")
        d, dp = self.delta, self.delta_prime
        checks: list[tuple[str, bool]] = [
            ("L >= 41", self.L >= 41 or relaxed and self.L >= 1),
            ("N >= 1", self.N >= 1),
            ("J > 26 L N", self.J > 26 * self.L * self.N),
            ("0 < delta' < delta < 1", 0 < dp < d < 1),
            ("delta^-1 > 100 J", 1 / d > 100 * self.J),
            (
                "delta'^-1 >= max(2e4, 20 delta^-1 L^2 N^2)",
                1 / dp >= max(Fraction(20000), 20 * (1 / d) * self.L**2 * self.N**2),
            ),
            (
                "c increasing by factor delta'^-1",
                all(self.c[i + 1] > (1 / dp) * self.c[i] for i in range(7)) and self.c[0] > 0,
            ),
            ("c5 > 2000 N^2 delta'^-1", self.c[5] > 2000 * self.N**2 * (1 / dp)),
            ("c6 > 2 delta^-1", self.c[6] > 2 * (1 / d)),
        ]
        for name, ok in checks:
            if not ok:
                raise ParamError(f"violated: {name}")
        return [name for name, _ in checks]


def default_params(L: int, N: int) -> ParamConfig:
    J = 26 * L * N + 1
    delta = Fraction(1, 100 * J)
    dp_inv = 100 * max(20000, 20 * (100 * J) * L**2 * N**2)
    delta_prime = Fraction(1, dp_inv)
    cs = [Fraction(42)]
    for _ in range(7):
        cs.append(1000 * dp_inv**2 * cs[-1])
    return ParamConfig(L, N, J, delta, delta_prime, tuple(cs))


@dataclass(frozen=True)
class AcceptTimes:
    times: tuple[int, ...]
    exhausted: tuple[GroupWord, ...] = ()


def build_M(level4: TowerLevel, params: ParamConfig, *, relaxed: bool = False) -> TowerLevel:
    if level4.tag != "M4":
        raise TowerError("build_M consumes the M4 level")
    params.validate(relaxed=relaxed)
    L2 = 2 * params.L
    m4 = level4.machine
    hw4 = m4.hardware
    K4 = hw4.size

    def mi(l: Letter, c: int) -> Letter:
        return l.with_tags(mi=c)

    t_letters = {}
    for j in range(1, L2 + 1):
        t_letters[j] = q_letter("t" if j % 2 == 1 else "tp", ti=j)

    parts: list[sm.Part] = []
    signs: list[int] = []
    gaps: list[frozenset[Letter]] = []
    posmap: dict[tuple[int, int], int] = {}  # (copy, m4 part index) -> position
    t_positions: dict[int, int] = {}

    def tag_gap(g4: int, c: int) -> frozenset[Letter]:
        return frozenset(mi(l, c) for l in hw4.gaps[g4])

    for c in range(1, L2 + 1):
        t_positions[c] = len(parts)
        parts.append(sm.Part(f"T{c}", (t_letters[c],), "t" if c % 2 == 1 else "tp"))
        signs.append(1)
        # gap before this t-letter belongs to the previous copy
        if c % 2 == 1:
            prevgap = len(hw4.gaps) - 2  # k't' gap of copy c-1 (direct)
            gaps.append(tag_gap(1, c - 1) if False else tag_gap(prevgap if c > 1 else 1, c - 1 if c > 1 else L2))
        else:
            gaps.append(tag_gap(len(hw4.gaps) - 2, c - 1))
        inner = list(range(1, K4 - 1))  # m4 parts K .. K' (skip T and T')
        if c % 2 == 1:
            for p4 in inner:
                posmap[(c, p4)] = len(parts)
                hp = hw4.parts[p4]
                parts.append(sm.Part(f"{hp.name}({c})", tuple(mi(l, c) for l in hp.letters), hp.kind))
                signs.append(1)
                if p4 > 1:
                    gaps.insert(len(gaps), tag_gap(p4, c))
            # fix: gap between T_c and K was not yet added in order; rebuild below
        else:
            for p4 in reversed(inner):
                posmap[(c, p4)] = len(parts)
                hp = hw4.parts[p4]
                parts.append(sm.Part(f"{hp.name}({c})", tuple(mi(l, c) for l in hp.letters), hp.kind))
                signs.append(-1)
    # The incremental gap bookkeeping above is error prone; rebuild the gap
    # list from the final part layout instead.
    gaps = _gaps_from_layout(hw4, params.L, posmap, t_positions)

    hwM = sm.Hardware(tuple(parts), tuple(gaps), tuple(signs), cyclic=True)

    rules: list[sm.SRule] = []
    for r in m4.rules:
        partsM: list[sm.RulePart | None] = [None] * hwM.size
        for j in range(1, L2 + 1):
            tpart4 = r.parts[0] if j % 2 == 1 else r.parts[K4 - 1]
            if len(tpart4.left) or len(tpart4.right) or len(tpart4.left_to) or len(tpart4.right_to):
                raise TowerError("t-parts must be identities")
            partsM[t_positions[j]] = sm.ident_part(t_letters[j])
        for c in range(1, L2 + 1):
            for p4 in range(1, K4 - 1):
                rp = r.parts[p4]
                partsM[posmap[(c, p4)]] = sm.RulePart(
                    _miw(rp.left, c), mi(rp.q_from, c), _miw(rp.right, c),
                    _miw(rp.left_to, c), mi(rp.q_to, c), _miw(rp.right_to, c),
                )
        galph: list[frozenset[Letter] | None] = [None] * hwM.size
        for g in range(hwM.size):
            c, g4 = _gap_source(hwM, g, posmap, t_positions, hw4, params.L)
            a4 = r.gap_alphabets[g4]
            galph[g] = None if a4 is None else frozenset(mi(l, c) for l in a4)
        rules.append(sm.SRule(r.name, tuple(partsM), tuple(galph), tags=r.tags))

    stopM = _lift_template_word(hwM, m4.stop_word, hw4, posmap, t_positions, params.L)
    hub = GroupWord(stopM.letters[1:], _reduced=True)  # drop the leading t1
    hub = GroupWord(hub.letters[:], _reduced=True)
    level = TowerLevel(
        "M",
        sm.SMachine("M", hwM, tuple(rules), stopM),
        level4,
        hwM.size,
        {
            "params": params,
            "posmap": posmap,
            "t_positions": t_positions,
            "t_letters": t_letters,
            "hub": _rotate_to_k3(hub),
            "hub_raw": hub,
            "L": params.L,
        },
    )
    n_local = hwM.size // params.L
    level.data["N_local"] = n_local
    return level


def _miw(w: GroupWord, c: int) -> GroupWord:
    return GroupWord(tuple((l.with_tags(mi=c), s) for l, s in w), _reduced=True)


def _gaps_from_layout(hw4, L, posmap, t_positions):
    raise NotImplementedError


def _gap_source(hwM, g, posmap, t_positions, hw4, L):
    raise NotImplementedError


def _lift_template_word(hwM, w4, hw4, posmap, t_positions, L):
    raise NotImplementedError


def _rotate_to_k3(hub: GroupWord) -> GroupWord:
    return hub
