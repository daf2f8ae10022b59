"""S-machines as rewriting systems on group words.

An S-machine is blind: a rule never reads tape letters, it only checks that
every tape letter of the word lies in the rule's sector alphabets and that the
state letters match the left sides of its parts.  Application substitutes
every state letter by a fixed word and freely reduces, then trims tape letters
off the ends.

Hardware is a signed template: a cyclic or linear sequence of state-letter
parts (the standard base) with one alphabet per gap between consecutive parts.
A part may occur in the template with sign -1 (mirror copies inside the base
of the top-level machine), which is what makes bases like ``t B t' B^-1 ...``
admissible.
"""

from __future__ import annotations

import random
from array import array
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

from .words import (
    A_KIND,
    EMPTY,
    GroupWord,
    Letter,
    Q_KIND,
    make_letter,
    parse_word,
    pos_word,
    q_letter,
)


class NotApplicable(Exception):
    pass


class ApplyError(Exception):
    """Raised by run() with the index of the first inapplicable rule."""

    def __init__(self, index: int, rule_name: str, msg: str = ""):
        self.index = index
        self.rule_name = rule_name
        super().__init__(f"rule #{index} ({rule_name}) not applicable{': ' + msg if msg else ''}")


@dataclass(frozen=True)
class Part:
    name: str
    letters: tuple[Letter, ...]
    kind: str = "q"  # marker for t/t'/k/k'/s/p parts at the top level

    def __post_init__(self):
        if not self.letters:
            raise ValueError(f"part {self.name} has no letters")


@dataclass(frozen=True)
class Hardware:
    parts: tuple[Part, ...]
    gaps: tuple[frozenset[Letter], ...]  # linear: len == len(parts)+1; cyclic: len == len(parts)
    signs: tuple[int, ...] = ()
    cyclic: bool = False

    def __post_init__(self):
        k = len(self.parts)
        if not self.signs:
            object.__setattr__(self, "signs", (1,) * k)
        if self.cyclic:
            if len(self.gaps) != k:
                raise ValueError("cyclic hardware needs one gap per part")
        elif len(self.gaps) != k + 1:
            raise ValueError("linear hardware needs len(parts)+1 gaps")
        seen: set[Letter] = set()
        for p in self.parts:
            for l in p.letters:
                if l.kind != Q_KIND:
                    raise ValueError(f"state letter {l!r} must be q-kind")
                if l in seen:
                    raise ValueError(f"state letter {l!r} in two parts")
                seen.add(l)
        tape_seen: set[Letter] = set()
        for g in self.gaps:
            for l in g:
                if l.kind != A_KIND:
                    raise ValueError(f"tape letter {l!r} must be a-kind")
                if l in tape_seen:
                    raise ValueError(f"tape letter {l!r} in two gaps")
                tape_seen.add(l)

    @property
    def size(self) -> int:
        return len(self.parts)

    def gap_index_right(self, pos: int) -> int:
        return (pos + 1) % self.size if self.cyclic else pos + 1

    def part_index(self, name: str) -> int:
        for i, p in enumerate(self.parts):
            if p.name == name:
                return i
        raise KeyError(name)

    def standard_base_word(self, representative=None) -> GroupWord:
        """The standard base with one representative letter per part; cyclic
        hardware repeats the first part at the end."""
        rep = representative or (lambda part: part.letters[0])
        pairs = [(rep(p), s) for p, s in zip(self.parts, self.signs)]
        if self.cyclic:
            pairs.append(pairs[0])
        return GroupWord(pairs, _reduced=True)


@dataclass(frozen=True)
class RulePart:
    """One part ``v q u -> v' q' u'`` of a rule, written in template
    orientation; v lives in the gap left of the part, u in the right gap."""

    left: GroupWord
    q_from: Letter
    right: GroupWord
    left_to: GroupWord
    q_to: Letter
    right_to: GroupWord

    def inverse(self) -> "RulePart":
        return RulePart(self.left_to, self.q_to, self.right_to, self.left, self.q_from, self.right)

    def unit_count(self) -> int:
        return len(self.left) + len(self.left_to) + len(self.right) + len(self.right_to)


IDENT_CACHE: dict[tuple[Letter, Letter], RulePart] = {}


def ident_part(q_from: Letter, q_to: Letter | None = None) -> RulePart:
    q_to = q_to or q_from
    got = IDENT_CACHE.get((q_from, q_to))
    if got is None:
        got = RulePart(EMPTY, q_from, EMPTY, EMPTY, q_to, EMPTY)
        IDENT_CACHE[(q_from, q_to)] = got
    return got


@dataclass(frozen=True)
class SRule:
    name: str
    parts: tuple[RulePart, ...]
    # One entry per hardware gap; None means the full hardware alphabet.
    gap_alphabets: tuple[frozenset[Letter] | None, ...]
    sign: int = 1
    tags: tuple[tuple[str, "str | int"], ...] = ()

    def tag(self, key: str, default=None):
        for k, v in self.tags:
            if k == key:
                return v
        return default

    def inverse(self) -> "SRule":
        return SRule(
            self.name,
            tuple(p.inverse() for p in self.parts),
            self.gap_alphabets,
            -self.sign,
            self.tags,
        )

    def locks(self, gap: int) -> bool:
        alph = self.gap_alphabets[gap]
        return alph is not None and len(alph) == 0

    def ref(self) -> tuple[str, int]:
        return (self.name, self.sign)


HistoryRef = "tuple[str, int]"


def _check_rule_shape(hw: Hardware, rule: SRule) -> None:
    if len(rule.parts) != hw.size:
        raise ValueError(f"rule {rule.name}: {len(rule.parts)} parts for base of {hw.size}")
    if len(rule.gap_alphabets) != len(hw.gaps):
        raise ValueError(f"rule {rule.name}: bad gap table")
    for g, alph in enumerate(rule.gap_alphabets):
        if alph is not None and not alph <= hw.gaps[g]:
            raise ValueError(f"rule {rule.name}: gap {g} alphabet not inside hardware")
    for i, part in enumerate(rule.parts):
        pl = hw.parts[i].letters
        if part.q_from not in pl or part.q_to not in pl:
            raise ValueError(f"rule {rule.name}: part {i} state letters outside part")
        lg = i if not hw.cyclic else i
        rg = hw.gap_index_right(i)
        for w, g, side in ((part.left, lg, "left"), (part.left_to, lg, "left"),
                           (part.right, rg, "right"), (part.right_to, rg, "right")):
            alph = rule.gap_alphabets[g]
            eff = hw.gaps[g] if alph is None else alph
            for l, _ in w:
                if l not in eff:
                    raise ValueError(
                        f"rule {rule.name}: part {i} {side} word uses {l!r} outside Y_{g}(rule)")
            if alph is not None and len(alph) == 0 and len(w):
                raise ValueError(f"rule {rule.name}: locked gap {g} but part {i} has tape letters")


@dataclass(frozen=True)
class SMachine:
    name: str
    hardware: Hardware
    rules: tuple[SRule, ...]  # positive rules
    stop_word: GroupWord | None = None
    start_rule: str | None = None
    accept_rule: str | None = None

    def __post_init__(self):
        seen = set()
        for r in self.rules:
            if r.sign != 1:
                raise ValueError(f"{r.name}: machine stores positive rules only")
            if r.name in seen:
                raise ValueError(f"duplicate rule name {r.name}")
            seen.add(r.name)
            _check_rule_shape(self.hardware, r)

    def rule(self, name: str) -> SRule:
        got = self._by_name().get(name)
        if got is None:
            raise KeyError(name)
        return got

    def _by_name(self) -> dict[str, SRule]:
        d = getattr(self, "_name_cache", None)
        if d is None:
            d = {r.name: r for r in self.rules}
            object.__setattr__(self, "_name_cache", d)
        return d

    def signed_rule(self, ref: HistoryRef) -> SRule:
        name, sign = ref
        r = self.rule(name)
        return r if sign > 0 else r.inverse()

    def signed_rules(self) -> list[SRule]:
        """All rules and inverses in canonical order: polarity, step tag,
        name."""
        out = list(self.rules) + [r.inverse() for r in self.rules]
        out.sort(key=_rule_sort_key)
        return out

    def compiled(self) -> "CompiledMachine":
        c = getattr(self, "_compiled", None)
        if c is None:
            c = CompiledMachine(self)
            object.__setattr__(self, "_compiled", c)
        return c


def _rule_sort_key(r: SRule):
    return (0 if r.sign > 0 else 1, str(r.tag("step", "")), r.name)


@dataclass(frozen=True)
class Computation:
    start: GroupWord
    history: tuple[tuple[str, int], ...]
    trace: tuple[GroupWord, ...]

    @property
    def end(self) -> GroupWord:
        return self.trace[-1]

    def __len__(self) -> int:
        return len(self.history)


# ---------------------------------------------------------------------------
# compiled engine


class CompiledMachine:
    """Integer-coded view of a machine: letters become indices, words become
    lists of signed ints (idx+1 with sign)."""

    def __init__(self, m: SMachine):
        self.machine = m
        hw = m.hardware
        self.cyclic = hw.cyclic
        self.K = hw.size
        letters: list[Letter] = []
        index: dict[Letter, int] = {}

        def add(l: Letter) -> int:
            if l not in index:
                index[l] = len(letters)
                letters.append(l)
            return index[l]

        for p in hw.parts:
            for l in p.letters:
                add(l)
        for g in hw.gaps:
            for l in sorted(g, key=lambda x: x.sort_key()):
                add(l)
        self.letters = letters
        self.index = index
        n = len(letters)
        self.part_arr = [-1] * n
        self.gap_arr = [-1] * n
        for pi, p in enumerate(hw.parts):
            for l in p.letters:
                self.part_arr[index[l]] = pi
        for gi, g in enumerate(hw.gaps):
            for l in g:
                self.gap_arr[index[l]] = gi
        self.signs = hw.signs
        self._rule_cache: dict[tuple[str, int], _CompiledRule] = {}

    def encode(self, w: GroupWord) -> list[int]:
        idx = self.index
        try:
            return [s * (idx[l] + 1) for l, s in w]
        except KeyError as e:
            raise ValueError(f"letter {e.args[0]!r} not in machine alphabet") from None

    def decode(self, ints: Sequence[int]) -> GroupWord:
        ls = self.letters
        return GroupWord(
            tuple((ls[abs(x) - 1], 1 if x > 0 else -1) for x in ints), _reduced=True
        )

    def compile_rule(self, rule: SRule) -> "_CompiledRule":
        key = (rule.name, rule.sign)
        got = self._rule_cache.get(key)
        if got is None:
            got = _CompiledRule(self, rule)
            self._rule_cache[key] = got
        return got

    # -- admissibility ------------------------------------------------------

    def right_gap(self, pos: int, eps: int) -> int:
        if eps == self.signs[pos]:
            return (pos + 1) % self.K if self.cyclic else pos + 1
        return pos

    def left_gap(self, pos: int, eps: int) -> int:
        if eps == self.signs[pos]:
            return pos
        return (pos + 1) % self.K if self.cyclic else pos + 1

    def validate(self, ints: Sequence[int]) -> bool:
        """Admissibility of an int-coded reduced word."""
        if not ints:
            return False
        part_arr, gap_arr = self.part_arr, self.gap_arr
        expect_gap = None
        saw_q = False
        pending: list[int] = []
        for x in ints:
            i = abs(x) - 1
            pos = part_arr[i]
            if pos >= 0:
                eps = 1 if x > 0 else -1
                lg = self.left_gap(pos, eps)
                if saw_q:
                    if lg != expect_gap:
                        return False
                    for y in pending:
                        if gap_arr[abs(y) - 1] != expect_gap:
                            return False
                else:
                    if pending:
                        return False  # must start with a q-letter
                saw_q = True
                pending = []
                expect_gap = self.right_gap(pos, eps)
            else:
                if gap_arr[i] < 0:
                    return False
                pending.append(x)
        return saw_q and not pending

    def base_of(self, ints: Sequence[int]) -> tuple[tuple[str, int], ...]:
        out = []
        for x in ints:
            pos = self.part_arr[abs(x) - 1]
            if pos >= 0:
                out.append((self.machine.hardware.parts[pos].name, 1 if x > 0 else -1))
        return tuple(out)


class _CompiledRule:
    __slots__ = ("rule", "name", "sign", "q_from", "subst_pos", "subst_neg", "allowed", "sort_key")

    def __init__(self, cm: CompiledMachine, rule: SRule):
        self.rule = rule
        self.name = rule.name
        self.sign = rule.sign
        idx = cm.index
        enc = cm.encode
        self.q_from = [idx[p.q_from] for p in rule.parts]
        self.subst_pos = []
        self.subst_neg = []
        for p in rule.parts:
            x = (
                enc(p.left.inv())
                + enc(p.left_to)
                + [idx[p.q_to] + 1]
                + enc(p.right_to)
                + enc(p.right.inv())
            )
            self.subst_pos.append(tuple(x))
            self.subst_neg.append(tuple(-v for v in reversed(x)))
        allowed: set[int] = set()
        for g, alph in enumerate(rule.gap_alphabets):
            eff = cm.machine.hardware.gaps[g] if alph is None else alph
            for l in eff:
                allowed.add(idx[l])
        self.allowed = frozenset(allowed)
        self.sort_key = _rule_sort_key(rule)

    def apply_ints(self, cm: CompiledMachine, ints: Sequence[int]) -> list[int] | None:
        part_arr = cm.part_arr
        q_from = self.q_from
        allowed = self.allowed
        out: list[int] = []
        push = out.append
        for x in ints:
            i = abs(x) - 1
            pos = part_arr[i]
            if pos >= 0:
                if q_from[pos] != i:
                    return None
                seq = self.subst_pos[pos] if x > 0 else self.subst_neg[pos]
                for y in seq:
                    if out and out[-1] == -y:
                        out.pop()
                    else:
                        push(y)
            else:
                if i not in allowed:
                    return None
                if out and out[-1] == -x:
                    out.pop()
                else:
                    push(x)
        # trim tape letters off the ends; reject if no state letter remains
        lo, hi = 0, len(out)
        while lo < hi and part_arr[abs(out[lo]) - 1] < 0:
            lo += 1
        while hi > lo and part_arr[abs(out[hi - 1]) - 1] < 0:
            hi -= 1
        if lo >= hi:
            return None
        return out[lo:hi]


# ---------------------------------------------------------------------------
# public operations


def is_admissible(m: SMachine, w: GroupWord) -> bool:
    cm = m.compiled()
    try:
        ints = cm.encode(w)
    except ValueError:
        return False
    return cm.validate(ints)


def base_of(m: SMachine, w: GroupWord) -> tuple[tuple[str, int], ...]:
    """Base of an admissible word: the signed sequence of part names."""
    cm = m.compiled()
    return cm.base_of(cm.encode(w))


def try_apply(m: SMachine, rule: SRule, w: GroupWord, *, validate: bool = True) -> GroupWord | None:
    cm = m.compiled()
    cr = cm.compile_rule(rule)
    try:
        ints = cm.encode(w)
    except ValueError:
        return None
    res = cr.apply_ints(cm, ints)
    if res is None:
        return None
    if validate and not cm.validate(res):
        return None
    return cm.decode(res)


def applicable(m: SMachine, rule: SRule, w: GroupWord) -> bool:
    return try_apply(m, rule, w) is not None


def apply_rule(m: SMachine, rule: SRule, w: GroupWord) -> GroupWord:
    res = try_apply(m, rule, w)
    if res is None:
        raise NotApplicable(f"{rule.name}^{rule.sign} at {w!r}")
    return res


def run(m: SMachine, w: GroupWord, history: Iterable[tuple[str, int]]) -> Computation:
    """Replay a history left to right; ApplyError carries the first bad index."""
    cm = m.compiled()
    cur = cm.encode(w)
    if not cm.validate(cur):
        raise ValueError("start word is not admissible")
    trace = [w]
    hist = tuple(history)
    for i, ref in enumerate(hist):
        cr = cm.compile_rule(m.signed_rule(ref))
        nxt = cr.apply_ints(cm, cur)
        if nxt is None or not cm.validate(nxt):
            raise ApplyError(i, ref[0])
        cur = nxt
        trace.append(cm.decode(cur))
    return Computation(w, hist, tuple(trace))


def reduced_history(history: Sequence[tuple[str, int]]) -> bool:
    return all(
        not (a[0] == b[0] and a[1] == -b[1]) for a, b in zip(history, history[1:])
    )


@dataclass(frozen=True)
class Certificate:
    computation: Computation


@dataclass(frozen=True)
class Exhausted:
    reason: str
    expanded: int


def search_accept(
    m: SMachine,
    w: GroupWord,
    fuel: int,
    *,
    stop_word: GroupWord | None = None,
    max_nodes: int = 1_000_000,
) -> Certificate | Exhausted:
    """Shortest-first BFS over reduced extensions toward the stop word.
    ``fuel`` bounds the number of expanded nodes; acceptance is only
    semi-decidable so running out of fuel is a value, not an error."""
    if fuel <= 0:
        raise ValueError("fuel must be positive")
    stop = stop_word if stop_word is not None else m.stop_word
    if stop is None:
        raise ValueError("machine has no stop word")
    cm = m.compiled()
    start = cm.encode(w)
    if not cm.validate(start):
        raise ValueError("start word is not admissible")
    target = array("i", cm.encode(stop)).tobytes()
    key0 = array("i", start).tobytes()
    if key0 == target:
        return Certificate(Computation(w, (), (w,)))
    rules = [cm.compile_rule(r) for r in m.signed_rules()]
    parents: dict[bytes, tuple[bytes, tuple[str, int]]] = {}
    seen = {key0}
    frontier: deque[tuple[bytes, list[int]]] = deque([(key0, start)])
    expanded = 0
    while frontier:
        if expanded >= fuel:
            return Exhausted("fuel", expanded)
        key, cur = frontier.popleft()
        expanded += 1
        for cr in rules:
            nxt = cr.apply_ints(cm, cur)
            if nxt is None or not cm.validate(nxt):
                continue
            nkey = array("i", nxt).tobytes()
            if nkey in seen:
                continue
            seen.add(nkey)
            if len(seen) > max_nodes:
                return Exhausted("memory", expanded)
            parents[nkey] = (key, (cr.name, cr.sign))
            if nkey == target:
                refs: list[tuple[str, int]] = []
                k = nkey
                while k != key0:
                    k, ref = parents[k]
                    refs.append(ref)
                refs.reverse()
                return Certificate(run(m, w, refs))
            frontier.append((nkey, nxt))
    return Exhausted("space exhausted (no accepting word reachable)", expanded)


# ---------------------------------------------------------------------------
# Property 3.1(2) enforcement


def rule_weight(rule: SRule) -> int:
    return sum(p.unit_count() for p in rule.parts)


def satisfies_property_one(m: SMachine) -> bool:
    return all(rule_weight(r) <= 1 for r in m.rules)


def enforce_property_one(m: SMachine) -> tuple[SMachine, dict[str, tuple[str, ...]]]:
    """Split every rule of weight > 1 into a chain of one-unit rules through
    fresh auxiliary state letters; phi maps old rule names to the chains.
    Computations that avoid auxiliary letters correspond one-to-one."""
    if satisfies_property_one(m):
        return m, {r.name: (r.name,) for r in m.rules}

    hw = m.hardware
    new_letters: dict[int, list[Letter]] = {i: [] for i in range(hw.size)}
    out_rules: list[SRule] = []
    phi: dict[str, tuple[str, ...]] = {}

    for rule in m.rules:
        actions: list[tuple[str, int, tuple[Letter, int]]] = []
        for pi, part in enumerate(rule.parts):
            for l, s in reversed(part.left.letters):   # consume innermost first
                actions.append(("lc", pi, (l, s)))
            for l, s in part.right.letters:
                actions.append(("rc", pi, (l, s)))
            for l, s in part.left_to.letters:          # produce leftmost first
                actions.append(("lp", pi, (l, s)))
            for l, s in reversed(part.right_to.letters):
                actions.append(("rp", pi, (l, s)))
        if len(actions) <= 1:
            out_rules.append(rule)
            phi[rule.name] = (rule.name,)
            continue

        stages = len(actions)
        # state ladders: level 0 = original LHS, level `stages` = original RHS
        ladder: list[list[Letter]] = []
        for k in range(1, stages):
            level = []
            for pi, part in enumerate(rule.parts):
                aux = q_letter(part.q_from.name, **dict(part.q_from.tags), ax=f"{rule.name}.{k}")
                new_letters[pi].append(aux)
                level.append(aux)
            ladder.append(level)

        def level_letter(k: int, pi: int) -> Letter:
            if k == 0:
                return rule.parts[pi].q_from
            if k == stages:
                return rule.parts[pi].q_to
            return ladder[k - 1][pi]

        names = []
        for k, (kindact, pia, (l, s)) in enumerate(actions, start=1):
            parts = []
            for pi in range(hw.size):
                q0, q1 = level_letter(k - 1, pi), level_letter(k, pi)
                if pi != pia:
                    parts.append(RulePart(EMPTY, q0, EMPTY, EMPTY, q1, EMPTY))
                else:
                    one = GroupWord(((l, s),), _reduced=True)
                    if kindact == "lc":
                        parts.append(RulePart(one, q0, EMPTY, EMPTY, q1, EMPTY))
                    elif kindact == "rc":
                        parts.append(RulePart(EMPTY, q0, one, EMPTY, q1, EMPTY))
                    elif kindact == "lp":
                        parts.append(RulePart(EMPTY, q0, EMPTY, one, q1, EMPTY))
                    else:
                        parts.append(RulePart(EMPTY, q0, EMPTY, EMPTY, q1, one))
            nm = f"{rule.name}#{k}"
            names.append(nm)
            out_rules.append(SRule(nm, tuple(parts), rule.gap_alphabets, 1, rule.tags))
        phi[rule.name] = tuple(names)

    parts2 = tuple(
        Part(p.name, p.letters + tuple(new_letters[i]), p.kind)
        for i, p in enumerate(hw.parts)
    )
    hw2 = Hardware(parts2, hw.gaps, hw.signs, hw.cyclic)
    start = m.start_rule and (phi[m.start_rule][0] if len(phi[m.start_rule]) == 1 else None)
    accept = m.accept_rule and (phi[m.accept_rule][0] if len(phi[m.accept_rule]) == 1 else None)
    m2 = SMachine(m.name + "~", hw2, tuple(out_rules), m.stop_word, start, accept)
    return m2, phi


def classify_rule(rule: SRule, *, loose: bool = False) -> str:
    """'left' / 'right' / 'neither' per the side of the single length unit.
    Strict mode requires total weight <= 1 (Property 3.1(2))."""
    lw = sum(len(p.left) + len(p.left_to) for p in rule.parts)
    rw = sum(len(p.right) + len(p.right_to) for p in rule.parts)
    if lw + rw == 0:
        return "neither"
    if lw + rw == 1:
        return "left" if lw else "right"
    if not loose:
        raise ValueError(f"rule {rule.name} has weight {lw + rw} > 1")
    pos_left = sum(1 for p in rule.parts for _, s in p.left_to if s > 0)
    pos_right = sum(1 for p in rule.parts for _, s in p.right_to if s > 0)
    if pos_left == 1 and pos_right == 0:
        return "left"
    if pos_right == 1 and pos_left == 0:
        return "right"
    raise ValueError(f"rule {rule.name}: no single inserted letter side")


# ---------------------------------------------------------------------------
# fuzz helpers (deterministic given the rng)


def random_admissible_word(
    m: SMachine, rng: random.Random, *, max_sector: int = 3, standard: bool = True
) -> GroupWord:
    hw = m.hardware
    pairs: list[tuple[Letter, int]] = []
    positions = list(range(hw.size)) + ([0] if hw.cyclic else [])
    for j, pos in enumerate(positions):
        part = hw.parts[pos]
        pairs.append((rng.choice(part.letters), hw.signs[pos]))
        if j < len(positions) - 1:
            g = hw.gap_index_right(pos)
            alph = sorted(hw.gaps[g], key=lambda x: x.sort_key())
            if alph:
                for _ in range(rng.randrange(max_sector + 1)):
                    pairs.append((rng.choice(alph), rng.choice((1, -1))))
    w = GroupWord(pairs)
    if not is_admissible(m, w):
        # reduction may have cancelled sector junk; fall back to the bare base
        w = m.hardware.standard_base_word()
    return w


def random_reduced_computation(
    m: SMachine,
    rng: random.Random,
    start: GroupWord,
    max_len: int,
) -> Computation:
    """Random walk applying applicable signed rules, never undoing the
    previous rule (so the history is reduced)."""
    cm = m.compiled()
    cur = cm.encode(start)
    trace = [start]
    hist: list[tuple[str, int]] = []
    rules = [cm.compile_rule(r) for r in m.signed_rules()]
    for _ in range(max_len):
        last = hist[-1] if hist else None
        options = []
        for cr in rules:
            if last and cr.name == last[0] and cr.sign == -last[1]:
                continue
            nxt = cr.apply_ints(cm, cur)
            if nxt is not None and cm.validate(nxt):
                options.append((cr, nxt))
        if not options:
            break
        cr, nxt = options[rng.randrange(len(options))]
        hist.append((cr.name, cr.sign))
        cur = nxt
        trace.append(cm.decode(cur))
    return Computation(start, tuple(hist), tuple(trace))


# ---------------------------------------------------------------------------
# machine file format


def machine_to_text(m: SMachine) -> str:
    lines = [f"[machine] {m.name}", f"cyclic: {int(m.hardware.cyclic)}", "[parts]"]
    for p, s in zip(m.hardware.parts, m.hardware.signs):
        ls = " ".join(l.token() for l in p.letters)
        lines.append(f"{p.name} sign={s} kind={p.kind}: {ls}")
    lines.append("[sectors]")
    for g, alph in enumerate(m.hardware.gaps):
        ws = " ".join(l.token() for l in sorted(alph, key=lambda x: x.sort_key()))
        lines.append(f"{g}: {ws}")
    lines.append("[rules]")
    for r in m.rules:
        segs = []
        for i, p in enumerate(r.parts):
            arrow = "->!" if r.locks(m.hardware.gap_index_right(i)) else "->"
            segs.append(
                f"{p.left.token_str()} {p.q_from.token()} {p.right.token_str()} {arrow} "
                f"{p.left_to.token_str()} {p.q_to.token()} {p.right_to.token_str()}"
            )
        restr = []
        for g, alph in enumerate(r.gap_alphabets):
            if alph is None:
                continue
            restr.append(f"Y[{g}]=" + ",".join(l.token() for l in sorted(alph, key=lambda x: x.sort_key())))
        tagtxt = ",".join(f"{k}={v}" for k, v in r.tags)
        line = f"{r.name}: " + " | ".join(segs)
        if restr:
            line += " ;; " + " ".join(restr)
        if tagtxt:
            line += f" ;tags; {tagtxt}"
        lines.append(line)
    lines.append("[words]")
    lines.append(f"stop: {m.stop_word.token_str() if m.stop_word else '-'}")
    lines.append(f"start_rule: {m.start_rule or '-'}")
    lines.append(f"accept_rule: {m.accept_rule or '-'}")
    return "\n".join(lines) + "\n"


def machine_from_text(text: str) -> SMachine:
    lines = [ln.rstrip() for ln in text.splitlines() if ln.strip()]
    it = iter(lines)
    head = next(it)
    if not head.startswith("[machine]"):
        raise ValueError("missing [machine] header")
    name = head.split(None, 1)[1]
    cyclic = False
    parts: list[Part] = []
    signs: list[int] = []
    gaps: dict[int, frozenset[Letter]] = {}
    rule_lines: list[str] = []
    stop: GroupWord | None = None
    start_rule = accept_rule = None
    section = None
    for ln in it:
        if ln.startswith("cyclic:"):
            cyclic = bool(int(ln.split(":", 1)[1]))
            continue
        if ln.startswith("["):
            section = ln.strip()
            continue
        if section == "[parts]":
            head_, ls = ln.split(":", 1)
            bits = head_.split()
            pname = bits[0]
            sign = 1
            kind = "q"
            for b in bits[1:]:
                if b.startswith("sign="):
                    sign = int(b[5:])
                elif b.startswith("kind="):
                    kind = b[5:]
            letters = tuple(l for l, _ in parse_word(ls))
            parts.append(Part(pname, letters, kind))
            signs.append(sign)
        elif section == "[sectors]":
            g, ws = ln.split(":", 1)
            gaps[int(g)] = frozenset(l for l, _ in parse_word(ws))
        elif section == "[rules]":
            rule_lines.append(ln)
        elif section == "[words]":
            key, val = ln.split(":", 1)
            val = val.strip()
            if key == "stop":
                stop = None if val == "-" else parse_word(val)
            elif key == "start_rule":
                start_rule = None if val == "-" else val
            elif key == "accept_rule":
                accept_rule = None if val == "-" else val
    gap_list = tuple(gaps[i] for i in range(len(gaps)))
    hw = Hardware(tuple(parts), gap_list, tuple(signs), cyclic)
    rules = []
    for ln in rule_lines:
        rname, rest = ln.split(":", 1)
        tags: tuple = ()
        if " ;tags; " in rest:
            rest, tagtxt = rest.split(" ;tags; ", 1)
            tags = tuple(
                (k, int(v) if v.lstrip("-").isdigit() else v)
                for k, v in (item.split("=", 1) for item in tagtxt.strip().split(","))
            )
        restr_txt = None
        if " ;; " in rest:
            rest, restr_txt = rest.split(" ;; ", 1)
        segs = rest.split(" | ")
        rparts = []
        locks: set[int] = set()
        for i, seg in enumerate(segs):
            lhs, rhs = seg.split("->!" if "->!" in seg else "->")
            if "->!" in seg:
                locks.add(hw.gap_index_right(i))
            lv, lq, lu = _split_triple(lhs)
            rv, rq, ru = _split_triple(rhs)
            rparts.append(RulePart(lv, lq, lu, rv, rq, ru))
        galph: list[frozenset[Letter] | None] = [None] * len(hw.gaps)
        for g in locks:
            galph[g] = frozenset()
        if restr_txt:
            for item in restr_txt.split():
                gtxt, ws = item.split("=", 1)
                g = int(gtxt[2:-1])
                pw = parse_word(" ".join(ws.split(","))) if ws else EMPTY
                galph[g] = frozenset(l for l, _ in pw)
        rules.append(SRule(rname.strip(), tuple(rparts), tuple(galph), 1, tags))
    return SMachine(name, hw, tuple(rules), stop, start_rule, accept_rule)


def _split_triple(txt: str) -> tuple[GroupWord, Letter, GroupWord]:
    toks = txt.split()
    qi = None
    parsed = [parse_word(t) for t in toks]
    for i, t in enumerate(parsed):
        if len(t) and t.letters[0][0].kind == Q_KIND:
            qi = i
            break
    if qi is None:
        raise ValueError(f"no state letter in {txt!r}")
    left = GroupWord([p.letters[0] for p in parsed[:qi] if len(p)])
    right = GroupWord([p.letters[0] for p in parsed[qi + 1:] if len(p)])
    return left, parsed[qi].letters[0][0], right
