"""Typed alphabets and freely reduced group words.

Letters come in three kinds: tape letters ('a'), state letters ('q') and rule
letters ('th').  A letter is identified by its kind, its name and a sorted tag
tuple (copy indices, prime marks, rule annotations and the like), so copies of
the same base symbol at different machine levels are distinct letters.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Iterator, Mapping

A_KIND = "a"
Q_KIND = "q"
TH_KIND = "th"

TagValue = "str | int"
_TOKEN_RE = re.compile(
    r"^(?P<name>[^{}^=,\s]+)(?:\{(?P<tags>[^{}]*)\})?(?P<inv>\^-1)?$"
)

_intern: dict[tuple, "Letter"] = {}


@dataclass(frozen=True)
class Letter:
    kind: str
    name: str
    tags: tuple[tuple[str, "str | int"], ...] = ()

    def __post_init__(self):
        if self.kind not in (A_KIND, Q_KIND, TH_KIND):
            raise ValueError(f"unknown letter kind {self.kind!r}")

    def tag(self, key: str, default=None):
        for k, v in self.tags:
            if k == key:
                return v
        return default

    def with_tags(self, **updates) -> "Letter":
        tags = dict(self.tags)
        for k, v in updates.items():
            if v is None:
                tags.pop(k, None)
            else:
                tags[k] = v
        return make_letter(self.kind, self.name, tags)

    def sort_key(self):
        return (
            self.kind,
            self.name,
            tuple(
                (k, "i", v) if isinstance(v, int) else (k, "s", v)
                for k, v in self.tags
            ),
        )

    def token(self) -> str:
        parts = [f"k={self.kind}"] + [f"{k}={v}" for k, v in self.tags]
        return f"{self.name}{{{','.join(parts)}}}"

    def __repr__(self):
        return self.token()


def make_letter(kind: str, name: str, tags: Mapping[str, "str | int"] | None = None) -> Letter:
    items = tuple(sorted((tags or {}).items()))
    key = (kind, name, items)
    got = _intern.get(key)
    if got is None:
        got = Letter(kind, name, items)
        _intern[key] = got
    return got


def a_letter(name: str, **tags) -> Letter:
    return make_letter(A_KIND, name, tags)


def q_letter(name: str, **tags) -> Letter:
    return make_letter(Q_KIND, name, tags)


def th_letter(name: str, **tags) -> Letter:
    return make_letter(TH_KIND, name, tags)


SignedLetter = "tuple[Letter, int]"


def _reduce_pairs(pairs: Iterable[tuple[Letter, int]]) -> tuple:
    out: list[tuple[Letter, int]] = []
    for let, sign in pairs:
        if sign not in (1, -1):
            raise ValueError(f"bad sign {sign!r}")
        if out and out[-1][0] is let and out[-1][1] == -sign:
            out.pop()
        elif out and out[-1][0] == let and out[-1][1] == -sign:
            out.pop()
        else:
            out.append((let, sign))
    return tuple(out)


class GroupWord:
    """A freely reduced word of signed letters.  Immutable."""

    __slots__ = ("letters", "_hash")

    def __init__(self, pairs: Iterable[tuple[Letter, int]] = (), *, _reduced=False):
        if _reduced:
            self.letters = tuple(pairs)
        else:
            self.letters = _reduce_pairs(pairs)
        self._hash = hash(self.letters)

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        return isinstance(other, GroupWord) and self.letters == other.letters

    def __len__(self):
        return len(self.letters)

    def __iter__(self) -> Iterator[tuple[Letter, int]]:
        return iter(self.letters)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return GroupWord(self.letters[i], _reduced=True)
        return self.letters[i]

    def __mul__(self, other: "GroupWord") -> "GroupWord":
        return GroupWord(self.letters + other.letters)

    def inv(self) -> "GroupWord":
        return GroupWord(
            tuple((l, -s) for l, s in reversed(self.letters)), _reduced=True
        )

    def is_positive(self) -> bool:
        return all(s == 1 for _, s in self.letters)

    def is_empty(self) -> bool:
        return not self.letters

    def a_count(self) -> int:
        return sum(1 for l, _ in self.letters if l.kind == A_KIND)

    def q_count(self) -> int:
        return sum(1 for l, _ in self.letters if l.kind == Q_KIND)

    def cyclic_rotations(self) -> Iterator["GroupWord"]:
        for i in range(max(1, len(self.letters))):
            yield GroupWord(self.letters[i:] + self.letters[:i], _reduced=True)

    def cyclically_reduced(self) -> "GroupWord":
        ls = list(self.letters)
        while len(ls) > 1 and ls[0][0] == ls[-1][0] and ls[0][1] == -ls[-1][1]:
            ls = ls[1:-1]
        return GroupWord(ls, _reduced=True)

    def token_str(self) -> str:
        if not self.letters:
            return "1"
        return " ".join(
            l.token() + ("^-1" if s < 0 else "") for l, s in self.letters
        )

    def __repr__(self):
        return f"<{self.token_str()}>"


EMPTY = GroupWord()


def word(*pairs: tuple[Letter, int]) -> GroupWord:
    return GroupWord(pairs)


def pos_word(letters: Iterable[Letter]) -> GroupWord:
    return GroupWord((l, 1) for l in letters)


def reduce(raw: Iterable[tuple[Letter, int]]) -> GroupWord:
    """Freely reduce a raw sequence of signed letters."""
    return GroupWord(raw)


def invert(w: GroupWord) -> GroupWord:
    return w.inv()


def copy_to(w: GroupWord, letter_map: Mapping[Letter, Letter] | Callable[[Letter], Letter]) -> GroupWord:
    """Letterwise image of ``w`` under an injective letter map."""
    if callable(letter_map) and not isinstance(letter_map, Mapping):
        fn = letter_map
    else:
        mapping: Mapping[Letter, Letter] = letter_map
        if len(set(mapping.values())) != len(mapping):
            raise ValueError("letter map is not injective")

        def fn(l: Letter) -> Letter:
            try:
                return mapping[l]
            except KeyError:
                raise KeyError(f"letter map undefined on {l!r}") from None

    return GroupWord((fn(l), s) for l, s in w)


def a_length(w: GroupWord) -> int:
    """Number of a-letters (tape letters) in ``w``."""
    return w.a_count()


@dataclass(frozen=True)
class LengthConfig:
    """Weights for the modified length: |a| = delta, |th| = 1, one th-a
    syllable = 1 + delta_prime.  Exact rationals, no floats."""

    delta: Fraction
    delta_prime: Fraction

    def __post_init__(self):
        if not (0 < self.delta_prime < self.delta < 1):
            raise ValueError("need 0 < delta' < delta < 1")


def weighted_length(w: GroupWord, cfg: LengthConfig) -> Fraction:
    """Modified length: q-letters count 1 and split the word; inside each
    q-free section take the cheapest decomposition into single letters and
    th-a syllables."""
    total = Fraction(0)
    section: list[Letter] = []

    def flush():
        nonlocal total
        if section:
            total += _section_length(section, cfg)
            section.clear()

    for l, _ in w:
        if l.kind == Q_KIND:
            flush()
            total += 1
        else:
            section.append(l)
    flush()
    return total


def _section_length(section: list[Letter], cfg: LengthConfig) -> Fraction:
    # DP over the section; f[i] = min length of the first i letters.
    one = Fraction(1)
    syll = one + cfg.delta_prime
    f = [Fraction(0)] * (len(section) + 1)
    for i, l in enumerate(section, start=1):
        cost = cfg.delta if l.kind == A_KIND else one
        best = f[i - 1] + cost
        if i >= 2:
            kinds = {section[i - 2].kind, section[i - 1].kind}
            if kinds == {A_KIND, TH_KIND}:
                best = min(best, f[i - 2] + syll)
        f[i] = best
    return f[-1]


# ---------------------------------------------------------------------------
# serialization


def parse_letter(token: str) -> tuple[Letter, int]:
    m = _TOKEN_RE.match(token)
    if not m:
        raise ValueError(f"bad letter token {token!r}")
    name = m.group("name")
    kind = A_KIND
    tags: dict[str, "str | int"] = {}
    if m.group("tags"):
        for item in m.group("tags").split(","):
            if not item:
                continue
            if "=" not in item:
                raise ValueError(f"bad tag {item!r} in {token!r}")
            k, v = item.split("=", 1)
            if k == "k":
                kind = v
            else:
                tags[k] = int(v) if re.fullmatch(r"-?\d+", v) else v
    sign = -1 if m.group("inv") else 1
    return make_letter(kind, name, tags), sign


def parse_word(text: str) -> GroupWord:
    text = text.strip()
    if not text or text == "1":
        return EMPTY
    return GroupWord(parse_letter(tok) for tok in text.split())
