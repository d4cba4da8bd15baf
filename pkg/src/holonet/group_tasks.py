"""Sequence-task generators: S3 composition and variable binding.

Both tasks are exactly solvable, so every episode carries a ground-truth
label computed by construction, and an independent naive simulator is
provided for each task to cross-check the generators (the simulators follow
a different route: point tracking instead of table folding / array replay).

Composition convention: later sequence elements act on the left, so an
episode's product is g_L . ... . g_1 applied left-to-right onto a point.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

from .errors import ArgumentError
from .tensor_core import RngState


@dataclass(frozen=True)
class Perm:
    """A permutation of [0, V) stored as its image array."""

    image: tuple

    def __post_init__(self):
        v = len(self.image)
        if sorted(self.image) != list(range(v)):
            raise ArgumentError(f"not a permutation image: {self.image}")

    @property
    def size(self) -> int:
        return len(self.image)

    def __call__(self, point: int) -> int:
        return self.image[point]


def perm_identity(v: int) -> Perm:
    return Perm(tuple(range(v)))


def perm_compose(a: Perm, b: Perm) -> Perm:
    """(a . b).image[i] = a.image[b.image[i]]  (b acts first)."""
    if a.size != b.size:
        raise ArgumentError(f"perm_compose: size mismatch {a.size} vs {b.size}")
    return Perm(tuple(a.image[b.image[i]] for i in range(a.size)))


def perm_inverse(a: Perm) -> Perm:
    inv = [0] * a.size
    for i, j in enumerate(a.image):
        inv[j] = i
    return Perm(tuple(inv))


# S3 elements in lexicographic image order; ids are indices into this list.
S3_ELEMENTS = tuple(Perm(p) for p in itertools.permutations(range(3)))
S3_INDEX = {p.image: i for i, p in enumerate(S3_ELEMENTS)}


def s3_id(p: Perm) -> int:
    return S3_INDEX[p.image]


@dataclass(frozen=True)
class Episode:
    """One task instance; `query` is None for the S3 task."""

    tokens: tuple
    target: int
    length: int
    query: int | None = None


# ------------------------------------------------------------------ S3 task


def s3_target(tokens) -> int:
    """Path-ordered product class id via Cayley folding."""
    acc = perm_identity(3)
    for tok in tokens:
        acc = perm_compose(S3_ELEMENTS[tok], acc)
    return s3_id(acc)


def naive_s3_target(tokens) -> int:
    """Independent oracle: track each point through the sequence."""
    image = []
    for start in range(3):
        w = start
        for tok in tokens:
            w = S3_ELEMENTS[tok].image[w]
        image.append(w)
    return S3_INDEX[tuple(image)]


def s3_sample_episode(rng: RngState, length: int) -> Episode:
    if length < 1:
        raise ArgumentError(f"episode length must be >= 1, got {length}")
    gen = rng.generator()
    tokens = tuple(int(t) for t in gen.integers(0, 6, size=length))
    return Episode(tokens=tokens, target=s3_target(tokens), length=length)


# ------------------------------------------------------------------ binding task


def swap_vocabulary(v: int) -> list[tuple]:
    """Unordered pairs (i, j), i < j, in lexicographic order."""
    if v < 2:
        raise ArgumentError(f"need at least 2 variables, got {v}")
    return [(i, j) for i in range(v) for j in range(i + 1, v)]


def swap_token(v: int, i: int, j: int) -> int:
    """Vocabulary id of SWAP(i, j); insensitive to argument order."""
    if i == j or not (0 <= i < v and 0 <= j < v):
        raise ArgumentError(f"invalid swap ({i}, {j}) for {v} variables")
    if i > j:
        i, j = j, i
    # triangular index of (i, j) in the lexicographic pair list
    return i * (2 * v - i - 1) // 2 + (j - i - 1)


def binding_target(tokens, v: int, query: int) -> int:
    """Replay all swaps on the identity assignment, then read the query slot."""
    pairs = swap_vocabulary(v)
    values = list(range(v))
    for tok in tokens:
        i, j = pairs[tok]
        values[i], values[j] = values[j], values[i]
    return values[query]


def naive_binding_target(tokens, v: int, query: int) -> int:
    """Independent oracle: trace the query slot backwards through the swaps."""
    pairs = swap_vocabulary(v)
    w = query
    for tok in reversed(tokens):
        i, j = pairs[tok]
        if w == i:
            w = j
        elif w == j:
            w = i
    return w


def sv_sample_episode(rng: RngState, v: int, length: int) -> Episode:
    if v < 2 or length < 1:
        raise ArgumentError(f"need v >= 2 and length >= 1, got v={v}, L={length}")
    gen = rng.generator()
    n_tokens = v * (v - 1) // 2
    tokens = tuple(int(t) for t in gen.integers(0, n_tokens, size=length))
    query = int(gen.integers(0, v))
    return Episode(tokens=tokens, target=binding_target(tokens, v, query),
                   length=length, query=query)


# ------------------------------------------------------------------ curricula


@dataclass(frozen=True)
class Curriculum:
    """Length scheduler: stepwise accuracy gate or linear ramp with end bias.

    `ramp_start` is where the ramp begins (defaults to l_min); sampling is
    uniform on [l_min, max_len] until the ramp completes, after which the
    maximum length is drawn with probability `max_bias`.
    """

    kind: str  # "stepwise" | "ramp"
    l_min: int
    l_max: int
    max_len: int = 0
    gate_threshold: float = 1.0
    progress: float = 0.0
    ramp_start: int = 0
    ramp_fraction: float = 0.7
    max_bias: float = 0.5

    def __post_init__(self):
        if self.kind not in ("stepwise", "ramp"):
            raise ArgumentError(f"unknown curriculum kind: {self.kind}")
        if not 1 <= self.l_min <= self.l_max:
            raise ArgumentError(f"bad length range [{self.l_min}, {self.l_max}]")
        if self.max_len == 0:
            start = self.ramp_start or self.l_min
            object.__setattr__(self, "max_len", self.l_min if self.kind == "stepwise" else start)
        if self.ramp_start == 0:
            object.__setattr__(self, "ramp_start", self.l_min)


def curriculum_advance(c: Curriculum, metric: float) -> Curriculum:
    """Advance with a gate accuracy (stepwise) or a step fraction (ramp)."""
    if c.kind == "stepwise":
        if metric >= c.gate_threshold and c.max_len < c.l_max:
            return replace(c, max_len=c.max_len + 1)
        return c
    frac = min(metric / c.ramp_fraction, 1.0)
    new_max = int(round(c.ramp_start + (c.l_max - c.ramp_start) * frac))
    return replace(c, progress=metric, max_len=max(c.max_len, new_max))


def sample_length(c: Curriculum, rng: RngState) -> int:
    gen = rng.generator()
    if c.kind == "ramp":
        if c.progress >= c.ramp_fraction:
            if gen.random() < c.max_bias:
                return c.l_max
            return int(gen.integers(c.l_min, c.l_max + 1))
        return int(gen.integers(c.l_min, c.max_len + 1))
    # stepwise: concentrate on the gated length, rehearse shorter ones
    if gen.random() < c.max_bias:
        return c.max_len
    return int(gen.integers(c.l_min, c.max_len + 1))


# ------------------------------------------------------------------ serialization


def episode_to_line(e: Episode) -> str:
    """`L;tok,tok,...;query;target` with an empty query field for S3."""
    toks = ",".join(str(t) for t in e.tokens)
    query = "" if e.query is None else str(e.query)
    return f"{e.length};{toks};{query};{e.target}"


def episode_from_line(line: str) -> Episode:
    parts = line.strip().split(";")
    if len(parts) != 4:
        raise ArgumentError(f"malformed episode line: {line!r}")
    length = int(parts[0])
    tokens = tuple(int(t) for t in parts[1].split(",")) if parts[1] else ()
    if len(tokens) != length:
        raise ArgumentError(f"length field {length} != {len(tokens)} tokens")
    query = int(parts[2]) if parts[2] else None
    return Episode(tokens=tokens, target=int(parts[3]), length=length, query=query)
