"""Random walks driven by a finitely supported step measure.

The step law is split on blocks of ``4 M0`` steps as a mixture of the
uniform law on ``S^4`` (weight ``alpha``) and a residual law.  A path is
sampled by drawing i.i.d. increments and then, on every complete block
lying in ``S^4``, flipping the coin that decides whether the block was a
Schottky slot; this coupling has exactly the mixture's joint law.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Sequence

import numpy as np

from . import _kernels
from .contraction import ConstantLedger, are_independent, is_contracting_axis
from .errors import UsageError
from .pivotal import ORIGIN, PivotalState, Trajectory, pivot_step
from .schottky import IsometrySequence, SchottkySet, build_axis
from .space import FreeGroupTree, SpaceBackend


def path_rng(seed: int, index: int = 0, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for path ``index`` of an experiment seeded by ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index), int(stream)])))


def _as_fraction(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(str(x))


@dataclass
class StepMeasure:
    """Finite support with positive weights summing to one."""

    backend: SpaceBackend
    support: tuple
    weights: tuple
    non_elementary: bool = False

    def __post_init__(self):
        self.support = tuple(self.support)
        self.weights = tuple(_as_fraction(p) for p in self.weights)
        if not self.support or len(self.support) != len(self.weights):
            raise UsageError("a step measure needs matching nonempty support and weights")
        if len(set(self.support)) != len(self.support):
            raise UsageError("support elements must be distinct")
        if any(p <= 0 for p in self.weights):
            raise UsageError("weights must be positive")
        if abs(float(sum(self.weights)) - 1.0) > 1e-12:
            raise UsageError(f"weights sum to {float(sum(self.weights))}, not 1")
        for g in self.support:
            self.backend.check_isometry(g)

    @classmethod
    def from_table(cls, backend: SpaceBackend, table) -> "StepMeasure":
        """From ``[(isometry spec, weight), ...]`` or ``{spec: weight}``."""
        items = table.items() if isinstance(table, dict) else table
        support, weights = [], []
        for spec, p in items:
            support.append(backend.parse_isometry(spec))
            weights.append(p)
        return cls(backend, support, weights)

    @classmethod
    def simple(cls, backend: FreeGroupTree, laziness=0) -> "StepMeasure":
        """Uniform on generators and inverses, optionally holding with probability ``laziness``."""
        lazy = _as_fraction(laziness)
        letters = [c for c in backend.letters] + [c.upper() for c in backend.letters]
        support = letters + ([backend.identity] if lazy else [])
        w = [(1 - lazy) / len(letters)] * len(letters) + ([lazy] if lazy else [])
        return cls(backend, support, w)

    @cached_property
    def probabilities(self) -> np.ndarray:
        p = np.array([float(w) for w in self.weights])
        return p / p.sum()

    def index(self, g) -> int:
        return self.support.index(g)

    def weight(self, g) -> Fraction:
        try:
            return self.weights[self.support.index(g)]
        except ValueError:
            return Fraction(0)

    def sequence_weight(self, seq: Sequence) -> Fraction:
        out = Fraction(1)
        for g in seq:
            out *= self.weight(g)
        return out

    def reflected(self) -> "StepMeasure":
        """The law of ``g^{-1}`` for ``g`` drawn from this measure."""
        b = self.backend
        return StepMeasure(b, tuple(b.inverse(g) for g in self.support), self.weights, self.non_elementary)

    def certify_non_elementary(self, a: Sequence, b: Sequence, probes: Sequence, K: float, radius: int = 6) -> bool:
        """Set the flag after checking two products of support elements.

        ``a`` and ``b`` are sequences of support elements; their products must
        have contracting orbits (for constant ``K`` over ``probes``) and be
        independent up to ``radius``.
        """
        back = self.backend
        for seq in (a, b):
            if not seq or any(g not in self.support for g in seq):
                raise UsageError("witnesses must be nonempty products of support elements")
        ga, gb = IsometrySequence.of(back, a).product, IsometrySequence.of(back, b).product
        ok = are_independent(back, ga, gb, radius)
        for g in (ga, gb):
            orbit = build_axis(back, IsometrySequence.of(back, [g]), math.inf, 4)
            ok = ok and is_contracting_axis(back, orbit, K, probes)
        self.non_elementary = bool(ok)
        return self.non_elementary

    def sample_indices(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.choice(len(self.support), size=n, p=self.probabilities).astype(np.int16)

    def to_table(self) -> list:
        return [[self.backend.describe_isometry(g), str(p)] for g, p in zip(self.support, self.weights)]


@dataclass
class DecomposedModel:
    """``mu^{4 M0} = alpha mu_S^4 + (1 - alpha) nu`` on blocks of ``4 M0`` steps."""

    mu: StepMeasure
    S: SchottkySet
    alpha: Fraction
    codes: dict = field(repr=False, default_factory=dict)

    @property
    def M0(self) -> int:
        return self.S.M0

    @property
    def block(self) -> int:
        return 4 * self.S.M0

    def schottky_weight(self, atom: Sequence) -> Fraction:
        """``mu_S^4`` of a block given as ``4 M0`` isometries."""
        return Fraction(1, len(self.S) ** 4) if self.split(atom) is not None else Fraction(0)

    def split(self, atom: Sequence) -> tuple | None:
        """Indices into ``S`` of the four sequences forming ``atom``, if it lies in ``S^4``."""
        M = self.M0
        if len(atom) != 4 * M:
            raise UsageError(f"a block has {4 * M} steps")
        out = []
        for q in range(4):
            key = tuple(atom[q * M:(q + 1) * M])
            if key not in self.codes:
                return None
            out.append(self.codes[key])
        return tuple(out)

    def nu_weight(self, atom: Sequence) -> Fraction:
        """Residual weight; undefined when ``alpha = 1``."""
        if self.alpha == 1:
            raise UsageError("the residual law is undefined when alpha = 1")
        return (self.mu.sequence_weight(atom) - self.alpha * self.schottky_weight(atom)) / (1 - self.alpha)

    def reconstruct(self, atom: Sequence) -> Fraction:
        nu = self.nu_weight(atom) if self.alpha < 1 else Fraction(0)
        return self.alpha * self.schottky_weight(atom) + (1 - self.alpha) * nu

    def schottky_flip_probability(self, atom_indices: Sequence[int]) -> float:
        """Chance that a block in ``S^4`` drawn from ``mu^{4 M0}`` is declared a Schottky slot."""
        atom = [self.mu.support[i] for i in atom_indices]
        return float(self.alpha * self.schottky_weight(atom) / self.mu.sequence_weight(atom))


def decompose(mu: StepMeasure, S, alpha=None) -> DecomposedModel:
    """Largest ``alpha`` keeping the residual law nonnegative, unless overridden."""
    if not isinstance(S, SchottkySet) or len(S) == 0:
        raise UsageError("decomposition needs a nonempty Schottky set")
    codes = {}
    for idx, s in enumerate(S):
        if any(g not in mu.support for g in s.entries):
            raise UsageError(f"Schottky element {idx} is not a sequence of support elements")
        codes[tuple(s.entries)] = idx
    per = [mu.sequence_weight(s.entries) for s in S]
    # mu^{4M0} of an S^4 atom is the product of the four sequence weights and
    # mu_S^4 gives it N0^-4, so the binding ratio comes from the lightest element
    best = min(per) ** 4 * len(S) ** 4
    best = min(best, Fraction(1))
    if alpha is not None:
        alpha = _as_fraction(alpha)
        if not 0 < alpha <= best:
            raise UsageError(f"alpha must lie in (0, {best}]")
    else:
        alpha = best
    return DecomposedModel(mu, S, alpha, codes)


# ----------------------------------------------------------------------------
# sample paths


@dataclass
class SamplePath:
    """Increments of one path with its Schottky-slot structure.

    ``steps`` holds support indices of ``g_1..g_n``; ``back`` holds those of
    the backward increments ``g_0, g_{-1}, ...`` when drawn.  ``rho[k]`` is
    the coin of the block of steps ``4 M0 k + 1 .. 4 M0 (k + 1)``.
    """

    model: DecomposedModel
    steps: np.ndarray
    rho: np.ndarray
    back: np.ndarray | None = None
    seed: int = 0
    index: int = 0

    @property
    def n(self) -> int:
        return len(self.steps)

    @property
    def backend(self):
        return self.model.mu.backend

    def increment(self, i: int):
        """``g_i`` for ``1 <= i <= n``."""
        return self.model.mu.support[int(self.steps[i - 1])]

    def counts(self) -> np.ndarray:
        """``B(k)``: number of Schottky slots among blocks ``0..k``."""
        return np.cumsum(self.rho)

    def theta(self, i: int) -> int:
        """Block index of the ``i``-th Schottky slot (``i >= 1``)."""
        hits = np.flatnonzero(self.rho)
        if not 1 <= i <= len(hits):
            raise UsageError(f"path has {len(hits)} Schottky slots, asked for slot {i}")
        return int(hits[i - 1])

    @cached_property
    def slot_starts(self) -> tuple:
        """``4 M0 theta(i)`` for every Schottky slot, in order."""
        return tuple(int(j) * self.model.block for j in np.flatnonzero(self.rho))

    def slot_choices(self, i: int) -> tuple:
        T = self.slot_starts[i - 1]
        atom = [self.model.mu.support[int(x)] for x in self.steps[T:T + self.model.block]]
        return self.model.split(atom)

    def completed_slots(self, n: int) -> int:
        """Schottky slots whose block ends by step ``n``."""
        return bisect.bisect_right(self.slot_starts, n - self.model.block)

    @cached_property
    def positions(self) -> list:
        """``w_0 o, ..., w_n o``."""
        b = self.backend
        out = [b.basepoint]
        g = b.identity
        for i in range(1, self.n + 1):
            g = b.compose(g, self.increment(i))
            out.append(b.act(g, b.basepoint))
        return out

    @cached_property
    def backward_positions(self) -> list:
        """``w_0 o, w_{-1} o, ...`` driven by ``g_0^{-1}, g_{-1}^{-1}, ...``."""
        if self.back is None:
            raise UsageError("this path was sampled without backward increments")
        b = self.backend
        out = [b.basepoint]
        g = b.identity
        for x in self.back:
            g = b.compose(g, b.inverse(self.model.mu.support[int(x)]))
            out.append(b.act(g, b.basepoint))
        return out

    @cached_property
    def lengths(self) -> np.ndarray:
        """``d(o, w_k o)`` for ``k = 0..n`` (tree backends)."""
        return tree_lengths(self.model.mu, self.steps[None, :])[0]

    def decomposition(self, n: int | None = None) -> tuple[list, list]:
        """``(w_0, ..., w_{m-1}, w^{(n)})`` and the Schottky choices of the first ``m`` slots."""
        n = self.n if n is None else n
        m = self.completed_slots(n)
        ws, choices = [], []
        cursor = 0
        for i in range(1, m + 1):
            T = self.slot_starts[i - 1]
            ws.append(self._product(cursor, T))
            choices.append(self.slot_choices(i))
            cursor = T + self.model.block
        ws.append(self._product(cursor, n))
        return ws, choices

    def _product(self, lo: int, hi: int):
        b = self.backend
        g = b.identity
        for i in range(lo + 1, hi + 1):
            g = b.compose(g, self.increment(i))
        return g

    def trajectory(self, n: int | None = None) -> Trajectory:
        ws, choices = self.decomposition(n)
        e = self.backend.identity
        return Trajectory(self.model.S, ws, (e,) * len(choices), choices)

    def to_json(self) -> str:
        desc = self.backend.describe_isometry
        sup = self.model.mu.support
        row = {
            "seed": self.seed, "index": self.index,
            "increments": [desc(sup[int(x)]) for x in self.steps],
            "rho": [int(r) for r in self.rho],
        }
        if self.back is not None:
            row["backward"] = [desc(sup[int(x)]) for x in self.back]
        return json.dumps(row, sort_keys=True)


def sample_path(model: DecomposedModel, n: int, seed: int, index: int = 0, backward: int = 0) -> SamplePath:
    """Deterministic in ``(seed, index)``; ``backward`` backward increments are also drawn."""
    if n < 1:
        raise UsageError("path length must be at least 1")
    rng = path_rng(seed, index)
    steps = model.mu.sample_indices(rng, n)
    rho = schottky_coins(model, steps, rng)
    back = model.mu.sample_indices(path_rng(seed, index, 1), backward) if backward else None
    return SamplePath(model, steps, rho, back, seed, index)


def schottky_coins(model: DecomposedModel, steps: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    B, M = model.block, model.M0
    blocks = len(steps) // B
    u = rng.random(blocks)
    if not blocks:
        return np.zeros(0, dtype=np.int8)
    sup = model.mu.support
    base = len(sup)
    place = base ** np.arange(M, dtype=np.int64)
    keys = steps[:blocks * B].astype(np.int64).reshape(blocks * 4, M) @ place
    s_keys = np.array([sum(sup.index(g) * base ** j for j, g in enumerate(e)) for e in model.codes], dtype=np.int64)
    s_index = np.array(list(model.codes.values()), dtype=np.int64)
    order = np.argsort(s_keys)
    pos = np.clip(np.searchsorted(s_keys[order], keys), 0, len(order) - 1)
    hit = s_keys[order][pos] == keys
    which = s_index[order][pos].reshape(blocks, 4)
    inside = hit.reshape(blocks, 4).all(axis=1)
    # chance alpha mu_S^4(X) / mu^{4M0}(X) for a block X in S^4
    per = np.array([float(model.mu.sequence_weight(e.entries)) for e in model.S], dtype=float)
    prob = float(model.alpha) / len(model.S) ** 4 / np.prod(per[which], axis=1)
    return (inside & (u < prob)).astype(np.int8)


# ----------------------------------------------------------------------------
# vectorized word lengths on the tree


def letter_codes(mu: StepMeasure) -> np.ndarray:
    """Signed letter code per support element (0 for the identity)."""
    b = mu.backend
    if not isinstance(b, FreeGroupTree):
        raise UsageError("letter codes need the free-group tree")
    codes = []
    for g in mu.support:
        if g == "":
            codes.append(0)
        elif len(g) == 1:
            k = b.letters.index(g.lower()) + 1
            codes.append(k if g.islower() else -k)
        else:
            raise UsageError("vectorized walks need single-letter support elements")
    return np.array(codes, dtype=np.int8)


def _word_codes(backend: FreeGroupTree, x: str) -> np.ndarray:
    return np.array([(backend.letters.index(ch.lower()) + 1) * (1 if ch.islower() else -1) for ch in x], dtype=np.int8)


def tree_lengths(mu: StepMeasure, steps: np.ndarray, at: Sequence[int] | None = None) -> np.ndarray:
    """Word lengths ``|w_k|`` for a batch of increment rows, at every ``k`` or at checkpoints ``at``."""
    codes = letter_codes(mu)[steps.astype(np.intp)]
    P, n = codes.shape
    at = list(range(n + 1)) if at is None else sorted(at)
    if at and not 0 <= at[0] <= at[-1] <= n:
        raise UsageError(f"checkpoints must lie in [0, {n}]")
    slot = {k: j for j, k in enumerate(at)}
    stack = np.zeros((P, n + 1), dtype=np.int8)
    length = np.zeros(P, dtype=np.int64)
    out = np.zeros((P, len(at)), dtype=np.int64)
    rows = np.arange(P)
    for t in range(n):
        c = codes[:, t]
        top = stack[rows, np.maximum(length - 1, 0)]
        cancel = (length > 0) & (top == -c) & (c != 0)
        grow = (c != 0) & ~cancel
        stack[rows[grow], length[grow]] = c[grow]
        length = length + grow - cancel
        if t + 1 in slot:
            out[:, slot[t + 1]] = length
    return out


def sup_common_prefix(mu: StepMeasure, steps: np.ndarray, xs: Sequence[str], at: Sequence[int]) -> np.ndarray:
    """``max_{k <= m} (x, w_k o)_o`` for each row, each ``x`` and each checkpoint ``m`` in ``at``.

    The Gromov product at ``o`` of two vertices is their common prefix, which
    only grows when the walk pushes the next letter of ``x`` on top of a
    matching prefix and shrinks when that prefix is popped.
    """
    b = mu.backend
    codes = letter_codes(mu)[steps.astype(np.intp)]
    P, n = codes.shape
    at = sorted(at)
    slot = {k: j for j, k in enumerate(at)}
    targets = [np.append(_word_codes(b, x), 0).astype(np.int8) for x in xs]
    sizes = [len(x) for x in xs]
    stack = np.zeros((P, n + 1), dtype=np.int8)
    length = np.zeros(P, dtype=np.int64)
    cps = [np.zeros(P, dtype=np.int64) for _ in xs]
    best = [np.zeros(P, dtype=np.int64) for _ in xs]
    out = np.zeros((P, len(xs), len(at)), dtype=np.int64)
    rows = np.arange(P)
    for t in range(n):
        c = codes[:, t]
        top = stack[rows, np.maximum(length - 1, 0)]
        cancel = (length > 0) & (top == -c) & (c != 0)
        grow = (c != 0) & ~cancel
        stack[rows[grow], length[grow]] = c[grow]
        new_len = length + grow - cancel
        for q, (tx, lx) in enumerate(zip(targets, sizes)):
            cp = cps[q]
            extend = grow & (cp == length) & (length < lx) & (tx[np.minimum(length, lx)] == c)
            cp = np.where(cancel, np.minimum(cp, new_len), cp + extend)
            cps[q] = cp
            np.maximum(best[q], cp, out=best[q])
        length = new_len
        if t + 1 in slot:
            for q in range(len(xs)):
                out[:, q, slot[t + 1]] = best[q]
    return out


# ----------------------------------------------------------------------------
# alignment along a tree walk via the trie of visited vertices


class WalkTrie:
    """Vertices visited by a nearest-neighbour walk on the free-group tree.

    ``node[k]`` is the vertex ``w_k o``; every geodesic between visited
    vertices runs through visited vertices, so distances reduce to
    lowest common ancestors in this trie (rooted at ``o``).
    """

    def __init__(self, codes: np.ndarray, rank: int = 2):
        codes = np.ascontiguousarray(codes, dtype=np.int8)
        self.rank = rank
        self.node, self.parent, self.letter, self.depth, self.child = _kernels.build_trie(codes, rank)
        self.up = _kernels.lifting_table(self.parent, self.depth)
        self._node = self.node.tolist()
        self._depth = self.depth.tolist()

    @classmethod
    def of_path(cls, path: "SamplePath", upto: int | None = None) -> "WalkTrie":
        upto = path.n if upto is None else upto
        mu = path.model.mu
        return cls(letter_codes(mu)[path.steps[:upto].astype(np.intp)], mu.backend.rank)

    @classmethod
    def of_pair(cls, path: "SamplePath", forward: int | None = None, backward: int | None = None) -> "WalkTrie":
        """Forward and backward positions in one trie.

        Forward time ``k`` is stored at index ``k`` and backward time ``k'`` at
        ``forward + 1 + k'``, both measured from the root ``o``.
        """
        if path.back is None:
            raise UsageError("this path was sampled without backward increments")
        forward = path.n if forward is None else forward
        backward = len(path.back) if backward is None else backward
        mu = path.model.mu
        table = letter_codes(mu)
        fwd = table[path.steps[:forward].astype(np.intp)]
        # backward positions are driven by the inverses of the drawn increments
        bwd = -table[path.back[:backward].astype(np.intp)]
        codes = np.concatenate([fwd, np.array([_kernels.RESET], dtype=np.int8), bwd]).astype(np.int8)
        trie = cls(codes, mu.backend.rank)
        trie.back_offset = forward + 1
        return trie

    def lca(self, u: int, v: int) -> int:
        return int(_kernels.lca(self.up, self.depth, u, v))

    def point_distances(self, backend: FreeGroupTree, x: str, times: np.ndarray) -> np.ndarray:
        """``d(x, w_k o)`` for an arbitrary vertex ``x``.

        Below the deepest visited vertex ``c`` on the way to ``x`` nothing was
        visited, so ``x`` meets every visited vertex where ``c`` does.
        """
        c, depth = _kernels.locate(self.child, _word_codes(backend, x), self.rank)
        nodes = self.node[times]
        meet = self.depth[nodes] + depth - _kernels.distances_from(self.up, self.depth, c, nodes)
        return len(x) + self.depth[nodes] - meet

    def dist(self, s: int, t: int) -> int:
        u, v = self._node[s], self._node[t]
        return self._depth[u] + self._depth[v] - 2 * self._depth[_kernels.lca(self.up, self.depth, u, v)]

    def node_dist(self, u: int, v: int) -> int:
        """Distance between two trie vertices."""
        return self._depth[u] + self._depth[v] - 2 * self._depth[_kernels.lca(self.up, self.depth, u, v)]

    def gp(self, a: int, b: int, base: int) -> float:
        return (self.dist(base, a) + self.dist(base, b) - self.dist(a, b)) / 2

    def dist_to_many(self, s: int, ks: np.ndarray) -> np.ndarray:
        return _kernels.distances_from(self.up, self.depth, self.node[s], self.node[ks])

    def distance_to_subtree(self, marked: np.ndarray) -> np.ndarray:
        """Per vertex, the distance to a connected marked set containing the root."""
        return _kernels.subtree_distance(self.parent, marked)

    def mark_geodesic(self, marked: np.ndarray, u: int, v: int) -> None:
        _kernels.mark_path(self.up, self.depth, self.parent, marked, u, v)


class WalkTrajectory:
    """Keyed alignment oracle for the trajectory of a tree walk.

    Each marked point and axis is a position or a geodesic stretch of the
    walk itself, so alignments reduce to Gromov products of walk times.
    """

    def __init__(self, geometry: WalkTrie, starts: Sequence[int], M0: int, end: int):
        self.g = geometry
        self.T = tuple(starts)
        self.M0 = M0
        self.end = end
        self._cache: dict = {}
        self._lengths: dict = {}

    @property
    def n(self) -> int:
        return len(self.T)

    def time(self, key) -> int:
        if key == ORIGIN:
            return 0
        _, sign, i, t = key
        if sign == "-" and t == 2 and i == self.n + 1:
            return self.end
        T, M = self.T[i - 1], self.M0
        return T + ({2: 0, 1: M, 0: 2 * M}[t] if sign == "-" else {0: 2 * M, 1: 3 * M, 2: 4 * M}[t])

    def span(self, key) -> tuple[int, int]:
        _, kind, i = key
        s = self.T[i - 1] + "abcd".index(kind) * self.M0
        return s, s + self.M0

    def spreads(self, left, right) -> tuple[float, float]:
        g = self.g
        if left[0] == "ax":
            s1, e1 = self.span(left)
            xs = self.span(right) if right[0] == "ax" else (self.time(right),)
            first = max(g.gp(s1, x, e1) for x in xs)
        else:
            first = 0.0
        if right[0] == "ax":
            s2, e2 = self.span(right)
            xs = self.span(left) if left[0] == "ax" else (self.time(left),)
            second = max(g.gp(e2, x, s2) for x in xs)
        else:
            second = 0.0
        return first, second

    def aligned(self, left, right, C: float) -> bool:
        key = (left, right, C)
        hit = self._cache.get(key)
        if hit is None:
            hit = self._short_axes(left, right, C) or self._compute(left, right, C)
            self._cache[key] = hit
        return hit

    def _compute(self, left, right, C: float) -> bool:
        a, b = self.spreads(left, right)
        return a < C and b < C

    def _short_axes(self, left, right, C: float) -> bool:
        """A spread measured along an axis never exceeds the axis length."""
        for item in (left, right):
            if item[0] == "ax":
                size = self._lengths.get(item)
                if size is None:
                    size = self._lengths[item] = self.g.dist(*self.span(item))
                if not size < C:
                    return False
        return True

    def with_end(self, end: int, n: int | None = None) -> "WalkTrajectory":
        """Same geometry, first ``n`` slots, far endpoint at walk time ``end``."""
        n = self.n if n is None else n
        out = WalkTrajectory(self.g, self.T[:n], self.M0, end)
        # verdicts not involving the far endpoint carry over
        out._cache = {k: v for k, v in self._cache.items() if ("y", "-", self.n + 1, 2) not in k[:2]}
        return out


@dataclass
class PathPivots:
    """Pivotal sets ``P^{(k)}`` of one tree walk for every step ``k`` up to a horizon.

    Within the window of steps after the ``m``-th Schottky slot completes and
    before the next one does, ``P^{(k)}`` is the outcome of step ``m`` with
    far endpoint ``w_k o``: either ``P_{m-1} + {m}`` (``accept[k]``) or the
    cut ``P_{m-1} ∩ [1, cut[k]]`` (empty when ``cut[k] = 0``).
    """

    starts: tuple
    horizon: int
    window: np.ndarray
    accept: np.ndarray
    cut: np.ndarray
    before: list
    block: int

    def slot_set(self, k: int) -> tuple:
        m = int(self.window[k])
        if m == 0:
            return ()
        prev = self.before[m]
        if self.accept[k]:
            return prev + (m,)
        c = int(self.cut[k])
        return tuple(p for p in prev if p <= c)

    def pivotal_times(self, k: int) -> tuple:
        """Step indices ``4 M0 theta(i)`` of the pivotal slots at step ``k``."""
        return tuple(self.starts[i - 1] for i in self.slot_set(k))

    def sizes(self) -> np.ndarray:
        out = np.zeros(self.horizon + 1, dtype=np.int64)
        for m in range(1, len(self.before)):
            sel = self.window == m
            if not sel.any():
                continue
            prev = np.array(self.before[m], dtype=np.int64)
            counts = np.searchsorted(prev, self.cut[sel], side="right")
            out[sel] = np.where(self.accept[sel], len(prev) + 1, counts)
        return out

    def eventual(self, n: int, horizon: int | None = None) -> tuple[tuple, str]:
        """``∩_{n <= k <= horizon} P^{(k)}`` as step indices, with a certification label.

        Every ``P^{(k)}`` with ``k >= n`` meets ``P^{(n)}`` in an initial segment,
        so the intersection is the shortest such segment.  The result is
        ``"certified"`` when the second half of the horizon removes nothing
        while every set there stays strictly larger than the frozen prefix,
        ``"horizon-limited"`` otherwise.
        """
        H = self.horizon if horizon is None else horizon
        if not n <= H <= self.horizon:
            raise UsageError(f"need n <= horizon <= {self.horizon}")
        X = self.slot_set(n)
        keep, mid_keep = len(X), len(X)
        mid = (n + H) // 2
        ks = np.arange(n, H + 1)
        win = self.window[n:H + 1]
        late = int(self.sizes()[mid:H + 1].min())
        for m in np.unique(win):
            sel = win == m
            k_sel = ks[sel]
            if m == 0:
                common = np.zeros(len(k_sel), dtype=np.int64)
            else:
                prev = set(self.before[m])
                Y = np.array([x for x in X if x in prev], dtype=np.int64)
                full = len(Y) + (1 if m in X else 0)
                counts = np.searchsorted(Y, self.cut[k_sel], side="right")
                common = np.where(self.accept[k_sel], full, counts)
            keep = min(keep, int(common.min()))
            early = k_sel <= mid
            if early.any():
                mid_keep = min(mid_keep, int(common[early].min()))
        times = tuple(self.starts[i - 1] for i in X[:keep])
        certified = keep == mid_keep and keep < late
        return times, "certified" if certified else "horizon-limited"


def path_pivots(path: SamplePath, ledger: ConstantLedger, horizon: int | None = None,
                trie: WalkTrie | None = None) -> PathPivots:
    """All ``P^{(k)}``, ``k <= horizon``, on a nearest-neighbour tree walk."""
    H = path.n if horizon is None else horizon
    geo = WalkTrie.of_path(path, H) if trie is None else trie
    block, M0 = path.model.block, path.model.M0
    m_total = path.completed_slots(H)
    starts = path.slot_starts[:m_total]
    K0, D0 = ledger.K0, ledger.D0
    window = np.zeros(H + 1, dtype=np.int64)
    accept = np.zeros(H + 1, dtype=bool)
    cut = np.zeros(H + 1, dtype=np.int64)
    before = [()]
    state = PivotalState.initial()
    base = WalkTrajectory(geo, starts, M0, H)
    reach: dict[int, int] = {}
    for m in range(1, m_total + 1):
        lo = starts[m - 1] + block
        hi = starts[m] + block - 1 if m < m_total else H
        ks = np.arange(lo, hi + 1)
        window[lo:hi + 1] = m
        P = state.pivots
        before.append(P)
        # reach[j]: largest first element of a D0-aligned chain ending in (alpha_j, beta_j)
        if P:
            j = P[-1]
            if j not in reach:
                reach[j] = _reach(base, P, j, D0, reach)
        fixed = (base.aligned(state.z_key, ("ax", "a", m), K0)
                 and base.aligned(("ax", "b", m), ("y", "+", m, 1), K0)
                 and base.aligned(("y", "-", m, 0), ("ax", "c", m), K0))
        Tm = starts[m - 1]
        if fixed:
            accept[lo:hi + 1] = _end_spread(geo, Tm + 3 * M0, Tm + 4 * M0, ks) < K0
        pending = ~accept[lo:hi + 1]
        result = np.zeros(len(ks), dtype=np.int64)
        for j in sorted((j for j in P if reach.get(j, 0) > 0), key=lambda j: -reach[j]):
            if not pending.any():
                break
            ok = _end_spread(geo, starts[j - 1] + M0, starts[j - 1] + 2 * M0, ks) < K0
            hit = pending & ok
            result[hit] = reach[j]
            pending &= ~ok
        cut[lo:hi + 1] = result
        if m < m_total:
            view = WalkTrajectory(geo, starts[:m], M0, starts[m])
            view._cache, view._lengths = base._cache, base._lengths
            state = pivot_step(state, _EndpointView(view, m), m, ledger)
    return PathPivots(tuple(starts), H, window, accept, cut, before, block)


class _EndpointView:
    """Shares a cache across steps while keying the far endpoint by its walk time."""

    def __init__(self, traj: WalkTrajectory, m: int):
        self.traj = traj
        self.m = m

    def aligned(self, left, right, C):
        end = ("y", "-", self.m + 1, 2)
        t = self.traj
        if left == end or right == end:
            lk = ("t", t.end) if left == end else left
            rk = ("t", t.end) if right == end else right
            key = (lk, rk, C)
            hit = t._cache.get(key)
            if hit is None:
                hit = t._short_axes(left, right, C) or t._compute(left, right, C)
                t._cache[key] = hit
            return hit
        return t.aligned(left, right, C)


def _end_spread(geo: WalkTrie, s: int, e: int, ks: np.ndarray) -> np.ndarray:
    """``(w_s o, w_k o)_{w_e o}`` for times ``k >= e`` in ``ks``."""
    de = geo.dist_to_many(e, ks)
    ds = geo.dist_to_many(s, ks)
    return (geo.dist(s, e) + de - ds) / 2


def _reach(traj, P: Sequence[int], j: int, D0: float, memo: dict) -> int:
    """Largest ``i(1)`` with a D0-aligned chain from ``delta_{i(1)}`` through ``(alpha_j, beta_j)``."""
    if not traj.aligned(("ax", "a", j), ("ax", "b", j), D0):
        return 0
    best = 0
    # every candidate through u is at most u, so scan downward and stop early
    for u in reversed([p for p in P if p < j]):
        if u <= best:
            break
        if traj.aligned(("ax", "d", u), ("ax", "a", j), D0):
            return u
        r = memo.get(u)
        if r is None:
            r = memo[u] = _reach(traj, [p for p in P if p < u], u, D0, memo)
        if r > best and traj.aligned(("ax", "b", u), ("ax", "a", j), D0):
            best = r
    return best


def pivotal_times_of_path(path: SamplePath, n: int, ledger: ConstantLedger) -> tuple:
    """``{4 M0 theta(i) : i in P^{(n)}}`` by running the state machine on the path's trajectory."""
    if not 1 <= n <= path.n:
        raise UsageError(f"n must lie in [1, {path.n}]")
    traj = path.trajectory(n)
    state = PivotalState.initial()
    for k in range(1, traj.n + 1):
        state = pivot_step(state, traj, k, ledger)
    return tuple(path.slot_starts[i - 1] for i in state.pivots)


def eventual_pivotal_times(path: SamplePath, n: int, horizon: int, ledger: ConstantLedger) -> tuple[tuple, str]:
    if horizon < n:
        raise UsageError("horizon must be at least n")
    if horizon > path.n:
        raise UsageError(f"horizon {horizon} exceeds the path length {path.n}")
    return path_pivots(path, ledger, horizon).eventual(n, horizon)
