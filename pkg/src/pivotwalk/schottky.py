"""Axes of isometry sequences and Schottky sets built from two isometries."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .contraction import (
    ConstantLedger,
    are_independent,
    is_contracting_axis,
    translation_length,
)
from .errors import ConstructionError, PreconditionError, UsageError
from .space import DiscretePath, FreeGroupTree, SpaceBackend


@dataclass(frozen=True)
class IsometrySequence:
    """A finite sequence of isometries with its cached product."""

    entries: tuple
    product: object

    @classmethod
    def of(cls, backend: SpaceBackend, entries: Sequence) -> "IsometrySequence":
        entries = tuple(entries)
        if not entries:
            raise UsageError("an isometry sequence needs at least one entry")
        prod = backend.identity
        for g in entries:
            prod = backend.compose(prod, g)
        return cls(entries, prod)

    def __len__(self) -> int:
        return len(self.entries)

    def concat(self, backend: SpaceBackend, other: "IsometrySequence") -> "IsometrySequence":
        return IsometrySequence.of(backend, self.entries + other.entries)

    def repeat(self, backend: SpaceBackend, n: int) -> "IsometrySequence":
        return IsometrySequence.of(backend, self.entries * n)


def axis_points(backend: SpaceBackend, s: IsometrySequence, lo: int, hi: int) -> list:
    """Orbit points ``x_lo .. x_hi`` with ``x_{nk+i} = P^n phi_1 ... phi_i o``."""
    k = len(s)
    o = backend.basepoint
    prefixes = [backend.identity]
    for g in s.entries[:-1]:
        prefixes.append(backend.compose(prefixes[-1], g))
    out = []
    for j in range(lo, hi + 1):
        n, i = divmod(j, k)
        g = backend.compose(backend.power(s.product, n), prefixes[i])
        out.append(backend.act(g, o))
    return out


def build_axis(backend: SpaceBackend, s: IsometrySequence, m, window: int = 4) -> DiscretePath:
    """The axis of ``s`` traversed ``m`` times.

    For ``m < 0`` the path walks backwards from ``x_0``: position ``j`` holds
    ``x_{-j}``, so ``begin`` is always the basepoint.  ``m = +-inf`` gives the
    bi-infinite axis truncated to ``window`` periods on each side, indexed by
    its natural indices.
    """
    k = len(s)
    if m == 0:
        raise UsageError("the axis exponent m must be nonzero")
    if isinstance(m, float) and math.isinf(m):
        pts = axis_points(backend, s, -window * k, window * k)
        if m < 0:
            pts = pts[::-1]
        return DiscretePath(tuple(pts), -window * k, backend.is_geodesic_path(pts))
    m = int(m)
    if m > 0:
        pts = axis_points(backend, s, 0, m * k)
    else:
        pts = axis_points(backend, s, m * k, 0)[::-1]
    return DiscretePath(tuple(pts), 0, backend.is_geodesic_path(pts))


@dataclass
class SchottkyVerdict:
    passed: bool
    K: float
    window: int
    probe_count: int
    counterexamples: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "K": self.K,
            "window": self.window,
            "probe_count": self.probe_count,
            "counterexamples": [list(map(str, c)) for c in self.counterexamples[:20]],
        }


@dataclass
class SchottkySet:
    """Equal-length isometry sequences with their contraction constant."""

    backend: SpaceBackend
    elements: tuple
    K0: float
    provenance: dict = field(default_factory=dict)
    report: SchottkyVerdict | None = None

    def __post_init__(self):
        self.elements = tuple(self.elements)
        if not self.elements:
            raise UsageError("a Schottky set needs at least one element")
        lengths = {len(s) for s in self.elements}
        if len(lengths) != 1:
            raise UsageError(f"Schottky sequences must share one length, got {sorted(lengths)}")

    @property
    def M0(self) -> int:
        return len(self.elements[0])

    @property
    def N0(self) -> int:
        return len(self.elements)

    def __len__(self) -> int:
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)

    def index(self, s: IsometrySequence) -> int:
        return self.elements.index(s)

    def self_concatenate(self, n: int) -> "SchottkySet":
        if n < 1:
            raise UsageError("self-concatenation count must be positive")
        elems = tuple(s.repeat(self.backend, n) for s in self.elements)
        prov = dict(self.provenance, self_concatenation=n * self.provenance.get("self_concatenation", 1))
        return SchottkySet(self.backend, elems, self.K0, prov, None)

    def to_dict(self) -> dict:
        b = self.backend
        return {
            "backend": b.name,
            "M0": self.M0,
            "N0": self.N0,
            "K0": self.K0,
            "elements": [[b.describe_isometry(g) for g in s.entries] for s in self.elements],
            "provenance": self.provenance,
            "verification": self.report.to_dict() if self.report else None,
        }

    @classmethod
    def from_dict(cls, backend: SpaceBackend, data: dict) -> "SchottkySet":
        elems = [IsometrySequence.of(backend, [backend.parse_isometry(g) for g in row]) for row in data["elements"]]
        return cls(backend, elems, data["K0"], dict(data.get("provenance", {})))


def point_axis_spreads(backend: SpaceBackend, S: Sequence[IsometrySequence], probes: Sequence,
                       window: int) -> tuple[np.ndarray, list[int]]:
    """``diam(o ∪ π(x))`` for each probe, element and exponent ``0 < |n| <= window``.

    Returns an array of shape ``(len(probes), len(S), 2 * window)`` and the
    exponent list labelling the last axis.
    """
    exps = [n for n in range(-window, window + 1) if n]
    out = np.empty((len(probes), len(S), len(exps)))
    for si, s in enumerate(S):
        for ni, n in enumerate(exps):
            axis = build_axis(backend, s, n)
            if isinstance(backend, FreeGroupTree) and axis.geodesic and len(axis) > 1:
                # on a tree geodesic from o the spread is the Gromov product
                # (end, x)_o, clipped to the segment
                d = backend.distance_matrix([axis.begin, axis.end], probes)
                length = backend._distance(axis.begin, axis.end)
                proj = (length + d[0] - d[1]) / 2
                out[:, si, ni] = np.clip(proj, 0, length)
            else:
                out[:, si, ni] = [backend.projection_spread(axis, x, axis.begin) for x in probes]
    return out, exps


def verify_schottky(backend: SpaceBackend, S: Sequence[IsometrySequence], K: float, probes: Sequence,
                    window: int = 4, check_contraction: bool = True, max_counterexamples: int = 50,
                    spreads: np.ndarray | None = None) -> SchottkyVerdict:
    """Check the three Schottky conditions over ``|n| <= window`` and the probe set."""
    probes = list(probes)
    if not probes:
        raise UsageError("Schottky verification needs probes")
    S = list(S)
    bad: list = []
    if check_contraction:
        for idx, s in enumerate(S):
            for n in range(-window, window + 1):
                if n and not is_contracting_axis(backend, build_axis(backend, s, n), K, probes):
                    bad.append(("contracting", idx, n))
    if spreads is None:
        spreads, exps = point_axis_spreads(backend, S, probes, window)
    else:
        exps = [n for n in range(-window, window + 1) if n]
    exps = np.array(exps)
    mis = spreads >= K
    mis_pos = mis[:, :, exps > 0].any(axis=2)
    mis_neg = mis[:, :, exps < 0].any(axis=2)
    count = (mis_pos | mis_neg).sum(axis=1)
    for p in np.nonzero(count > 1)[0][:max_counterexamples]:
        bad.append(("at-most-one", probes[p], tuple(np.nonzero(mis_pos[p] | mis_neg[p])[0].tolist())))
    both = mis_pos & mis_neg
    for p, idx in zip(*np.nonzero(both)):
        if len(bad) >= max_counterexamples:
            break
        bad.append(("one-sided", probes[p], int(idx)))
    return SchottkyVerdict(not bad, K, window, len(probes), bad)


def concatenation_patterns(M: int, count: int) -> list[tuple[int, ...]]:
    """The first ``count`` words in {0, 1}^M, lexicographically (0 = alpha)."""
    return list(itertools.islice(itertools.product((0, 1), repeat=M), count))


def construct_schottky(backend: SpaceBackend, a, b, target_size: int, ledger: ConstantLedger | None = None,
                       probes: Sequence | None = None, block_length: int | None = None, window: int = 4,
                       K_candidates: Sequence[float] | None = None, retries: int = 3,
                       independence_radius: int = 6) -> SchottkySet:
    """Schottky set of ``target_size`` concatenations of powers of ``a`` and ``b``."""
    if target_size < 1:
        raise UsageError("target size must be positive")
    for g in (a, b):
        backend.check_isometry(g)
    if probes is None:
        from .calibration import default_probes
        probes = default_probes(backend)
    probes = list(probes)
    if translation_length(backend, a, 16) <= backend.eps or translation_length(backend, b, 16) <= backend.eps:
        raise ConstructionError("both generators must have positive translation length")
    if not are_independent(backend, a, b, independence_radius):
        raise ConstructionError("generators are not independent")
    candidates = list(K_candidates or range(1, 41))
    for g in (a, b):
        step = translation_length(backend, g, 16)
        orbit = IsometrySequence.of(backend, [g])
        # a segment shorter than K cannot witness a failure of K-contraction
        if not any(is_contracting_axis(backend, build_axis(backend, orbit, math.inf, max(window, math.ceil(K / step) + 1)),
                                       K, probes) for K in candidates):
            raise ConstructionError(f"orbit of {backend.describe_isometry(g)} is not contracting for any K <= {max(candidates)}")
    N = block_length or 1
    if ledger is not None:
        while N <= max(ledger.L2, ledger.L3):
            N *= 2
    M = max(1, math.ceil(math.log2(target_size)))
    last: SchottkyVerdict | None = None
    for _ in range(retries + 1):
        alpha = IsometrySequence.of(backend, [a] * N)
        beta = IsometrySequence.of(backend, [b] * N)
        elems = []
        for pattern in concatenation_patterns(M, target_size):
            entries = ()
            for bit in pattern:
                entries += (beta if bit else alpha).entries
            elems.append(IsometrySequence.of(backend, entries))
        spreads, _ = point_axis_spreads(backend, elems, probes, window)
        for K in candidates:
            verdict = verify_schottky(backend, elems, K, probes, window, spreads=spreads)
            last = verdict
            if verdict.passed:
                prov = {"generators": [backend.describe_isometry(a), backend.describe_isometry(b)],
                        "block_length": N, "depth": M}
                return SchottkySet(backend, elems, K, prov, verdict)
        N *= 2
    raise ConstructionError("Schottky verification failed after retries", last.counterexamples if last else [])


def check_repulsion(S: SchottkySet, K: float | None = None) -> bool:
    """Both repulsion inequalities for every ordered pair of elements."""
    backend = S.backend
    K = S.K0 if K is None else K
    if not S.M0 > 2 * K * K:
        raise PreconditionError(f"repulsion needs M0 > 2 K^2, got M0={S.M0}, K={K}")
    o = backend.basepoint
    forward = [build_axis(backend, s, 1) for s in S]
    backward = [build_axis(backend, s, -1) for s in S]
    for i, s in enumerate(S):
        head = backend.act(s.product, o)
        for j, t in enumerate(S):
            tail = backend.act(backend.inverse(t.product), o)
            if not backend.projection_spread(backward[j], head, o) < K:
                return False
            if not backend.projection_spread(forward[i], tail, o) < K:
                return False
    return True
