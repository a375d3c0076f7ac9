"""Contraction, alignment and witnessing predicates.

Everything here is a pure function of a backend plus finite inputs.
Statements that quantify over the whole space are checked against a
finite probe corpus supplied by the caller.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConstantLedgerViolation, UsageError
from .space import DiscretePath, SpaceBackend

LEDGER_FIELDS = ("K0", "K1", "K2", "K3", "D0", "D1", "D2", "E0", "L1", "L2", "L3", "M0", "N0")


@dataclass(frozen=True)
class ConstantLedger:
    """Concrete values for the constants the pivotal construction depends on."""

    K0: float
    K1: float = 0.0
    K2: float = 0.0
    K3: float = 0.0
    D0: float = 0.0
    D1: float = 0.0
    D2: float = 0.0
    E0: float = 0.0
    L1: float = 0.0
    L2: float = 0.0
    L3: float = 0.0
    M0: int = 1
    N0: int = 1

    def length_requirement(self) -> float:
        """Lower bound that M0 should exceed for the long-axis lemmas."""
        return self.L1 + self.L2 + self.L3 + 20 * self.K0 * (self.K0 + self.E0)

    def problems(self) -> tuple[list[str], list[str]]:
        """Return ``(errors, warnings)`` describing violated ledger invariants."""
        errors, warnings = [], []
        for name in LEDGER_FIELDS:
            if getattr(self, name) < 0:
                errors.append(f"{name} must be nonnegative")
        if not self.D0 < self.D1 < self.D2:
            errors.append(f"alignment constants must increase: D0={self.D0}, D1={self.D1}, D2={self.D2}")
        for name in ("D0", "D1", "D2"):
            if not getattr(self, name) > self.K0:
                errors.append(f"{name}={getattr(self, name)} must exceed K0={self.K0}")
        need = self.length_requirement()
        if not self.M0 > need:
            warnings.append(
                f"M0 > L1 + L2 + L3 + 20*K0*(K0 + E0) fails: M0={self.M0}, right-hand side={need:g}"
            )
        if self.N0 <= 4:
            warnings.append(f"N0={self.N0} <= 4 makes the bound 1 - 4/N0 vacuous")
        return errors, warnings

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ConstantLedger":
        unknown = set(data) - set(LEDGER_FIELDS)
        if unknown:
            raise UsageError(f"unknown ledger keys: {sorted(unknown)}")
        return cls(**data)

    def replace(self, **changes) -> "ConstantLedger":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class AlignmentVerdict:
    """Outcome of aligning one consecutive pair ``(left, right)``."""

    aligned: bool
    left_spread: float
    right_spread: float
    C: float


def as_path(item) -> DiscretePath:
    """Points are treated as degenerate one-point paths."""
    return item if isinstance(item, DiscretePath) else DiscretePath((item,))


def pair_alignment(backend: SpaceBackend, left, right, C: float) -> AlignmentVerdict:
    kappa, eta = as_path(left), as_path(right)
    first = backend.projection_spread(kappa, eta, kappa.end) if len(kappa) > 1 else 0
    second = backend.projection_spread(eta, kappa, eta.begin) if len(eta) > 1 else 0
    return AlignmentVerdict(first < C and second < C, first, second, C)


def is_aligned(backend: SpaceBackend, items: Sequence, C: float) -> list[AlignmentVerdict]:
    """Verdicts for each consecutive pair of ``items``."""
    if len(items) < 2:
        raise UsageError("alignment needs at least two items")
    return [pair_alignment(backend, items[i], items[i + 1], C) for i in range(len(items) - 1)]


def all_aligned(backend: SpaceBackend, items: Sequence, C: float) -> bool:
    for i in range(len(items) - 1):
        if not pair_alignment(backend, items[i], items[i + 1], C).aligned:
            return False
    return True


def is_quasigeodesic(backend: SpaceBackend, path: DiscretePath, K: float) -> bool:
    pts = path.points
    if len(pts) == 1:
        return True
    d = backend.distance_matrix(pts, pts)
    idx = np.arange(len(pts))
    gap = np.abs(idx[:, None] - idx[None, :])
    tol = backend.eps
    with np.errstate(divide="ignore", invalid="ignore"):
        lower = np.where(gap > 0, gap / K, 0.0) if K == 0 else gap / K
    return bool(np.all(d >= lower - K - tol) and np.all(d <= K * gap + K + tol))


def is_contracting_axis(backend: SpaceBackend, path: DiscretePath, K: float, probes: Sequence) -> bool:
    """K-quasigeodesic check plus the contraction inequality over probe pairs."""
    probes = list(probes)
    if not probes:
        raise UsageError("contraction check needs a nonempty probe set")
    if not is_quasigeodesic(backend, path, K):
        return False
    return _contraction_holds(backend, path, K, probes)


def _contraction_holds(backend, path: DiscretePath, K: float, probes: list) -> bool:
    pts = path.points
    to_axis = backend.distance_matrix(probes, pts)
    d_axis = to_axis.min(axis=1)
    near = to_axis <= d_axis[:, None] + backend.eps
    groups: dict[bytes, list[int]] = {}
    for i in range(len(probes)):
        groups.setdefault(near[i].tobytes(), []).append(i)
    keys = list(groups)
    if len(keys) == 1:
        return True
    axis_d = backend.distance_matrix(pts, pts)
    masks = [near[groups[k][0]] for k in keys]
    spread = np.zeros((len(keys), len(keys)))
    for a in range(len(keys)):
        for b in range(a, len(keys)):
            joint = masks[a] | masks[b]
            spread[a, b] = spread[b, a] = axis_d[np.ix_(joint, joint)].max()
    bad_pairs = [(a, b) for a in range(len(keys)) for b in range(len(keys)) if spread[a, b] > K + backend.eps]
    if not bad_pairs:
        return True
    probe_d = backend.pairwise(probes)
    for a, b in bad_pairs:
        ia, ib = groups[keys[a]], groups[keys[b]]
        block = probe_d[np.ix_(ia, ib)]
        if np.any(block <= d_axis[ia][:, None] - K + backend.eps):
            return False
    return True


def has_bgip(backend: SpaceBackend, path: DiscretePath, K: float, test_geodesics: Sequence[DiscretePath]) -> bool:
    """Bounded geodesic image check against a list of test geodesics."""
    for eta in test_geodesics:
        if min(backend.distance_to_set(p, path) for p in eta.points) <= K + backend.eps:
            continue
        if backend.diameter(backend.project_path(path, eta)) > K + backend.eps:
            return False
    return True


def compute_j0(backend: SpaceBackend, p, axes: Sequence[DiscretePath], D: float) -> frozenset:
    """Indices ``j`` (1-based) whose left neighbours see ``p`` ahead and right ones behind."""
    n = len(axes)
    before = [pair_alignment(backend, axes[i], p, D).aligned for i in range(n)]
    after = [pair_alignment(backend, p, axes[i], D).aligned for i in range(n)]
    result = frozenset(
        j for j in range(1, n + 1)
        if all(before[i - 1] for i in range(1, j)) and all(after[i - 1] for i in range(j + 1, n + 1))
    )
    if not result or max(result) - min(result) > 1:
        raise ConstantLedgerViolation(
            f"J0 = {sorted(result)} is not one or two consecutive indices; D={D} is too small for these axes"
        )
    return result


def fellow_travel(backend: SpaceBackend, u: DiscretePath, v: DiscretePath, D: float) -> bool:
    """Endpoints within D and Hausdorff distance at most D."""
    tol = D + backend.eps
    if backend._distance(u.begin, v.begin) > tol or backend._distance(u.end, v.end) > tol:
        return False
    d = backend.distance_matrix(u.points, v.points)
    return bool(d.min(axis=1).max() <= tol and d.min(axis=0).max() <= tol)


def is_witnessed(backend: SpaceBackend, x, y, segments: Sequence, D: float, resolution: float | None = None) -> bool:
    """Whether ``[x, y]`` has ordered subsegments fellow-travelling each given segment."""
    line = backend.geodesic(x, y, resolution)
    pts = line.points
    along = [backend._distance(x, p) for p in pts]
    cursor = -math.inf
    for seg in segments:
        a, b = seg
        target = backend.geodesic(a, b, resolution)
        starts = [i for i, p in enumerate(pts) if backend._distance(a, p) <= D + backend.eps]
        ends = [j for j, p in enumerate(pts) if backend._distance(b, p) <= D + backend.eps]
        best = None
        for i in starts:
            if along[i] < cursor - backend.eps:
                continue
            for j in ends:
                if j < i or (best is not None and along[j] >= along[best]):
                    continue
                if fellow_travel(backend, DiscretePath(pts[i:j + 1]), target, D):
                    best = j
        if best is None:
            return False
        cursor = along[best]
    return True


def translation_length(backend: SpaceBackend, g, n_max: int) -> float:
    """Asymptotic translation length; exact on backends that know it."""
    if n_max < 1:
        raise UsageError("n_max must be at least 1")
    exact = backend.exact_translation_length(g)
    if exact is not None:
        return exact
    return orbit_growth_bound(backend, g, n_max)


def orbit_growth_bound(backend: SpaceBackend, g, n_max: int) -> float:
    """min over n <= n_max of d(o, g^n o) / n, an upper bound for the translation length."""
    o = backend.basepoint
    best, h = math.inf, backend.identity
    for n in range(1, n_max + 1):
        h = backend.compose(h, g)
        best = min(best, backend._distance(o, backend.act(h, o)) / n)
    return best


def orbit_separation(backend: SpaceBackend, g, h, r: int) -> float:
    """min d(g^n o, h^m o) over integer pairs with max(|n|, |m|) = r."""
    o = backend.basepoint
    gs = {n: backend.act(backend.power(g, n), o) for n in range(-r, r + 1)}
    hs = {m: backend.act(backend.power(h, m), o) for m in range(-r, r + 1)}
    best = math.inf
    for n in range(-r, r + 1):
        for m in range(-r, r + 1):
            if max(abs(n), abs(m)) == r:
                best = min(best, backend._distance(gs[n], hs[m]))
    return best


def are_independent(backend: SpaceBackend, g, h, radius: int, slope: float = 0.5, n_max: int = 16) -> bool:
    """Properness surrogate: orbit separation grows at least linearly up to ``radius``."""
    for x in (g, h):
        if translation_length(backend, x, n_max) <= backend.eps:
            raise UsageError("independence needs loxodromic isometries")
    return all(orbit_separation(backend, g, h, r) >= slope * r for r in range(1, radius + 1))


def concatenate(backend: SpaceBackend, axes: Sequence[DiscretePath]) -> DiscretePath:
    """Axes joined by geodesics between consecutive end and begin points."""
    pts = list(axes[0].points)
    for nxt in axes[1:]:
        bridge = backend.geodesic(pts[-1], nxt.begin).points
        pts.extend(bridge[1:])
        pts.extend(nxt.points[1:])
    return DiscretePath(tuple(pts))


def check_concatenation_quasigeodesic(backend: SpaceBackend, axes: Sequence[DiscretePath], C: float, K_prime: float) -> bool:
    """Quasigeodesic inequality for the concatenation of ``axes``."""
    if len(axes) == 1:
        return is_quasigeodesic(backend, axes[0], K_prime)
    return is_quasigeodesic(backend, concatenate(backend, axes), K_prime)
