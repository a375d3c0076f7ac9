"""Empirical values for the existence constants of the contraction lemmas.

The lemmas only promise that suitable constants exist.  Here each one is
measured as the smallest value that makes its defining property hold on
a finite corpus of axes and probe points, and the results are collected
into a :class:`ConstantLedger`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .contraction import ConstantLedger, all_aligned, is_witnessed, pair_alignment
from .schottky import SchottkySet, build_axis, verify_schottky
from .space import DiscretePath, FreeGroupTree, HyperbolicPlane, SpaceBackend, TreeTimesLine

DEFAULT_TREE_RADIUS = 6


def default_probes(backend: SpaceBackend, radius: int | None = None, seed: int = 0, count: int = 400) -> list:
    """Exhaustive ball on the tree, a height grid on tree x line, seeded samples otherwise."""
    if isinstance(backend, FreeGroupTree):
        return backend.ball(DEFAULT_TREE_RADIUS if radius is None else radius)
    if isinstance(backend, TreeTimesLine):
        # a flat strip defeats K-contraction only through probe pairs at
        # height above 2K whose tree parts are K + 1 apart, so the grid
        # reaches high and far along the generator axes
        words = backend.tree.ball(2 if radius is None else radius)
        for c in backend.tree.letters:
            for k in range(3, 49):
                words += [c * k, c.upper() * k]
        heights = [0.0] + [float(s * h) for h in (1, 2, 4, 8, 16, 32, 64, 96) for s in (1, -1)]
        return [(w, h) for w in words for h in heights]
    if isinstance(backend, HyperbolicPlane):
        rng = np.random.Generator(np.random.Philox(seed))
        r = 4.0 if radius is None else float(radius)
        # uniform in a hyperbolic disk of radius r around i via the disk model
        t = np.arccosh(1 + (np.cosh(r) - 1) * rng.random(count))
        theta = 2 * np.pi * rng.random(count)
        rho = np.tanh(t / 2)
        zs = rho * np.exp(1j * theta)
        return [complex(1j * (1 + z) / (1 - z)) for z in zs]
    return backend.ball(radius or 3)


# ----------------------------------------------------------------------------
# vectorized projection helpers


def projection_indices(backend: SpaceBackend, path: DiscretePath, probes: Sequence) -> tuple[np.ndarray, np.ndarray]:
    """Lowest and highest position (0-based) of the projection of each probe."""
    if isinstance(backend, FreeGroupTree) and path.geodesic and len(path) > 1:
        d = backend.distance_matrix([path.begin, path.end], probes)
        idx = ((len(path) - 1) + d[0] - d[1]) // 2
        idx = idx.astype(int)
        return idx, idx
    d = backend.distance_matrix(list(path.points), list(probes))
    best = d.min(axis=0)
    near = d <= best[None, :] + backend.eps
    pos = np.arange(len(path))[:, None]
    lo = np.where(near, pos, len(path)).min(axis=0)
    hi = np.where(near, pos, -1).max(axis=0)
    return lo, hi


def anchor_spreads(backend: SpaceBackend, path: DiscretePath, probes: Sequence, at_end: bool) -> np.ndarray:
    """``diam(anchor ∪ π(p))`` for every probe, anchor being an endpoint of ``path``.

    Exact on tree geodesics; on other backends the projection set is summarized
    by its extreme positions, which is exact for geodesic discretizations.
    """
    lo, hi = projection_indices(backend, path, probes)
    if isinstance(backend, FreeGroupTree) and path.geodesic:
        return (len(path) - 1 - lo) if at_end else hi
    axis_d = backend.distance_matrix(list(path.points), list(path.points))
    anchor = len(path) - 1 if at_end else 0
    return np.maximum(np.maximum(axis_d[anchor, lo], axis_d[anchor, hi]), axis_d[lo, hi])


# ----------------------------------------------------------------------------
# individual constants


def projection_continuity(backend: SpaceBackend, path: DiscretePath, probes: Sequence) -> float:
    """sup over probe pairs of ``diam(π{x, y}) - d(x, y)``, floored at 0."""
    lo, hi = projection_indices(backend, path, probes)
    axis_d = backend.distance_matrix(list(path.points), list(path.points))
    probe_d = backend.distance_matrix(list(probes), list(probes))
    span = np.maximum(axis_d[lo[:, None], hi[None, :]], axis_d[hi[:, None], lo[None, :]])
    span = np.maximum(span, np.maximum(axis_d[lo, hi][:, None], axis_d[lo, hi][None, :]))
    return float(max(0.0, (span - probe_d).max()))


def hausdorff(backend: SpaceBackend, A: Sequence, B: Sequence) -> float:
    d = backend.distance_matrix(list(A), list(B))
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def large_projection_constant(backend: SpaceBackend, path: DiscretePath, geodesics: Sequence[DiscretePath]) -> float:
    """Smallest K' such that projections wider than K' lie K'-close to a subsegment."""
    records = []
    for eta in geodesics:
        lo, hi = projection_indices(backend, path, eta.points)
        m, M = int(lo.min()), int(hi.max())
        axis_d = backend.distance_matrix([path.points[m], path.points[M]], list(path.points))
        width = float(axis_d[0, M])
        if width == 0:
            continue
        to_eta = backend.distance_matrix([path.points[m], path.points[M]], list(eta.points))
        i, j = sorted((int(to_eta[0].argmin()), int(to_eta[1].argmin())))
        h = hausdorff(backend, path.points[m:M + 1], eta.points[i:j + 1])
        records.append((width, h))
    need = 0.0
    for width, h in sorted(records, reverse=True):
        # K' must satisfy: width > K'  =>  h <= K'
        if h > need and width > need:
            need = min(h, width)
    return need


def backtracking_constant(backend: SpaceBackend, path: DiscretePath, geodesics: Sequence[DiscretePath]) -> float:
    """Smallest positive K' forbidding a projection excursion of size K' and back."""
    worst = 0.0
    for eta in geodesics:
        lo, hi = projection_indices(backend, path, eta.points)
        a = lo.astype(float)
        for t in range(len(a)):
            before, after = a[: t + 1], a[t:]
            down = min(a[t] - before.min(), a[t] - after.min())
            up = min(before.max() - a[t], after.max() - a[t])
            worst = max(worst, down, up)
    return worst + 1.0


@dataclass
class CalibrationReport:
    ledger: ConstantLedger
    probe_radius: int | None
    measurements: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"ledger": self.ledger.to_dict(), "probe_radius": self.probe_radius, "measurements": self.measurements}


def minimal_schottky_constant(S: SchottkySet, probes: Sequence, window: int = 4, candidates=None) -> float:
    for K in candidates or range(1, 41):
        if verify_schottky(S.backend, S.elements, K, probes, window).passed:
            return float(K)
    raise ValueError("no candidate constant verifies the Schottky property")


def translated_axes(backend: SpaceBackend, S: SchottkySet, shifts: Sequence, exponents=(1, -1)) -> list[DiscretePath]:
    out = []
    for n in exponents:
        base = [build_axis(backend, s, n) for s in S]
        for g in shifts:
            out.extend(backend.translate(g, ax) for ax in base)
    return out


def _endpoint_spreads(backend, axes, probes):
    return [(anchor_spreads(backend, ax, probes, False), anchor_spreads(backend, ax, probes, True)) for ax in axes]


def alignment_constant(backend: SpaceBackend, K: float, C: float, axes: Sequence[DiscretePath],
                       probes: Sequence) -> tuple[float, dict]:
    """Empirical smallest D > C for the two-axis alignment lemmas over ``axes``.

    Three needs are measured over ordered pairs ``(kappa, eta)``:
    endpoint alignment forcing full alignment, the exclusivity of being seen
    near both inner endpoints, and the distance gain when ``eta`` sees a point
    away from its start.
    """
    axes = list(axes)
    seen_from = _endpoint_spreads(backend, axes, probes)
    probe_to_axis = [backend.distance_matrix(list(ax.points), list(probes)).min(axis=0) for ax in axes]
    need_full = need_excl = need_gain = -math.inf
    for i, kappa in enumerate(axes):
        for j, eta in enumerate(axes):
            if i == j:
                continue
            v = pair_alignment(backend, kappa, eta, math.inf)
            full = max(v.left_spread, v.right_spread)
            head = pair_alignment(backend, kappa, eta.end, C).aligned
            tail = pair_alignment(backend, kappa.begin, eta, C).aligned
            if head and tail:
                need_full = max(need_full, full)
            if v.left_spread < C and v.right_spread < C:
                at_eta = seen_from[j][0]
                at_kappa = seen_from[i][1]
                need_excl = max(need_excl, float(np.minimum(at_eta, at_kappa).max()))
                gain_fails = probe_to_axis[i] < probe_to_axis[j] + K
                if gain_fails.any():
                    need_gain = max(need_gain, float(at_eta[gain_fails].max()))
    need = max(need_full, need_excl, need_gain)
    D = max(C + 1.0, math.floor(need) + 1.0) if need > -math.inf else C + 1.0
    return D, {"full": need_full, "exclusive": need_excl, "gain": need_gain}


def length_threshold(K: float, D: float) -> float:
    return K * (2 * D + 2 * K)


def witnessing_constant(backend: SpaceBackend, C: float, chains: Sequence[tuple], resolution=None) -> tuple[float, dict]:
    """Smallest E > C making each aligned chain ``(x, k_1..k_N, y)`` E-witnessed."""
    need = -math.inf
    for x, axes, y in chains:
        line = backend.geodesic(x, y, resolution)
        for ax in axes:
            for p in ax.points:
                need = max(need, backend.distance_to_set(p, line), backend.gromov_product(x, y, p) + 1e-12)
            lo = 0.0
            hi = max(need, 1.0)
            while not is_witnessed(backend, x, y, [(ax.begin, ax.end)], hi, resolution):
                hi *= 2
                if hi > 1e6:
                    break
            for _ in range(30):
                mid = (lo + hi) / 2
                if is_witnessed(backend, x, y, [(ax.begin, ax.end)], mid, resolution):
                    hi = mid
                else:
                    lo = mid
            need = max(need, hi)
    E = max(C + 1.0, math.floor(need) + 1.0) if need > -math.inf else C + 1.0
    return E, {"witness": need}


def random_aligned_chains(S: SchottkySet, C: float, count: int, length: int, seed: int = 0,
                          connector: int = 2) -> list[tuple]:
    """Seeded chains ``(o, k_1, ..., k_N, y)`` of Schottky translates that are C-aligned.

    Each axis is the orbit segment of a uniformly drawn element, preceded by a
    short random connector word; candidates that fail alignment are dropped.
    """
    backend = S.backend
    rng = np.random.Generator(np.random.Philox(seed))
    gens = list(backend.generators.values())
    gens += [backend.inverse(g) for g in gens]
    o = backend.basepoint
    chains = []
    attempts = 0
    while len(chains) < count and attempts < 50 * count:
        attempts += 1
        g = backend.identity
        axes = []
        for _ in range(length):
            for _ in range(int(rng.integers(0, connector + 1))):
                g = backend.compose(g, gens[int(rng.integers(len(gens)))])
            s = S.elements[int(rng.integers(len(S)))]
            axes.append(backend.translate(g, build_axis(backend, s, 1)))
            g = backend.compose(g, s.product)
        y = backend.act(g, o)
        if all_aligned(backend, [o, *axes, y], C):
            chains.append((o, axes, y))
    return chains


def calibrate_ledger(S: SchottkySet, probes: Sequence | None = None, shift_radius: int = 2,
                     chain_count: int = 40, chain_length: int = 3, seed: int = 0) -> CalibrationReport:
    """Measure every ledger constant for the Schottky set ``S`` on its backend."""
    backend = S.backend
    radius = DEFAULT_TREE_RADIUS if isinstance(backend, FreeGroupTree) else None
    probes = list(default_probes(backend, seed=seed) if probes is None else probes)
    K0 = float(S.K0)
    axes = [build_axis(backend, s, n) for s in S for n in (1, -1)]
    rng = np.random.Generator(np.random.Philox(seed))
    picks = rng.choice(len(probes), size=(min(200, len(probes)), 2))
    geodesics = [backend.geodesic(probes[i], probes[j]) for i, j in picks if i != j]
    K1 = max(projection_continuity(backend, ax, probes) for ax in axes)
    K2 = max(large_projection_constant(backend, ax, geodesics) for ax in axes)
    K3 = max(backtracking_constant(backend, ax, geodesics) for ax in axes)
    C0 = K0 + K1 + K2 + K3
    shifts = backend.ball(shift_radius) if hasattr(backend, "ball") and isinstance(backend, FreeGroupTree) else [backend.identity]
    corpus = translated_axes(backend, S, shifts)
    D0, need0 = alignment_constant(backend, K0, C0, corpus, probes)
    D1, need1 = alignment_constant(backend, K0, D0, corpus, probes)
    D2, need2 = alignment_constant(backend, K0, D1, corpus, probes)
    chains = random_aligned_chains(S, D2, chain_count, chain_length, seed)
    E0, witness = witnessing_constant(backend, D2, chains)
    ledger = ConstantLedger(
        K0=K0, K1=K1, K2=K2, K3=K3, D0=D0, D1=D1, D2=D2, E0=E0,
        L1=length_threshold(K0, D0), L2=length_threshold(K0, D1), L3=length_threshold(K0, E0),
        M0=S.M0, N0=S.N0,
    )
    measurements = {
        "C0": C0, "D0_needs": need0, "D1_needs": need1, "D2_needs": need2,
        "witness": witness, "chains": len(chains), "probes": len(probes),
        "shift_radius": shift_radius, "seed": seed,
    }
    return CalibrationReport(ledger, radius, measurements)
