"""Monte-Carlo estimators for the limit laws of a random walk.

Every estimator is a deterministic function of its arguments and seed:
path ``i`` is driven by the counter-based stream ``(seed, i)``.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats as sps

from . import _kernels
from .contraction import ConstantLedger, translation_length
from .errors import UsageError
from .space import FreeGroupTree
from .walk import (DecomposedModel, PathPivots, SamplePath, StepMeasure, WalkTrie,
                   path_pivots, path_rng, sample_path, sup_common_prefix, tree_lengths)

DEFAULT_CHUNK = 1000


def parallel_map(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """``[fn(x) for x in items]``, optionally on a process pool; order is preserved."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def increment_batch(mu: StepMeasure, n: int, seed: int, lo: int, hi: int) -> np.ndarray:
    """Increments of paths ``lo..hi-1``; row ``i - lo`` equals ``sample_path(..., index=i).steps``."""
    return np.stack([mu.sample_indices(path_rng(seed, i), n) for i in range(lo, hi)])


def _chunks(samples: int, chunk: int) -> list[tuple[int, int]]:
    return [(lo, min(lo + chunk, samples)) for lo in range(0, samples, chunk)]


def _lengths_chunk(args):
    mu, n_max, at, seed, lo, hi = args
    steps = increment_batch(mu, n_max, seed, lo, hi)
    if isinstance(mu.backend, FreeGroupTree) and all(len(g) <= 1 for g in mu.support):
        return tree_lengths(mu, steps, at)
    return _generic_lengths(mu, steps, at)


def _generic_lengths(mu: StepMeasure, steps: np.ndarray, at: Sequence[int]) -> np.ndarray:
    b = mu.backend
    o = b.basepoint
    want = {k: j for j, k in enumerate(at)}
    out = np.zeros((len(steps), len(at)))
    for r, row in enumerate(steps):
        g = b.identity
        if 0 in want:
            out[r, want[0]] = 0.0
        for t, x in enumerate(row, start=1):
            g = b.compose(g, mu.support[int(x)])
            if t in want:
                out[r, want[t]] = b.distance(o, b.act(g, o))
    return out


def simulate_lengths(mu: StepMeasure, n_list: Sequence[int], samples: int, seed: int,
                     chunk: int = DEFAULT_CHUNK, workers: int = 1) -> np.ndarray:
    """``d(o, w_n o)`` with one row per path and one column per ``n`` in ``n_list``."""
    if samples < 1:
        raise UsageError("samples must be positive")
    at = sorted(set(int(n) for n in n_list))
    if not at or at[0] < 0:
        raise UsageError("n_list must hold nonnegative integers")
    jobs = [(mu, at[-1], at, seed, lo, hi) for lo, hi in _chunks(samples, chunk)]
    full = np.concatenate(parallel_map(_lengths_chunk, jobs, workers))
    idx = [at.index(int(n)) for n in n_list]
    return full[:, idx]


# ----------------------------------------------------------------------------
# escape rate and tails


@dataclass(frozen=True)
class EscapeRate:
    n: int
    samples: int
    value: float
    stderr: float
    ci: tuple
    positive: bool
    non_elementary: bool


def escape_rate(mu: StepMeasure, n: int, samples: int, seed: int, lengths: np.ndarray | None = None,
                level: float = 0.99, workers: int = 1) -> EscapeRate:
    """Mean of ``d(o, w_n o)/n`` with a normal-approximation interval."""
    if n < 1:
        raise UsageError("n must be positive")
    if lengths is None:
        lengths = simulate_lengths(mu, [n], samples, seed, workers=workers)[:, 0]
    ratio = np.asarray(lengths, dtype=float) / n
    mean = float(ratio.mean())
    se = float(ratio.std(ddof=1) / math.sqrt(len(ratio))) if len(ratio) > 1 else 0.0
    z = float(sps.norm.ppf(0.5 + level / 2))
    ci = (mean - z * se, mean + z * se)
    if not mu.non_elementary:
        warnings.warn("escape rate requested for a measure not certified non-elementary", stacklevel=2)
    return EscapeRate(n, len(ratio), mean, se, ci, ci[0] > 0, mu.non_elementary)


@dataclass(frozen=True)
class LogLinearFit:
    slope: float
    intercept: float
    r2: float
    points: int

    @property
    def rate(self) -> float:
        return -self.slope


def log_linear_fit(ns: Sequence[float], ps: Sequence[float]) -> LogLinearFit:
    """Least-squares fit of ``log p = slope * n + intercept`` over the positive ``p``."""
    ns = np.asarray(ns, dtype=float)
    ps = np.asarray(ps, dtype=float)
    keep = ps > 0
    if keep.sum() < 2:
        raise UsageError("a log-linear fit needs at least two positive probabilities")
    res = sps.linregress(ns[keep], np.log(ps[keep]))
    return LogLinearFit(float(res.slope), float(res.intercept), float(res.rvalue ** 2), int(keep.sum()))


@dataclass(frozen=True)
class TailTable:
    L: float
    rows: tuple  # (n, probability, stderr)
    fit: LogLinearFit | None


def lower_tail(mu: StepMeasure, L: float, n_list: Sequence[int], samples: int, seed: int,
               lengths: np.ndarray | None = None, workers: int = 1) -> TailTable:
    """Monte-Carlo ``P[d(o, w_n o) <= L n]`` per ``n`` with a log-linear fit."""
    if L < 0:
        raise UsageError("L must be nonnegative")
    n_list = list(n_list)
    if lengths is None:
        lengths = simulate_lengths(mu, n_list, samples, seed, workers=workers)
    lam = float(lengths[:, -1].mean() / n_list[-1]) if n_list[-1] else 0.0
    if L >= lam:
        warnings.warn(f"L={L} is not below the estimated escape rate {lam:.4g}", stacklevel=2)
    rows = []
    for j, n in enumerate(n_list):
        p = float(np.mean(lengths[:, j] <= L * n + 1e-12))
        rows.append((n, p, math.sqrt(p * (1 - p) / len(lengths))))
    try:
        fit = log_linear_fit([r[0] for r in rows], [r[1] for r in rows])
    except UsageError:
        fit = None
    return TailTable(L, tuple(rows), fit)


# ----------------------------------------------------------------------------
# deviation


@dataclass(frozen=True)
class DeviationRow:
    x: str
    distance: int
    estimate: float
    stderr: float
    doubled: float

    @property
    def horizon_change(self) -> float:
        return abs(self.doubled - self.estimate) / self.estimate if self.estimate else 0.0


@dataclass(frozen=True)
class DeviationTable:
    p: float
    horizon: int
    samples: int
    rows: tuple

    @property
    def spread(self) -> float:
        """``(max - min)/min`` of the per-basepoint estimates."""
        vals = [r.estimate for r in self.rows if r.distance > 0]
        return (max(vals) - min(vals)) / min(vals) if vals and min(vals) > 0 else math.inf

    @property
    def maximum(self) -> float:
        return max(r.estimate for r in self.rows)

    @property
    def horizon_change(self) -> float:
        return max(r.horizon_change for r in self.rows)


def _deviation_chunk(args):
    mu, xs, horizon, seed, lo, hi = args
    steps = increment_batch(mu, 2 * horizon, seed, lo, hi)
    return sup_common_prefix(mu, steps, xs, [horizon, 2 * horizon])


def deviation_sup(mu: StepMeasure, xs: Sequence[str], p: float, horizon: int, samples: int, seed: int,
                  chunk: int = DEFAULT_CHUNK, workers: int = 1) -> DeviationTable:
    """Per basepoint ``x``, the mean of ``(sup_{n <= H} (x, w_n o)_o)^p`` at ``H`` and ``2H``."""
    if p <= 0:
        raise UsageError("p must be positive")
    if not isinstance(mu.backend, FreeGroupTree):
        raise UsageError("deviation estimates are implemented for the free-group tree")
    xs = [mu.backend.parse_isometry(x) for x in xs]
    jobs = [(mu, xs, horizon, seed, lo, hi) for lo, hi in _chunks(samples, chunk)]
    sups = np.concatenate(parallel_map(_deviation_chunk, jobs, workers)).astype(float) ** p
    rows = []
    for q, x in enumerate(xs):
        v = sups[:, q, 0]
        rows.append(DeviationRow(x, len(x), float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v))),
                                 float(sups[:, q, 1].mean())))
    return DeviationTable(p, horizon, samples, tuple(rows))


def shared_depth(trie: WalkTrie, forward: int, backward: int) -> int:
    """``max (w~_{n'} o, w_n o)_o`` over forward times ``<= forward`` and backward ``<= backward``.

    Visited sets are closed under taking ancestors, so the supremum is the
    depth of the deepest vertex visited by both paths.
    """
    f = np.unique(trie.node[:forward + 1])
    b = np.unique(trie.node[trie.back_offset:trie.back_offset + backward + 1])
    both = np.intersect1d(f, b, assume_unique=True)
    return int(trie.depth[both].max())


def two_sided_deviation(model: DecomposedModel, p: float, horizon: int, samples: int, seed: int) -> tuple[float, float, float]:
    """Mean of ``sup_{n, n'} (w~_{n'} o, w_n o)_o^{2p}`` at horizon ``H`` and ``2H``, with the stderr at ``H``."""
    vals = np.zeros((samples, 2))
    for i in range(samples):
        path = sample_path(model, 2 * horizon, seed, i, backward=2 * horizon)
        trie = WalkTrie.of_pair(path)
        vals[i] = [shared_depth(trie, horizon, horizon), shared_depth(trie, 2 * horizon, 2 * horizon)]
    vals = vals ** (2 * p)
    return float(vals[:, 0].mean()), float(vals[:, 1].mean()), float(vals[:, 0].std(ddof=1) / math.sqrt(samples))


# ----------------------------------------------------------------------------
# persistent progress indices


@dataclass(frozen=True)
class DeviRecord:
    """Persistent-progress indices; ``None`` means not found within the horizon."""

    uniform: int | None
    forward: int | None
    backward: int | None
    witness: dict = field(default_factory=dict)


def schottky_windows(model: DecomposedModel, steps: np.ndarray) -> np.ndarray:
    """``ok[i]`` when ``g_{i+1}, ..., g_{i+M0}`` is an element of ``S``."""
    M = model.M0
    sup = model.mu.support
    n = len(steps)
    ok = np.zeros(max(n - M + 1, 0), dtype=bool)
    for entries in model.codes:
        idx = [sup.index(g) for g in entries]
        hit = np.ones(len(ok), dtype=bool)
        for j, g in enumerate(idx):
            hit &= steps[j:j + len(ok)] == g
        ok |= hit
    return ok


def _progress_index(trie: WalkTrie, main: np.ndarray, other_ok: Callable[[int, int], bool],
                    windows: np.ndarray, M0: int, D1: float, horizon: int) -> tuple[int | None, int | None]:
    """Least ``k`` with a Schottky stretch ``[i, i + M0]``, ``i <= k - M0``, that is
    D1-aligned after ``o``, before every ``main[n]`` with ``n >= k``, and passes ``other_ok``."""
    best, where = None, None
    node = trie.node
    dist = lambda u, v: int(trie.node_dist(u, v))
    for i in np.flatnonzero(windows):
        i = int(i)
        e = i + M0
        if e > horizon or (best is not None and e >= best):
            break
        s_node, e_node = node[main[i]], node[main[e]]
        d_se = dist(s_node, e_node)
        # (o, axis): projection of o lands near the start
        if not (d_se + dist(s_node, 0) - dist(e_node, 0)) / 2 < D1:
            continue
        if not other_ok(main[i], main[e]):
            continue
        later = node[main[e:horizon + 1]]
        de = _kernels.distances_from(trie.up, trie.depth, e_node, later)
        ds = _kernels.distances_from(trie.up, trie.depth, s_node, later)
        spread = (d_se + de - ds) / 2
        bad = np.flatnonzero(spread >= D1)
        k = e if not len(bad) else e + int(bad[-1]) + 1
        if k > horizon:
            continue
        if best is None or k < best:
            best, where = k, i
    return best, where


def devi_indices(path: SamplePath, ledger: ConstantLedger, horizon: int, x: str | None = None) -> DeviRecord:
    """The uniform index for ``x`` and both two-sided indices of a forward/backward pair."""
    model = path.model
    if not isinstance(path.backend, FreeGroupTree):
        raise UsageError("persistent-progress indices are implemented for the free-group tree")
    if path.back is None or len(path.back) < horizon or path.n < horizon:
        raise UsageError("need forward and backward increments up to the horizon")
    trie = WalkTrie.of_pair(path, horizon, horizon)
    M0, D1, D2 = model.M0, ledger.D1, ledger.D2
    x = path.backend.basepoint if x is None else x
    fwd_t = np.arange(horizon + 1)
    bwd_t = trie.back_offset + np.arange(horizon + 1)
    x_dist = trie.point_distances(path.backend, x, np.arange(len(trie.node)))
    node = trie.node

    def see_x(s, e):
        return (trie.node_dist(node[s], node[e]) + x_dist[s] - x_dist[e]) / 2 < D1

    def see_all(times):
        def check(s, e):
            d_se = trie.node_dist(node[s], node[e])
            de = _kernels.distances_from(trie.up, trie.depth, node[e], node[times])
            ds = _kernels.distances_from(trie.up, trie.depth, node[s], node[times])
            return bool(np.all((d_se + ds - de) / 2 < D2))
        return check

    fwd_win = schottky_windows(model, path.steps[:horizon])
    # backward increments are inverses, so a Schottky stretch of the backward path reads g^{-1}
    back_steps = np.array([model.mu.index(path.backend.inverse(model.mu.support[int(g)]))
                           if path.backend.inverse(model.mu.support[int(g)]) in model.mu.support else -1
                           for g in path.back[:horizon]], dtype=np.int64)
    bwd_win = schottky_windows(model, back_steps)
    uni, i_uni = _progress_index(trie, fwd_t, see_x, fwd_win, M0, D1, horizon)
    two, i_two = _progress_index(trie, fwd_t, see_all(bwd_t), fwd_win, M0, D1, horizon)
    chk, i_chk = _progress_index(trie, bwd_t, see_all(fwd_t), bwd_win, M0, D1, horizon)
    return DeviRecord(uni, two, chk, {"uniform": i_uni, "forward": i_two, "backward": i_chk})


# ----------------------------------------------------------------------------
# central limit behaviour


@dataclass(frozen=True)
class CltRecord:
    n: int
    samples: int
    drift: float
    sigma_n: float
    kolmogorov: float
    mean_normalized: float
    var_normalized: float
    lil_max: float | None = None
    lil_min: float | None = None


def normalized(lengths: np.ndarray, n: int, drift: float, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return np.zeros(len(lengths))
    return (np.asarray(lengths, dtype=float) - n * drift) / (sigma * math.sqrt(n))


def kolmogorov_to_normal(z: np.ndarray) -> float:
    return float(sps.kstest(z, "norm").statistic)


def clt_statistics(mu: StepMeasure, n_list: Sequence[int], samples: int, seed: int,
                   drift: float | None = None, sigma: float | None = None,
                   lengths: np.ndarray | None = None, workers: int = 1) -> list[CltRecord]:
    """Per ``n``: sample drift and spread, sup-distance of the normalized law to N(0, 1),
    and running extremes of ``(d - lambda n)/sqrt(2 n log log n)`` over dyadic checkpoints."""
    n_list = sorted(int(n) for n in n_list)
    dyadic = [2 ** j for j in range(4, int(math.log2(max(n_list))) + 1)]
    grid = sorted(set(n_list) | set(dyadic))
    if lengths is None:
        lengths = simulate_lengths(mu, grid, samples, seed, workers=workers)
    elif lengths.shape[1] != len(grid):
        raise UsageError("precomputed lengths must cover n_list and the dyadic checkpoints")
    col = {n: j for j, n in enumerate(grid)}
    out = []
    for n in n_list:
        d = lengths[:, col[n]].astype(float)
        lam = float(d.mean() / n) if drift is None else drift
        s_n = float(d.std(ddof=1) / math.sqrt(n)) if len(d) > 1 else 0.0
        sig = s_n if sigma is None else sigma
        z = normalized(d, n, lam, sig)
        ks = kolmogorov_to_normal(z) if sig > 0 else math.nan
        lil = [m for m in dyadic if m <= n and math.log(math.log(m)) > 0]
        if lil:
            vals = np.stack([(lengths[:, col[m]] - lam * m) / math.sqrt(2 * m * math.log(math.log(m))) for m in lil], axis=1)
            lmax, lmin = float(vals.max(axis=1).mean()), float(vals.min(axis=1).mean())
        else:
            lmax = lmin = None
        out.append(CltRecord(n, len(d), lam, s_n, ks, float(z.mean()), float(z.var(ddof=1)) if len(z) > 1 else 0.0,
                             lmax, lmin))
    return out


@dataclass(frozen=True)
class BerryCurve:
    rows: tuple  # (n, sup-distance)
    beta: float
    K: float

    @property
    def under_envelope(self) -> bool:
        """Whether ``D_n n^{1/5}`` never exceeds its value at the calibration point."""
        return all(d * n ** 0.2 <= self.K for n, d in self.rows)

    @property
    def worst_ratio(self) -> float:
        return max(d * n ** 0.2 / self.K for n, d in self.rows)


def fit_power(rows: Sequence[tuple]) -> float:
    """Exponent ``beta`` of a fit ``D_n ~ C n^{-beta}``."""
    ns = np.log([r[0] for r in rows])
    ds = np.log([r[1] for r in rows])
    return float(-sps.linregress(ns, ds).slope)


def berry_curve(rows: Sequence[tuple]) -> BerryCurve:
    rows = tuple(sorted((int(n), float(d)) for n, d in rows))
    n0, d0 = rows[0]
    return BerryCurve(rows, fit_power(rows), d0 * n0 ** 0.2)


def berry_esseen_curve(mu: StepMeasure, n_list: Sequence[int], samples: int, seed: int,
                       drift: float, sigma: float, workers: int = 1) -> BerryCurve:
    """Monte-Carlo sup-distances with ``K`` calibrated at the smallest ``n``."""
    n_list = sorted(int(n) for n in n_list)
    lengths = simulate_lengths(mu, n_list, samples, seed, workers=workers)
    rows = [(n, kolmogorov_to_normal(normalized(lengths[:, j], n, drift, sigma))) for j, n in enumerate(n_list)]
    return berry_curve(rows)


# ----------------------------------------------------------------------------
# tracking


@dataclass
class TrackingRecord:
    distances: np.ndarray  # d(w_k o, Gamma) for k = 0..upto
    vertices: tuple  # walk times of the vertices of Gamma
    label: str

    def max_over_log(self) -> float:
        k = np.arange(2, len(self.distances))
        return float((self.distances[2:] / np.log(k)).max()) if len(k) else 0.0

    def max_over_root(self, p: float = 1.0) -> float:
        k = np.arange(1, len(self.distances))
        return float((self.distances[1:] / k ** (1 / (2 * p))).max()) if len(k) else 0.0


def tracking_vertices(times: Sequence[int], M0: int) -> tuple:
    """``0, t_1, t_1 + M0, t_2, t_2 + M0, ...`` for eventual pivotal times ``t_j``."""
    out = [0]
    for t in times:
        out += [t, t + M0]
    return tuple(out)


def gamma_distances(trie: WalkTrie, vertices: Sequence[int], upto: int) -> np.ndarray:
    """``d(w_k o, Gamma)`` for ``k <= upto``, Gamma being the concatenated geodesics through the vertices.

    On a tree that concatenation is a subtree containing the root, so the
    distance is the depth above the deepest marked ancestor.
    """
    marked = np.zeros(len(trie.parent), dtype=np.bool_)
    marked[0] = True
    for u, v in zip(vertices, vertices[1:]):
        trie.mark_geodesic(marked, trie.node[u], trie.node[v])
    return trie.distance_to_subtree(marked)[trie.node[:upto + 1]]


def tracking_distance(path: SamplePath, ledger: ConstantLedger, horizon: int, upto: int | None = None,
                      pivots: PathPivots | None = None, trie: WalkTrie | None = None) -> TrackingRecord:
    """Distances to the path built from eventual pivotal times at ``n = (upto + horizon)/2``."""
    upto = horizon // 2 if upto is None else upto
    if not 0 < upto <= horizon <= path.n:
        raise UsageError("need 0 < upto <= horizon <= path length")
    trie = WalkTrie.of_path(path) if trie is None else trie
    pivots = path_pivots(path, ledger, horizon, trie=trie) if pivots is None else pivots
    times, label = pivots.eventual((upto + horizon) // 2, horizon)
    verts = tracking_vertices(times, path.model.M0)
    return TrackingRecord(gamma_distances(trie, verts, upto), verts, label)


# ----------------------------------------------------------------------------
# measure properties


def is_non_arithmetic(mu: StepMeasure, n_max: int = 4, horizon: int = 16) -> bool:
    """Two elements of some ``supp mu^{*n}``, ``n <= n_max``, with different translation lengths."""
    b = mu.backend
    level = {b.identity}
    for _ in range(n_max):
        level = {b.compose(g, h) for g in level for h in mu.support}
        taus = {round(translation_length(b, g, horizon), 9) for g in level}
        if len(taus) > 1:
            return True
    return False


@dataclass(frozen=True)
class GrowthFit:
    slope: float
    stderr: float
    lower: float  # one-sided lower confidence bound
    ns: tuple
    means: tuple


def pivotal_growth(model: DecomposedModel, ledger: ConstantLedger, n_list: Sequence[int], samples: int, seed: int,
                   eventual: bool = False, level: float = 0.99) -> GrowthFit:
    """Regression of ``#P_n`` (or the eventual count) on ``n`` over sampled paths."""
    n_list = sorted(int(n) for n in n_list)
    H = n_list[-1] * (2 if eventual else 1)
    ys, xs = [], []
    for i in range(samples):
        path = sample_path(model, H, seed, i)
        pp = path_pivots(path, ledger, H)
        sizes = pp.sizes()
        for n in n_list:
            xs.append(n)
            ys.append(len(pp.eventual(n, 2 * n)[0]) if eventual else int(sizes[n]))
    res = sps.linregress(xs, ys)
    z = float(sps.norm.ppf(level))
    means = tuple(float(np.mean([y for x, y in zip(xs, ys) if x == n])) for n in n_list)
    return GrowthFit(float(res.slope), float(res.stderr), float(res.slope - z * res.stderr), tuple(n_list), means)
