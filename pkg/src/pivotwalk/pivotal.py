"""Pivotal times along a trajectory of isometries interleaved with Schottky choices.

A trajectory is the word ``w_0 a_1 b_1 v_1 c_1 d_1 w_1 ... a_n b_n v_n c_n d_n w_n``
where ``(a_i, b_i, c_i, d_i)`` are products of Schottky sequences chosen at
step ``i``.  Points and axes along it are addressed by small keys so that
alignment verdicts can be cached per trajectory.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Sequence

import numpy as np

from .contraction import ConstantLedger, pair_alignment
from .errors import UsageError
from .schottky import SchottkySet, build_axis

KINDS = "abcd"  # alpha, beta, gamma, delta
ORIGIN = ("o",)


@dataclass(frozen=True)
class Trajectory:
    """Intermediate isometries ``w_0..w_n``, ``v_1..v_n`` and Schottky choices.

    ``choices[i - 1]`` holds the indices into ``S`` of ``(alpha_i, beta_i,
    gamma_i, delta_i)``.
    """

    S: SchottkySet
    w: tuple
    v: tuple
    choices: tuple
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "w", tuple(self.w))
        object.__setattr__(self, "v", tuple(self.v))
        object.__setattr__(self, "choices", tuple(tuple(int(c) for c in ch) for ch in self.choices))
        n = len(self.choices)
        if len(self.w) != n + 1 or len(self.v) != n:
            raise UsageError(f"need n+1 w's and n v's for n={n} choices, got {len(self.w)} and {len(self.v)}")
        for ch in self.choices:
            if len(ch) != 4 or not all(0 <= c < len(self.S) for c in ch):
                raise UsageError(f"invalid Schottky choice {ch}")
        b = self.S.backend
        minus, plus = {}, {}
        prev = b.identity
        for i in range(1, n + 1):
            a_, b_, c_, d_ = (self.S.elements[c].product for c in self.choices[i - 1])
            m2 = b.compose(prev, self.w[i - 1])
            m1 = b.compose(m2, a_)
            m0 = b.compose(m1, b_)
            p0 = b.compose(m0, self.v[i - 1])
            p1 = b.compose(p0, c_)
            p2 = b.compose(p1, d_)
            minus[i] = (m0, m1, m2)
            plus[i] = (p0, p1, p2)
            prev = p2
        object.__setattr__(self, "_minus", minus)
        object.__setattr__(self, "_plus", plus)
        object.__setattr__(self, "_tail", b.compose(prev, self.w[n]))

    @classmethod
    def uniform(cls, S: SchottkySet, choices: Sequence, w=None, v=None) -> "Trajectory":
        """Trajectory with every ``w_i`` and ``v_i`` the identity unless given."""
        n = len(choices)
        e = S.backend.identity
        return cls(S, tuple(w) if w is not None else (e,) * (n + 1), tuple(v) if v is not None else (e,) * n, tuple(choices))

    @property
    def backend(self):
        return self.S.backend

    @property
    def n(self) -> int:
        return len(self.choices)

    def prefix(self, sign: str, i: int, t: int):
        """The isometry ``w^{sign}_{i,t}``; ``w^-_{n+1,2}`` is the full product."""
        if sign == "-" and t == 2 and i == self.n + 1:
            return self._tail
        if not 1 <= i <= self.n or t not in (0, 1, 2):
            raise UsageError(f"no prefix w^{sign}_({i},{t}) on a trajectory of length {self.n}")
        return (self._minus if sign == "-" else self._plus)[i][t]

    def y(self, sign: str, i: int, t: int):
        return self.backend.act(self.prefix(sign, i, t), self.backend.basepoint)

    def element(self, kind: str, i: int):
        return self.S.elements[self.choices[i - 1][KINDS.index(kind)]]

    def axis(self, kind: str, i: int):
        """The marked axis of ``alpha_i``, ``beta_i``, ``gamma_i`` or ``delta_i``."""
        key = ("axis", kind, i)
        hit = self._cache.get(key)
        if hit is None:
            shift = {"a": ("-", 2), "b": ("-", 1), "c": ("+", 0), "d": ("+", 1)}[kind]
            base = base_axis(self.S, self.choices[i - 1][KINDS.index(kind)])
            hit = self.backend.translate(self.prefix(shift[0], i, shift[1]), base)
            self._cache[key] = hit
        return hit

    def resolve(self, key):
        """Point or axis addressed by ``key``."""
        if key == ORIGIN:
            return self.backend.basepoint
        if key[0] == "y":
            return self.y(key[1], key[2], key[3])
        if key[0] == "ax":
            return self.axis(key[1], key[2])
        raise UsageError(f"unknown trajectory key {key!r}")

    def aligned(self, left, right, C: float) -> bool:
        """Cached C-alignment of two keyed items."""
        key = ("al", left, right, C)
        hit = self._cache.get(key)
        if hit is None:
            hit = pair_alignment(self.backend, self.resolve(left), self.resolve(right), C).aligned
            self._cache[key] = hit
        return hit

    def with_triple(self, i: int, triple: Sequence[int]) -> "Trajectory":
        ch = list(self.choices)
        ch[i - 1] = tuple(triple) + (ch[i - 1][3],)
        return Trajectory(self.S, self.w, self.v, tuple(ch))

    def truncate(self, k: int, tail=None) -> "Trajectory":
        """First ``k`` steps, ending with ``w_k`` (or ``tail`` in its place)."""
        w = self.w[:k] + ((self.w[k] if tail is None else tail),)
        return Trajectory(self.S, w, self.v[:k], self.choices[:k])

    def product(self):
        """``w_0 a_1 b_1 v_1 c_1 d_1 ... w_n`` as one isometry."""
        return self._tail

    def to_dict(self) -> dict:
        b = self.backend
        return {
            "w": [b.describe_isometry(g) for g in self.w],
            "v": [b.describe_isometry(g) for g in self.v],
            "choices": [list(c) for c in self.choices],
        }


def base_axis(S: SchottkySet, index: int):
    cache = S.__dict__.setdefault("_axis_cache", {})
    if index not in cache:
        cache[index] = build_axis(S.backend, S.elements[index], 1)
    return cache[index]


def ax(kind: str, i: int) -> tuple:
    return ("ax", kind, i)


def pt(sign: str, i: int, t: int) -> tuple:
    return ("y", sign, i, t)


@dataclass(frozen=True)
class PivotalState:
    """Pivotal times ``P_n`` and the moving point ``z_n`` after step ``n``."""

    n: int
    pivots: tuple
    z_key: tuple
    transcript: tuple = ()

    @classmethod
    def initial(cls) -> "PivotalState":
        return cls(0, (), ORIGIN, ())

    def z(self, traj: Trajectory):
        return traj.resolve(self.z_key)

    def to_dict(self) -> dict:
        return {"n": self.n, "pivots": list(self.pivots), "z": list(self.z_key), "transcript": list(self.transcript)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def criterion_a(traj: Trajectory, n: int, z_key: tuple, K0: float) -> bool:
    end = pt("-", n + 1, 2)
    return (traj.aligned(z_key, ax("a", n), K0)
            and traj.aligned(ax("b", n), pt("+", n, 1), K0)
            and traj.aligned(pt("-", n, 0), ax("c", n), K0)
            and traj.aligned(ax("d", n), end, K0))


def chain_key(chain: Sequence[int]) -> tuple:
    """Order used to pick among valid chains: ``i(1)``, then length, then ``i(2), i(3), ...``."""
    return (chain[0], len(chain), tuple(chain[1:]))


def best_chain(traj: Trajectory, pivots: Sequence[int], ledger: ConstantLedger, end_key: tuple) -> tuple | None:
    """The maximal chain for the second criterion, by dynamic programming.

    A chain ``i(1) < ... < i(N)`` (``N > 1``) is valid when
    ``(delta_{i(1)}, alpha_{i(2)}, beta_{i(2)}, ..., alpha_{i(N)}, beta_{i(N)})`` is
    D0-aligned and ``(beta_{i(N)}, end)`` is K0-aligned.  For a fixed first
    element the best continuation from any later element depends only on
    that element, so tails are solved from the right.
    """
    P = sorted(pivots)
    D0, K0 = ledger.D0, ledger.K0
    tail: dict[int, tuple] = {}
    for u in reversed(P):
        if not traj.aligned(ax("a", u), ax("b", u), D0):
            continue
        best = (u,) if traj.aligned(ax("b", u), end_key, K0) else None
        for v in P:
            if v <= u or v not in tail:
                continue
            if traj.aligned(ax("b", u), ax("a", v), D0):
                cand = (u,) + tail[v]
                if best is None or (len(cand), cand) > (len(best), best):
                    best = cand
        if best is not None:
            tail[u] = best
    for i1 in reversed(P):
        best = None
        for u in P:
            if u <= i1 or u not in tail:
                continue
            if traj.aligned(ax("d", i1), ax("a", u), D0):
                cand = tail[u]
                if best is None or (len(cand), cand) > (len(best), best):
                    best = cand
        if best is not None:
            return (i1,) + best
    return None


def pivot_step(state: PivotalState, traj: Trajectory, n: int, ledger: ConstantLedger) -> PivotalState:
    """Advance the pivotal set from step ``n - 1`` to step ``n``."""
    if state.n != n - 1:
        raise UsageError(f"state is at step {state.n}, cannot take step {n}")
    if criterion_a(traj, n, state.z_key, ledger.K0):
        entry = {"step": n, "rule": "A"}
        return PivotalState(n, state.pivots + (n,), pt("+", n, 1), state.transcript + (entry,))
    chain = best_chain(traj, state.pivots, ledger, pt("-", n + 1, 2))
    if chain is None:
        entry = {"step": n, "rule": "B", "chain": None}
        return PivotalState(n, (), ORIGIN, state.transcript + (entry,))
    entry = {"step": n, "rule": "B", "chain": list(chain)}
    kept = tuple(p for p in state.pivots if p <= chain[0])
    return PivotalState(n, kept, pt("-", chain[-1], 1), state.transcript + (entry,))


def pivotal_history(traj: Trajectory, ledger: ConstantLedger, upto: int | None = None) -> list[PivotalState]:
    """States after steps ``0, 1, ..., upto``.

    Step ``k`` only looks at ``w_0..w_k``: its far endpoint ``y^-_{k+1,2}`` is the
    same on the full trajectory and on its truncation after ``w_k``.
    """
    upto = traj.n if upto is None else upto
    states = [PivotalState.initial()]
    for k in range(1, upto + 1):
        states.append(pivot_step(states[-1], traj, k, ledger))
    return states


def run_pivotal(traj: Trajectory, ledger: ConstantLedger, upto: int | None = None) -> PivotalState:
    return pivotal_history(traj, ledger, upto)[-1]


# ----------------------------------------------------------------------------
# literal transcription used as an independent reference


def reference_pivotal_sets(traj: Trajectory, ledger: ConstantLedger) -> list[tuple]:
    """``P_0, ..., P_n`` by exhaustive subsequence search, without caching."""
    b = traj.backend
    K0, D0 = ledger.K0, ledger.D0
    P: tuple = ()
    z = b.basepoint
    out = [P]
    for k in range(1, traj.n + 1):
        t = traj if k == traj.n else traj.truncate(k)

        def axis(kind, i):
            return t.axis(kind, i)

        end = t.y("-", k + 1, 2)
        four = [(z, axis("a", k)), (axis("b", k), t.y("+", k, 1)), (t.y("-", k, 0), axis("c", k)), (axis("d", k), end)]
        if all(pair_alignment(b, x, y, K0).aligned for x, y in four):
            P, z = P + (k,), t.y("+", k, 1)
            out.append(P)
            continue
        found = []
        for N in range(2, len(P) + 1):
            for seq in itertools.combinations(P, N):
                items = [axis("d", seq[0])]
                for i in seq[1:]:
                    items += [axis("a", i), axis("b", i)]
                if all(pair_alignment(b, items[j], items[j + 1], D0).aligned for j in range(len(items) - 1)) and \
                        pair_alignment(b, items[-1], end, K0).aligned:
                    found.append(seq)
        if found:
            seq = max(found, key=chain_key)
            P, z = tuple(p for p in P if p <= seq[0]), t.y("-", seq[-1], 1)
        else:
            P, z = (), b.basepoint
        out.append(P)
    return out


# ----------------------------------------------------------------------------
# pivoting


def pivoting_conditions(traj: Trajectory, k: int, ledger: ConstantLedger, z_key: tuple | None = None):
    """Per-element verdicts of the three conditions that define admissible triples.

    Returns ``(alpha_ok, beta_ok, gamma_ok)`` where ``alpha_ok[a]`` and
    ``gamma_ok[c]`` are booleans and ``beta_ok[c][b]`` depends on the gamma
    choice.  Conditions are evaluated on untranslated axes from ``o``.
    """
    S, b = traj.S, traj.backend
    K0 = ledger.K0
    o = b.basepoint
    if z_key is None:
        z_key = run_pivotal(traj, ledger, k - 1).z_key if k > 1 else ORIGIN
    z = traj.resolve(z_key)
    shift = b.inverse(traj.prefix("-", k, 2))
    v = traj.v[k - 1]
    back = {i: build_axis(b, s, -1) for i, s in enumerate(S)}
    fwd = {i: base_axis(S, i) for i in range(len(S))}
    gamma_ok = [b.projection_spread(fwd[c], b.act(b.inverse(v), o), o) < K0 for c in range(len(S))]
    beta_ok = [[b.projection_spread(back[bb], b.act(b.compose(v, S.elements[c].product), o), o) < K0
                for bb in range(len(S))] for c in range(len(S))]
    target = b.act(shift, z)
    alpha_ok = [b.projection_spread(fwd[a], target, o) < K0 for a in range(len(S))]
    return alpha_ok, beta_ok, gamma_ok


def pivoting_set(traj: Trajectory, k: int, ledger: ConstantLedger, z_key: tuple | None = None) -> frozenset:
    """Admissible triples ``(alpha_k, beta_k, gamma_k)`` as index triples."""
    alpha_ok, beta_ok, gamma_ok = pivoting_conditions(traj, k, ledger, z_key)
    N = len(traj.S)
    return frozenset((a, bb, c) for a in range(N) for bb in range(N) for c in range(N)
                     if alpha_ok[a] and gamma_ok[c] and beta_ok[c][bb])


def pivoting_set_direct(traj: Trajectory, k: int, ledger: ConstantLedger) -> frozenset:
    """Admissible triples found by substituting each triple into the trajectory.

    Uses the translated forms of the three conditions: alignment of
    ``(y^-_{k,0}, gamma_k)``, ``(beta_k, y^+_{k,1})`` and ``(z_{k-1}, alpha_k)``.
    """
    K0 = ledger.K0
    z_key = run_pivotal(traj, ledger, k - 1).z_key if k > 1 else ORIGIN
    N = len(traj.S)
    out = set()
    for triple in itertools.product(range(N), repeat=3):
        t = traj.with_triple(k, triple)
        view = t if k == t.n else t.truncate(k)
        z = view.resolve(z_key)
        b = t.backend
        if (pair_alignment(b, view.y("-", k, 0), view.axis("c", k), K0).aligned
                and pair_alignment(b, view.axis("b", k), view.y("+", k, 1), K0).aligned
                and pair_alignment(b, z, view.axis("a", k), K0).aligned):
            out.add(triple)
    return frozenset(out)


def apply_pivot(traj: Trajectory, i: int, triple: Sequence[int], ledger: ConstantLedger, k: int | None = None) -> Trajectory:
    """Replace ``(alpha_i, beta_i, gamma_i)`` by an admissible triple."""
    k = traj.n if k is None else k
    triple = tuple(int(x) for x in triple)
    if i not in run_pivotal(traj, ledger, k).pivots:
        raise UsageError(f"{i} is not a pivotal time at step {k}")
    if triple not in pivoting_set(traj, i, ledger):
        raise UsageError(f"triple {triple} is not admissible at pivotal time {i}")
    return traj.with_triple(i, triple)


def pivoted_from(s: Trajectory, t: Trajectory, k: int, ledger: ConstantLedger) -> bool:
    """Whether ``t`` is pivoted from ``s`` over the first ``k`` steps."""
    pivots = run_pivotal(s, ledger, k).pivots
    for j in range(1, k + 1):
        cs, ct = s.choices[j - 1], t.choices[j - 1]
        if cs[3] != ct[3]:
            return False
        if j in pivots:
            if ct[:3] not in pivoting_set(s, j, ledger):
                return False
        elif cs[:3] != ct[:3]:
            return False
    return True


def class_factors(traj: Trajectory, k: int, ledger: ConstantLedger) -> tuple[tuple, list[list]]:
    pivots = run_pivotal(traj, ledger, k).pivots
    return pivots, [sorted(pivoting_set(traj, i, ledger)) for i in pivots]


def class_size(traj: Trajectory, k: int, ledger: ConstantLedger) -> int:
    _, factors = class_factors(traj, k, ledger)
    return math.prod(len(f) for f in factors)


def equivalence_class(traj: Trajectory, k: int, ledger: ConstantLedger, limit: int = 10**6,
                      samples: int = 1000, seed: int = 0) -> Iterator[Trajectory]:
    """Members of the pivoting class of ``traj`` at step ``k``.

    Enumerated exactly up to ``limit`` members; beyond that, ``samples``
    members are drawn uniformly, one admissible triple per pivotal time.
    """
    pivots, factors = class_factors(traj, k, ledger)
    size = math.prod(len(f) for f in factors)

    def build(triples):
        ch = list(traj.choices)
        for i, tr in zip(pivots, triples):
            ch[i - 1] = tuple(tr) + (ch[i - 1][3],)
        return Trajectory(traj.S, traj.w, traj.v, tuple(ch))

    if size <= limit:
        for triples in itertools.product(*factors):
            yield build(triples)
        return
    rng = np.random.Generator(np.random.Philox(seed))
    for _ in range(samples):
        yield build([f[int(rng.integers(len(f)))] for f in factors])


# ----------------------------------------------------------------------------
# pairs of paths


def paired_pivot_sets(fwd: Trajectory, bwd: Trajectory, k: int, ledger: ConstantLedger,
                      alpha: int | None = None) -> tuple[frozenset, frozenset]:
    """The two filtered subsets of ``S`` attached to the ``k``-th pivotal times.

    ``alpha`` overrides the forward choice ``alpha_{i(k)}`` entering the
    second set; by default the trajectory's own choice is used.
    """
    P = run_pivotal(fwd, ledger).pivots
    Q = run_pivotal(bwd, ledger).pivots
    if len(P) < k or len(Q) < k or k < 1:
        raise UsageError(f"need at least {k} pivotal times on both paths, got {len(P)} and {len(Q)}")
    b = fwd.backend
    o = b.basepoint
    i, j = P[k - 1], Q[k - 1]
    phi = b.compose(b.inverse(bwd.prefix("-", j, 2)), fwd.prefix("-", i, 2))
    S, Sc = fwd.S, bwd.S
    a_idx = fwd.choices[i - 1][0] if alpha is None else alpha
    back_pt = b.act(b.inverse(phi), o)
    star = frozenset(x for x in range(len(S)) if pair_alignment(b, back_pt, base_axis(S, x), ledger.K0).aligned)
    fwd_pt = b.act(b.compose(phi, S.elements[a_idx].product), o)
    star_c = frozenset(x for x in range(len(Sc)) if pair_alignment(b, fwd_pt, base_axis(Sc, x), ledger.K0).aligned)
    return star, star_c


def paired_dagger_size(fwd: Trajectory, bwd: Trajectory, k: int, ledger: ConstantLedger) -> int:
    """Number of 6-tuples of admissible triples compatible with both filtered sets."""
    P = run_pivotal(fwd, ledger).pivots
    Q = run_pivotal(bwd, ledger).pivots
    i, j = P[k - 1], Q[k - 1]
    tf = pivoting_set(fwd, i, ledger)
    tb = pivoting_set(bwd, j, ledger)
    total = 0
    by_alpha: dict[int, frozenset] = {}
    for a in {t[0] for t in tf}:
        by_alpha[a] = paired_pivot_sets(fwd, bwd, k, ledger, alpha=a)[1]
    star = paired_pivot_sets(fwd, bwd, k, ledger)[0]
    for t in tf:
        if t[0] not in star:
            continue
        allowed = by_alpha[t[0]]
        total += sum(1 for u in tb if u[0] in allowed)
    return total


# ----------------------------------------------------------------------------
# exact laws under uniform Schottky choices


def _prefix_state(S: SchottkySet, ledger: ConstantLedger, choices: Sequence, w: Sequence, v: Sequence) -> PivotalState:
    k = len(choices)
    if k == 0:
        return PivotalState.initial()
    return run_pivotal(Trajectory(S, tuple(w[:k + 1]), tuple(v[:k]), tuple(choices)), ledger)


def step_law(S: SchottkySet, ledger: ConstantLedger, choices: Sequence, w: Sequence, v: Sequence) -> dict[int, Fraction]:
    """Exact law of ``#P_k - #P_{k-1}`` when the ``k``-th quadruple is uniform on ``S^4``.

    ``choices`` fixes the first ``k - 1`` quadruples; ``w`` needs ``k + 1``
    entries and ``v`` needs ``k``.
    """
    k = len(choices) + 1
    if len(w) < k + 1 or len(v) < k:
        raise UsageError(f"step {k} needs {k + 1} w's and {k} v's")
    state = _prefix_state(S, ledger, choices, w, v)
    counts: dict[int, int] = {}
    for quad in itertools.product(range(len(S)), repeat=4):
        traj = Trajectory(S, tuple(w[:k + 1]), tuple(v[:k]), tuple(choices) + (quad,))
        delta = len(pivot_step(state, traj, k, ledger).pivots) - len(state.pivots)
        counts[delta] = counts.get(delta, 0) + 1
    total = len(S) ** 4
    return {d: Fraction(c, total) for d, c in sorted(counts.items())}


def increment_probability(S: SchottkySet, ledger: ConstantLedger, choices: Sequence, w: Sequence, v: Sequence) -> Fraction:
    """``P(#P_k = #P_{k-1} + 1)`` over the ``k``-th quadruple."""
    return step_law(S, ledger, choices, w, v).get(1, Fraction(0))


def count_law(S: SchottkySet, ledger: ConstantLedger, n: int, w: Sequence | None = None, v: Sequence | None = None,
              step_laws: list | None = None) -> dict[int, Fraction]:
    """Exact law of ``#P_n`` over uniform choices in ``S^{4n}``.

    Prefixes are expanded depth first, so each pivotal state is computed
    once.  When ``step_laws`` is a list, the law of the increment after
    every prefix is appended to it.
    """
    e = S.backend.identity
    w = tuple(w) if w is not None else (e,) * (n + 1)
    v = tuple(v) if v is not None else (e,) * n
    if len(w) != n + 1 or len(v) != n:
        raise UsageError(f"need {n + 1} w's and {n} v's")
    N = len(S)
    counts: dict[int, int] = {}

    def expand(choices: tuple, state: PivotalState):
        k = len(choices) + 1
        seen: dict[int, int] = {}
        for quad in itertools.product(range(N), repeat=4):
            ch = choices + (quad,)
            nxt = pivot_step(state, Trajectory(S, w[:k + 1], v[:k], ch), k, ledger)
            d = len(nxt.pivots) - len(state.pivots)
            seen[d] = seen.get(d, 0) + 1
            if k == n:
                counts[len(nxt.pivots)] = counts.get(len(nxt.pivots), 0) + 1
            else:
                expand(ch, nxt)
        if step_laws is not None:
            step_laws.append({d: Fraction(c, N ** 4) for d, c in sorted(seen.items())})

    expand((), PivotalState.initial())
    total = N ** (4 * n)
    return {c: Fraction(x, total) for c, x in sorted(counts.items())}


def effective_ratio(laws: Sequence[dict]) -> float:
    """Least ``q`` with ``P(D <= 0) <= q`` and ``P(D < -m) <= q^{m+1}`` for every law of ``D``.

    With ``q = 4/N0`` these are the per-step bounds behind the domination
    of ``#P_n`` by a sum of i.i.d. increments.
    """
    q = 0.0
    for law in laws:
        q = max(q, float(sum(p for d, p in law.items() if d <= 0)))
        for m in range(1, -min(law) if law else 0):
            tail = float(sum(p for d, p in law.items() if d < -m))
            if tail > 0:
                q = max(q, tail ** (1 / (m + 1)))
    return q


def rational_ratio(laws: Sequence[dict], denominator: int = 10**6) -> Fraction:
    """A rational ``q`` satisfying the bounds of :func:`effective_ratio` exactly."""
    q = Fraction(math.ceil(effective_ratio(laws) * denominator), denominator)
    while not ratio_holds(laws, q):
        q += Fraction(1, denominator)
    return q


def ratio_holds(laws: Sequence[dict], q: Fraction) -> bool:
    for law in laws:
        if sum(p for d, p in law.items() if d <= 0) > q:
            return False
        for m in range(1, -min(law) if law else 0):
            if sum(p for d, p in law.items() if d < -m) > q ** (m + 1):
                return False
    return True


def increment_law(q: Fraction, m: int) -> Fraction:
    """``P(X = m)``: ``1 - q`` at ``m = 1``, ``(1 - q) q^{-m}`` for ``m < 0``, else 0."""
    if m == 1:
        return 1 - q
    if m < 0:
        return (1 - q) * q ** (-m)
    return Fraction(0)


def convolution_upper_tail(q: Fraction, n: int) -> dict[int, Fraction]:
    """``P(X_1 + ... + X_n >= i)`` for ``i = 1..n`` (exact).

    A sum of ``n`` increments reaching ``i >= 1`` has some ``u`` up-steps and
    ``n - u`` down-steps of total size at most ``u - i``.
    """
    if not 0 <= q < 1:
        raise UsageError("q must lie in [0, 1)")
    out = {}
    for i in range(1, n + 1):
        total = Fraction(0)
        for u in range(i, n + 1):
            downs = n - u
            # down-step sizes m_j >= 1 with sum s: C(s-1, downs-1) compositions, weight (1-q)^downs q^s
            if downs == 0:
                total += (1 - q) ** n
                continue
            for s in range(downs, u - i + 1):
                total += math.comb(n, u) * (1 - q) ** n * math.comb(s - 1, downs - 1) * q ** s
        out[i] = total
    return out


def dominates(law: dict[int, Fraction], q: Fraction, n: int) -> bool:
    """Whether ``P(#P_n >= i) >= P(X_1 + ... + X_n >= i)`` for every ``i`` (exact)."""
    tail = convolution_upper_tail(q, n)
    for i in range(1, n + 1):
        if sum(p for c, p in law.items() if c >= i) < tail[i]:
            return False
    return True
