"""Metric-space backends: free-group tree, hyperbolic plane, tree x line.

Every backend exposes the same small contract (distance, geodesics,
an isometry action and closest-point projection) so the geometric
predicates in :mod:`pivotwalk.contraction` can run on any of them.
"""

from __future__ import annotations

import math
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Hashable, Iterable, Sequence

import numpy as np

from .errors import UsageError

Point = Hashable
Isometry = Hashable


@dataclass(frozen=True)
class DiscretePath:
    """An indexed, nonempty sequence of points.

    ``start`` is the index of the first point, so indices run over
    ``start, start + 1, ...``.  ``geodesic`` is a hint that consecutive
    points are unit steps along a single geodesic; backends may use it
    to shortcut projections.
    """

    points: tuple
    start: int = 0
    geodesic: bool = False

    def __post_init__(self):
        if len(self.points) == 0:
            raise UsageError("a path needs at least one point")
        if not isinstance(self.points, tuple):
            object.__setattr__(self, "points", tuple(self.points))

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    @property
    def begin(self):
        return self.points[0]

    @property
    def end(self):
        return self.points[-1]

    @property
    def indices(self) -> range:
        return range(self.start, self.start + len(self.points))

    def at(self, i: int):
        return self.points[i - self.start]

    def reverse(self) -> "DiscretePath":
        """The reversed path; index ``i`` of the original becomes ``-i``."""
        return DiscretePath(self.points[::-1], -(self.start + len(self.points) - 1), self.geodesic)

    def restrict(self, lo: int, hi: int) -> "DiscretePath":
        """Subpath over the index interval ``[lo, hi]``."""
        lo = max(lo, self.start)
        hi = min(hi, self.start + len(self.points) - 1)
        if lo > hi:
            raise UsageError("empty restriction")
        return DiscretePath(self.points[lo - self.start: hi - self.start + 1], lo, self.geodesic)


def as_points(obj) -> tuple:
    """Points of a path, a single point wrapped in a tuple, or a point collection."""
    if isinstance(obj, DiscretePath):
        return obj.points
    if isinstance(obj, (set, frozenset, list, tuple)) and not _looks_like_point(obj):
        return tuple(obj)
    return (obj,)


def _looks_like_point(obj) -> bool:
    # product-backend points are 2-tuples (word, height)
    return isinstance(obj, tuple) and len(obj) == 2 and isinstance(obj[0], str) and isinstance(obj[1], (int, float))


class SpaceBackend(ABC):
    """A pointed geodesic metric space with an isometry action."""

    name: str = "abstract"
    eps: float = 0.0

    @property
    @abstractmethod
    def basepoint(self) -> Point: ...

    @property
    @abstractmethod
    def identity(self) -> Isometry: ...

    @abstractmethod
    def check_point(self, x) -> None: ...

    @abstractmethod
    def check_isometry(self, g) -> None: ...

    @abstractmethod
    def _distance(self, x, y) -> float: ...

    @abstractmethod
    def compose(self, g, h) -> Isometry: ...

    @abstractmethod
    def inverse(self, g) -> Isometry: ...

    @abstractmethod
    def act(self, g, x) -> Point: ...

    @abstractmethod
    def geodesic(self, x, y, resolution: float | None = None) -> DiscretePath: ...

    @abstractmethod
    def parse_isometry(self, spec) -> Isometry: ...

    @abstractmethod
    def describe_isometry(self, g) -> Any: ...

    @property
    def generators(self) -> dict:
        return {}

    def distance(self, x, y) -> float:
        self.check_point(x)
        self.check_point(y)
        return self._distance(x, y)

    def distance_matrix(self, xs: Sequence, ys: Sequence) -> np.ndarray:
        out = np.empty((len(xs), len(ys)), dtype=float)
        for i, x in enumerate(xs):
            for j, y in enumerate(ys):
                out[i, j] = self._distance(x, y)
        return out

    def pairwise(self, points: Sequence) -> np.ndarray:
        """Distance matrix of a point list with itself, memoized for reuse across checks."""
        key = tuple(points)
        cache = self.__dict__.setdefault("_pairwise_cache", {})
        hit = cache.get(key)
        if hit is None:
            if len(cache) >= 4:
                cache.pop(next(iter(cache)))
            hit = cache[key] = self.distance_matrix(key, key)
            hit.setflags(write=False)
        return hit

    def gromov_product(self, y, x, base):
        """Standard Gromov product ``(y, x)_base``."""
        return 0.5 * (self.distance(base, y) + self.distance(base, x) - self.distance(y, x))

    def displayed_gromov_product(self, y, x, z):
        """The formula ``(d(y,x) + d(x,z) - d(y,z)) / 2`` taken literally.

        Kept only for comparison with :meth:`gromov_product`; it treats the
        middle argument as the base point.
        """
        return 0.5 * (self.distance(y, x) + self.distance(x, z) - self.distance(y, z))

    def orbit(self, g) -> Point:
        return self.act(g, self.basepoint)

    def power(self, g, n: int) -> Isometry:
        if n < 0:
            g, n = self.inverse(g), -n
        result, base = self.identity, g
        while n:
            if n & 1:
                result = self.compose(result, base)
            base = self.compose(base, base)
            n >>= 1
        return result

    def translate(self, g, path: DiscretePath) -> DiscretePath:
        return DiscretePath(tuple(self.act(g, p) for p in path.points), path.start, path.geodesic)

    def distance_to_set(self, x, A) -> float:
        return min(self._distance(x, a) for a in as_points(A))

    def project(self, A, x) -> frozenset:
        """Closest-point projection of ``x`` onto ``A`` (a path or point set)."""
        pts = as_points(A)
        ds = [self._distance(x, a) for a in pts]
        best = min(ds)
        return frozenset(a for a, d in zip(pts, ds) if d <= best + self.eps)

    def project_path(self, A, B) -> frozenset:
        """Union of the projections of every point of ``B`` onto ``A``."""
        out: set = set()
        for b in as_points(B):
            out |= self.project(A, b)
        return frozenset(out)

    def diameter(self, points: Iterable) -> float:
        pts = list(points)
        best = 0.0
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                best = max(best, self._distance(pts[i], pts[j]))
        return best

    def is_geodesic_path(self, points: Sequence) -> bool:
        """True when consecutive points are unit steps along one geodesic."""
        if len(points) == 1:
            return True
        steps = [self._distance(points[i], points[i + 1]) for i in range(len(points) - 1)]
        if any(abs(s - 1) > self.eps for s in steps):
            return False
        return abs(self._distance(points[0], points[-1]) - (len(points) - 1)) <= self.eps

    def exact_translation_length(self, g) -> float | None:
        return None

    def projection_spread(self, A, B, anchor) -> float:
        """``diam(anchor ∪ π_A(B))``, the quantity compared in alignment tests."""
        return self.diameter(self.project_path(A, B) | {anchor})

    def ball(self, radius: int) -> list:
        raise UsageError(f"backend {self.name} has no exhaustive ball")


# ----------------------------------------------------------------------------
# free group tree


_LETTERS = "abcdefghij"


def invert_word(w: str) -> str:
    return w[::-1].swapcase()


def common_prefix_length(u: str, v: str) -> int:
    n = min(len(u), len(v))
    if u[:n] == v[:n]:
        return n
    lo, hi = 0, n
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if u[:mid] == v[:mid]:
            lo = mid
        else:
            hi = mid
    return lo


def cancellation_length(u: str, v: str) -> int:
    """Number of letters cancelled in the free product ``u * v``."""
    n = min(len(u), len(v))
    if n == 0:
        return 0
    lu = len(u)
    if u[lu - n:] == invert_word(v[:n]):
        return n
    lo, hi = 0, n
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if u[lu - mid:] == invert_word(v[:mid]):
            lo = mid
        else:
            hi = mid
    return lo


def multiply_words(u: str, v: str) -> str:
    k = cancellation_length(u, v)
    return u[: len(u) - k] + v[k:]


def reduce_word(w: str) -> str:
    out: list[str] = []
    for ch in w:
        if out and out[-1] == ch.swapcase():
            out.pop()
        else:
            out.append(ch)
    return "".join(out)


def cyclically_reduce(w: str) -> str:
    w = reduce_word(w)
    i, j = 0, len(w)
    while j - i >= 2 and w[i] == w[j - 1].swapcase():
        i += 1
        j -= 1
    return w[i:j]


class FreeGroupTree(SpaceBackend):
    """Cayley tree of the free group with its word metric.

    Points and isometries are freely reduced words over ``a, b, ...`` with
    upper-case letters for inverses.  The basepoint is the empty word.
    Everything is exact.
    """

    eps = 0.0

    def __init__(self, rank: int = 2):
        if not 1 <= rank <= len(_LETTERS):
            raise UsageError("rank out of range")
        self.rank = rank
        self.name = f"tree-F{rank}"
        self.letters = _LETTERS[:rank]
        self.alphabet = self.letters + self.letters.upper()
        pairs = "|".join(f"{c}{c.upper()}|{c.upper()}{c}" for c in self.letters)
        self._bad_pair = re.compile(pairs)
        self._bad_char = re.compile(f"[^{self.alphabet}]")

    @property
    def basepoint(self) -> str:
        return ""

    @property
    def identity(self) -> str:
        return ""

    @property
    def generators(self) -> dict:
        return {c: c for c in self.letters}

    def check_point(self, x) -> None:
        if not isinstance(x, str):
            raise UsageError(f"{self.name} points are reduced words, got {type(x).__name__}")
        if self._bad_char.search(x) or self._bad_pair.search(x):
            raise UsageError(f"not a reduced word over {self.alphabet}: {x!r}")

    check_isometry = check_point

    def _distance(self, x: str, y: str) -> int:
        return len(x) + len(y) - 2 * common_prefix_length(x, y)

    def distance_matrix(self, xs, ys) -> np.ndarray:
        width = max([len(w) for w in xs] + [len(w) for w in ys] + [0])
        if width == 0:
            return np.zeros((len(xs), len(ys)), dtype=np.int64)
        xa, xl = self._encode(xs, width, 0)
        ya, yl = self._encode(ys, width, -1)
        out = np.empty((len(xs), len(ys)), dtype=np.int64)
        chunk = max(1, 2_000_000 // max(1, len(ys) * width))
        for i in range(0, len(xs), chunk):
            eq = xa[i:i + chunk, None, :] == ya[None, :, :]
            cp = np.cumprod(eq, axis=2).sum(axis=2)
            out[i:i + chunk] = xl[i:i + chunk, None] + yl[None, :] - 2 * cp
        return out

    def _encode(self, words, width: int, fill: int) -> tuple[np.ndarray, np.ndarray]:
        # padding differs between the two sides so it never matches
        lengths = np.array([len(w) for w in words], dtype=np.int64)
        arr = np.full((len(words), width), fill, dtype=np.int8)
        for i, w in enumerate(words):
            if w:
                arr[i, : len(w)] = np.frombuffer(w.encode("ascii"), dtype=np.uint8).view(np.int8)
        return arr, lengths

    def gromov_product(self, y, x, base) -> int:
        total = self.distance(base, y) + self.distance(base, x) - self.distance(y, x)
        return total // 2

    def compose(self, g: str, h: str) -> str:
        return multiply_words(g, h)

    def inverse(self, g: str) -> str:
        return invert_word(g)

    def act(self, g: str, x: str) -> str:
        return multiply_words(g, x)

    def geodesic(self, x: str, y: str, resolution: float | None = None) -> DiscretePath:
        self.check_point(x)
        self.check_point(y)
        c = common_prefix_length(x, y)
        pts = [x[:i] for i in range(len(x), c - 1, -1)]
        pts += [y[:j] for j in range(c + 1, len(y) + 1)]
        return DiscretePath(tuple(pts), 0, True)

    def project(self, A, x) -> frozenset:
        if isinstance(A, DiscretePath) and A.geodesic and len(A) > 1:
            return frozenset((A.points[self._branch_index(A, x)],))
        return super().project(A, x)

    def project_path(self, A, B) -> frozenset:
        if isinstance(A, DiscretePath) and A.geodesic and len(A) > 1:
            bs = as_points(B)
            if isinstance(B, DiscretePath) and B.geodesic and len(B) > 1:
                bs = (B.begin, B.end)
            idx = [self._branch_index(A, b) for b in bs]
            return frozenset(A.points[min(idx): max(idx) + 1])
        return super().project_path(A, B)

    def projection_spread(self, A, B, anchor) -> int:
        if isinstance(A, DiscretePath) and A.geodesic and len(A) > 1 and anchor in (A.begin, A.end):
            bs = as_points(B)
            if isinstance(B, DiscretePath) and B.geodesic and len(B) > 1:
                bs = (B.begin, B.end)
            idx = [self._branch_index(A, b) for b in bs]
            if anchor == A.begin and anchor != A.end:
                return max(idx)
            if anchor == A.end and anchor != A.begin:
                return len(A) - 1 - min(idx)
        return super().projection_spread(A, B, anchor)

    def _branch_index(self, A: DiscretePath, x: str) -> int:
        # on a tree the nearest vertex of a geodesic segment [p, q] to x sits
        # at distance (q, x)_p from p
        p, q = A.begin, A.end
        return (self._distance(p, q) + self._distance(p, x) - self._distance(q, x)) // 2

    def is_geodesic_path(self, points) -> bool:
        if len(points) == 1:
            return True
        if self._distance(points[0], points[-1]) != len(points) - 1:
            return False
        return all(self._distance(points[i], points[i + 1]) == 1 for i in range(len(points) - 1))

    def exact_translation_length(self, g: str) -> int:
        return len(cyclically_reduce(g))

    def parse_isometry(self, spec) -> str:
        if not isinstance(spec, str):
            raise UsageError(f"tree isometries are words, got {spec!r}")
        word = reduce_word(spec.replace(" ", ""))
        self.check_isometry(word)
        return word

    def describe_isometry(self, g: str) -> str:
        return g

    def ball(self, radius: int) -> list[str]:
        """All reduced words of length at most ``radius``, shortlex ordered."""
        out = [""]
        layer = [""]
        for _ in range(radius):
            nxt = []
            for w in layer:
                for ch in self.alphabet:
                    if w and w[-1] == ch.swapcase():
                        continue
                    nxt.append(w + ch)
            out += nxt
            layer = nxt
        return out

    def commute(self, g: str, h: str) -> bool:
        return multiply_words(g, h) == multiply_words(h, g)


# ----------------------------------------------------------------------------
# hyperbolic upper half-plane


class HyperbolicPlane(SpaceBackend):
    """Upper half-plane model with real Mobius matrices of determinant one.

    Points are complex numbers with positive imaginary part; isometries
    are 4-tuples ``(a, b, c, d)`` acting by ``z -> (az + b)/(cz + d)``.
    """

    name = "hyperbolic-plane"

    def __init__(self, eps: float = 1e-9, resolution: float = 0.1):
        self.eps = eps
        self.resolution = resolution
        c, s = math.cosh(math.log(2)), math.sinh(math.log(2))
        self._generators = {"a": (2.0, 0.0, 0.0, 0.5), "b": (c, s, s, c)}

    @property
    def basepoint(self) -> complex:
        return 1j

    @property
    def identity(self):
        return (1.0, 0.0, 0.0, 1.0)

    @property
    def generators(self) -> dict:
        return dict(self._generators)

    def check_point(self, x) -> None:
        if not isinstance(x, complex):
            raise UsageError(f"{self.name} points are complex numbers, got {type(x).__name__}")
        if not x.imag > 0:
            raise UsageError(f"point {x} is not in the upper half-plane")

    def check_isometry(self, g) -> None:
        if not (isinstance(g, tuple) and len(g) == 4):
            raise UsageError("Mobius isometries are 4-tuples")
        a, b, c, d = g
        if abs(a * d - b * c - 1) > 1e-6:
            raise UsageError(f"determinant of {g} is not 1")

    def _distance(self, z: complex, w: complex) -> float:
        return 2.0 * math.asinh(abs(z - w) / (2.0 * math.sqrt(z.imag * w.imag)))

    def compose(self, g, h):
        a, b, c, d = g
        e, f, k, l = h
        return (a * e + b * k, a * f + b * l, c * e + d * k, c * f + d * l)

    def inverse(self, g):
        a, b, c, d = g
        return (d, -b, -c, a)

    def act(self, g, z: complex) -> complex:
        a, b, c, d = g
        return (a * z + b) / (c * z + d)

    def geodesic(self, z: complex, w: complex, resolution: float | None = None) -> DiscretePath:
        self.check_point(z)
        self.check_point(w)
        h = resolution or self.resolution
        total = self._distance(z, w)
        if total <= self.eps:
            return DiscretePath((z,))
        steps = max(1, math.ceil(total / h - 1e-12))
        ts = [total * k / steps for k in range(steps + 1)]
        if abs(z.real - w.real) <= 1e-12 * max(1.0, abs(z), abs(w)):
            sign = 1.0 if w.imag >= z.imag else -1.0
            pts = [complex(z.real, z.imag * math.exp(sign * t)) for t in ts]
        else:
            center = (abs(w) ** 2 - abs(z) ** 2) / (2.0 * (w.real - z.real))
            radius = abs(z - center)
            phi_z = math.atan2(z.imag, z.real - center)
            phi_w = math.atan2(w.imag, w.real - center)
            s_z = math.log(math.tan(phi_z / 2))
            s_w = math.log(math.tan(phi_w / 2))
            sign = 1.0 if s_w >= s_z else -1.0
            pts = []
            for t in ts:
                phi = 2.0 * math.atan(math.exp(s_z + sign * t))
                pts.append(complex(center + radius * math.cos(phi), radius * math.sin(phi)))
        pts[0], pts[-1] = z, w
        return DiscretePath(tuple(pts))

    def parse_isometry(self, spec):
        if isinstance(spec, str) and spec in self._generators:
            return self._generators[spec]
        if isinstance(spec, str) and spec.upper() == spec and spec.lower() in self._generators:
            return self.inverse(self._generators[spec.lower()])
        g = tuple(float(v) for v in spec)
        self.check_isometry(g)
        return g

    def describe_isometry(self, g):
        return [float(v) for v in g]


# ----------------------------------------------------------------------------
# tree x line, l2 product


class TreeTimesLine(SpaceBackend):
    """The l2 product of the free-group tree with the real line.

    Points are ``(word, height)``; isometries ``(word, shift)`` act
    factorwise.  Translation axes here span flat strips, so they are not
    contracting; the backend exists as a negative control.
    """

    name = "tree-x-line"

    def __init__(self, rank: int = 2, eps: float = 1e-9):
        self.tree = FreeGroupTree(rank)
        self.eps = eps

    @property
    def basepoint(self):
        return ("", 0.0)

    @property
    def identity(self):
        return ("", 0.0)

    @property
    def generators(self) -> dict:
        gens = {c: (c, 0.0) for c in self.tree.letters}
        gens["t"] = ("", 1.0)
        return gens

    def check_point(self, x) -> None:
        if not (isinstance(x, tuple) and len(x) == 2):
            raise UsageError(f"{self.name} points are (word, height) pairs")
        self.tree.check_point(x[0])
        if not isinstance(x[1], (int, float)):
            raise UsageError("height must be a real number")

    check_isometry = check_point

    def _distance(self, x, y) -> float:
        return math.hypot(self.tree._distance(x[0], y[0]), x[1] - y[1])

    def distance_matrix(self, xs, ys) -> np.ndarray:
        tree = self.tree.distance_matrix([x[0] for x in xs], [y[0] for y in ys])
        hx = np.array([x[1] for x in xs], dtype=float)
        hy = np.array([y[1] for y in ys], dtype=float)
        return np.hypot(tree, hx[:, None] - hy[None, :])

    def compose(self, g, h):
        return (multiply_words(g[0], h[0]), float(g[1] + h[1]))

    def inverse(self, g):
        return (invert_word(g[0]), float(-g[1]))

    def act(self, g, x):
        return (multiply_words(g[0], x[0]), float(g[1] + x[1]))

    def geodesic(self, x, y, resolution: float | None = None) -> DiscretePath:
        self.check_point(x)
        self.check_point(y)
        tree_path = self.tree.geodesic(x[0], y[0]).points
        n = len(tree_path) - 1
        if n == 0:
            gap = y[1] - x[1]
            steps = max(1, math.ceil(abs(gap) - 1e-12))
            pts = tuple((x[0], float(x[1] + gap * k / steps)) for k in range(steps + 1))
            return DiscretePath(pts if gap else (x,))
        pts = tuple((tree_path[k], float(x[1] + (y[1] - x[1]) * k / n)) for k in range(n + 1))
        return DiscretePath(pts)

    def parse_isometry(self, spec):
        if isinstance(spec, str):
            return (self.tree.parse_isometry(spec), 0.0)
        word, shift = spec
        return (self.tree.parse_isometry(word), float(shift))

    def describe_isometry(self, g):
        return [g[0], g[1]]


def make_backend(spec: dict | str) -> SpaceBackend:
    """Build a backend from a config fragment like ``{"kind": "tree", "rank": 2}``."""
    if isinstance(spec, str):
        spec = {"kind": spec}
    kind = spec.get("kind")
    if kind == "tree":
        return FreeGroupTree(spec.get("rank", 2))
    if kind == "hyperbolic":
        return HyperbolicPlane(spec.get("eps", 1e-9), spec.get("resolution", 0.1))
    if kind == "tree-x-line":
        return TreeTimesLine(spec.get("rank", 2), spec.get("eps", 1e-9))
    raise UsageError(f"unknown backend kind {kind!r}")
