import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pivotwalk.calibration import random_aligned_chains
from pivotwalk.contraction import (
    ConstantLedger,
    all_aligned,
    are_independent,
    check_concatenation_quasigeodesic,
    compute_j0,
    has_bgip,
    is_aligned,
    is_contracting_axis,
    is_quasigeodesic,
    is_witnessed,
    pair_alignment,
    translation_length,
)
from pivotwalk.errors import ConstantLedgerViolation, UsageError
from pivotwalk.schottky import build_axis
from pivotwalk.space import DiscretePath, FreeGroupTree, reduce_word


def power_axis(g, lo, hi):
    pts = tuple(("a" if n > 0 else "A") * abs(n) if g == "a" else reduce_word(g * n if n >= 0 else g.swapcase() * -n)
                for n in range(lo, hi + 1))
    return DiscretePath(pts, lo, True)


def a_axis(r):
    return power_axis("a", -r, r)


@pytest.fixture(scope="module")
def ball6(tree):
    return tree.ball(6)


@pytest.fixture(scope="module")
def chains(S8, ledger8):
    return random_aligned_chains(S8, ledger8.D2, count=25, length=3, seed=11)


@pytest.fixture(scope="module")
def long_chains(S8, ledger8):
    # J0 statements need axes longer than the length threshold L1
    reps = int(ledger8.L1 // ledger8.M0) + 1
    return random_aligned_chains(S8.self_concatenate(reps), ledger8.D2, count=10, length=3, seed=12)


# -- ledger -----------------------------------------------------------------


def test_ledger_invariants(ledger8):
    errors, warns = ledger8.problems()
    assert errors == []
    # the calibrated M0 is far below the long-axis requirement; that is a warning only
    assert any("M0" in w for w in warns)
    bad = ledger8.replace(D1=ledger8.D0)
    assert any("increase" in e for e in bad.problems()[0])
    assert ConstantLedger(K0=1, D0=0.5, D1=2, D2=3).problems()[0]
    assert ConstantLedger.from_dict(ledger8.to_dict()) == ledger8
    with pytest.raises(UsageError):
        ConstantLedger.from_dict({"K0": 1, "Q": 2})


# -- contraction and BGIP -----------------------------------------------------


def test_axis_of_a_contracts_with_K1(tree, ball6):
    assert is_contracting_axis(tree, a_axis(6), 1, ball6)
    assert not is_contracting_axis(tree, a_axis(6), 0.5, ball6)


def test_single_point_path_contracts(tree, ball6):
    for K in (0, 0.5, 3):
        assert is_contracting_axis(tree, DiscretePath(("ab",)), K, ball6[:50])


def test_empty_probe_set_is_usage_error(tree):
    with pytest.raises(UsageError):
        is_contracting_axis(tree, a_axis(2), 1, [])


@pytest.mark.parametrize("K", range(1, 11))
def test_flat_strip_axis_fails(strip, K):
    # two points at height t whose tree parts are K+1 apart satisfy
    # d(x, y) <= d(x, axis) - K while their projections are K+1 apart
    axis = DiscretePath(tuple(("a" * n if n >= 0 else "A" * -n, 0.0) for n in range(-15, 16)), -15)
    t = float(2 * K + 2)
    probes = [(p, s * t) for p, _ in axis.points for s in (1, -1)]
    assert is_quasigeodesic(strip, axis, 1)
    assert not is_contracting_axis(strip, axis, K, probes)


def test_bgip_on_radius_six_geodesics(tree):
    geos = [tree.geodesic(x, y) for x in tree.ball(3) for y in tree.ball(3)]
    assert has_bgip(tree, a_axis(6), 1, geos)
    # a geodesic inside the axis meets its neighbourhood and is skipped
    assert has_bgip(tree, a_axis(6), 0, [tree.geodesic("AA", "aaa")])


def test_bgip_and_contraction_agree_on_tree_axes(tree, ball6):
    # on a tree both predicates hold with K = 1 for every cyclically reduced axis;
    # the constant transfer factor is 1 here
    geos = [tree.geodesic(x, y) for x in tree.ball(2) for y in tree.ball(4)]
    for g in ("a", "ab", "aab", "abAB"):
        ax = build_axis(tree, _seq(tree, g), math.inf, 2)
        for K in (1, 2):
            assert is_contracting_axis(tree, ax, K, ball6) == has_bgip(tree, ax, K, geos) is True


def _seq(backend, word):
    from pivotwalk.schottky import IsometrySequence

    return IsometrySequence.of(backend, list(word))


# -- alignment ----------------------------------------------------------------


def test_alignment_examples(tree):
    kappa = tree.geodesic("", "aaa")
    eta = DiscretePath(("aaab", "aaabb", "aaabbb"), 0, True)
    for C in (1e-3, 0.5, 10):
        assert all_aligned(tree, [kappa, eta], C)
    assert pair_alignment(tree, kappa.begin, kappa, 1e-3).aligned
    v = is_aligned(tree, [kappa, tree.geodesic("", "bb")], 1)[0]
    assert not v.aligned and v.left_spread == 3
    with pytest.raises(UsageError):
        is_aligned(tree, [kappa], 1)


def test_alignment_verdict_matches_spreads(tree):
    kappa = tree.geodesic("", "aaaa")
    for eta_start in ("aa", "aab", "aaaa", "aaaab", "b"):
        eta = tree.geodesic(eta_start, eta_start + "bbb" if not eta_start.endswith("B") else eta_start)
        v = pair_alignment(tree, kappa, eta, 2)
        assert v.aligned == (v.left_spread < 2 and v.right_spread < 2)


# -- J0 ----------------------------------------------------------------------


def test_j0_examples(tree):
    axes = [tree.geodesic("", "aaa"), tree.geodesic("aaab", "aaabbbb")]
    assert compute_j0(tree, "aaabbbbb", axes, 3) == {2}
    assert compute_j0(tree, "", axes, 3) == {1}
    # with a generous D the point between the axes sees both
    assert compute_j0(tree, "aaab", axes, 5) == {1, 2}


def test_j0_rejects_a_too_small_constant(tree):
    # the second axis branches off the first, so no index sees "abbb" correctly
    axes = [tree.geodesic("", "aaa"), tree.geodesic("ab", "abbb")]
    with pytest.raises(ConstantLedgerViolation):
        compute_j0(tree, "abbb", axes, 0.5)


def test_j0_is_one_or_two_consecutive_on_chains(tree, long_chains, ledger8):
    probes = tree.ball(4)
    for _, axes, _ in long_chains:
        for p in probes[::7]:
            J = compute_j0(tree, p, axes, ledger8.D0)
            assert 1 <= len(J) <= 2 and max(J) - min(J) <= len(J) - 1


def test_projection_to_union_lands_in_j0(tree, long_chains, ledger8):
    for _, axes, _ in long_chains:
        union = [p for ax in axes for p in ax.points]
        for p in tree.ball(3):
            J = compute_j0(tree, p, axes, ledger8.D0)
            allowed = set()
            for j in J:
                allowed |= tree.project(axes[j - 1], p)
            assert tree.project(union, p) <= allowed


# -- consequences of alignment on Schottky chains -----------------------------


def test_chains_exist(chains, long_chains):
    assert len(chains) >= 20
    assert len(long_chains) == 10


def test_aligned_chains_are_pairwise_aligned(tree, chains, ledger8):
    for _, axes, _ in chains:
        for l in range(len(axes)):
            for m in range(l + 1, len(axes)):
                assert pair_alignment(tree, axes[l], axes[m], ledger8.D0).aligned


def test_aligned_chains_are_witnessed(tree, chains, ledger8):
    E = ledger8.E0
    for x, axes, y in chains:
        assert is_witnessed(tree, x, y, [(ax.begin, ax.end) for ax in axes], E)
        line = tree.geodesic(x, y)
        for ax in axes:
            for p in ax.points:
                assert tree.distance_to_set(p, line) <= E
                assert tree.gromov_product(x, y, p) < E


def test_exclusivity_on_aligned_pairs(tree, chains, ledger8):
    D = ledger8.D0
    probes = tree.ball(5)
    for _, axes, _ in chains[:10]:
        kappa, eta = axes[0], axes[1]
        for p in probes:
            near_eta = tree.projection_spread(eta, p, eta.begin) >= D
            near_kappa = tree.projection_spread(kappa, p, kappa.end) >= D
            assert not (near_eta and near_kappa)


# -- witnessing ----------------------------------------------------------------


def test_witnessing_examples(tree):
    assert is_witnessed(tree, "", "aaaaaa", [("aa", "aaaa")], 0)
    assert is_witnessed(tree, "", "aaaaaa", [("", "aaaaaa")], 0)
    for D in (0, 1, 1.9):
        assert not is_witnessed(tree, "", "bbbbbb", [("aa", "aaaa")], D)


def test_witnessing_respects_order(tree):
    assert is_witnessed(tree, "", "aaaaaa", [("a", "aa"), ("aaa", "aaaaa")], 0)
    assert not is_witnessed(tree, "", "aaaaaa", [("aaa", "aaaaa"), ("a", "aa")], 0)


# -- translation length and independence ----------------------------------------


def test_translation_length_examples(tree, plane):
    assert translation_length(tree, "ab", 4) == 2
    assert translation_length(tree, "", 4) == 0
    assert translation_length(tree, "abA", 4) == translation_length(tree, "b", 4) == 1
    assert translation_length(plane, (2.0, 0.0, 0.0, 0.5), 8) == pytest.approx(math.log(4), abs=1e-9)
    with pytest.raises(UsageError):
        translation_length(tree, "a", 0)


@settings(max_examples=40)
@given(st.text(alphabet="abAB", min_size=1, max_size=8).map(reduce_word), st.text(alphabet="abAB", max_size=5).map(reduce_word))
def test_translation_length_conjugation_invariant(g, h):
    t = FreeGroupTree(2)
    conj = t.compose(t.compose(h, g), t.inverse(h))
    assert translation_length(t, g, 16) == translation_length(t, conj, 16)


def test_independence_examples(tree):
    assert are_independent(tree, "a", "b", 6)
    assert not are_independent(tree, "a", "a", 6)
    assert are_independent(tree, "a", "abA", 6)
    with pytest.raises(UsageError):
        are_independent(tree, "", "a", 3)


# -- concatenation ------------------------------------------------------------


def test_concatenation_of_schottky_axes(tree, S8):
    alpha, beta = S8.elements[0], S8.elements[-1]
    first = build_axis(tree, alpha, 1)
    second = tree.translate(alpha.product, build_axis(tree, beta, 1))
    third = tree.translate(tree.compose(alpha.product, beta.product), build_axis(tree, alpha, 1))
    assert check_concatenation_quasigeodesic(tree, [first, second, third], 3, 1)
    assert check_concatenation_quasigeodesic(tree, [first], 3, 1)


def test_backtracking_concatenation_fails(tree):
    kappa = tree.geodesic("", "aaaaaa")
    assert not check_concatenation_quasigeodesic(tree, [kappa, kappa.reverse()], 1, 2)
