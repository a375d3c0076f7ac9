import itertools
import json
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pivotwalk.contraction import all_aligned
from pivotwalk.errors import UsageError
from pivotwalk.pivotal import (
    ORIGIN,
    PivotalState,
    Trajectory,
    apply_pivot,
    class_factors,
    class_size,
    convolution_upper_tail,
    count_law,
    dominates,
    equivalence_class,
    increment_law,
    paired_dagger_size,
    paired_pivot_sets,
    pivot_step,
    pivotal_history,
    pivoting_conditions,
    pivoting_set,
    pivoting_set_direct,
    pt,
    rational_ratio,
    ratio_holds,
    reference_pivotal_sets,
    run_pivotal,
    step_law,
)
from pivotwalk.schottky import build_axis
from pivotwalk.space import invert_word, reduce_word

# (w, v) instances for the exhaustive |S| = 2 corpus; each exercises the second criterion
INSTANCES = [
    (None, None),
    (("", "A", "", ""), None),
    (("B", "aa", "", ""), None),
    (("bab", "", "A", "b"), None),
    (("aB", "b", "a", "B"), None),
    (None, ("A", "B", "a")),
    (("", "b", "", ""), ("A", "", "Ab")),
    (("a", "BA", "Ab", "a"), ("bA", "aa", "B")),
]


def all_choices(N, n):
    for flat in itertools.product(range(N), repeat=4 * n):
        yield tuple(flat[4 * i: 4 * i + 4] for i in range(n))


@pytest.fixture(scope="module")
def corpus(S2, ledger2):
    out = []
    for w, v in INSTANCES:
        for ch in all_choices(2, 3):
            traj = Trajectory.uniform(S2, ch, w=w, v=v)
            out.append((traj, pivotal_history(traj, ledger2)))
    return out


def random_word(rng, S):
    kind = rng.choice(["id", "inverse", "random"])
    if kind == "inverse":
        return invert_word(rng.choice(S.elements).product)[: rng.randint(1, 3)]
    if kind == "random":
        return reduce_word("".join(rng.choice("abAB") for _ in range(rng.randint(1, 4))))
    return ""


def random_trajectories(S, n, count, seed):
    rng = random.Random(seed)
    N = len(S)
    for _ in range(count):
        ch = tuple(tuple(rng.randrange(N) for _ in range(4)) for _ in range(n))
        yield Trajectory(S, [random_word(rng, S) for _ in range(n + 1)], [random_word(rng, S) for _ in range(n)], ch)


# -- trajectory bookkeeping -----------------------------------------------------


def test_prefix_identities(S8, tree):
    for traj in random_trajectories(S8, 3, 10, 5):
        for i in range(1, 4):
            a, b, c, d = (S8.elements[x].product for x in traj.choices[i - 1])
            prev = traj.prefix("+", i - 1, 2) if i > 1 else tree.identity
            assert traj.prefix("-", i, 2) == tree.compose(prev, traj.w[i - 1])
            expect = tree.compose(tree.compose(tree.compose(tree.compose(tree.compose(
                traj.prefix("-", i, 2), a), b), traj.v[i - 1]), c), d)
            assert traj.prefix("+", i, 2) == expect
        word = ""
        for i in range(3):
            a, b, c, d = (S8.elements[x].product for x in traj.choices[i])
            word += traj.w[i] + a + b + traj.v[i] + c + d
        word += traj.w[3]
        assert traj.product() == reduce_word(word)
        assert traj.y("-", 4, 2) == reduce_word(word)


def test_trajectory_shape_errors(S2):
    with pytest.raises(UsageError):
        Trajectory(S2, ("",), ("",), ((0, 0, 0, 0),))
    with pytest.raises(UsageError):
        Trajectory.uniform(S2, [(0, 0, 0, 5)])
    with pytest.raises(UsageError):
        Trajectory.uniform(S2, [(0, 0, 0, 0)]).prefix("+", 2, 1)


# -- the state machine -----------------------------------------------------------


def test_reference_agrees_on_exhaustive_corpus(corpus, ledger2):
    assert len(corpus) == len(INSTANCES) * 4096
    for traj, hist in corpus:
        assert [h.pivots for h in hist] == reference_pivotal_sets(traj, ledger2)


def test_corpus_exercises_both_criteria(corpus):
    rules = set()
    for _, hist in corpus:
        for entry in hist[-1].transcript:
            rules.add((entry["rule"], entry.get("chain") is not None))
    assert rules == {("A", False), ("B", False), ("B", True)}


def test_reference_agrees_at_eight_elements(S8, ledger8):
    for traj in random_trajectories(S8, 4, 40, 7):
        assert [h.pivots for h in pivotal_history(traj, ledger8)] == reference_pivotal_sets(traj, ledger8)


def test_pivot_sets_follow_the_rules(corpus):
    for _, hist in corpus[::5]:
        for prev, cur in zip(hist, hist[1:]):
            entry = cur.transcript[-1]
            assert set(cur.pivots) <= set(range(1, cur.n + 1))
            if entry["rule"] == "A":
                assert cur.pivots == prev.pivots + (cur.n,)
                assert cur.z_key == pt("+", cur.n, 1)
            elif entry["chain"] is None:
                assert cur.pivots == () and cur.z_key == ORIGIN
            else:
                i1 = entry["chain"][0]
                assert cur.pivots == tuple(p for p in prev.pivots if p <= i1)


def test_identity_instance_is_all_first_criterion(S2, ledger2):
    for ch in all_choices(2, 3):
        assert run_pivotal(Trajectory.uniform(S2, ch), ledger2).pivots == (1, 2, 3)


def test_base_case(S8, ledger8):
    traj = Trajectory.uniform(S8, [(1, 2, 3, 4)])
    state = run_pivotal(traj, ledger8)
    assert state.pivots == (1,)
    assert state.z(traj) == traj.y("+", 1, 1)


def test_backtracking_v_empties_the_set(S8, ledger8):
    # v_1 undoes a_1 b_1, so the beta axis points back at the start
    traj = Trajectory.uniform(S8, [(0, 0, 0, 0)], v=["AAAAAA"])
    state = run_pivotal(traj, ledger8)
    assert state.pivots == () and state.z(traj) == ""
    assert state.transcript[-1] == {"step": 1, "rule": "B", "chain": None}


def test_step_requires_previous_state(S2, ledger2):
    traj = Trajectory.uniform(S2, [(0, 0, 0, 0)] * 2)
    with pytest.raises(UsageError):
        pivot_step(PivotalState.initial(), traj, 2, ledger2)


def test_transcript_serializes(S2, ledger2):
    traj = Trajectory.uniform(S2, [(0, 1, 0, 1)] * 3, w=("aB", "b", "a", "B"))
    state = run_pivotal(traj, ledger2)
    data = json.loads(state.to_json())
    assert data["pivots"] == list(state.pivots) and len(data["transcript"]) == 3
    assert json.loads(json.dumps(traj.to_dict()))["choices"] == [[0, 1, 0, 1]] * 3


def test_extremal_alignment_on_corpus(corpus, ledger2, tree):
    for traj, hist in corpus:
        for k, state in enumerate(hist):
            items = [tree.basepoint]
            for i in state.pivots:
                items += [traj.axis(kind, i) for kind in "abcd"]
            items.append(traj.y("-", k + 1, 2))
            assert all_aligned(tree, items, ledger2.D1)


def test_extremal_alignment_at_eight_elements(S8, ledger8, tree):
    for traj in random_trajectories(S8, 4, 40, 8):
        state = run_pivotal(traj, ledger8)
        items = [tree.basepoint] + [traj.axis(kind, i) for i in state.pivots for kind in "abcd"]
        assert all_aligned(tree, items + [traj.y("-", 5, 2)], ledger8.D1)


# -- pivoting sets ------------------------------------------------------------------


def test_pivoting_set_bounds(S8, ledger8):
    N = len(S8)
    for traj in random_trajectories(S8, 3, 12, 9):
        for k in (1, 2, 3):
            tilde = pivoting_set(traj, k, ledger8)
            assert N ** 3 - len(tilde) <= 3 * N ** 2
            alpha_ok, beta_ok, gamma_ok = pivoting_conditions(traj, k, ledger8)
            for c in range(N):
                if gamma_ok[c]:
                    assert sum(beta_ok[c]) >= N - 1


def test_pivoting_set_matches_substitution(S8, ledger8):
    for traj in random_trajectories(S8, 3, 6, 10):
        for k in (1, 2, 3):
            assert pivoting_set(traj, k, ledger8) == pivoting_set_direct(traj, k, ledger8)


def test_pivots_preserve_pivotal_sets(S8, ledger8):
    rng = random.Random(11)
    for traj in random_trajectories(S8, 4, 15, 12):
        k = traj.n
        base = pivotal_history(traj, ledger8)
        for i in base[-1].pivots:
            triple = rng.choice(sorted(pivoting_set(traj, i, ledger8)))
            moved = apply_pivot(traj, i, triple, ledger8)
            hist = pivotal_history(moved, ledger8)
            assert [h.pivots for h in hist] == [h.pivots for h in base]
            for l in range(1, k + 1):
                assert pivoting_set(moved, l, ledger8) == pivoting_set(traj, l, ledger8)


def test_identity_pivot(S8, ledger8):
    traj = next(random_trajectories(S8, 3, 1, 13))
    i = run_pivotal(traj, ledger8).pivots[0]
    assert apply_pivot(traj, i, traj.choices[i - 1][:3], ledger8) == traj


def test_pivot_errors(S8, ledger8):
    traj = Trajectory.uniform(S8, [(0, 0, 0, 0)], v=["AAAAAA"])
    with pytest.raises(UsageError):
        apply_pivot(traj, 1, (0, 0, 0), ledger8)
    traj = Trajectory.uniform(S8, [(1, 2, 3, 4)])
    bad = sorted(set(itertools.product(range(8), repeat=3)) - pivoting_set(traj, 1, ledger8))
    if bad:
        with pytest.raises(UsageError):
            apply_pivot(traj, 1, bad[0], ledger8)


def test_classes_partition_the_corpus(S2, ledger2):
    # pivoted-from is symmetric and transitive: the classes partition S^{4n}
    for w, v in INSTANCES[::2]:
        seen = {}
        for ch in all_choices(2, 3):
            traj = Trajectory.uniform(S2, ch, w=w, v=v)
            if traj.choices in seen:
                continue
            pivots, factors = class_factors(traj, 3, ledger2)
            members = list(equivalence_class(traj, 3, ledger2))
            assert len(members) == class_size(traj, 3, ledger2) == len({m.choices for m in members})
            for m in members:
                assert m.choices not in seen
                assert class_factors(m, 3, ledger2) == (pivots, factors)
                seen[m.choices] = traj.choices
        assert len(seen) == 2 ** 12


def test_class_without_pivots_is_a_singleton(S8, ledger8):
    traj = Trajectory.uniform(S8, [(0, 0, 0, 0)], v=["AAAAAA"])
    assert [m.choices for m in equivalence_class(traj, 1, ledger8)] == [traj.choices]


def test_large_classes_are_sampled(S8, ledger8):
    traj = Trajectory.uniform(S8, [(1, 2, 3, 4), (5, 6, 7, 0)])
    assert class_size(traj, 2, ledger8) > 1000
    members = list(equivalence_class(traj, 2, ledger8, limit=1000, samples=25, seed=1))
    assert len(members) == 25
    assert all(run_pivotal(m, ledger8).pivots == (1, 2) for m in members)


# -- paired pivoting --------------------------------------------------------------


def test_paired_sets_at_most_one_missing(S8, ledger8):
    N = len(S8)
    fwds = list(random_trajectories(S8, 3, 8, 14))
    bwds = list(random_trajectories(S8, 3, 8, 15))
    checked = 0
    for f, b in zip(fwds, bwds):
        kmax = min(len(run_pivotal(f, ledger8).pivots), len(run_pivotal(b, ledger8).pivots))
        for k in range(1, kmax + 1):
            star, star_c = paired_pivot_sets(f, b, k, ledger8)
            assert N - len(star) <= 1 and N - len(star_c) <= 1
            checked += 1
    assert checked >= 10


def test_paired_dagger_bound(S8, ledger8):
    N = len(S8)
    f = Trajectory.uniform(S8, [(1, 2, 3, 4)])
    b = Trajectory.uniform(S8, [(4, 3, 2, 1)], w=("B", ""))
    assert paired_dagger_size(f, b, 1, ledger8) >= N ** 6 - 8 * N ** 5


def test_paired_sets_hand_instance(S8, ledger8):
    # with w = id both pivots sit at o; only the forward a-axis itself sees a_1 o = aaa
    traj = Trajectory.uniform(S8, [(0, 0, 0, 0)])
    star, star_c = paired_pivot_sets(traj, traj, 1, ledger8)
    assert star == frozenset(range(8))
    assert star_c == frozenset(range(1, 8))


def test_paired_sets_need_pivots(S8, ledger8):
    empty = Trajectory.uniform(S8, [(0, 0, 0, 0)], v=["AAAAAA"])
    with pytest.raises(UsageError):
        paired_pivot_sets(empty, empty, 1, ledger8)


# -- exact laws ---------------------------------------------------------------------


def test_increment_probability_bound_small_corpus(S8, ledger8):
    for traj in random_trajectories(S8, 2, 3, 16):
        law = step_law(S8, ledger8, traj.choices[:1], traj.w[:3], traj.v[:2])
        assert sum(law.values()) == 1
        assert law.get(1, 0) >= 1 - Fraction(4, 8)


def test_decrease_bound_per_class_member(S8, ledger8):
    # j = 0: every member of a class loses pivots with probability at most 4/N0
    traj = Trajectory.uniform(S8, [(1, 2, 3, 4)], w=("", "A"), v=("bAB",))
    members = list(equivalence_class(traj, 1, ledger8, limit=1, samples=3, seed=2))
    for m in members:
        law = step_law(S8, ledger8, m.choices, m.w + ("B",), m.v + ("ab",))
        assert sum(p for d, p in law.items() if d < 0) <= Fraction(4, 8)


def add_condition(S, ledger, traj, m, beta):
    """Whether the backward beta axis at step ``m`` misses the rest of the word."""
    b = S.backend
    suffix = b.compose(b.inverse(traj.prefix("-", m, 0)), traj.prefix("-", traj.n + 1, 2))
    axis = build_axis(b, S.elements[beta], -1)
    return b.projection_spread(axis, b.act(suffix, b.basepoint), b.basepoint) < ledger.K0


def test_two_step_losses_via_beta_swaps(S8, ledger8):
    # j = 1: varying only beta at the last pivot, admissible betas that also
    # satisfy the extra condition never lose two pivots, and at most three
    # admissible betas can
    N = len(S8)
    rng = random.Random(17)
    checked = 0
    for traj in random_trajectories(S8, 3, 30, 18):
        prefix = traj.truncate(2)
        P = run_pivotal(prefix, ledger8).pivots
        if len(P) < 2:
            continue
        m = P[-1]
        gamma = traj.choices[m - 1][2]
        _, beta_ok, _ = pivoting_conditions(prefix, m, ledger8)
        admissible = [bb for bb in range(N) if beta_ok[gamma][bb]]
        for _ in range(6):
            quad = tuple(rng.randrange(N) for _ in range(4))
            lost = 0
            for bb in admissible:
                ch = list(traj.choices[:2])
                ch[m - 1] = (ch[m - 1][0], bb) + ch[m - 1][2:]
                full = Trajectory(S8, traj.w, traj.v, tuple(ch) + (quad,))
                drop = len(P) - len(run_pivotal(full, ledger8).pivots)
                if drop > 1:
                    lost += 1
                    assert not add_condition(S8, ledger8, full, m, bb)
            assert lost <= 3
            checked += 1
    assert checked >= 30


def test_count_law_identity_instance(S2, ledger2):
    law = count_law(S2, ledger2, 2)
    assert law == {2: Fraction(1)}
    laws = []
    law = count_law(S2, ledger2, 3, w=("aB", "b", "a", "B"), step_laws=laws)
    assert sum(law.values()) == 1
    assert len(laws) == 1 + 16 + 256


def test_count_law_matches_history(S2, ledger2, corpus):
    w, v = INSTANCES[4]
    counts = {}
    for traj, hist in corpus:
        if traj.w == tuple(w or ("",) * 4) and traj.v == tuple(v or ("",) * 3):
            c = len(hist[-1].pivots)
            counts[c] = counts.get(c, 0) + 1
    law = count_law(S2, ledger2, 3, w=w, v=v)
    assert law == {c: Fraction(x, 4096) for c, x in counts.items()}


def test_increment_law_is_a_distribution():
    q = Fraction(1, 3)
    total = increment_law(q, 1) + sum(increment_law(q, -m) for m in range(1, 200))
    assert abs(total - 1) < Fraction(1, 10 ** 90)
    assert increment_law(q, 0) == 0 and increment_law(q, 2) == 0
    # the law with q = 4/N0
    N0 = 10
    for j in (-1, -2, -3):
        assert increment_law(Fraction(4, N0), j) == Fraction(N0 - 4, N0) * Fraction(4, N0) ** -j


@settings(max_examples=20, deadline=None)
@given(st.fractions(min_value=0, max_value=Fraction(9, 10), max_denominator=20), st.integers(1, 6))
def test_convolution_tail_by_enumeration(q, n):
    # a sum of n steps that ends at >= 1 never takes a down-step below -(n - 1)
    values = [1] + [-m for m in range(1, n)]
    tails = {i: Fraction(0) for i in range(1, n + 1)}
    for steps in itertools.product(values, repeat=n):
        s = sum(steps)
        if s >= 1:
            p = Fraction(1)
            for x in steps:
                p *= increment_law(q, x)
            for i in range(1, s + 1):
                tails[i] += p
    assert convolution_upper_tail(q, n) == tails


def test_ratio_and_domination(S2, ledger2):
    laws = []
    law = count_law(S2, ledger2, 3, w=("a", "BA", "Ab", "a"), v=("bA", "aa", "B"), step_laws=laws)
    q = rational_ratio(laws)
    assert ratio_holds(laws, q)
    assert not ratio_holds(laws, q - Fraction(1, 10 ** 6))
    assert dominates(law, q, 3)
    assert not dominates({0: Fraction(1)}, q, 3)
    with pytest.raises(UsageError):
        convolution_upper_tail(Fraction(1), 2)
