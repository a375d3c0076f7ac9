import itertools
import json
import math
import os
import random
from fractions import Fraction

import numpy as np
import pytest
from scipy.stats import binomtest, chisquare

from pivotwalk.errors import UsageError
from pivotwalk.walk import (
    SamplePath,
    StepMeasure,
    WalkTrie,
    decompose,
    eventual_pivotal_times,
    path_pivots,
    path_rng,
    pivotal_times_of_path,
    sample_path,
    sup_common_prefix,
    tree_lengths,
)

from conftest import LEDGER8


@pytest.fixture(scope="module")
def mild(tree, S8):
    # less drift and far rarer Schottky slots than the biased walk
    return decompose(StepMeasure(tree, ["a", "b", "A", "B"], ["1/3", "1/3", "1/6", "1/6"]), S8)


def word_of(path, k):
    b = path.backend
    g = b.identity
    for i in range(1, k + 1):
        g = b.compose(g, path.increment(i))
    return g


# -- measures ---------------------------------------------------------------------


def test_measure_validation(tree):
    with pytest.raises(UsageError):
        StepMeasure(tree, ["a", "b"], ["1/2", "1/3"])
    with pytest.raises(UsageError):
        StepMeasure(tree, ["a", "a"], ["1/2", "1/2"])
    with pytest.raises(UsageError):
        StepMeasure(tree, ["a", "b"], ["1", "0"])
    with pytest.raises(UsageError):
        StepMeasure(tree, [], [])


def test_measure_helpers(tree, srw):
    assert srw.weights == (Fraction(1, 4),) * 4
    assert srw.weight("ab") == 0
    assert srw.sequence_weight("aab") == Fraction(1, 64)
    lazy = StepMeasure.simple(tree, Fraction(1, 2))
    assert lazy.weight("") == Fraction(1, 2) and lazy.weight("B") == Fraction(1, 8)
    assert StepMeasure.from_table(tree, {"a": "3/4", "A": "1/4"}).reflected().weight("a") == Fraction(1, 4)
    assert StepMeasure.from_table(tree, srw.to_table()).weights == srw.weights


def test_non_elementary_certificate(tree, srw):
    probes = tree.ball(4)
    mu = StepMeasure.simple(tree)
    assert mu.certify_non_elementary(["a"], ["b"], probes, 1)
    assert not mu.certify_non_elementary(["a"], ["a", "a"], probes, 1)
    with pytest.raises(UsageError):
        mu.certify_non_elementary(["ab"], ["b"], probes, 1)
    assert srw.non_elementary is False


# -- decomposition ---------------------------------------------------------------------


def test_alpha_is_the_binding_ratio(srw, biased, S8):
    assert decompose(srw, S8).alpha == Fraction(1, 8 ** 4)
    assert decompose(biased, S8).alpha == Fraction(64, 125) ** 4
    with pytest.raises(UsageError):
        decompose(srw, S8, alpha=Fraction(1, 8 ** 4) * 2)


def test_decomposition_reconstructs_block_law(biased_model, biased):
    m = biased_model
    atoms = [sum((m.S.elements[i].entries for i in q), ()) for q in itertools.product(range(8), repeat=4)]
    rng = random.Random(1)
    atoms += [tuple(rng.choice(biased.support) for _ in range(m.block)) for _ in range(500)]
    nus = []
    for atom in atoms:
        assert m.reconstruct(atom) == biased.sequence_weight(atom)
        nus.append(m.nu_weight(atom))
    assert min(nus) == 0 and all(x >= 0 for x in nus)


def test_split_identifies_quadruples(biased_model):
    m = biased_model
    atom = sum((m.S.elements[i].entries for i in (3, 0, 7, 5)), ())
    assert m.split(atom) == (3, 0, 7, 5)
    assert m.split(("A",) * 12) is None
    with pytest.raises(UsageError):
        m.split(("a",) * 5)


def test_decompose_rejects_foreign_sets(tree, S8):
    mu = StepMeasure(tree, ["a", "A"], ["1/2", "1/2"])
    with pytest.raises(UsageError):
        decompose(mu, S8)


# -- sampling ---------------------------------------------------------------------------


def test_sampling_is_deterministic(biased_model):
    p = sample_path(biased_model, 500, 7, 3, backward=40)
    q = sample_path(biased_model, 500, 7, 3, backward=40)
    assert p.to_json() == q.to_json()
    assert not np.array_equal(p.steps, sample_path(biased_model, 500, 7, 4).steps)
    assert path_rng(1, 2, 0).random() != path_rng(1, 2, 1).random()
    row = json.loads(p.to_json())
    assert len(row["increments"]) == 500 and len(row["backward"]) == 40


def test_increment_marginals(biased_model, biased):
    counts = np.zeros(4)
    for i in range(20):
        counts += np.bincount(sample_path(biased_model, 1000, 2, i).steps, minlength=4)
    expected = np.array([float(w) for w in biased.weights]) * counts.sum()
    assert chisquare(counts, expected).pvalue > 1e-3


def test_slot_coins_have_rate_alpha(biased_model):
    m = biased_model
    slots, blocks, first = 0, 0, np.zeros(8)
    for i in range(60):
        p = sample_path(m, 6000, 3, i)
        slots += int(p.rho.sum())
        blocks += len(p.rho)
        for j in range(1, int(p.rho.sum()) + 1):
            first[p.slot_choices(j)[0]] += 1
    assert binomtest(slots, blocks, float(m.alpha)).pvalue > 1e-3
    # given a slot, the quadruple is uniform on S^4
    assert chisquare(first).pvalue > 1e-3


def test_slots_lie_in_s4(biased_model):
    p = sample_path(biased_model, 3000, 4, 0)
    for j in range(1, int(p.rho.sum()) + 1):
        T = p.slot_starts[j - 1]
        assert T % biased_model.block == 0
        assert p.slot_choices(j) is not None
    assert p.theta(1) * biased_model.block == p.slot_starts[0]
    with pytest.raises(UsageError):
        p.theta(10 ** 6)


def test_positions_and_lengths(biased_model, tree):
    p = sample_path(biased_model, 400, 5, 1, backward=50)
    for k in (0, 1, 17, 400):
        assert p.positions[k] == word_of(p, k)
        assert p.lengths[k] == len(p.positions[k])
    g = ""
    for x in p.back[:10]:
        g = tree.compose(g, tree.inverse(biased_model.mu.support[int(x)]))
    assert p.backward_positions[10] == g


def test_trajectory_reconstructs_position(biased_model):
    p = sample_path(biased_model, 3000, 6, 2)
    for n in (1, 500, 1234, 3000):
        traj = p.trajectory(n)
        assert traj.n == p.completed_slots(n)
        assert traj.product() == p.positions[n]


def test_tree_lengths_vectorized(srw):
    rng = np.random.default_rng(0)
    steps = rng.integers(0, 4, size=(5, 60)).astype(np.int16)
    out = tree_lengths(srw, steps)
    for r in range(5):
        g = ""
        for t in range(60):
            g = srw.backend.compose(g, srw.support[steps[r, t]])
            assert out[r, t + 1] == len(g)
    assert np.array_equal(tree_lengths(srw, steps, [0, 30]), out[:, [0, 30]])


def test_sup_common_prefix_vectorized(srw, tree):
    rng = np.random.default_rng(1)
    steps = rng.integers(0, 4, size=(6, 80)).astype(np.int16)
    xs = ["", "a", "abAB", "bbbbbbbb"]
    out = sup_common_prefix(srw, steps, xs, [40, 80])
    for r in range(6):
        g, best = "", [0] * len(xs)
        for t in range(80):
            g = tree.compose(g, srw.support[steps[r, t]])
            best = [max(b, len(os.path.commonprefix((g, x)))) for b, x in zip(best, xs)]
            if t + 1 == 40:
                assert out[r, :, 0].tolist() == best
        assert out[r, :, 1].tolist() == best


def test_walk_trie_distances(biased_model, tree):
    p = sample_path(biased_model, 300, 8, 0, backward=300)
    trie = WalkTrie.of_pair(p)
    pos = p.positions
    back = p.backward_positions
    rng = random.Random(2)
    for _ in range(200):
        s, t = rng.randrange(301), rng.randrange(301)
        assert trie.dist(s, t) == tree.distance(pos[s], pos[t])
        u = trie.back_offset + t
        assert trie.dist(s, u) == tree.distance(pos[s], back[t])
    times = np.arange(301)
    for x in ("", "abAB", pos[150] + "b", "BBBBBBBBB"):
        assert trie.point_distances(tree, x, times).tolist() == [tree.distance(x, q) for q in pos]


# -- pivotal times along a path ---------------------------------------------------------


def test_path_pivots_match_the_state_machine(mild, biased_model):
    for model, seed in ((mild, 9), (biased_model, 10)):
        for i in range(4):
            p = sample_path(model, 2000, seed, i)
            pp = path_pivots(p, LEDGER8)
            for k in range(1, 2001, 29):
                assert pp.pivotal_times(k) == pivotal_times_of_path(p, k, LEDGER8)
            assert int(pp.sizes()[-1]) == len(pp.slot_set(2000))


def test_state_machine_agrees_where_pivots_are_cut(biased_model):
    # drops of #P are rare; every one found is checked against the trajectory route
    drops = 0
    for i in range(10):
        p = sample_path(biased_model, 20000, 9, i)
        pp = path_pivots(p, LEDGER8)
        for k in np.flatnonzero(np.diff(pp.sizes()) < 0)[:2] + 1:
            k = int(k)
            for t in (k - 1, k, k + 1):
                assert pp.pivotal_times(t) == pivotal_times_of_path(p, t, LEDGER8)
            drops += 1
    assert drops > 0


def test_no_slots_means_no_pivots(biased_model):
    p = sample_path(biased_model, 800, 1, 0)
    quiet = SamplePath(biased_model, p.steps, np.zeros_like(p.rho))
    pp = path_pivots(quiet, LEDGER8)
    assert not pp.sizes().any()
    assert pivotal_times_of_path(quiet, 800, LEDGER8) == ()
    assert pp.eventual(100, 800) == ((), "horizon-limited")


def test_eventual_times_are_monotone(biased_model):
    for i in range(5):
        p = sample_path(biased_model, 3000, 11, i)
        pp = path_pivots(p, LEDGER8)
        for n in (500, 1000):
            current = set(pp.pivotal_times(n))
            prev = None
            for H in (n, 1500, 2000, 3000):
                times, _ = pp.eventual(n, H)
                assert set(times) <= current
                if prev is not None:
                    assert set(times) <= prev
                prev = set(times)
                for k in range(n, H + 1, 97):
                    assert set(times) <= set(pp.pivotal_times(k))
        assert eventual_pivotal_times(p, 1000, 3000, LEDGER8) == pp.eventual(1000, 3000)


def test_pivotal_time_errors(biased_model):
    p = sample_path(biased_model, 100, 1, 0)
    with pytest.raises(UsageError):
        pivotal_times_of_path(p, 0, LEDGER8)
    with pytest.raises(UsageError):
        eventual_pivotal_times(p, 50, 40, LEDGER8)
    with pytest.raises(UsageError):
        eventual_pivotal_times(p, 50, 200, LEDGER8)
    with pytest.raises(UsageError):
        sample_path(biased_model, 0, 1)


def test_pivotal_count_grows_linearly(biased_model):
    sizes = [path_pivots(sample_path(biased_model, 4000, 12, i), LEDGER8).sizes() for i in range(20)]
    mean = np.mean(sizes, axis=0)
    assert mean[4000] > mean[2000] > mean[1000] > 0
    assert mean[4000] / 4000 == pytest.approx(mean[2000] / 2000, rel=0.25)
    assert math.isfinite(mean[4000])
