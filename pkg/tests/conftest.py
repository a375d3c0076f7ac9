import pytest

from pivotwalk.contraction import ConstantLedger
from pivotwalk.schottky import construct_schottky
from pivotwalk.space import FreeGroupTree, HyperbolicPlane, TreeTimesLine
from pivotwalk.walk import StepMeasure, decompose

# measured once with calibrate_ledger on construct_schottky(F2, "a", "b", 8); see test_calibration
LEDGER8 = ConstantLedger(K0=3.0, K1=0.0, K2=0.0, K3=1.0, D0=5.0, D1=6.0, D2=7.0, E0=8.0,
                         L1=48.0, L2=54.0, L3=66.0, M0=3, N0=8)
# same for the two-element set {a, b}
LEDGER2 = ConstantLedger(K0=1.0, K1=0.0, K2=0.0, K3=1.0, D0=3.0, D1=4.0, D2=5.0, E0=6.0,
                         L1=8.0, L2=10.0, L3=14.0, M0=1, N0=2)


@pytest.fixture(scope="session")
def tree():
    return FreeGroupTree(2)


@pytest.fixture(scope="session")
def plane():
    return HyperbolicPlane()


@pytest.fixture(scope="session")
def strip():
    return TreeTimesLine(2)


@pytest.fixture(scope="session")
def S8(tree):
    return construct_schottky(tree, "a", "b", 8)


@pytest.fixture(scope="session")
def S2(tree):
    return construct_schottky(tree, "a", "b", 2)


@pytest.fixture(scope="session")
def ledger8():
    return LEDGER8


@pytest.fixture(scope="session")
def ledger2():
    return LEDGER2


@pytest.fixture(scope="session")
def srw(tree):
    return StepMeasure.simple(tree)


@pytest.fixture(scope="session")
def biased(tree):
    """A drifting walk whose Schottky slots are frequent enough for pivotal statistics."""
    return StepMeasure(tree, ["a", "b", "A", "B"], ["2/5", "2/5", "1/10", "1/10"])


@pytest.fixture(scope="session")
def biased_model(biased, S8):
    return decompose(biased, S8)
