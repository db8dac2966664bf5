from pathlib import Path

import numpy as np
import pytest

from preg.data import load_dataset
from preg.experiments import SweepRow, composite_gradcheck, masked_sweep, median_by_param, mu_sweep, spearman
from preg.reg import RegSpec
from preg.train import TrainConfig

FIXTURES = Path(__file__).resolve().parents[1] / "fixtures"
SHORT = TrainConfig(reg=RegSpec(kind="preg", phi="se"), max_epochs=40, patience=40)


@pytest.fixture(scope="module")
def sbm400():
    return load_dataset(FIXTURES / "sbm400")


class TestSpearman:
    def test_perfect(self):
        assert spearman([1, 2, 3, 4], [10, 9, 2, 1]) == pytest.approx(-1.0)

    def test_monotone_transform(self):
        x = np.linspace(0.1, 2, 9)
        assert spearman(x, np.exp(x)) == pytest.approx(1.0)

    def test_hand_value(self):
        # ranks x=1..5, y=(2,1,4,3,5): d^2 sum = 4, rho = 1 - 6*4/(5*24) = 0.8
        assert spearman([1, 2, 3, 4, 5], [2, 1, 4, 3, 5]) == pytest.approx(0.8)

    def test_too_short(self):
        with pytest.raises(ValueError):
            spearman([1.0], [2.0])


def test_median_by_param():
    rows = [SweepRow(p, s, 0, 0, 0, 0, om, 1) for p, s, om in [(0.2, 0, 3.0), (0.1, 0, 1.0), (0.1, 1, 5.0), (0.1, 2, 2.0)]]
    params, med = median_by_param(rows, "omega")
    np.testing.assert_array_equal(params, [0.1, 0.2])
    np.testing.assert_array_equal(med, [2.0, 3.0])


class TestSweeps:
    def test_mu_sweep_order_and_determinism(self, sbm400):
        a = mu_sweep(SHORT, sbm400, [0.3, 0.1], seeds=[0, 1])
        b = mu_sweep(SHORT, sbm400, [0.3, 0.1], seeds=[0, 1])
        assert [(r.param, r.seed) for r in a] == [(0.3, 0), (0.3, 1), (0.1, 0), (0.1, 1)]
        assert a == b

    def test_masked_endpoints_bracket(self, sbm400):
        rows = masked_sweep(SHORT, sbm400, [0.0, 1.0])
        assert [r.param for r in rows] == [0.0, 1.0]

    def test_masked_needs_preg(self, sbm400):
        with pytest.raises(ValueError):
            masked_sweep(TrainConfig(), sbm400, [0.5])


@pytest.mark.parametrize("kind", ["gcn", "mlp"])
@pytest.mark.parametrize("phi", ["se", "ce", "kl"])
def test_composite_gradcheck(kind, phi):
    assert composite_gradcheck(kind, RegSpec(kind="preg", phi=phi, mu=0.6), seed=3) < 1e-5
