import numpy as np
import pytest

from dvis import gradcheck
from dvis.losses import LossConfig


def test_rel_error_floor():
    assert gradcheck.rel_error([1.0], [1.0 + 1e-5]) == pytest.approx(1e-5, rel=1e-3)
    # both tiny: compared against the floor, not each other
    assert gradcheck.rel_error([1e-12], [-1e-12]) < 1e-5


def test_central_diff_on_quadratic():
    x = np.array([1.0, -2.0, 3.0])
    d = [gradcheck.central_diff(lambda v: float(np.sum(v ** 2)), x, 1e-4, i) for i in range(3)]
    assert np.allclose(d, 2 * x)


def test_kink_distance_quant():
    cfg = LossConfig()
    f = np.array([[0.3, 2.49]])
    assert gradcheck._kink_distance("quant", f, None, None, cfg) == pytest.approx(0.01)


def test_loss_terms_pass_and_cover_every_term():
    res = gradcheck.check_loss_terms(points=25, seed=3)
    assert [r.name for r in res] == list(gradcheck.LOSS_TERMS)
    assert all(r.points == 5 for r in res)
    assert all(r.passed for r in res), res


def test_network_gradients_pass():
    r = gradcheck.check_network(n_params=15, seed=2)
    assert r.points == 15 and r.passed, r


def test_detects_a_wrong_gradient(monkeypatch):
    from dvis import losses
    orig = losses.quantization_loss

    def wrong(f):
        out = orig(f)
        return type(out)(out.value, out.grad * 1.01)

    monkeypatch.setattr(losses, "quantization_loss", wrong)
    res = {r.name: r for r in gradcheck.check_loss_terms(points=5)}
    assert not res["quant"].passed
