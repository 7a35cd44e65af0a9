import numpy as np
import pytest

from marcq import build_chain, generator_residual, solve
from marcq.closed_form import LABELS, K2Params, closed_form_k2


def _compare(params):
    ref = closed_form_k2(params)
    ch = build_chain(params.workload())
    num = solve(ch)
    assert tuple(ch.labels) == LABELS
    assert ref.lambda_star == pytest.approx(num.lambda_star, abs=1e-9)
    assert np.allclose(ref.stationary, num.stationary, atol=1e-9)
    assert np.allclose(ref.departure, num.departure, atol=1e-9)
    assert np.allclose(ref.delta, num.delta, atol=1e-9)
    assert ref.delta_yd == pytest.approx(num.delta_yd, abs=1e-9)
    assert generator_residual(ch, ref) < 1e-9


def test_running_example():
    sol = closed_form_k2(K2Params(2 / 3, 1.0, 0.5))
    assert sol.lambda_star == pytest.approx(0.9)
    assert np.allclose(sol.delta, [1.38, -0.27, -0.37])
    assert sol.delta_yd == pytest.approx(0.43)


def test_random_draws_match_analyzer():
    rng = np.random.default_rng(20240611)
    for _ in range(100):
        _compare(K2Params(rng.uniform(0.01, 0.99), np.exp(rng.uniform(-3, 3)), np.exp(rng.uniform(-3, 3))))


@pytest.mark.parametrize("p1", [1e-3, 1e-5])
def test_rare_need_one_jobs(p1):
    # almost every job needs both servers: M/M/1 at rate mu2, no correction
    sol = closed_form_k2(K2Params(p1, 1.3, 0.7))
    assert sol.lambda_star == pytest.approx(0.7, rel=10 * p1)
    assert abs(sol.delta_yd) < 10 * p1


def test_delta_of_blocked_state_factor():
    # Delta([2]) checked at a point where the mu2^2 term dominates
    _compare(K2Params(0.3, 0.05, 20.0))


@pytest.mark.parametrize("bad", [(0.0, 1, 1), (1.0, 1, 1), (0.5, 0, 1), (0.5, 1, -1)])
def test_parameter_validation(bad):
    with pytest.raises(ValueError):
        K2Params(*bad)
