import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semsynth.errors import PreconditionError
from semsynth.schedule import build_schedule


def test_cosine_reference_values():
    # oracle values computed from the closed-form cumulative signal fraction
    s = build_schedule("cosine", 1000)
    assert s.alpha_bar[0] == 1.0
    assert abs(s.alpha_bar[500] - 0.49378) < 1e-3
    assert s.alpha_bar[1000] < 1e-3


def test_cosine_monotone_strict():
    s = build_schedule("cosine", 1000)
    assert np.all(np.diff(s.alpha_bar) < 0)


def test_reconstruction_invariant():
    for kind in ("cosine", "linear"):
        s = build_schedule(kind, 1000)
        rebuilt = np.cumprod(1.0 - s.beta)
        assert np.max(np.abs(rebuilt - s.alpha_bar[1:])) < 1e-10


def test_beta_range():
    s = build_schedule("cosine", 1000)
    assert np.all(s.beta > 0)
    assert np.all(s.beta <= 0.999)


def test_linear_endpoints_default_t():
    s = build_schedule("linear", 1000)
    assert abs(s.beta[0] - 1e-4) < 1e-12
    assert abs(s.beta[-1] - 2e-2) < 1e-12


def test_linear_total_noising_t_independent():
    # the linear family rescales with T so the endpoint signal level is
    # close in log terms (equal only up to discretization error)
    a = build_schedule("linear", 1000).alpha_bar[-1]
    b = build_schedule("linear", 250).alpha_bar[-1]
    assert abs(np.log(a) - np.log(b)) < 0.5


def test_posterior_variance_first_step_zero():
    s = build_schedule("cosine", 100)
    assert s.posterior_variance[0] == 0.0
    assert np.all(s.posterior_variance >= 0)


def test_coefficients_at_bounds():
    s = build_schedule("cosine", 10)
    with pytest.raises(PreconditionError):
        s.coefficients_at(0)
    with pytest.raises(PreconditionError):
        s.coefficients_at(11)
    co = s.coefficients_at(5)
    assert co.alpha_bar_t == s.alpha_bar[5]
    assert abs(co.sqrt_alpha_bar_t**2 - co.alpha_bar_t) < 1e-12


def test_bad_inputs():
    with pytest.raises(PreconditionError):
        build_schedule("cosine", 0)
    with pytest.raises(PreconditionError):
        build_schedule("quadratic", 10)


@settings(max_examples=30, deadline=None)
@given(T=st.integers(1, 200), kind=st.sampled_from(["cosine", "linear"]))
def test_schedule_shape_properties(T, kind):
    s = build_schedule(kind, T)
    assert len(s.beta) == T
    assert len(s.alpha_bar) == T + 1
    assert len(s.posterior_variance) == T
    assert s.alpha_bar[0] == 1.0
    assert np.all(np.diff(s.alpha_bar) <= 0)
    assert s.alpha_bar[-1] > 0
