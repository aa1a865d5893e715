import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import site_weights
from gibbsvoid.inference import ExactDiscreteVoid, VoidProviderError, exact_log_likelihood
from gibbsvoid.models import ModelSpec
from gibbsvoid.oracle import (
    MAX_SITES,
    DiscreteSpace,
    EnumerationLimitError,
    as_mask,
    conjecture_report,
    enumerate_exact,
    exact_log_likelihood_discrete,
    site_model,
)


@st.composite
def discrete_cases(draw):
    k = draw(st.integers(1, 8))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    sites = rng.random((k, 2))
    mass = rng.uniform(0.2, 2.0, k) if draw(st.booleans()) else None
    fam = draw(st.sampled_from(["poisson", "hardcore", "strauss"]))
    beta = draw(st.floats(0.05, 20))
    R = draw(st.floats(0.0, 0.8))
    gamma = draw(st.floats(0.0, 1.0)) if fam == "strauss" else 1.0
    return ModelSpec(fam, beta, gamma, R), DiscreteSpace(sites, mass)


@given(discrete_cases())
@settings(max_examples=60, deadline=None)
def test_enumeration_matches_brute_force(case):
    m, space = case
    s = enumerate_exact(m, space)
    ref = np.array(site_weights(m.beta, m.gamma, m.R, [tuple(p) for p in space.sites], list(space.weights)))
    np.testing.assert_allclose(s.probabilities, ref / ref.sum(), rtol=1e-11, atol=1e-300)
    assert s.void_exact == pytest.approx(1 / ref.sum(), rel=1e-11)
    assert math.fsum(s.probabilities) == pytest.approx(1.0, abs=1e-12)


def test_frozen_strauss_line():
    # four sites on a line, nearest neighbours within R: Z = 41 by hand
    space = DiscreteSpace(np.column_stack([np.arange(4.0), np.zeros(4)]))
    s = enumerate_exact(ModelSpec.strauss(2.0, 0.5, 1.0), space)
    assert s.log_normalizer == pytest.approx(math.log(41.0), rel=1e-14)
    assert s.void_exact == pytest.approx(1 / 41, rel=1e-14)
    assert exact_log_likelihood_discrete(s, [0, 1]) == pytest.approx(math.log(2 * 2 * 0.5 / 41), rel=1e-14)


def test_independent_closed_form():
    for k in (1, 5, 12):
        for beta in (0.1, 1.0, 7.0):
            s = enumerate_exact(ModelSpec("independent", beta), DiscreteSpace.grid(k, 1))
            assert s.void_exact == pytest.approx((1 + beta) ** -k, rel=1e-12)


def test_site_model_ratio_is_intensity():
    rng = np.random.default_rng(2)
    space = DiscreteSpace(rng.random((9, 2)))
    m = ModelSpec.strauss(3.0, 0.4, 0.35)
    s = enumerate_exact(m, space)
    sm = s.model
    for A in range(1 << 9):
        for i in range(9):
            if not A >> i & 1:
                ratio = math.exp(s.log_weights[A | 1 << i] - s.log_weights[A])
                assert ratio == pytest.approx(sm.intensity(i, A), rel=1e-12)


def test_hardcore_forbidden_subsets():
    space = DiscreteSpace.grid(3, 1)
    s = enumerate_exact(ModelSpec.hardcore(1.0, 1.0), space)
    assert exact_log_likelihood_discrete(s, [0, 1]) == -math.inf
    # admissible: {}, {0}, {1}, {2}, {0,2}
    assert s.void_exact == pytest.approx(1 / 5)


def test_limits_and_masks():
    with pytest.raises(EnumerationLimitError, match=str(MAX_SITES)):
        enumerate_exact(ModelSpec.poisson(1), DiscreteSpace.grid(MAX_SITES + 1, 1))
    assert as_mask([0, 2]) == 5
    assert as_mask(5, 3) == 5
    with pytest.raises(IndexError):
        as_mask([3], 3)
    with pytest.raises(ValueError):
        DiscreteSpace([[0, 0], [0, 0]])
    with pytest.raises(ValueError):
        DiscreteSpace([[0, 0]], [0.0])


def test_unit_square_grid_weights():
    space = DiscreteSpace.unit_square_grid(3)
    assert space.k == 9 and space.weights.sum() == pytest.approx(1.0)
    sm = site_model(ModelSpec.poisson(4.0), space)
    s = enumerate_exact(sm)
    assert s.void_exact == pytest.approx((1 + 4.0 / 9) ** -9, rel=1e-12)


def test_exact_discrete_void_provider():
    space = DiscreteSpace.grid(4, 1)
    m = ModelSpec.strauss(2.0, 0.5, 1.0)
    s = enumerate_exact(m, space)
    ll = exact_log_likelihood(m, [[0.0, 0.0], [1.0, 0.0]], void=ExactDiscreteVoid(s))
    assert ll == pytest.approx(exact_log_likelihood_discrete(s, [0, 1]), rel=1e-14)
    with pytest.raises(VoidProviderError):
        exact_log_likelihood(m.with_params(beta=3.0), [[0.0, 0.0]], void=ExactDiscreteVoid(s))


def test_conjecture_report_structure():
    space = DiscreteSpace.grid(3, 3)
    r = conjecture_report(ModelSpec.strauss(0.8, 0.3, 1.0), space, seed=1)
    assert r["checks"]["total_probability"] == pytest.approx(1.0, abs=1e-12)
    assert abs(r["checks"]["p_empty_minus_void"]) < 1e-15
    for key in ("exact", "conjectured"):
        assert r["void"][key]["provenance"] in ("exact-enumeration", "conjecture")
    assert r["log_partition"]["conjectured"]["value"] == pytest.approx(9 * 0.8)
    mass = r["conjectured_total_mass"]["value"]
    assert mass == pytest.approx(math.exp(r["log_partition"]["exact"]["value"] - 7.2))
    assert set(r["mle_argmax"]) >= {"exact", "conjectured", "cell_shift", "data"}
    assert conjecture_report(ModelSpec.strauss(0.8, 0.3, 1.0), space, seed=1) == r
