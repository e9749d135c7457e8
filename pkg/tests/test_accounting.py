import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shufldp.accounting import (
    TABLE1_EPS_CENTRAL,
    TABLE1_N,
    accountant_record,
    amplify_forward,
    amplify_inverse,
    composed_delta,
    local_epsilon_bound,
    max_round_epsilon,
    new_accountant,
    should_stop,
    subsampled_epsilon,
    table1,
)
from shufldp.errors import AccountantError, DomainError

# converse table at delta = 1e-9, rows n = 1e4..1e8, columns eps_c = 0.1..0.9
GOLDEN_TABLE1 = [
    [1.16, 2.03, 2.48, 2.80, 3.03],
    [2.07, 3.08, 3.58, 3.90, 4.15],
    [3.13, 4.20, 4.71, 5.04, 5.29],
    [4.26, 5.34, 5.85, 6.19, 6.44],
    [5.40, 6.49, 7.00, 7.34, 7.59],
]


def test_forward_golden_cells():
    assert amplify_forward(1.16, 1e-9, 10**4) == pytest.approx(0.10, abs=0.005)
    assert amplify_forward(7.59, 1e-9, 10**8) == pytest.approx(0.90, abs=0.005)
    assert amplify_forward(0.0, 1e-9, 10**4) == 0.0


def test_inverse_golden_cells():
    assert amplify_inverse(0.5, 1e-9, 10**6) == pytest.approx(4.71, abs=0.01)
    assert amplify_inverse(0.1, 1e-9, 10**5) == pytest.approx(2.07, abs=0.01)


def test_table1_matches_golden():
    assert table1() == GOLDEN_TABLE1


@pytest.mark.parametrize("n", TABLE1_N)
@pytest.mark.parametrize("eps_c", TABLE1_EPS_CENTRAL)
def test_roundtrip(n, eps_c):
    assert amplify_forward(amplify_inverse(eps_c, 1e-9, n), 1e-9, n) == pytest.approx(eps_c, abs=1e-10)


def test_forward_domain_error():
    bound = local_epsilon_bound(1e-9, 10**4)
    assert bound == pytest.approx(0.5 * math.log(10**4 / math.log(1e9)))
    with pytest.raises(DomainError):
        amplify_forward(bound, 1e-9, 10**4)
    with pytest.raises(DomainError):
        amplify_forward(1.0, 1.5, 10**4)


def test_inverse_domain_error():
    with pytest.raises(DomainError):
        amplify_inverse(5.0, 1e-9, 10**4)
    with pytest.raises(DomainError):
        amplify_inverse(0.1, 1e-9, 1)


def test_inverse_increasing_in_n():
    for eps_c in TABLE1_EPS_CENTRAL:
        col = [amplify_inverse(eps_c, 1e-9, n) for n in TABLE1_N]
        assert all(a < b for a, b in zip(col, col[1:]))
        assert all(v > eps_c for v in col)


@settings(max_examples=300, deadline=None)
@given(st.integers(10**3, 10**9), st.floats(1e-12, 1e-2), st.floats(1e-6, 1.0))
def test_inverse_of_forward_property(n, delta, frac):
    eps_l = frac * local_epsilon_bound(delta, n) * 0.999
    if eps_l == 0:
        return
    eps_c = amplify_forward(eps_l, delta, n)
    assert amplify_inverse(eps_c, delta, n) == pytest.approx(eps_l, abs=1e-10)


def _closed_form(budget, eps_t, q, rounds):
    # stated single-epsilon form, evaluated independently of the accountant
    e = math.log(1 + q * (math.exp(eps_t) - 1))
    num = budget - rounds * e * (math.exp(e) - 1)
    if num <= 0:
        return 1.0
    return math.exp(-((num / (e * math.sqrt(2 * rounds))) ** 2))


def test_first_record_small_delta():
    s = accountant_record(new_accountant(8.0, 0.1), 1, 1.0, 0.4)
    expected = _closed_form(8.0, 1.0, 0.4, 1)
    assert s.current_delta == pytest.approx(expected, rel=1e-12)
    assert s.current_delta < 1e-40


def test_second_record_not_smaller():
    s1 = accountant_record(new_accountant(8.0, 0.1), 1, 1.0, 0.4)
    s2 = accountant_record(s1, 2, 1.0, 0.4)
    assert s2.current_delta == pytest.approx(_closed_form(8.0, 1.0, 0.4, 2), rel=1e-12)
    assert s2.current_delta >= s1.current_delta
    assert _closed_form(8.0, 1.0, 0.4, 2) > _closed_form(8.0, 1.0, 0.4, 1)


def test_closed_form_matches_for_many_rounds():
    s = new_accountant(8.0, 0.1)
    for t in range(1, 25):
        s = accountant_record(s, t, 1.0, 0.4)
        assert s.current_delta == pytest.approx(_closed_form(8.0, 1.0, 0.4, t), rel=1e-9)


def test_exhausted_budget():
    s = accountant_record(new_accountant(0.01, 0.1), 1, 5.0, 1.0)
    assert s.current_delta == 1.0
    assert should_stop(s)


def test_should_stop_basics():
    s = new_accountant(8.0, 0.1)
    assert s.current_delta == 0.0 and not should_stop(s)


def test_out_of_order_round():
    s = accountant_record(new_accountant(8.0, 0.1), 1, 1.0, 0.4)
    with pytest.raises(AccountantError):
        accountant_record(s, 3, 1.0, 0.4)
    with pytest.raises(AccountantError):
        accountant_record(s, 2, 1.0, 0.0)


def test_subsampling_identity_at_full_rate():
    assert subsampled_epsilon(1.3, 1.0) == pytest.approx(1.3)
    assert subsampled_epsilon(1.3, 0.5) < 1.3


def test_composed_delta_empty():
    assert composed_delta([], 1.0) == 0.0


def test_stop_round_for_budget_8():
    # budget 8, eps_t 1, q 0.4, limit 0.1: closed form crosses 0.1 between 11 and 12
    assert _closed_form(8.0, 1.0, 0.4, 11) <= 0.1 < _closed_form(8.0, 1.0, 0.4, 12)
    s = new_accountant(8.0, 0.1)
    for t in range(1, 12):
        s = accountant_record(s, t, 1.0, 0.4)
        assert not should_stop(s)
    assert should_stop(accountant_record(s, 12, 1.0, 0.4))


@settings(max_examples=200, deadline=None)
@given(
    st.floats(0.5, 50.0),
    st.lists(st.tuples(st.floats(0.01, 3.0), st.floats(0.01, 1.0)), min_size=1, max_size=40),
)
def test_delta_monotone_and_stop_sticky(budget, events):
    s = new_accountant(budget, 0.1)
    previous, stopped = 0.0, False
    for t, (eps, q) in enumerate(events, start=1):
        s = accountant_record(s, t, eps, q)
        assert s.current_delta >= previous
        assert 0.0 <= s.current_delta <= 1.0
        previous = s.current_delta
        if stopped:
            assert should_stop(s)
        stopped = should_stop(s)


@pytest.mark.parametrize("eps", [0.5, 1.0, 1.0001, 3.0, 20.0])
@pytest.mark.parametrize("q", [0.1, 0.5, 0.9])
def test_subsampled_epsilon_branches_agree(eps, q):
    assert subsampled_epsilon(eps, q) == pytest.approx(math.log(1 + q * (math.exp(eps) - 1)), rel=1e-13)


def test_huge_epsilon_saturates_instead_of_overflowing():
    assert subsampled_epsilon(1e12, 0.5) == pytest.approx(1e12)
    assert composed_delta([1e12], 1e30) == 1.0


@pytest.mark.parametrize("budget, q, rounds", [(100.0, 0.5, 30), (8.0, 0.4, 10), (10.0, 0.1, 200)])
def test_max_round_epsilon_is_the_boundary(budget, q, rounds):
    eps = max_round_epsilon(budget, 0.1, q, rounds)
    assert _closed_form(budget, eps, q, rounds) <= 0.1
    assert _closed_form(budget, eps * (1 + 1e-6), q, rounds) > 0.1
    state = new_accountant(budget, 0.1)
    for t in range(1, rounds + 1):
        state = accountant_record(state, t, eps, q)
    assert not should_stop(state)
