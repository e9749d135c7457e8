"""Shuffle amplification arithmetic and a per-round privacy accountant.

Amplification (non-interactive shuffle model): if every one of ``n`` reports
is ε_l-LDP, the shuffled collection is (ε_c, δ)-DP with

    ε_c = (exp(ε_l) - 1) * sqrt(ln(1/δ) / n)

valid for ε_l < ½·ln(n / ln(1/δ)). The leading constant is 1; with it the
inverse map reproduces the standard converse grid at δ = 1e-9 cell for cell.

The accountant treats each round as a pure ε_t event on a q = n/N
subsample, amplifies it to ln(1 + q(e^ε_t - 1)), and composes the rounds
with the advanced composition theorem, solved for δ at a fixed total ε.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Sequence, Tuple

from .errors import AccountantError, DomainError

TABLE1_DELTA = 1e-9
TABLE1_N = (10**4, 10**5, 10**6, 10**7, 10**8)
TABLE1_EPS_CENTRAL = (0.1, 0.3, 0.5, 0.7, 0.9)


def _check_delta_n(delta: float, n: int) -> None:
    if not 0 < delta < 1:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    if n < 2:
        raise DomainError(f"need n >= 2 clients, got {n}")


def local_epsilon_bound(delta: float, n: int) -> float:
    """Upper end of the ε_l range on which the amplification bound holds."""
    _check_delta_n(delta, n)
    ratio = n / math.log(1.0 / delta)
    if ratio <= 1.0:
        # empty domain: no positive ε_l is admissible
        return 0.0
    return 0.5 * math.log(ratio)


def amplify_forward(epsilon_local: float, delta: float, n: int) -> float:
    """Central ε after shuffling ``n`` ε_l-LDP reports."""
    bound = local_epsilon_bound(delta, n)
    if epsilon_local < 0:
        raise DomainError(f"epsilon_local must be >= 0, got {epsilon_local}")
    if epsilon_local >= bound and epsilon_local > 0:
        raise DomainError(
            f"epsilon_local={epsilon_local} outside validity domain (0, {bound:.6g}) "
            f"for n={n}, delta={delta}"
        )
    return math.expm1(epsilon_local) * math.sqrt(math.log(1.0 / delta) / n)


def amplify_inverse(epsilon_central: float, delta: float, n: int) -> float:
    """Largest local ε whose shuffled output is (ε_c, δ)-DP."""
    bound = local_epsilon_bound(delta, n)
    if not epsilon_central > 0:
        raise DomainError(f"epsilon_central must be > 0, got {epsilon_central}")
    eps_l = math.log1p(epsilon_central * math.sqrt(n / math.log(1.0 / delta)))
    if eps_l >= bound:
        raise DomainError(
            f"epsilon_local={eps_l:.6g} required for epsilon_central={epsilon_central} exceeds "
            f"validity bound {bound:.6g} for n={n}, delta={delta}"
        )
    return eps_l


def table1(delta: float = TABLE1_DELTA) -> List[List[float]]:
    """ε_l grid: rows n = 1e4..1e8, columns ε_c = 0.1..0.9, two decimals."""
    return [[round(amplify_inverse(c, delta, n), 2) for c in TABLE1_EPS_CENTRAL] for n in TABLE1_N]


def subsampled_epsilon(eps: float, q: float) -> float:
    """Amplification by Poisson-style subsampling at rate ``q``."""
    if eps <= 1.0:
        return math.log1p(q * math.expm1(eps))
    # same quantity, rewritten so large eps cannot overflow
    return eps + math.log(q + (1.0 - q) * math.exp(-eps))


def composed_delta(epsilons: Sequence[float], epsilon_budget: float) -> float:
    """δ at which ``epsilons`` compose to ``epsilon_budget`` (advanced composition).

    Solves ε_budget = sqrt(2·ln(1/δ)·Σε_i²) + Σε_i(e^ε_i − 1) for δ. With all
    ε_i equal to ε' this is exp(−((ε_budget − Tε'(e^ε'−1)) / (ε'√(2T)))²).
    """
    if not epsilons:
        return 0.0
    if max(epsilons) > 700.0:
        return 1.0  # e^ε overflows; the drift term alone exceeds any finite budget
    drift = math.fsum(e * math.expm1(e) for e in epsilons)
    spread = math.fsum(e * e for e in epsilons)
    slack = epsilon_budget - drift
    if slack <= 0:
        return 1.0
    return math.exp(-(slack * slack) / (2.0 * spread))


@dataclass(frozen=True)
class PrivacyEvent:
    round: int
    epsilon: float
    q: float

    @property
    def effective_epsilon(self) -> float:
        return subsampled_epsilon(self.epsilon, self.q)


@dataclass(frozen=True)
class AccountantState:
    delta_limit: float
    epsilon_budget: float
    events: Tuple[PrivacyEvent, ...] = field(default=())
    current_delta: float = 0.0

    @property
    def last_round(self) -> int:
        return self.events[-1].round if self.events else 0

    @property
    def epsilon_spent_nominal(self) -> float:
        return math.fsum(e.epsilon for e in self.events)


def new_accountant(epsilon_budget: float, delta_limit: float) -> AccountantState:
    if not epsilon_budget > 0:
        raise AccountantError(f"epsilon_budget must be > 0, got {epsilon_budget}")
    if not 0 < delta_limit < 1:
        raise AccountantError(f"delta_limit must lie in (0, 1), got {delta_limit}")
    return AccountantState(delta_limit=delta_limit, epsilon_budget=epsilon_budget)


def accountant_record(state: AccountantState, t: int, eps_t: float, q: float) -> AccountantState:
    if t != state.last_round + 1:
        raise AccountantError(f"expected round {state.last_round + 1}, got {t}")
    if not eps_t > 0:
        raise AccountantError(f"eps_t must be > 0, got {eps_t}")
    if not 0 < q <= 1:
        raise AccountantError(f"sampling fraction must lie in (0, 1], got {q}")
    events = state.events + (PrivacyEvent(t, eps_t, q),)
    delta = composed_delta([e.effective_epsilon for e in events], state.epsilon_budget)
    return replace(state, events=events, current_delta=max(delta, state.current_delta))


def should_stop(state: AccountantState) -> bool:
    return state.current_delta > state.delta_limit


def max_round_epsilon(epsilon_budget: float, delta_limit: float, q: float, rounds: int, tol: float = 1e-10) -> float:
    """Largest constant per-round ε that keeps δ within ``delta_limit`` for ``rounds`` rounds.

    δ grows with the per-round ε, so bisection on [0, epsilon_budget] suffices.
    """
    if rounds < 1:
        raise AccountantError("need at least one round")

    def fits(eps: float) -> bool:
        e = subsampled_epsilon(eps, q)
        return composed_delta([e] * rounds, epsilon_budget) <= delta_limit

    lo, hi = 0.0, float(epsilon_budget)
    if fits(hi):
        return hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if fits(mid):
            lo = mid
        else:
            hi = mid
    return lo
