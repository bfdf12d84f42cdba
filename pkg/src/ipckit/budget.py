"""Security-parameter accounting across rounds, and asymptotic key rates.

Each protocol round makes three encrypted broadcasts, so it adds 3ε of
channel insecurity whether or not it aborts; a successful round additionally
spends eps_qkd = eps_EC + eps_PE + eps_PA on its post-processing claims.
The running total starts from the insecurity eps0 of the initial shared key
and must stay below an agreed ceiling eps_sec; both parties fix the maximum
number of rounds up front from that ceiling.

Rates: a round distills about f(S_obs) secret bits per sifted bit but must
reserve key for the next round's channel uses, which costs about twice the
error-correction leakage; the net asymptotic rate is f(S_obs) - 2*H(A|B).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable

from .errors import BudgetExceededError, ParameterError

#: sentinel returned by max_rounds when per-round costs are all zero
UNBOUNDED = -1

TSIRELSON = 2.0 * math.sqrt(2.0)


def _check_eps(name: str, value: float, *, top: float = 1.0) -> None:
    if not 0.0 <= value <= top:
        raise ParameterError(f"{name} must be in [0, {top}], got {value}")


def compose(eps0: float, eps: float, eps_qkd: float, s_total: int, s_success: int) -> float:
    """Total insecurity after s_total rounds of which s_success succeeded.

    eps0 + 3*s_total*eps + s_success*eps_qkd.  Aborted rounds still pay the
    3 channel uses; only successful rounds pay eps_qkd.
    """
    _check_eps("eps0", eps0)
    _check_eps("eps", eps)
    _check_eps("eps_qkd", eps_qkd)
    if s_total < 0 or s_success < 0 or s_success > s_total:
        raise ParameterError(
            f"need 0 <= s_success <= s_total, got {s_success}, {s_total}"
        )
    return eps0 + 3.0 * s_total * eps + s_success * eps_qkd


def max_rounds(eps_sec: float, eps0: float, eps: float, eps_qkd: float) -> int:
    """Largest s with compose(eps0, eps, eps_qkd, s, s) <= eps_sec.

    Worst case planning: every round succeeds, costing 3*eps + eps_qkd.
    Returns 0 when even eps0 leaves no room, UNBOUNDED (-1) when the
    per-round cost is zero and eps_sec >= eps0.
    """
    _check_eps("eps_sec", eps_sec)
    _check_eps("eps0", eps0)
    _check_eps("eps", eps)
    _check_eps("eps_qkd", eps_qkd)
    if eps_sec <= eps0:
        return 0
    per_round = 3.0 * eps + eps_qkd
    if per_round == 0.0:
        return UNBOUNDED
    s = int((eps_sec - eps0) / per_round)
    # float division can land one off in either direction; settle exactly
    while s > 0 and compose(eps0, eps, eps_qkd, s, s) > eps_sec:
        s -= 1
    while compose(eps0, eps, eps_qkd, s + 1, s + 1) <= eps_sec:
        s += 1
    return s


def binary_entropy(q: float) -> float:
    """h(q) = -q*log2(q) - (1-q)*log2(1-q), with h(0) = h(1) = 0."""
    if not 0.0 <= q <= 1.0:
        raise ParameterError(f"probability out of range: {q}")
    if q == 0.0 or q == 1.0:
        return 0.0
    return -q * math.log2(q) - (1.0 - q) * math.log2(1.0 - q)


def hoeffding_epsilon(m: int, t: float) -> float:
    """Two-sided Hoeffding tail 2*exp(-2*m*t^2) for an m-sample mean
    estimate to be off by more than t; the confidence term for parameter
    estimation on m sacrificed bits."""
    if m < 1:
        raise ParameterError(f"sample count must be >= 1, got {m}")
    if t <= 0.0:
        raise ParameterError(f"margin must be positive, got {t}")
    return min(1.0, 2.0 * math.exp(-2.0 * m * t * t))


def default_rate_fn(s_obs: float) -> float:
    """Keyrate f(S) = 1 - h(1/2 + sqrt((S/2)^2 - 1)/2) for memoryless devices."""
    if not 2.0 <= s_obs <= TSIRELSON + 1e-12:
        raise ParameterError(f"CHSH value out of range [2, 2*sqrt(2)]: {s_obs}")
    x = (s_obs / 2.0) ** 2 - 1.0
    if x <= 0.0:
        return 0.0
    return 1.0 - binary_entropy(0.5 + 0.5 * math.sqrt(min(x, 1.0)))


@dataclass(frozen=True)
class RateModel:
    """Pluggable map from an observed CHSH value to a per-bit key rate.

    f must be monotone nondecreasing on (2, 2*sqrt(2)] with f(2) = 0.
    """

    f: Callable[[float], float] = default_rate_fn


def asymptotic_rate(model: RateModel, s_obs: float, h_ab: float) -> float:
    """Net per-bit rate f(S_obs) - 2*H(A|B); negative means no viable key."""
    if not 2.0 < s_obs <= TSIRELSON + 1e-12:
        raise ParameterError(f"CHSH value out of range (2, 2*sqrt(2)]: {s_obs}")
    if not 0.0 <= h_ab <= 1.0:
        raise ParameterError(f"conditional entropy out of range [0, 1]: {h_ab}")
    return model.f(s_obs) - 2.0 * h_ab


@dataclass
class SecurityBudget:
    """Running ε-ledger across rounds against a tolerated ceiling.

    charge_round() refuses (raises BudgetExceededError) when the round
    would push the total over eps_sec, leaving the ledger unchanged.
    """

    eps_sec: float
    eps0: float
    eps_channel: float
    eps_qkd: float
    rounds: int = 0
    successes: int = 0
    history: list = dc_field(default_factory=list, repr=False)

    def __post_init__(self):
        _check_eps("eps_sec", self.eps_sec)
        _check_eps("eps0", self.eps0)
        _check_eps("eps_channel", self.eps_channel)
        _check_eps("eps_qkd", self.eps_qkd)
        if self.eps0 > self.eps_sec:
            raise BudgetExceededError(
                f"initial key insecurity {self.eps0} already exceeds the "
                f"ceiling {self.eps_sec}"
            )

    @property
    def total(self) -> float:
        return compose(self.eps0, self.eps_channel, self.eps_qkd,
                       self.rounds, self.successes)

    @property
    def remaining(self) -> float:
        return self.eps_sec - self.total

    def round_cost(self, success: bool) -> float:
        return 3.0 * self.eps_channel + (self.eps_qkd if success else 0.0)

    def charge_round(self, success: bool) -> float:
        cost = self.round_cost(success)
        if self.total + cost > self.eps_sec:
            raise BudgetExceededError(
                f"round would raise the total to {self.total + cost:.3e}, "
                f"over the ceiling {self.eps_sec:.3e}"
            )
        self.rounds += 1
        self.successes += int(success)
        self.history.append((self.rounds, cost, self.total, success))
        return cost

    def plan(self) -> int:
        """Rounds guaranteed affordable from the start (all-success worst case)."""
        return max_rounds(self.eps_sec, self.eps0, self.eps_channel, self.eps_qkd)

    def report(self) -> str:
        """Plain-text ledger table: round, cost, cumulative, remaining."""
        lines = [f"{'round':>5}  {'outcome':<8} {'cost':>12}  {'cumulative':>12}  {'remaining':>12}"]
        for rnd, cost, cum, success in self.history:
            lines.append(
                f"{rnd:>5}  {'success' if success else 'abort':<8} "
                f"{cost:>12.5e}  {cum:>12.5e}  {self.eps_sec - cum:>12.5e}"
            )
        if not self.history:
            lines.append(f"{0:>5}  {'-':<8} {0.0:>12.5e}  {self.eps0:>12.5e}  "
                         f"{self.eps_sec - self.eps0:>12.5e}")
        return "\n".join(lines)
