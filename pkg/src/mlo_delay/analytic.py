"""M/M/S delay model of a multi-link AP.

The AP's S interfaces are treated as S servers sharing one buffer. The
per-packet service time depends on the backoff, which in turn depends on
how many packets are in the system, so the service rate, the stationary
distribution and the OBSS contention are solved jointly by damped
fixed-point iteration. The response time then has a closed-form CDF.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from scipy import optimize

from . import obss
from .backoff import mean_contention_window
from .phy import AirTimes, InvalidParameterError, PhyMacParams, compute_air_times

__all__ = [
    "AnalyticSolution",
    "ConvergenceError",
    "DegenerateChannelError",
    "DelayDistribution",
    "QueueState",
    "Scenario",
    "UnstableSystemError",
    "ap_transmission_probability",
    "delay_cdf",
    "delay_quantile",
    "expected_backoff",
    "expected_service_time",
    "fixed_point_residual",
    "mean_contention_window",
    "solve_fixed_point",
    "stationary_distribution",
]

TOLERANCE = 1e-9
MAX_ITERATIONS = 10_000
DAMPING = 0.5
# |S(1-a) - 1| below this switches the CDF to its confluent form
_BRANCH_TOL = 1e-9


class UnstableSystemError(ArithmeticError):
    """Traffic intensity a >= 1: the queue grows without bound."""

    def __init__(self, a: float):
        super().__init__(f"unstable system: traffic intensity a={a:.6g} >= 1")
        self.a = a


class DegenerateChannelError(ArithmeticError):
    """Channel never idles (rho = 1) or every attempt collides (p = 1)."""


class ConvergenceError(RuntimeError):
    def __init__(self, iterations: int, residual: float):
        super().__init__(f"fixed point did not converge after {iterations} iterations "
                         f"(residual {residual:.3e})")
        self.iterations = iterations
        self.residual = residual


@dataclass(frozen=True)
class Scenario:
    n_interfaces: int
    arrival_rate: float
    n_contenders: int = 0
    activity: float = 0.0

    def __post_init__(self) -> None:
        if int(self.n_interfaces) != self.n_interfaces or self.n_interfaces < 1:
            raise InvalidParameterError(f"n_interfaces must be an integer >= 1, got {self.n_interfaces!r}")
        if not self.arrival_rate >= 0:
            raise InvalidParameterError(f"arrival_rate must be >= 0, got {self.arrival_rate!r}")
        if int(self.n_contenders) != self.n_contenders or self.n_contenders < 0:
            raise InvalidParameterError(f"n_contenders must be an integer >= 0, got {self.n_contenders!r}")
        if not 0.0 <= self.activity <= 1.0:
            raise InvalidParameterError(f"activity must be in [0, 1], got {self.activity!r}")

    @classmethod
    def from_load(cls, n_interfaces: int, load_bps: float, packet_bits: int,
                  n_contenders: int = 0, activity: float = 0.0) -> "Scenario":
        """Build a scenario from an offered load in bit/s."""
        return cls(n_interfaces, load_bps / packet_bits, n_contenders, activity)

    def offered_load_bps(self, packet_bits: int) -> float:
        return self.arrival_rate * packet_bits


@dataclass(frozen=True)
class QueueState:
    """Stationary M/M/S state.

    ``pi`` holds pi_0 .. pi_{S-1}; the mass of all states n >= S is
    geometric and summed in closed form as ``tail`` (equal to ``eta``).
    """

    n_servers: int
    a: float
    mu: float
    pi0: float
    pi: tuple[float, ...]
    tail: float
    eta: float

    def pi_n(self, n: int) -> float:
        s = self.n_servers
        if n < s:
            return self.pi[n]
        # S^S a^n / S! * pi0 == pi_{S-1} * a^(n-S+1)
        return self.pi[s - 1] * self.a ** (n - s + 1)

    @property
    def total(self) -> float:
        return math.fsum(self.pi) + self.tail


def stationary_distribution(n_servers: int, a: float, mu: float = math.nan) -> QueueState:
    """Stationary distribution of an M/M/S queue with per-server intensity ``a``."""
    s = n_servers
    if s < 1:
        raise InvalidParameterError(f"need at least one server, got {s}")
    if a < 0:
        raise InvalidParameterError(f"traffic intensity must be >= 0, got {a}")
    if a >= 1.0:
        raise UnstableSystemError(a)
    offered = s * a
    terms = [1.0]
    for n in range(1, s):
        terms.append(terms[-1] * offered / n)
    top = terms[-1] * offered / s  # (Sa)^S / S!
    pi0 = 1.0 / (math.fsum(terms) + top / (1.0 - a))
    pi = tuple(t * pi0 for t in terms)
    eta = top / (1.0 - a) * pi0
    return QueueState(n_servers=s, a=a, mu=mu, pi0=pi0, pi=pi, tail=eta, eta=eta)


def _saturated_queue(n_servers: int, a: float, mu: float) -> QueueState:
    # a >= 1: every interface is busy with probability one.
    return QueueState(n_servers=n_servers, a=a, mu=mu, pi0=0.0,
                      pi=(0.0,) * n_servers, tail=1.0, eta=1.0)


def expected_backoff(queue: QueueState, cw_bar: float, n_servers: int) -> float:
    """Mean of the shortest backoff among the instances a packet receives.

    A packet finding n < S packets ahead holds S - n instances; the minimum
    of s uniform windows has mean CW/(s + 1).
    """
    head = math.fsum(queue.pi[n] * cw_bar / (n_servers - n + 1) for n in range(n_servers))
    return head + queue.tail * cw_bar / 2.0


def ap_transmission_probability(queue: QueueState, e_backoff: float,
                                n_servers: int) -> tuple[float, float]:
    """Per-slot transmission probability of the AP on one link, and link busy probability.

    Returns ``(tau, gamma)``.
    """
    idle = math.fsum((n_servers - n) / n_servers * queue.pi[n] for n in range(n_servers))
    gamma = min(1.0, max(0.0, 1.0 - idle))
    return gamma / (e_backoff + 1.0), gamma


def expected_service_time(e_backoff: float, rho: float, p: float, air: AirTimes,
                          sigma: float) -> float:
    """Mean time from first backoff slot to the end of the successful exchange."""
    if not 0.0 <= rho < 1.0:
        raise DegenerateChannelError(f"channel occupancy rho={rho!r} leaves no idle time")
    if not 0.0 <= p < 1.0:
        raise DegenerateChannelError(f"collision probability p={p!r} never lets a packet through")
    backoff_time = e_backoff * sigma / (1.0 - rho)
    return p / (1.0 - p) * (backoff_time + air.t_c) + backoff_time + air.t_s


@dataclass(frozen=True)
class DelayDistribution:
    """Response-time distribution of an M/M/S queue."""

    mu: float
    a: float
    n_servers: int
    eta: float

    def __post_init__(self) -> None:
        if self.a >= 1.0:
            raise UnstableSystemError(self.a)

    @classmethod
    def from_queue(cls, queue: QueueState) -> "DelayDistribution":
        return cls(mu=queue.mu, a=queue.a, n_servers=queue.n_servers, eta=queue.eta)

    def cdf(self, t: float) -> float:
        return delay_cdf(self, t)

    def quantile(self, q: float) -> float:
        return delay_quantile(self, q)

    def mean(self) -> float:
        return 1.0 / self.mu + self.eta / (self.n_servers * self.mu * (1.0 - self.a))


def delay_cdf(dist: DelayDistribution, t: float) -> float:
    """P(D <= t) for the M/M/S response time.

    The denominator is 1 - S(1 - a): the rate at which the waiting-time tail
    decays is S mu (1 - a), and the expression must collapse to the M/M/1
    response time 1 - exp(-mu (1 - a) t) when S = 1.
    """
    if dist.a >= 1.0:
        raise UnstableSystemError(dist.a)
    if t <= 0.0:
        return 0.0
    mu, s, a, eta = dist.mu, dist.n_servers, dist.a, dist.eta
    e_service = math.exp(-mu * t)
    gap = 1.0 - s * (1.0 - a)
    if abs(gap) < _BRANCH_TOL:
        value = 1.0 - e_service - eta * mu * t * e_service
    else:
        value = 1.0 - e_service - eta * (math.exp(-s * mu * (1.0 - a) * t) - e_service) / gap
    return min(1.0, max(0.0, value))


def delay_quantile(dist: DelayDistribution, q: float) -> float:
    """Smallest t with F_D(t) >= q, by bracketing and bisection."""
    if dist.a >= 1.0:
        raise UnstableSystemError(dist.a)
    if not 0.0 < q < 1.0:
        raise ValueError(f"quantile level must be in (0, 1), got {q!r}")
    hi = 1.0 / dist.mu
    while delay_cdf(dist, hi) < q:
        hi *= 2.0
    return optimize.bisect(lambda t: delay_cdf(dist, t) - q, 0.0, hi,
                           xtol=1e-300, rtol=1e-10, maxiter=2000)


@dataclass(frozen=True)
class AnalyticSolution:
    queue: QueueState
    e_backoff_slots: float
    e_service_s: float
    cw_bar: float
    tau_ap: float
    gamma: float
    rho: float
    p_coll: float
    tau_cont: float
    p_coll_cont: float
    e_backoff_cont: float
    stable: bool
    iterations: int
    residual: float
    scenario: Optional[Scenario] = field(default=None, compare=False)

    @property
    def a(self) -> float:
        return self.queue.a

    @property
    def mu(self) -> float:
        return self.queue.mu

    @property
    def pi0(self) -> float:
        return self.queue.pi0

    @property
    def eta(self) -> float:
        return self.queue.eta

    def delay_distribution(self) -> DelayDistribution:
        if not self.stable:
            raise UnstableSystemError(self.queue.a)
        return DelayDistribution.from_queue(self.queue)

    def quantile(self, q: float) -> float:
        return self.delay_distribution().quantile(q)


@dataclass
class _Iterate:
    e_backoff: float
    rho: float = 0.0
    p: float = 0.0
    tau_ap: float = 0.0
    tau_cont: float = 0.0
    gamma: float = 0.0
    e_service: float = 0.0
    a: float = 0.0
    cw_bar: float = 0.0
    p_cont: float = 0.0
    e_backoff_cont: float = 0.0
    queue: Optional[QueueState] = None

    def components(self, sigma: float) -> tuple[float, ...]:
        return (self.e_backoff, self.e_service / sigma, self.a, self.tau_ap,
                self.gamma, self.tau_cont, self.p, self.rho)


def _queue_for(n_servers: int, a: float, mu: float) -> QueueState:
    if a >= 1.0:
        return _saturated_queue(n_servers, a, mu)
    return stationary_distribution(n_servers, a, mu)


def _step(it: _Iterate, scenario: Scenario, params: PhyMacParams, air: AirTimes,
          damping: float) -> _Iterate:
    s = scenario.n_interfaces
    cw_bar = mean_contention_window(it.p, params.cw_min, params.m_stages)
    e_service = expected_service_time(it.e_backoff, it.rho, it.p, air, params.sigma)
    mu = 1.0 / e_service
    a = scenario.arrival_rate * e_service / s
    queue = _queue_for(s, a, mu)
    e_backoff = expected_backoff(queue, cw_bar, s)
    tau_new, gamma = ap_transmission_probability(queue, e_backoff, s)
    tau_ap = damping * it.tau_ap + (1.0 - damping) * tau_new
    tau_cont_new, p_cont, e_backoff_cont = obss.contender_update(
        tau_ap, it.tau_cont, scenario.n_contenders, scenario.activity, params)
    tau_cont = damping * it.tau_cont + (1.0 - damping) * tau_cont_new
    p_e, p_s, p_c = obss.slot_probabilities(tau_cont, scenario.n_contenders)
    rho = obss.channel_occupancy(p_e, p_s, p_c, air, params.sigma)
    return _Iterate(e_backoff=e_backoff, rho=rho, p=1.0 - p_e, tau_ap=tau_ap,
                    tau_cont=tau_cont, gamma=gamma, e_service=e_service, a=a,
                    cw_bar=cw_bar, p_cont=p_cont, e_backoff_cont=e_backoff_cont,
                    queue=queue)


def _distance(x: _Iterate, y: _Iterate, sigma: float) -> float:
    return max(abs(u - v) for u, v in zip(x.components(sigma), y.components(sigma)))


def solve_fixed_point(scenario: Scenario, params: PhyMacParams, *,
                      tol: float = TOLERANCE, max_iter: int = MAX_ITERATIONS,
                      damping: float = DAMPING) -> AnalyticSolution:
    """Jointly solve backoff, service time, queue state and OBSS contention.

    Iteration starts from an empty, contention-free system. A converged
    solution with a >= 1 is returned with ``stable=False``; asking it for a
    delay distribution raises :class:`UnstableSystemError`.
    """
    air = compute_air_times(params)
    s = scenario.n_interfaces
    it = _Iterate(e_backoff=params.cw_min / (s + 1.0))
    residual = math.inf
    for k in range(1, max_iter + 1):
        nxt = _step(it, scenario, params, air, damping)
        residual = _distance(it, nxt, params.sigma)
        it = nxt
        if residual < tol:
            break
    else:
        raise ConvergenceError(max_iter, residual)
    return AnalyticSolution(
        queue=it.queue,
        e_backoff_slots=it.e_backoff,
        e_service_s=it.e_service,
        cw_bar=it.cw_bar,
        tau_ap=it.tau_ap,
        gamma=it.gamma,
        rho=it.rho,
        p_coll=it.p,
        tau_cont=it.tau_cont,
        p_coll_cont=it.p_cont,
        e_backoff_cont=it.e_backoff_cont,
        stable=it.a < 1.0,
        iterations=k,
        residual=residual,
        scenario=scenario,
    )


def fixed_point_residual(solution: AnalyticSolution, scenario: Scenario,
                         params: PhyMacParams) -> float:
    """Largest change produced by applying every update map once, undamped."""
    air = compute_air_times(params)
    it = _Iterate(e_backoff=solution.e_backoff_slots, rho=solution.rho, p=solution.p_coll,
                  tau_ap=solution.tau_ap, tau_cont=solution.tau_cont, gamma=solution.gamma,
                  e_service=solution.e_service_s, a=solution.queue.a)
    return _distance(it, _step(it, scenario, params, air, damping=0.0), params.sigma)
