"""Delay functions, sample-size sequences and round step-size sequences.

The three objects built here drive the whole simulator:

* ``DelayFunction`` -- tau(x) = M1 + ((x + M0) / gamma(x + M0))**(1/g),
  the maximum staleness the recursion tolerates at iteration x.
* ``SampleSchedule`` -- the per-round total sample sizes {s_i}.
* ``StepSchedule`` -- the per-round step sizes {eta_bar_i} (or the
  per-iteration families they are derived from).

All arithmetic is double precision; ceilings are taken after a 1e-12
relative nudge so that representation error cannot flip an exact integer
boundary (the strongly convex schedule must give s_0 = 16 exactly).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

_CEIL_EPS = 1e-12


class DomainError(ValueError):
    """Raised when a schedule formula is evaluated outside its domain."""


class ScheduleError(ValueError):
    """Raised for invalid schedule parameters."""


def _ceil(x: float) -> int:
    """Ceiling with a relative epsilon nudge against float representation."""
    return math.ceil(x - _CEIL_EPS * max(1.0, abs(x)))


def _floor(x: float) -> int:
    return math.floor(x + _CEIL_EPS * max(1.0, abs(x)))


# ---------------------------------------------------------------------------
# Delay functions
# ---------------------------------------------------------------------------

GAMMA_ONE = "one"          # gamma(z) = 1
GAMMA_FOUR_LOG = "four_log"  # gamma(z) = 4 ln z


@dataclass(frozen=True)
class DelayFunction:
    """tau(x) = M1 + ((x + M0) / gamma(x + M0))**(1/g), g > 1."""

    g: float
    M0: float
    M1: float
    gamma_kind: str = GAMMA_ONE

    def __post_init__(self) -> None:
        if self.g <= 1:
            raise ScheduleError(f"exponent g must be > 1, got {self.g}")
        if self.M0 < 0 or self.M1 < 0:
            raise ScheduleError("M0 and M1 must be non-negative")
        if self.gamma_kind not in (GAMMA_ONE, GAMMA_FOUR_LOG):
            raise ScheduleError(f"unknown gamma kind {self.gamma_kind!r}")

    def gamma(self, z: float) -> float:
        if self.gamma_kind == GAMMA_ONE:
            return 1.0
        if z <= 1.0:
            raise DomainError(f"4*ln(z) undefined or <= 0 for z={z}")
        return 4.0 * math.log(z)

    def __call__(self, x: float) -> float:
        return eval_delay(self, x)

    def to_dict(self) -> dict:
        return {"g": self.g, "M0": self.M0, "M1": self.M1, "gamma": self.gamma_kind}

    @staticmethod
    def from_dict(d: dict) -> "DelayFunction":
        return DelayFunction(g=d["g"], M0=d["M0"], M1=d["M1"],
                             gamma_kind=d.get("gamma", GAMMA_ONE))


def eval_delay(df: DelayFunction, x: float) -> float:
    """Evaluate tau(x) = M1 + ((x + M0) / gamma(x + M0))**(1/g)."""
    if x < 0:
        raise DomainError(f"delay function evaluated at negative x={x}")
    z = x + df.M0
    gam = df.gamma(z)  # raises DomainError for four_log with z <= 1
    if gam <= 0:
        raise DomainError(f"gamma({z}) = {gam} <= 0")
    if z == 0.0:
        return df.M1
    return df.M1 + (z / gam) ** (1.0 / df.g)


def verify_delay_monotonicity(df: DelayFunction, x_max: float,
                              points: int = 1000) -> bool:
    """Check tau(x) nondecreasing and x - tau(x) nondecreasing numerically.

    Uses a geometric grid of `points` points on (x_lo, x_max] where x_lo is
    the smallest admissible argument for the gamma family.
    """
    x_lo = 0.0 if df.gamma_kind == GAMMA_ONE else max(0.0, 1.0 + 1e-9 - df.M0)
    xs = [x_lo + (x_max - x_lo) * ((1.02 ** k - 1) / (1.02 ** points - 1))
          for k in range(points + 1)]
    prev_tau = None
    prev_diff = None
    for x in xs:
        t = eval_delay(df, x)
        diff = x - t
        if prev_tau is not None and (t < prev_tau - 1e-9 or diff < prev_diff - 1e-9):
            return False
        prev_tau, prev_diff = t, diff
    return True


# ---------------------------------------------------------------------------
# Sample-size schedules
# ---------------------------------------------------------------------------

CONSTANT = "constant"
POWER_LAW = "power_law"      # s_i = ceil(a * i**c + b)
MATCHED_POWER = "matched_power"  # ceil((1/(d+1)) * ((m+i+1)/(d+1) * (g-1)/g)**(1/(g-1)))
MATCHED_LOG = "matched_log"      # ceil((m+i+1)/(16(d+1)^2) / ln((m+i+1)/(2(d+1))))
EXPLICIT = "explicit"


@dataclass
class SampleSchedule:
    """Per-round total sample sizes {s_i}.  Immutable after construction."""

    kind: str
    s: int = 0
    a: float = 0.0
    b: float = 0.0
    c_exp: float = 1.0
    g: float = 2.0
    m: int = 0
    d: int = 0
    values: Optional[tuple] = None
    _cum: list = field(default_factory=lambda: [0], repr=False, compare=False)

    # -- constructors -------------------------------------------------------

    @staticmethod
    def constant(s: int, d: int = 0) -> "SampleSchedule":
        if s < 1:
            raise ScheduleError(f"constant sample size must be >= 1, got {s}")
        return SampleSchedule(kind=CONSTANT, s=int(s), d=d)

    @staticmethod
    def power_law(a: float, b: float = 0.0, c_exp: float = 1.0,
                  d: int = 0) -> "SampleSchedule":
        # Note: with b = 0 round 0 is empty (s_0 = 0); the first non-empty
        # round is i = 1, matching the a*i^c + b family evaluated literally.
        if a < 0 or b < 0:
            raise ScheduleError("power-law coefficients must be non-negative")
        if a == 0 and b == 0:
            raise ScheduleError("power-law schedule is identically zero")
        return SampleSchedule(kind=POWER_LAW, a=a, b=b, c_exp=c_exp, d=d)

    @staticmethod
    def matched_power(g: float, m: int = 0, d: int = 0) -> "SampleSchedule":
        if g <= 1:
            raise ScheduleError(f"matched_power requires g > 1, got {g}")
        if m < 0 or d < 0:
            raise ScheduleError("m and d must be non-negative integers")
        return SampleSchedule(kind=MATCHED_POWER, g=g, m=int(m), d=int(d))

    @staticmethod
    def matched_log(m: int, d: int = 0) -> "SampleSchedule":
        if m < 0 or d < 0:
            raise ScheduleError("m and d must be non-negative integers")
        # Require strict log positivity with margin: (m+1)/(2(d+1)) >= e.
        if (m + 1) / (2 * (d + 1)) < math.e:
            raise ScheduleError(
                f"matched_log needs (m+1)/(2(d+1)) >= e; got m={m}, d={d}")
        return SampleSchedule(kind=MATCHED_LOG, m=int(m), d=int(d))

    @staticmethod
    def explicit(values, d: int = 0) -> "SampleSchedule":
        vals = tuple(int(v) for v in values)
        if not vals or any(v < 1 for v in vals):
            raise ScheduleError("explicit schedule needs values >= 1")
        return SampleSchedule(kind=EXPLICIT, values=vals, d=d)

    # -- evaluation ---------------------------------------------------------

    def __getitem__(self, i: int) -> int:
        return sample_size(self, i)

    def prefix_sum(self, i: int) -> int:
        """Sum of s_j for j < i (so prefix_sum(0) == 0)."""
        cum = self._cum
        while len(cum) <= i:
            j = len(cum) - 1
            cum.append(cum[-1] + sample_size(self, j))
        return cum[i]

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "d": self.d}
        if self.kind == CONSTANT:
            d["s"] = self.s
        elif self.kind == POWER_LAW:
            d.update(a=self.a, b=self.b, c=self.c_exp)
        elif self.kind == MATCHED_POWER:
            d.update(g=self.g, m=self.m)
        elif self.kind == MATCHED_LOG:
            d.update(m=self.m)
        elif self.kind == EXPLICIT:
            d["values"] = list(self.values)
        return d

    @staticmethod
    def from_dict(spec: dict) -> "SampleSchedule":
        kind = spec["kind"]
        d = int(spec.get("d", 0))
        if kind == CONSTANT:
            return SampleSchedule.constant(spec["s"], d=d)
        if kind == POWER_LAW:
            return SampleSchedule.power_law(spec["a"], spec.get("b", 0.0),
                                            spec.get("c", 1.0), d=d)
        if kind == MATCHED_POWER:
            return SampleSchedule.matched_power(spec["g"], spec.get("m", 0), d=d)
        if kind == MATCHED_LOG:
            return SampleSchedule.matched_log(spec["m"], d=d)
        if kind == EXPLICIT:
            return SampleSchedule.explicit(spec["values"], d=d)
        raise ScheduleError(f"unknown sample schedule kind {kind!r}")


def sample_size(sched: SampleSchedule, i: int) -> int:
    """Evaluate s_i for the schedule's closed form."""
    if i < 0:
        raise ScheduleError(f"round index must be non-negative, got {i}")
    if sched.kind == CONSTANT:
        return sched.s
    if sched.kind == POWER_LAW:
        return _ceil(sched.a * float(i) ** sched.c_exp + sched.b)
    if sched.kind == MATCHED_POWER:
        g, m, d = sched.g, sched.m, sched.d
        base = (m + i + 1) / (d + 1) * (g - 1) / g
        return _ceil(base ** (1.0 / (g - 1)) / (d + 1))
    if sched.kind == MATCHED_LOG:
        m, d = sched.m, sched.d
        arg = (m + i + 1) / (2 * (d + 1))
        if arg <= 1.0:
            raise DomainError(f"log argument {arg} <= 1 at round {i}")
        return _ceil((m + i + 1) / (16 * (d + 1) ** 2) / math.log(arg))
    if sched.kind == EXPLICIT:
        if i >= len(sched.values):
            raise ScheduleError(f"explicit schedule has no round {i}")
        return sched.values[i]
    raise ScheduleError(f"unknown sample schedule kind {sched.kind!r}")


def verify_delay_compatibility(sched: SampleSchedule, df: DelayFunction,
                               d: int, i_max: int):
    """Check tau(sum_{j<=i} s_j) >= 1 + sum_{j=i-d}^{i} s_j for i in [d, i_max].

    Returns (True, None) if the inequality holds everywhere, otherwise
    (False, first violating i).
    """
    if i_max < d:
        raise ScheduleError("i_max must be >= d")
    total = 0
    window = []  # last d+1 sample sizes
    for i in range(i_max + 1):
        s_i = sample_size(sched, i)
        total += s_i
        window.append(s_i)
        if len(window) > d + 1:
            window.pop(0)
        if i < d:
            continue
        if eval_delay(df, float(total)) < 1 + sum(window):
            return False, i
    return True, None


# ---------------------------------------------------------------------------
# Step-size schedules
# ---------------------------------------------------------------------------

STEP_CONSTANT = "constant"
INVERSE_T = "inverse_t"            # eta0 / (1 + beta * t)
INVERSE_SQRT_T = "inverse_sqrt_t"  # eta0 / (1 + beta * sqrt(t))
STRONGLY_CONVEX_ROUND = "strongly_convex_round"

PER_ROUND = "per_round"          # diminishing_2: one step size per round
PER_ITERATION = "per_iteration"  # diminishing_1: step size per iteration


@dataclass(frozen=True)
class StepSchedule:
    """Round step sizes {eta_bar_i}, or the iteration family behind them."""

    kind: str
    eta: float = 0.0
    eta0: float = 0.0
    beta: float = 0.0
    mu: float = 0.0
    M0: float = 0.0
    M1: float = 0.0
    m: int = 0
    mode: str = PER_ROUND

    @staticmethod
    def constant(eta: float) -> "StepSchedule":
        if eta <= 0:
            raise ScheduleError("constant step size must be positive")
        return StepSchedule(kind=STEP_CONSTANT, eta=eta)

    @staticmethod
    def inverse_t(eta0: float, beta: float, mode: str = PER_ROUND) -> "StepSchedule":
        if eta0 <= 0 or beta <= 0:
            raise ScheduleError("eta0 and beta must be positive")
        return StepSchedule(kind=INVERSE_T, eta0=eta0, beta=beta, mode=mode)

    @staticmethod
    def inverse_sqrt_t(eta0: float, beta: float,
                       mode: str = PER_ROUND) -> "StepSchedule":
        if eta0 <= 0 or beta <= 0:
            raise ScheduleError("eta0 and beta must be positive")
        return StepSchedule(kind=INVERSE_SQRT_T, eta0=eta0, beta=beta, mode=mode)

    @staticmethod
    def strongly_convex_round(mu: float, M0: float, M1: float,
                              m: int) -> "StepSchedule":
        if mu <= 0:
            raise ScheduleError("mu must be positive")
        return StepSchedule(kind=STRONGLY_CONVEX_ROUND, mu=mu, M0=M0, M1=M1,
                            m=m, mode=PER_ROUND)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "mode": self.mode}
        if self.kind == STEP_CONSTANT:
            d["eta"] = self.eta
        elif self.kind in (INVERSE_T, INVERSE_SQRT_T):
            d.update(eta0=self.eta0, beta=self.beta)
        else:
            d.update(mu=self.mu, M0=self.M0, M1=self.M1, m=self.m)
        return d

    @staticmethod
    def from_dict(spec: dict) -> "StepSchedule":
        kind = spec["kind"]
        mode = spec.get("mode", PER_ROUND)
        if kind == STEP_CONSTANT:
            return StepSchedule.constant(spec["eta"])
        if kind == INVERSE_T:
            return StepSchedule.inverse_t(spec["eta0"], spec["beta"], mode)
        if kind == INVERSE_SQRT_T:
            return StepSchedule.inverse_sqrt_t(spec["eta0"], spec["beta"], mode)
        if kind == STRONGLY_CONVEX_ROUND:
            return StepSchedule.strongly_convex_round(
                spec["mu"], spec["M0"], spec["M1"], spec["m"])
        raise ScheduleError(f"unknown step schedule kind {kind!r}")


def per_iteration_step(sched: StepSchedule, t: int) -> float:
    """Step size at global iteration t for the iteration-level families."""
    if sched.kind == STEP_CONSTANT:
        return sched.eta
    if sched.kind == INVERSE_T:
        return sched.eta0 / (1.0 + sched.beta * t)
    if sched.kind == INVERSE_SQRT_T:
        return sched.eta0 / (1.0 + sched.beta * math.sqrt(t))
    raise ScheduleError(
        f"{sched.kind} is defined per round only, not per iteration")


def round_step(sched: StepSchedule, sample_sched: SampleSchedule, i: int) -> float:
    """Round step size eta_bar_i, evaluated at t = sum_{j<i} s_j."""
    if i < 0:
        raise ScheduleError(f"round index must be non-negative, got {i}")
    t = sample_sched.prefix_sum(i)
    if sched.kind == STRONGLY_CONVEX_ROUND:
        z = sched.M0 + t
        denom = t + 2.0 * sched.M1 + math.sqrt(z / math.log(z))
        return 12.0 / sched.mu / denom
    return per_iteration_step(sched, t)


def make_strongly_convex_schedules(mu: float, L: float, d: int, m: int):
    """Build the (tau, {s_i}, {eta_bar_i}) triple for strongly convex problems.

    tau has g = 2 and gamma(z) = 4 ln z; M0 = (m+1)^2/4;
    M1 = max{d+2, 72 L/mu, ceil(s_0 formula)/2}.  The returned pair
    (schedule, delay) is verified against the delay-compatibility property
    before being returned.
    """
    if mu <= 0:
        raise ScheduleError("mu must be positive")
    if L < mu:
        raise ScheduleError("L must be >= mu")
    if d < 0:
        raise ScheduleError("d must be non-negative")
    samples = SampleSchedule.matched_log(m=m, d=d)  # validates the log domain
    M0 = (m + 1) ** 2 / 4.0
    s0_term = _ceil((m + 1) / (16 * (d + 1) ** 2)
                    / math.log((m + 1) / (2 * (d + 1))))
    M1 = max(d + 2.0, 72.0 * L / mu, s0_term / 2.0)
    df = DelayFunction(g=2.0, M0=M0, M1=M1, gamma_kind=GAMMA_FOUR_LOG)
    steps = StepSchedule.strongly_convex_round(mu=mu, M0=M0, M1=M1, m=m)
    ok, bad = verify_delay_compatibility(samples, df, d, i_max=max(2000, 2 * d))
    if not ok:
        raise ScheduleError(f"constructed schedules violate the delay "
                            f"property at round {bad}")
    return df, samples, steps


def max_constant_sample(eta: float, mu: float, d: int) -> int:
    """Largest constant sample size s with (d+1)*s <= 1/(eta*mu)."""
    if eta <= 0 or mu <= 0:
        raise ScheduleError("eta and mu must be positive")
    return _floor(1.0 / (eta * mu * (d + 1)))


def rounds_for_budget(sched: SampleSchedule, K: int) -> int:
    """Smallest T with sum_{j=0}^{T} s_j >= K."""
    if K < 1:
        raise ScheduleError("budget K must be positive")
    total = 0
    i = 0
    while True:
        total += sample_size(sched, i)
        if total >= K:
            return i
        i += 1
