"""
Experiment result models
Theoretical convergence rates and the RateTable emitted by every rate experiment
"""

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

from src.exceptions import InvalidInputError

MIN_REPLICAS = 30
MIN_FIT_ROWS = 4


def moment_constant(m: int) -> float:
    """c_m = ((2m)!)^(1/(2m)) * sqrt(8m) + 8 e^(2m)"""
    return velocity_lln_constant(m) + theta_lln_constant(m)


def velocity_lln_constant(m: int) -> float:
    """((2m)!)^(1/(2m)) * sqrt(8m): the velocity law-of-large-numbers constant per unit |grad phi|_inf"""
    return math.factorial(2 * m) ** (1.0 / (2 * m)) * math.sqrt(8.0 * m)


def theta_lln_constant(m: int) -> float:
    """8 e^(2m): the enlargement-set law-of-large-numbers constant"""
    return 8.0 * math.exp(2 * m)


@dataclass(frozen=True)
class TheoreticalRate:
    """
    N-dependence of the propagation-of-chaos bound for W_p with q moments in
    dimension d, plus the universal moment term of order m.
    """
    p: float
    q: float
    d: int
    m: int

    def __post_init__(self):
        if not self.p >= 1:
            raise InvalidInputError(f"need p >= 1, got p={self.p}")
        if not self.q > self.p:
            raise InvalidInputError(f"need q > p, got q={self.q}, p={self.p}")
        if self.m < 1:
            raise InvalidInputError(f"need m >= 1, got m={self.m}")
        if self.d < 1:
            raise InvalidInputError(f"need d >= 1, got d={self.d}")
        if self.branch in ('critical', 'high') and self.q == 2 * self.p:
            raise InvalidInputError("branch constraint violated: q must differ from 2p")
        if self.branch == 'low' and self.p < self.d and math.isclose(self.q, self.d / (self.d - self.p)):
            raise InvalidInputError("branch constraint violated: q must differ from d/(d-p)")

    @property
    def branch(self) -> str:
        """'high' (2p > d), 'critical' (2p = d) or 'low' (2p < d)"""
        if 2 * self.p > self.d:
            return 'high'
        if 2 * self.p == self.d:
            return 'critical'
        return 'low'

    @property
    def universal_exponent(self) -> float:
        return -0.5 + 1.0 / (2 * self.m)

    @property
    def sampling_exponent(self) -> float:
        """Exponent of the dimension-dependent empirical-measure term"""
        if self.branch == 'low':
            return -1.0 / self.d
        return -1.0 / (2 * self.p)

    @property
    def moment_exponent(self) -> float:
        return -(self.q - self.p) / (self.q * self.p)

    @property
    def slowest_exponent(self) -> float:
        """Exponent governing the large-N decay (log factors ignored)"""
        return max(self.universal_exponent, self.sampling_exponent, self.moment_exponent)

    @property
    def c_m(self) -> float:
        return moment_constant(self.m)

    @property
    def min_particles(self) -> int:
        return (2 * self.m) ** 2

    def to_dict(self) -> dict:
        data = asdict(self)
        data.update(branch=self.branch, universal_exponent=self.universal_exponent,
                    sampling_exponent=self.sampling_exponent, moment_exponent=self.moment_exponent,
                    c_m=self.c_m)
        return data


@dataclass(frozen=True)
class RateRow:
    n: int
    replicas: int
    mean: float
    std_error: float
    theory_bound: Optional[float] = None


@dataclass
class RateTable:
    """Per-N statistics with the fitted log-log slope and the theory it is compared to"""
    rows: List[RateRow]
    theory_exponent: Optional[float] = None
    theory_constant: Optional[float] = None
    slope: Optional[float] = None
    slope_half_width: Optional[float] = None
    label: str = ''
    extra: Dict = field(default_factory=dict)

    def __post_init__(self):
        ns = [row.n for row in self.rows]
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise InvalidInputError(f"RateTable N values must be strictly increasing, got {ns}")
        short = [row.n for row in self.rows if row.replicas < MIN_REPLICAS]
        if short:
            raise InvalidInputError(f"RateTable rows need at least {MIN_REPLICAS} replicas (N={short})")

    @property
    def n_values(self) -> List[int]:
        return [row.n for row in self.rows]

    @property
    def means(self) -> List[float]:
        return [row.mean for row in self.rows]

    def rows_within_bound(self) -> bool:
        return all(row.theory_bound is None or row.mean <= row.theory_bound for row in self.rows)

    def strictly_decreasing(self) -> bool:
        return all(b.mean < a.mean for a, b in zip(self.rows, self.rows[1:]))

    def slope_summary(self) -> dict:
        return {
            'label': self.label,
            'slope': self.slope,
            'ci_half_width': self.slope_half_width,
            'theory_exponent': self.theory_exponent,
            'theory_constant': self.theory_constant,
            **self.extra,
        }

    def to_dict(self) -> dict:
        return {
            'rows': [asdict(row) for row in self.rows],
            **self.slope_summary(),
        }
