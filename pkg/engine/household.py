"""Household preferences, endowments and life-cycle horizons."""
from dataclasses import dataclass, field, replace

from engine.actuarial import IncomeModel, MortalityLaw
from engine.errors import GammaOne, ValidationError


@dataclass(frozen=True)
class HouseholdSpec:
    """Breadwinner household with CRRA utility and money illusion.

    kappa1_w and kappa2_w weight the breadwinner's own consumption and the
    household's consumption respectively; they are unrelated to the market's
    mean-reversion speeds.

    Attributes:
        gamma: Relative risk aversion (> 0, != 1)
        theta: Degree of money illusion in [0, 1]
        delta: Subjective discount rate per year
        kappa1_w, kappa2_w: Utility weights summing to one
        W0: Initial real wealth, thousands of USD
        mortality: Gompertz law of the breadwinner
        income: Income process, carries Y0, T_R and T
    """

    gamma: float = 10.0
    theta: float = 0.0
    delta: float = 0.10
    kappa1_w: float = 0.5
    kappa2_w: float = 0.5
    W0: float = 35.0
    mortality: MortalityLaw = field(default_factory=MortalityLaw)
    income: IncomeModel = field(default_factory=IncomeModel)

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValidationError(f"gamma must be positive, got {self.gamma}")
        if self.gamma == 1.0:
            raise GammaOne("gamma = 1 (log utility) is not supported")
        if not 0.0 <= self.theta <= 1.0:
            raise ValidationError(f"theta must lie in [0, 1], got {self.theta}")
        if self.kappa1_w < 0 or self.kappa2_w < 0:
            raise ValidationError("Utility weights must be nonnegative")
        if abs(self.kappa1_w + self.kappa2_w - 1.0) > 1e-12:
            raise ValidationError(
                f"Utility weights must sum to 1, got {self.kappa1_w} + {self.kappa2_w}"
            )

    @property
    def Y0(self) -> float:
        return self.income.Y0

    @property
    def T_R(self) -> float:
        return self.income.T_R

    @property
    def T(self) -> float:
        return self.income.T

    @property
    def weight_roots(self) -> tuple[float, float]:
        """(kappa1_w^(1/gamma), kappa2_w^(1/gamma))."""
        return self.kappa1_w ** (1.0 / self.gamma), self.kappa2_w ** (1.0 / self.gamma)

    def with_theta(self, theta: float) -> "HouseholdSpec":
        return replace(self, theta=theta)

    def with_gamma(self, gamma: float) -> "HouseholdSpec":
        return replace(self, gamma=gamma)

    def scaled(self, factor: float) -> "HouseholdSpec":
        """Same household with initial wealth and income multiplied by factor."""
        return replace(self, W0=self.W0 * factor, income=replace(self.income, Y0=self.income.Y0 * factor))
