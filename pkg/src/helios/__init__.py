"""Capacity planning for an industrial energy network: scenario reduction,
sample-average and robust/distributionally-robust planning models, intra-day
dispatch, and evaluation tooling."""

__version__ = "0.1.0"

from .domain import (
    Arc,
    CapacityFactorDataset,
    CostParameters,
    DemandProfile,
    DispatchSchedule,
    EmissionIntensity,
    EnergyNetwork,
    InvestmentPlan,
    PlanningInstance,
    Site,
    TariffSchedule,
    TimeStructure,
    ValidationReport,
    check_plan,
    investment_spend,
    validate_instance,
)

__all__ = [
    "Arc",
    "CapacityFactorDataset",
    "CostParameters",
    "DemandProfile",
    "DispatchSchedule",
    "EmissionIntensity",
    "EnergyNetwork",
    "InvestmentPlan",
    "PlanningInstance",
    "Site",
    "TariffSchedule",
    "TimeStructure",
    "ValidationReport",
    "check_plan",
    "investment_spend",
    "validate_instance",
]
