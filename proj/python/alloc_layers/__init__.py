"""Differentiable allocation layers with bound and regional constraints."""

from ._core import (
    AllocError,
    BoundSpec,
    CsConditionViolated,
    InternalAssertion,
    PreconditionViolated,
    RegionTree,
    appropt,
    appropt_jacobian,
    cs,
    cs_epsilon,
    cs_jacobian,
    exact_project,
    gradcheck,
    is_feasible,
    prescale,
    projection_gap,
    round_to_discrete,
    squash,
    train,
)

__all__ = [
    "AllocError",
    "BoundSpec",
    "CsConditionViolated",
    "InternalAssertion",
    "PreconditionViolated",
    "RegionTree",
    "appropt",
    "appropt_jacobian",
    "cs",
    "cs_epsilon",
    "cs_jacobian",
    "exact_project",
    "gradcheck",
    "is_feasible",
    "prescale",
    "projection_gap",
    "round_to_discrete",
    "squash",
    "train",
]
