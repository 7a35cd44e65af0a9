"""Closed-form solution for two servers with need-1 and need-2 exponential jobs.

States are ordered ``[1,1]``, ``[1|2]``, ``[2]``: two need-1 jobs in service;
one need-1 job in service with a need-2 job blocked; one need-2 job in
service.  Used as an analytic cross-check of :func:`marcq.marc.solve`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .marc import MarcSolution
from .workload import WorkloadSpec, exponential_class

LABELS = ("[1,1]", "[1|2]", "[2]")


@dataclass(frozen=True)
class K2Params:
    p1: float
    mu1: float
    mu2: float

    def __post_init__(self):
        if not 0 < self.p1 < 1:
            raise ValueError(f"p1 must lie in (0, 1), got {self.p1}")
        if not (self.mu1 > 0 and self.mu2 > 0):
            raise ValueError("service rates must be positive")

    @property
    def p2(self) -> float:
        return 1.0 - self.p1

    def workload(self) -> WorkloadSpec:
        return WorkloadSpec(2, (exponential_class(1, self.p1, self.mu1), exponential_class(2, self.p2, self.mu2)))


def closed_form_k2(params: K2Params) -> MarcSolution:
    p1, p2, m1, m2 = params.p1, params.p2, params.mu1, params.mu2
    D = m2 * p1**2 + 2 * m2 * p1 * p2 + 2 * m1 * p2

    lam = 2 * m1 * m2 / D
    Y = np.array([m2 * p1**2, 2 * m2 * p1 * p2, 2 * m1 * p2]) / D
    Yd = np.array([p1**2, p1 * p2, p2])

    d11 = 2 * p2 * (2 * m1**2 * (1 + p2) - m1 * m2 * (-2 * p1 + p1**2 + 3 * p2) - m2**2 * p1 * p2) / D**2
    d12 = (4 * m1**2 * p2**2 - 2 * m1 * m2 * (p1**2 + p1**2 * p2 + 2 * p2**2) + m2**2 * p1**2 * p2) / D**2
    # the mu2^2 factor is p1^2 (1 + p2)
    d2 = m2 * p1 * (-2 * m1 * (1 + p2**2) + m2 * (p1**2 + p1**2 * p2 + 3 * p2 + p2**2)) / D**2
    delta = np.array([d11, d12, d2])

    delta_yd = p1 * p2 * (4 * m1**2 - 2 * m1 * m2 * (1 + 3 * p2) + m2**2 * (1 + p2 + 2 * p2**2)) / D**2
    return MarcSolution(Y, lam, Yd, delta, float(delta_yd), LABELS)
