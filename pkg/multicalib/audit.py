"""Exact audits and brute-force optima.

Every audit is an exact sum over the tabular support and equals the maximum
exact loss over the matching sign-closed objective set.
"""

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .conf import get_setting
from .core import DeterministicPredictor, GroupFamily, as_profiles, simplex_grid
from .exceptions import ContractViolation, SizeCapExceeded
from .objectives import (
    AGNOSTIC,
    CONDITIONAL,
    MEAN,
    CalibrationSet,
    build_moment_objectives,
)

logger = logging.getLogger(__name__)


@dataclass
class AuditReport:
    value: float
    witness: object
    component: int = 0
    breakdown: dict | None = None
    slack: float | None = None

    @property
    def cell(self):
        """(group, bin vector, coordinate, sign) of the witness."""
        w = self.witness
        return (w.group, tuple(w.bins), w.coord, w.sign)

    def to_dict(self):
        data = {"value": self.value, "component": self.component, "witness": self.witness.to_dict()}
        if self.breakdown is not None:
            data["breakdown"] = self.breakdown
        if self.slack is not None:
            data["slack"] = self.slack
        return data


@dataclass
class MomentAuditReport:
    mean: AuditReport
    moment: AuditReport

    @property
    def value(self):
        return max(self.mean.value, self.moment.value)

    def to_dict(self):
        return {"value": self.value, "mean": self.mean.to_dict(), "moment": self.moment.to_dict()}


def _report(objective_set, h, supports, component=0, **extra):
    value, index = objective_set.reported_max_loss(h, supports)
    return AuditReport(float(value), objective_set.describe(index), component, **extra)


def audit_multicalibration(h, distribution, groups, grid, k):
    """Largest |E[(h(x) - y)_j 1[h(x) in v, x in S]]| over groups, bins and coordinates."""
    if not isinstance(groups, GroupFamily):
        groups = GroupFamily(groups, distribution.domain_size)
    for profile in as_profiles(h):
        if profile[0].k != k:
            raise ContractViolation(f"predictor has {profile[0].k} classes, expected {k}")
    objective_set = CalibrationSet(MEAN, len(groups), grid, k)
    return _report(objective_set, h, [distribution.regroup(groups).support])


def audit_moment(h_mean, h_moments, distribution, groups, grid, r, *, allow_odd=False):
    """Mean and moment violations gated jointly on the mean bin and the moment bin.

    ``h_mean`` may be an ensemble of (mean, moments) profiles when ``h_moments`` is None.
    """
    problem = build_moment_objectives(groups, grid, r, distribution=distribution, allow_odd=allow_odd)
    h = h_mean if h_moments is None else (h_mean, h_moments)
    mean_set, moment_set = problem.objective_sets
    return MomentAuditReport(
        _report(mean_set, h, problem.supports, 0),
        _report(moment_set, h, problem.supports, 1),
    )


def covariance_slack(h, problem):
    """max over (group, bin, coordinate) of |E_x[1[h(x) in v] Cov(1[i in w], g(y)_c | x)]|."""
    base = problem.base
    grid = problem.grid
    covariance = base.group_label_mean - base.membership[:, :, None] * base.label_mean[:, None, :]
    profiles = as_profiles(h)
    totals = np.zeros((grid.size**base.k, base.u, base.k))
    for profile in profiles:
        bins = grid.flat_index(profile[0].table[:, 0, :])
        np.add.at(totals, bins, base.px[:, None, None] * covariance / len(profiles))
    return float(np.abs(totals).max())


def audit_agnostic(h, problem):
    """Agnostic violation, with the covariance slack of ``h`` reported alongside."""
    if problem.objective_sets[0].kind != AGNOSTIC:
        raise ContractViolation("audit_agnostic needs an agnostic problem")
    return _report(problem.objective_sets[0], h, problem.supports, slack=covariance_slack(h, problem))


def audit_conditional(h, problem):
    """Worst violation over every conditional distribution, broken down per distribution."""
    objective_set = problem.objective_sets[0]
    if objective_set.kind != CONDITIONAL:
        raise ContractViolation("audit_conditional needs a conditional problem")
    idx, vals = objective_set.exact_sparse(h, problem.supports)
    gates = objective_set.decode(idx)[0]
    breakdown = {}
    for d, dist in enumerate(problem.distributions):
        mine = vals[gates == d]
        breakdown[dist.name or str(d)] = max(float(mine.max()), 0.0) if mine.size else 0.0
    return _report(objective_set, h, problem.supports, breakdown=breakdown)


def audit_problem(h, problem):
    """Audit of any problem: worst objective overall plus per-component and per-distribution breakdowns."""
    if problem.objective_sets[0].kind == AGNOSTIC:
        return audit_agnostic(h, problem)
    if problem.objective_sets[0].kind == CONDITIONAL:
        return audit_conditional(h, problem)
    reports = [_report(s, h, problem.supports, a) for a, s in enumerate(problem.objective_sets)]
    worst = max(reports, key=lambda report: report.value)
    if len(reports) > 1:
        worst.breakdown = {f"component_{r.component}": r.value for r in reports}
    return worst


@dataclass
class BruteForceResult:
    value: float
    argmin: object
    step: float
    slack: float


def brute_force_opt(problem, step, *, domain_cap=None, min_step=None, enumeration_cap=None):
    """Exact min over grid predictors (or over H) of the worst exact objective loss, amplification scale undone.

    ``slack`` is the grid step: the coordinate-wise rounding distance from any
    predictor to the enumerated ones.
    """
    if problem.hypotheses is not None:
        objective_set = problem.objective_sets[0]
        worst = objective_set.exact_loss_matrix(problem.hypotheses, problem.supports).max(axis=1) / objective_set.scale
        best = int(np.argmin(worst))
        return BruteForceResult(float(worst[best]), problem.hypotheses[best][0], step, 0.0)

    domain_cap = get_setting("BRUTE_FORCE_DOMAIN_CAP", domain_cap)
    min_step = get_setting("BRUTE_FORCE_MIN_STEP", min_step)
    enumeration_cap = get_setting("BRUTE_FORCE_ENUMERATION_CAP", enumeration_cap)
    if problem.domain_size > domain_cap:
        logger.warning("Refusing brute force over %d points (cap %d)", problem.domain_size, domain_cap)
        raise SizeCapExceeded(f"brute force handles at most {domain_cap} points, got {problem.domain_size}")
    if step < min_step - 1e-12:
        logger.warning("Refusing brute force at step %g (finest %g)", step, min_step)
        raise SizeCapExceeded(f"the grid step must be at least {min_step}, got {step}")
    resolution = round(1 / step)
    points = simplex_grid(problem.k, resolution)

    # per-point options: one grid point per row of every component
    rows = problem.signature.rows
    per_point = list(itertools.product(range(len(points)), repeat=sum(rows)))
    total = len(per_point) ** problem.domain_size
    if total > enumeration_cap:
        logger.warning("Refusing to enumerate %d predictors (cap %d)", total, enumeration_cap)
        raise SizeCapExceeded(f"{total} grid predictors exceed the cap of {enumeration_cap}; use a coarser step")

    offsets = np.cumsum((0,) + rows)
    best_value, best_profile = np.inf, None
    for choice in itertools.product(per_point, repeat=problem.domain_size):
        chosen = points[np.array(choice)]
        profile = tuple(DeterministicPredictor(chosen[:, offsets[a]:offsets[a + 1], :]) for a in range(len(rows)))
        value = max(s.reported_max_loss(profile, problem.supports)[0] for s in problem.objective_sets)
        if value < best_value - 1e-15:
            best_value, best_profile = value, profile
    argmin = best_profile[0] if len(best_profile) == 1 else best_profile
    logger.debug("Brute force over %d predictors: OPT %.6g", total, best_value)
    return BruteForceResult(float(best_value), argmin, step, step)

