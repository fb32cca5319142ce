"""Invariant checks on the bundled instances, run by the ``selftest`` command."""

import json
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import chisquare

from .audit import audit_problem, brute_force_opt, covariance_slack
from .core import DeterministicPredictor, LevelGrid, TabularDistribution, load_distribution, load_predictor
from .dynamics import RunConfig, compute_regret, run_nrbr, run_nrnr
from .exceptions import MulticalibError
from .experiments import BUNDLED_DIR
from .objectives import build_agnostic_problem, build_multicalib_problem, exact_loss
from .players import EXACT, OracleConfig, best_response, point_payoffs

logger = logging.getLogger(__name__)

TOLERANCE = 1e-9

# grid step 0.25, bin width 0.5; fixed by exhaustive enumeration
CONFLICT_OPT = 0.125


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _bundled_problem(name="realizable_8.json", lam=0.25):
    dist = load_distribution(BUNDLED_DIR / name)
    return build_multicalib_problem(dist, dist.groups, LevelGrid(lam))


def check_bayes_audit():
    problem = _bundled_problem()
    h = load_predictor(BUNDLED_DIR / "bayes_realizable_8.json")
    value = audit_problem(h, problem).value
    return value <= TOLERANCE, f"max violation of the Bayes predictor {value:.3g}"


def check_objective_values():
    problem = _bundled_problem()
    rng = np.random.default_rng(0)
    h = DeterministicPredictor(rng.dirichlet([1.0, 1.0], size=problem.domain_size))
    objective_set = problem.objective_sets[0]
    losses = objective_set.exact_losses(h, problem.supports)
    indices = set(rng.choice(len(objective_set), size=24, replace=False).tolist())
    indices.update(np.flatnonzero(losses).tolist())
    worst = max(
        abs(losses[i] - exact_loss(objective_set.describe(i), h, problem.distributions[0])) for i in indices
    )
    return worst <= TOLERANCE, f"{len(indices)} objectives, largest disagreement {worst:.3g}"


def check_best_response(resolution=20, mixtures=100):
    dist = load_distribution(BUNDLED_DIR / "competitive_3.json")
    problem = build_multicalib_problem(dist, dist.groups, LevelGrid(0.25))
    objective_set = problem.objective_sets[0]
    rng = np.random.default_rng(1)
    worst = -np.inf
    for _ in range(mixtures):
        q = rng.dirichlet(np.full(len(objective_set), 0.2))
        response = best_response(q, resolution, problem)
        k = problem.k
        payoffs = point_payoffs(objective_set, q, response.points.reshape(-1, k), problem)
        for x in range(problem.domain_size):
            expected = response.probs[x] @ payoffs[x, x * k:(x + 1) * k, :]
            worst = max(worst, float(expected.max()))
    return worst <= 1 / resolution + TOLERANCE, f"worst expected loss {worst:.6g} against 1/r = {1 / resolution:.6g}"


def check_hedge_regret(rounds=500):
    problem = _bundled_problem()
    _, transcript = run_nrnr(problem, rounds, RunConfig(epsilon=0.1), seed=3)
    regret = compute_regret(transcript, "adversary", "empirical")
    bound = 2 * math.sqrt(rounds * math.log(problem.size))
    return regret <= bound, f"adversary regret {regret:.4g}, bound {bound:.4g}"


def check_opt_nonnegative(instances=5):
    rng = np.random.default_rng(2)
    values = []
    for _ in range(instances):
        dist = TabularDistribution.random_realizable(rng, 3, 2, [[0, 1, 2], [0, 1]])
        problem = build_multicalib_problem(dist, dist.groups, LevelGrid(0.5))
        values.append(brute_force_opt(problem, 0.25).value)
    return min(values) >= -TOLERANCE, f"smallest OPT over {instances} instances {min(values):.3g}"


def check_remark_lumping():
    dist = load_distribution(BUNDLED_DIR / "remark_3.json")
    problem = build_agnostic_problem(dist.u, LevelGrid(0.25), dist.k, distribution=dist)
    natural = DeterministicPredictor([[0.1, 0.9], [0.5, 0.5], [0.5, 0.5]])
    natural_loss = audit_problem(natural, problem).value
    optimum = brute_force_opt(problem, 0.25)
    bins = problem.grid.flat_index(optimum.argmin.table[:, 0, :])
    lumped = bins[0] == bins[1] == bins[2]
    slack = covariance_slack(natural, problem)
    passed = lumped and natural_loss > optimum.value + TOLERANCE
    return passed, f"natural {natural_loss:.4g}, OPT {optimum.value:.4g}, slack {slack:.4g}, lumped={bool(lumped)}"


def check_conflicting_labels():
    dist = load_distribution(BUNDLED_DIR / "conflict_3.json")
    problem = build_agnostic_problem(dist.u, LevelGrid(0.5), dist.k, distribution=dist)
    value = brute_force_opt(problem, 0.25).value
    return abs(value - CONFLICT_OPT) <= TOLERANCE, f"OPT {value:.6g}, expected {CONFLICT_OPT}"


def check_short_nrbr(rounds=200):
    problem = _bundled_problem()
    cfg = OracleConfig(EXACT, epsilon=0.1, reference=0.0)
    iterates, transcript = run_nrbr(problem, rounds, cfg, seed=4)
    json.dumps(transcript.checkpoint())
    best = min(r.iterate_loss for r in transcript.records)
    passed = transcript.oracle_calls == rounds and len(iterates) == rounds
    return passed, f"{transcript.oracle_calls} oracle calls, best iterate loss {best:.4g}"


def check_determinism(rounds=50):
    problem = _bundled_problem()
    first, _ = run_nrnr(problem, rounds, RunConfig(epsilon=0.1), seed=5)
    second, _ = run_nrnr(problem, rounds, RunConfig(epsilon=0.1), seed=5)
    same = all(
        np.array_equal(a[0].table, b[0].table) for a, b in zip(first.members, second.members)
    )
    return same, f"{rounds} rounds replayed {'identically' if same else 'differently'}"


def check_sampling(draws=20_000):
    dist = load_distribution(BUNDLED_DIR / "realizable_8.json")
    rows = dist.sample_rows(np.random.default_rng(6), draws)
    observed = np.bincount(rows, minlength=len(dist.support))
    result = chisquare(observed, dist.support.probs * draws)
    return result.pvalue > 1e-3, f"chi-square p-value {result.pvalue:.3g} over {draws} draws"


CHECKS = {
    "bayes_audit": check_bayes_audit,
    "objective_values": check_objective_values,
    "best_response": check_best_response,
    "hedge_regret": check_hedge_regret,
    "opt_nonnegative": check_opt_nonnegative,
    "remark_lumping": check_remark_lumping,
    "conflicting_labels": check_conflicting_labels,
    "short_nrbr": check_short_nrbr,
    "determinism": check_determinism,
    "sampling": check_sampling,
}


def run_checks(names=None):
    results = []
    for name in names or CHECKS:
        try:
            passed, detail = CHECKS[name]()
        except MulticalibError as exc:
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        if not passed:
            logger.warning("Self-check %s failed: %s", name, detail)
        results.append(CheckResult(name, bool(passed), detail))
    return results
