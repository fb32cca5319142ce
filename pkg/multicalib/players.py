"""Regret minimizers and oracles.

Hedge drives every adversary and the finite-class learner; the per-point
lazy learner plays deterministic predictions; ``best_response`` solves the
per-point minimax game against a mixture of linear objectives; the
adversary oracles pick objectives exactly, from fresh samples, from a reused
noisy buffer, or only when a reference value is beaten.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.special import logsumexp

from .conf import get_setting
from .core import DeterministicPredictor, HypothesisClass, Prediction, simplex_grid, simplex_grid_size
from .exceptions import ContractViolation, MissingReference, SizeCapExceeded
from .objectives import CalibrationSet, sparse_weights

logger = logging.getLogger(__name__)

LOSS_TOLERANCE = 1e-9

EXACT = "exact"
EMPIRICAL = "empirical"
NOISY_MAX = "noisy_max"
WEAK = "weak"
ORACLE_MODES = (EXACT, EMPIRICAL, NOISY_MAX, WEAK)


def _rate(n, horizon):
    if horizon < 1:
        raise ContractViolation(f"the horizon must be at least 1, got {horizon}")
    return math.sqrt(8 * math.log(max(n, 2)) / horizon)


def _check_losses(loss):
    if loss.size and np.abs(loss).max() > 1 + LOSS_TOLERANCE:
        raise ContractViolation(f"losses must lie in [-1, 1], got {np.abs(loss).max():.6g}")


class HedgeState:
    """Multiplicative weights over n actions with a fixed-horizon rate."""

    def __init__(self, n, horizon, log_weights=None, eta=None, rounds=0):
        if n < 1:
            raise ContractViolation("Hedge needs at least one action")
        self.n = n
        self.horizon = horizon
        self.eta = _rate(n, horizon) if eta is None else float(eta)
        self.log_weights = np.zeros(n) if log_weights is None else np.array(log_weights, dtype=float)
        self.rounds = rounds

    def distribution(self):
        return np.exp(self.log_weights - logsumexp(self.log_weights))

    def update(self, loss):
        """Dense update; losses in [-1, 1] are rescaled to [0, 1] first."""
        loss = np.asarray(loss, dtype=float)
        if loss.shape != (self.n,):
            raise ContractViolation(f"expected {self.n} losses, got shape {loss.shape}")
        _check_losses(loss)
        self.log_weights -= self.eta * (loss + 1) / 2
        self.rounds += 1
        return self

    def update_sparse(self, indices, values):
        """Update where every action outside ``indices`` has loss 0."""
        values = np.asarray(values, dtype=float)
        _check_losses(values)
        np.subtract.at(self.log_weights, np.asarray(indices, dtype=np.int64), self.eta * values / 2)
        self.rounds += 1
        return self

    def to_dict(self):
        return {
            "n": self.n,
            "horizon": self.horizon,
            "eta": self.eta,
            "rounds": self.rounds,
            "log_weights": self.log_weights.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(data["n"], data["horizon"], data["log_weights"], data["eta"], data["rounds"])


def hedge_init(n, horizon):
    return HedgeState(n, horizon)


def hedge_update(state, loss):
    return state.update(loss)


def hedge_distribution(state):
    return state.distribution()


class PointLazyLearner:
    """Independent k-action Hedge rows per domain point; the mixed weights are the prediction.

    Points never fed a loss keep uniform rows.
    """

    def __init__(self, domain_size, k, rows=1, horizon=1):
        if k < 2 or rows < 1:
            raise ContractViolation("the lazy learner needs k >= 2 and at least one row")
        self.domain_size = domain_size
        self.k = k
        self.rows = rows
        self.horizon = horizon
        self.eta = _rate(k, horizon)
        self.log_weights = np.zeros((domain_size, rows, k))
        self.touched = set()
        self.rounds = 0

    @property
    def signature(self):
        return (self.rows, self.k)

    def _rows_at(self, x):
        return np.exp(self.log_weights[x] - logsumexp(self.log_weights[x], axis=-1, keepdims=True))

    def predict(self, x):
        return Prediction(self._rows_at(x))

    def predictor(self):
        return DeterministicPredictor(self._rows_at(slice(None)))

    def update(self, coefficients):
        """Feed every point its row losses ``coefficients[x]``; all-zero points are left untouched."""
        coefficients = np.asarray(coefficients, dtype=float)
        if coefficients.shape != self.log_weights.shape:
            raise ContractViolation(
                f"loss coefficients of shape {coefficients.shape} do not match the learner {self.log_weights.shape}"
            )
        _check_losses(coefficients)
        active = np.flatnonzero(np.abs(coefficients).reshape(self.domain_size, -1).max(axis=1) > 0)
        self.log_weights[active] -= self.eta * coefficients[active] / 2
        self.touched.update(int(x) for x in active)
        self.rounds += 1
        return self

    def to_dict(self):
        return {
            "domain_size": self.domain_size,
            "k": self.k,
            "rows": self.rows,
            "horizon": self.horizon,
            "eta": self.eta,
            "rounds": self.rounds,
            "states": {str(x): self.log_weights[x].tolist() for x in sorted(self.touched)},
        }

    @classmethod
    def from_dict(cls, data):
        learner = cls(data["domain_size"], data["k"], data["rows"], data["horizon"])
        learner.eta = data["eta"]
        learner.rounds = data["rounds"]
        for x, log_weights in data["states"].items():
            learner.log_weights[int(x)] = log_weights
            learner.touched.add(int(x))
        return learner


def lazy_predict(learner, x):
    return learner.predict(x)


def lazy_update(learner, q, h, problem, component=0):
    """Feed the lazy learner the linear loss of strategy ``q`` under its own current output ``h``."""
    objective_set = problem.objective_sets[component]
    return learner.update(objective_set.linear_coefficients(h, q, problem))


class HypothesisLearner:
    """Hedge over an explicit finite class of predictors."""

    def __init__(self, hypotheses, horizon):
        if not isinstance(hypotheses, HypothesisClass):
            hypotheses = HypothesisClass(hypotheses)
        self.hypotheses = hypotheses
        self.hedge = HedgeState(len(hypotheses), horizon)

    def distribution(self):
        return self.hedge.distribution()

    def draw(self, rng):
        return int(rng.choice(len(self.hypotheses), p=self.distribution()))

    def update(self, losses):
        self.hedge.update(losses)
        return self

    def to_dict(self):
        return {"hedge": self.hedge.to_dict()}


class RandomizedPredictor:
    """Per-point distribution over grid predictions, as returned by ``best_response``."""

    def __init__(self, points, probs, values):
        self.points = np.asarray(points, dtype=float)
        self.probs = np.asarray(probs, dtype=float)
        self.values = np.asarray(values, dtype=float)

    @property
    def domain_size(self):
        return self.points.shape[0]

    @property
    def pure(self):
        return bool((self.probs.max(axis=1) >= 1 - LOSS_TOLERANCE).all())

    def realize(self, rng):
        draws = rng.random(self.domain_size)
        cumulative = np.cumsum(self.probs, axis=1)
        choice = np.minimum((cumulative < draws[:, None]).sum(axis=1), self.probs.shape[1] - 1)
        return DeterministicPredictor(self.points[np.arange(self.domain_size), choice])

    def mean(self):
        return DeterministicPredictor(np.einsum("xs,xsk->xk", self.probs, self.points))


def _dense(q, size):
    idx, wts = sparse_weights(q)
    dense = np.zeros(size)
    np.add.at(dense, idx, wts)
    return dense


def point_payoffs(objective_set, q, points, problem):
    """Loss of every grid point at every x against every vertex label, shape (n, S, k)."""
    a = objective_set.bin_weights(_dense(q, len(objective_set)))
    weights = objective_set.gate_weights(problem)
    phi = np.einsum("xg,gsk->xsk", weights, a[:, objective_set.grid.flat_index(points), :])
    return (phi * points[None]).sum(axis=2, keepdims=True) - phi


def _two_label_mix(payoffs, resolution):
    # psi = phi_0 - phi_1 along ascending grid values of coordinate 0
    psi = payoffs[:, :, 1] - payoffs[:, :, 0]
    left, right = psi[:, :-1], psi[:, 1:]
    crossing = (left < 0) & (right > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = np.where(crossing, right / (right - left), 0.0)
        value = np.where(crossing, alpha * -left / resolution, np.inf)
    pair = np.argmin(value, axis=1)
    rows = np.arange(psi.shape[0])
    return pair, alpha[rows, pair], value[rows, pair]


def best_response(q, resolution, problem, *, component=0, candidate_cap=None):
    """Per-point minimax response to the objective mixture ``q`` on the 1/resolution simplex grid.

    Every point plays a distribution over at most k grid predictions whose
    expected loss against any label is at most 1/resolution.
    """
    objective_set = problem.objective_sets[component]
    if not isinstance(objective_set, CalibrationSet):
        raise ContractViolation(f"best responses need linear calibration objectives, got {objective_set.kind}")
    k = objective_set.k
    cap = get_setting("GRID_CANDIDATE_CAP", candidate_cap)
    size = simplex_grid_size(k, resolution)
    if size > cap:
        logger.warning("Refusing a best response over %d grid points (cap %d)", size, cap)
        raise SizeCapExceeded(
            f"{size} grid predictions exceed the cap of {cap}; use the lazy learner for k={k}"
        )
    points = simplex_grid(k, resolution)
    payoffs = point_payoffs(objective_set, q, points, problem)
    worst = payoffs.max(axis=2)
    best = np.argmin(worst, axis=1)
    n = payoffs.shape[0]
    xs = np.arange(n)

    support = np.repeat(points[best][:, None, :], k, axis=1)
    probs = np.zeros((n, k))
    probs[:, 0] = 1.0
    values = worst[xs, best]
    mixed = np.flatnonzero(values > LOSS_TOLERANCE)
    if mixed.size and k == 2:
        pair, alpha, value = _two_label_mix(payoffs[mixed], resolution)
        support[mixed, 0] = points[pair]
        support[mixed, 1] = points[pair + 1]
        probs[mixed, 0] = alpha
        probs[mixed, 1] = 1 - alpha
        values[mixed] = value
    for x in mixed if k > 2 else ():
        support[x], probs[x], values[x] = _solve_point_game(payoffs[x], points, k)
    return RandomizedPredictor(support, probs, values)


def _solve_point_game(payoff, points, k):
    """min over mixtures P of max over labels y of sum_s P_s payoff[s, y]."""
    size = payoff.shape[0]
    objective = np.zeros(size + 1)
    objective[-1] = 1.0
    result = linprog(
        objective,
        A_ub=np.hstack([payoff.T, -np.ones((k, 1))]),
        b_ub=np.zeros(k),
        A_eq=np.hstack([np.ones((1, size)), np.zeros((1, 1))]),
        b_eq=[1.0],
        bounds=[(0, None)] * size + [(None, None)],
        method="highs",
    )
    if not result.success:
        raise ContractViolation(f"the per-point minimax program failed: {result.message}")
    weights = np.clip(result.x[:-1], 0, None)
    chosen = np.argsort(weights)[::-1][:k]
    chosen_weights = weights[chosen] / weights[chosen].sum()
    return points[chosen], chosen_weights, float(result.x[-1])


@dataclass
class OracleConfig:
    mode: str = EXACT
    epsilon: float = 0.1
    delta: float = 0.05
    c: float = 1.0
    n_samples: int | None = None
    sigma: float | None = None
    buffer_size: int | None = None
    reference: float | None = None

    def __post_init__(self):
        if self.mode not in ORACLE_MODES:
            raise ContractViolation(f"unknown oracle mode {self.mode!r}; choose one of {', '.join(ORACLE_MODES)}")
        if not 0 < self.c <= 1:
            raise ContractViolation("the oracle factor c must lie in (0, 1]")
        if self.epsilon < 0 or not 0 < self.delta < 1:
            raise ContractViolation("oracle epsilon must be >= 0 and delta in (0, 1)")
        if self.n_samples is not None and self.n_samples < 1:
            raise ContractViolation("an empirical oracle needs at least one sample")
        if self.sigma is not None and self.sigma <= 0:
            raise ContractViolation("noise scale sigma must be positive")
        if self.buffer_size is not None and self.buffer_size < 1:
            raise ContractViolation("a noisy-max buffer needs at least one sample")

    def sample_count(self, n_objectives, samples_constant=None):
        if self.n_samples is not None:
            return self.n_samples
        constant = get_setting("SAMPLES_CONSTANT", samples_constant)
        return math.ceil(constant * self.epsilon**-2 * math.log(4 * n_objectives / self.delta))

    def buffer_count(self, n_objectives, rounds, noisy_max_constant=None):
        if self.buffer_size is not None:
            return self.buffer_size
        constant = get_setting("NOISY_MAX_CONSTANT", noisy_max_constant)
        eps = self.epsilon
        size = (
            constant
            * math.sqrt(rounds)
            * eps**-2
            * math.log(max(n_objectives / eps, 2))
            * math.log(max(1 / (eps * self.delta), 2)) ** 1.5
        )
        return max(1, math.ceil(size))

    def noise_scale(self, n_objectives):
        if self.sigma is not None:
            return self.sigma
        return self.epsilon / (2 * math.sqrt(2 * math.log(2 * n_objectives / self.delta)))


@dataclass(frozen=True)
class OracleAnswer:
    """An oracle reply; ``objective`` is None when the weak oracle reports below-threshold."""

    objective: object
    index: int | None
    value: float
    component: int = 0

    @property
    def below_threshold(self):
        return self.objective is None


def _supports_of(distributions):
    if hasattr(distributions, "support"):
        distributions = [distributions]
    return [d.support for d in distributions], list(distributions)


def _select(objective_set, values, cfg, component):
    """Argmax, or the lowest objective meeting ``c * max - epsilon`` for an approximate oracle."""
    best = int(np.argmax(values))
    top = float(values[best])
    if cfg.c < 1:
        eligible = np.flatnonzero(values >= cfg.c * top - cfg.epsilon)
        best = int(eligible[np.argmin(values[eligible])])
    return OracleAnswer(objective_set.describe(best), best, float(values[best]), component)


def agnostic_oracle(h, objective_set, distributions, cfg, rng=None, *, component=0):
    """(c, epsilon)-agnostic oracle: exact argmax, or argmax over fresh samples."""
    if len(objective_set) == 0:
        raise ContractViolation("the objective set is empty")
    supports, distributions = _supports_of(distributions)
    if cfg.mode == EMPIRICAL:
        if rng is None:
            raise ContractViolation("an empirical oracle needs a random generator")
        n = cfg.sample_count(len(objective_set))
        supports = [d.empirical(d.sample_rows(rng, n)) for d in distributions]
    if cfg.c == 1:
        value, index = objective_set.max_loss(h, supports)
        return OracleAnswer(objective_set.describe(index), index, value, component)
    return _select(objective_set, objective_set.exact_losses(h, supports), cfg, component)


def weak_oracle(h, objective_set, distributions, cfg, *, component=0):
    """Returns the worst objective only when it beats the reference value by epsilon, in reported units."""
    if cfg.reference is None:
        raise MissingReference("a weak oracle needs a minmax reference value")
    supports, _ = _supports_of(distributions)
    value, index = objective_set.max_loss(h, supports)
    if value / objective_set.scale >= cfg.reference + cfg.epsilon:
        return OracleAnswer(objective_set.describe(index), index, value, component)
    logger.debug("Weak oracle below threshold: max %.6g vs reference %.6g", value, cfg.reference)
    return OracleAnswer(None, None, value, component)


def noisy_max_oracle(h, objective_set, buffer, sigma, rng, *, component=0):
    """Report-noisy-max over empirical losses on a reused sample buffer."""
    if not buffer or any(len(support) == 0 for support in buffer):
        raise ContractViolation("the noisy-max buffer is empty")
    losses = objective_set.exact_losses(h, buffer)
    noisy = losses + rng.normal(0.0, sigma, size=losses.shape)
    best = int(np.argmax(noisy))
    return OracleAnswer(objective_set.describe(best), best, float(losses[best]), component)


class AdversaryOracle:
    """One component's oracle with call and sample counters.

    Noisy-max draws its buffer once, sized for ``rounds`` adaptive queries.
    """

    def __init__(self, problem, component, cfg, rng, rounds=1):
        self.problem = problem
        self.component = component
        self.objective_set = problem.objective_sets[component]
        self.cfg = cfg
        self.rng = rng
        self.calls = 0
        self.samples = 0
        self.buffer = None
        if cfg.mode == WEAK and cfg.reference is None:
            raise MissingReference("a weak oracle needs a minmax reference value")
        if cfg.mode == NOISY_MAX:
            size = cfg.buffer_count(len(self.objective_set), rounds)
            self.buffer = [d.empirical(d.sample_rows(rng, size)) for d in problem.distributions]
            self.sigma = cfg.noise_scale(len(self.objective_set))
            self.samples += size * len(problem.distributions)
            logger.debug("Noisy-max buffer of %d samples per distribution, sigma %.4g", size, self.sigma)

    def __call__(self, h):
        self.calls += 1
        if self.cfg.mode == NOISY_MAX:
            return noisy_max_oracle(h, self.objective_set, self.buffer, self.sigma, self.rng, component=self.component)
        if self.cfg.mode == WEAK:
            return weak_oracle(h, self.objective_set, self.problem.distributions, self.cfg, component=self.component)
        if self.cfg.mode == EMPIRICAL:
            self.samples += self.cfg.sample_count(len(self.objective_set)) * len(self.problem.distributions)
        return agnostic_oracle(
            h, self.objective_set, self.problem.distributions, self.cfg, self.rng, component=self.component
        )

