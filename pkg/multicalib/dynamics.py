"""Game dynamics: no-regret vs no-regret, no-regret vs best response, Find and majority rounding.

Every driver is sequential and deterministic given its generator; the
transcript keeps one record per round plus a regret ledger with cumulative
sampled and exact loss vectors, so regrets are read off without replaying
the run.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .conf import get_setting
from .core import DeterministicPredictor, EnsemblePredictor, as_profile, as_profiles, profile_to_dict, simplex_grid
from .exceptions import ContractViolation, MissingReference, MulticalibError, OracleFailure
from .objectives import CalibrationSet
from .players import (
    EXACT,
    AdversaryOracle,
    HedgeState,
    HypothesisLearner,
    OracleConfig,
    PointLazyLearner,
    best_response,
)

logger = logging.getLogger(__name__)

NRNR = "nrnr"
NRBR = "nrbr"
DYNAMICS_CHOICES = [(NRNR, "No-regret vs no-regret"), (NRBR, "No-regret vs best response")]

AUTO = "auto"
BEST_RESPONSE = "best_response"
LAZY = "lazy"
HYPOTHESIS = "hypothesis"
LEARNER_CHOICES = [(AUTO, "Automatic"), (BEST_RESPONSE, "Grid best response"), (LAZY, "Lazy per-point Hedge")]

SAMPLE_FEEDBACK = "sample"
EXACT_FEEDBACK = "exact"

SAMPLES_MODE = "samples"
ORACLE_MODE = "oracle"

ADVERSARY = "adversary"
LEARNER = "learner"
EMPIRICAL = "empirical"

BEST_RESPONSE_MAX_K = 3


@dataclass
class RunConfig:
    epsilon: float = 0.1
    delta: float = 0.05
    resolution: int | None = None
    learner: str = AUTO
    feedback: str = SAMPLE_FEEDBACK
    rounds_constant: float | None = None

    def __post_init__(self):
        if not 0 < self.epsilon <= 1 or not 0 < self.delta < 1:
            raise ContractViolation("epsilon must lie in (0, 1] and delta in (0, 1)")
        if self.learner not in (AUTO, BEST_RESPONSE, LAZY):
            raise ContractViolation(f"unknown learner {self.learner!r}")
        if self.feedback not in (SAMPLE_FEEDBACK, EXACT_FEEDBACK):
            raise ContractViolation(f"unknown feedback source {self.feedback!r}")
        if self.resolution is not None and self.resolution < 1:
            raise ContractViolation("the best-response resolution must be at least 1")

    @property
    def grid_resolution(self):
        return self.resolution or math.ceil(2 / self.epsilon)


def default_nrnr_rounds(problem, epsilon, delta, rounds_constant=None):
    constant = get_setting("ROUNDS_CONSTANT", rounds_constant)
    return math.ceil(constant * epsilon**-2 * math.log(2 * problem.size / delta))


def default_nrbr_rounds(problem, epsilon, rounds_constant=None):
    constant = get_setting("ROUNDS_CONSTANT", rounds_constant)
    actions = len(problem.hypotheses) if problem.hypotheses is not None else problem.k
    return math.ceil(constant * epsilon**-2 * math.log(max(actions, 2)) * max(problem.signature.rows))


@dataclass
class ComponentLedger:
    """Cumulative losses of one component; ``learner_*`` hold per-action totals when the learner has them.

    Totals are in the objective set's own units; ``scale`` maps reported reference values into them.
    """

    exact: np.ndarray
    empirical: np.ndarray | None = None
    realized_exact: float = 0.0
    realized_empirical: float = 0.0
    learner_exact: np.ndarray | None = None
    learner_empirical: np.ndarray | None = None
    scale: float = 1.0

    def record(self, weights, exact, empirical=None):
        self.realized_exact += float(weights @ exact)
        if empirical is not None:
            self.realized_empirical += float(weights @ empirical)
        self.exact += exact
        if empirical is not None:
            self.empirical += empirical

    def record_sparse(self, index, idx, vals):
        """Adds one round of sparse exact losses; returns the loss of objective ``index`` (0 when None)."""
        np.add.at(self.exact, idx, vals)
        if index is None:
            return 0.0
        realized = float(vals[idx == index].sum())
        self.realized_exact += realized
        return realized


@dataclass
class RegretLedger:
    components: list
    rounds: int = 0
    reference: float | None = None

    def regret(self, player, flavor=EMPIRICAL, weak=False, component=0, reference=None):
        ledger = self.components[component]
        exact = flavor == EXACT
        cumulative = ledger.exact if exact else ledger.empirical
        realized = ledger.realized_exact if exact else ledger.realized_empirical
        actions = ledger.learner_exact if exact else ledger.learner_empirical
        if cumulative is None:
            raise ContractViolation("this transcript drew no samples; only exact regrets are available")
        if weak:
            reference = self.reference if reference is None else reference
            if reference is None:
                raise MissingReference("weak regret needs a minmax reference value")
            target = self.rounds * reference * ledger.scale
            return target - realized if player == ADVERSARY else realized - target
        if player == ADVERSARY:
            return float(cumulative.max()) - realized
        if actions is None:
            raise ContractViolation("the learner kept no per-action totals; use weak regret")
        best = actions.min(axis=1).sum() if actions.ndim == 2 else actions.min()
        return realized - float(best)

    def to_dict(self):
        out = []
        for a, ledger in enumerate(self.components):
            entry = {}
            for flavor in (EXACT, EMPIRICAL):
                for player in (ADVERSARY, LEARNER):
                    for weak in (False, True):
                        name = f"{player}_{'weak_' if weak else ''}{flavor}"
                        try:
                            entry[name] = self.regret(player, flavor, weak, component=a)
                        except ContractViolation:
                            entry[name] = None
            out.append(entry)
        return {"rounds": self.rounds, "reference": self.reference, "components": out}


@dataclass
class RoundRecord:
    index: int
    strategies: tuple
    adversary: list
    exact_losses: list
    samples: list = field(default_factory=list)
    empirical_losses: list | None = None
    iterate_loss: float | None = None
    hypothesis: int | None = None

    def to_dict(self):
        return {
            "round": self.index,
            "strategies": [profile_to_dict((c,)) for c in self.strategies],
            "hypothesis": self.hypothesis,
            "adversary": self.adversary,
            "samples": [{"x": z.x, "w": list(z.w), "y": z.y} for z in self.samples],
            "empirical_losses": self.empirical_losses,
            "exact_losses": self.exact_losses,
            "iterate_loss": self.iterate_loss,
        }


@dataclass
class Transcript:
    dynamics: str
    problem: object
    rounds: int
    seed: object = None
    records: list = field(default_factory=list)
    ledger: RegretLedger | None = None
    oracle_calls: int = 0
    samples: int = 0
    players: dict = field(default_factory=dict)
    rng_state: dict | None = None

    def __len__(self):
        return len(self.records)

    def iterates(self):
        return [_unwrap(r.strategies) for r in self.records]

    def checkpoint(self):
        return {
            "dynamics": self.dynamics,
            "rounds": self.rounds,
            "seed": self.seed,
            "rng": self.rng_state,
            "players": self.players,
        }

    def summary(self):
        data = {
            "dynamics": self.dynamics,
            "kind": self.problem.kind,
            "rounds": self.rounds,
            "seed": self.seed,
            "oracle_calls": self.oracle_calls,
            "samples": self.samples,
            "regret": self.ledger.to_dict(),
        }
        losses = [r.iterate_loss for r in self.records if r.iterate_loss is not None]
        if losses:
            data["best_iterate"] = int(np.argmin(losses))
            data["best_iterate_loss"] = float(min(losses))
        return data


def _unwrap(profile):
    return profile[0] if len(profile) == 1 else tuple(profile)


def _generator(rng, seed, resume):
    if resume is not None:
        generator = np.random.default_rng()
        generator.bit_generator.state = resume["rng"]
        return generator
    return np.random.default_rng(seed if rng is None else rng)


def _choose_learner(problem, cfg):
    if problem.hypotheses is not None:
        return HYPOTHESIS
    objective_set = problem.objective_sets[0]
    fits_grid = (
        problem.b == 1
        and problem.signature.rows[0] == 1
        and problem.k <= BEST_RESPONSE_MAX_K
        and isinstance(objective_set, CalibrationSet)
    )
    if cfg.learner == BEST_RESPONSE and not fits_grid:
        raise ContractViolation("grid best responses need a single-row calibration problem with k <= 3")
    if cfg.learner == LAZY or not fits_grid:
        return LAZY
    return BEST_RESPONSE


def _lazy_learners(problem, rounds, states=None):
    if states is not None:
        return [PointLazyLearner.from_dict(s) for s in states]
    return [PointLazyLearner(problem.domain_size, problem.k, rows, rounds) for rows in problem.signature.rows]


def _hypothesis_learner(problem, rounds, state=None):
    learner = HypothesisLearner(problem.hypotheses, rounds)
    if state is not None:
        learner.hedge = HedgeState.from_dict(state["hedge"])
    return learner


class GridAccumulator:
    """Cumulative loss of every grid prediction at every point, sampled and exact."""

    def __init__(self, objective_set, problem, resolution):
        self.objective_set = objective_set
        self.problem = problem
        self.points = simplex_grid(objective_set.k, resolution)
        self.point_bins = objective_set.grid.flat_index(self.points)
        self.mass, self.label_mass = objective_set.gate_mass(problem)
        shape = (problem.domain_size, len(self.points))
        self.exact = np.zeros(shape)
        self.empirical = np.zeros(shape)

    def add(self, q, samples):
        a = self.objective_set.bin_weights(q)[:, self.point_bins, :]
        self.exact += np.einsum("xg,gsk,sk->xs", self.mass, a, self.points)
        self.exact -= np.einsum("gsk,xgk->xs", a, self.label_mass)
        by_distribution = self.objective_set.gate_by_distribution
        for d, z in enumerate(samples):
            residual = self.points.copy()
            residual[:, z.y] -= 1.0
            gates = [d] if by_distribution else np.flatnonzero(z.w)
            for gate in gates:
                self.empirical[z.x] += (a[gate] * residual).sum(axis=1)


def run_nrnr(problem, rounds=None, cfg=None, rng=None, *, seed=None, resume=None):
    """No-regret adversaries against a learner per component; returns the uniform ensemble and the transcript."""
    cfg = cfg or RunConfig()
    rounds = default_nrnr_rounds(problem, cfg.epsilon, cfg.delta, cfg.rounds_constant) if rounds is None else rounds
    if rounds < 1:
        raise ContractViolation(f"a run needs at least one round, got {rounds}")
    rng = _generator(rng, seed, resume)
    learner_kind = _choose_learner(problem, cfg)
    players = resume["players"] if resume is not None else {}
    sets = problem.objective_sets
    supports = problem.supports

    if "adversaries" in players:
        adversaries = [HedgeState.from_dict(s) for s in players["adversaries"]]
    else:
        adversaries = [HedgeState(len(s), rounds) for s in sets]
    lazy = hypothesis = accumulator = None
    exact_matrix = None
    if learner_kind == LAZY:
        lazy = _lazy_learners(problem, rounds, players.get("learners"))
    elif learner_kind == HYPOTHESIS:
        hypothesis = _hypothesis_learner(problem, rounds, players.get("learner"))
        exact_matrix = sets[0].exact_loss_matrix(problem.hypotheses, supports)
    else:
        accumulator = GridAccumulator(sets[0], problem, cfg.grid_resolution)

    ledger = RegretLedger([ComponentLedger(np.zeros(len(s)), np.zeros(len(s)), scale=s.scale) for s in sets])
    if accumulator is not None:
        ledger.components[0].learner_exact = accumulator.exact
        ledger.components[0].learner_empirical = accumulator.empirical
    if hypothesis is not None:
        ledger.components[0].learner_exact = np.zeros(len(problem.hypotheses))
        ledger.components[0].learner_empirical = np.zeros(len(problem.hypotheses))

    transcript = Transcript(NRNR, problem, rounds, seed=seed, ledger=ledger)
    logger.info(
        "NRNR start: kind=%s rounds=%d objectives=%d learner=%s", problem.kind, rounds, problem.size, learner_kind
    )
    drawn = [d.sample_rows(rng, rounds) for d in problem.distributions]
    members = []
    for t in range(rounds):
        qs = [adversary.distribution() for adversary in adversaries]
        pick = None
        if learner_kind == HYPOTHESIS:
            pick = hypothesis.draw(rng)
            profile = problem.hypotheses[pick]
        elif learner_kind == LAZY:
            profile = tuple(learner.predictor() for learner in lazy)
        else:
            response = best_response(qs[0], cfg.grid_resolution, problem)
            profile = (response.realize(rng),)
        samples = [support.sample(rows[t]) for support, rows in zip(supports, drawn)]
        transcript.samples += len(samples)

        empirical, exact = [], []
        for a, objective_set in enumerate(sets):
            sampled = objective_set.sample_loss_vector(profile, samples)
            expected = objective_set.exact_losses(profile, supports)
            ledger.components[a].record(qs[a], expected, sampled)
            adversaries[a].update(-(sampled if cfg.feedback == SAMPLE_FEEDBACK else expected))
            empirical.append(sampled)
            exact.append(expected)

        if learner_kind == HYPOTHESIS:
            sampled_h = sets[0].sample_loss_matrix(problem.hypotheses, samples) @ qs[0]
            expected_h = exact_matrix @ qs[0]
            ledger.components[0].learner_empirical += sampled_h
            ledger.components[0].learner_exact += expected_h
            hypothesis.update(sampled_h if cfg.feedback == SAMPLE_FEEDBACK else expected_h)
        elif learner_kind == LAZY:
            coefficients = [s.linear_coefficients(profile, qs[a], problem) for a, s in enumerate(sets)]
            for learner, f in zip(lazy, coefficients):
                learner.update(f)
        else:
            accumulator.add(qs[0], samples)

        members.append(profile)
        transcript.records.append(
            RoundRecord(
                index=t,
                strategies=profile,
                adversary=[_top(q) for q in qs],
                exact_losses=[float(q @ v) for q, v in zip(qs, exact)],
                samples=samples,
                empirical_losses=[float(q @ v) for q, v in zip(qs, empirical)],
                hypothesis=pick,
            )
        )
        logger.debug("NRNR round %d: realized exact loss %s", t, transcript.records[-1].exact_losses)
    ledger.rounds = rounds

    transcript.players = {"adversaries": [a.to_dict() for a in adversaries]}
    if lazy is not None:
        transcript.players["learners"] = [learner.to_dict() for learner in lazy]
    if hypothesis is not None:
        transcript.players["learner"] = hypothesis.to_dict()
    transcript.rng_state = rng.bit_generator.state
    ensemble = EnsemblePredictor(members)
    logger.info(
        "NRNR finished: kind=%s rounds=%d ensemble loss=%.6g samples=%d",
        problem.kind,
        rounds,
        max(float(c.exact.max()) for c in ledger.components) / rounds,
        transcript.samples,
    )
    return ensemble, transcript


def _top(q):
    index = int(np.argmax(q))
    return {"index": index, "weight": float(q[index])}


def run_nrbr(problem, rounds=None, oracle_cfg=None, rng=None, *, cfg=None, seed=None, resume=None):
    """Lazy no-regret leaders against best-responding oracles; returns every iterate and the transcript."""
    cfg = cfg or RunConfig()
    oracle_cfg = oracle_cfg or OracleConfig(EXACT, epsilon=cfg.epsilon, delta=cfg.delta)
    rounds = default_nrbr_rounds(problem, cfg.epsilon, cfg.rounds_constant) if rounds is None else rounds
    if rounds < 1:
        raise ContractViolation(f"a run needs at least one round, got {rounds}")
    rng = _generator(rng, seed, resume)
    players = resume["players"] if resume is not None else {}
    sets = problem.objective_sets
    supports = problem.supports

    hypothesis = lazy = exact_matrix = None
    if problem.hypotheses is not None:
        hypothesis = _hypothesis_learner(problem, rounds, players.get("learner"))
        exact_matrix = sets[0].exact_loss_matrix(problem.hypotheses, supports)
    else:
        lazy = _lazy_learners(problem, rounds, players.get("learners"))
    oracles = [AdversaryOracle(problem, a, oracle_cfg, rng, rounds=rounds) for a in range(problem.b)]

    ledger = RegretLedger(
        [ComponentLedger(np.zeros(len(s)), scale=s.scale) for s in sets], reference=oracle_cfg.reference
    )
    transcript = Transcript(NRBR, problem, rounds, seed=seed, ledger=ledger)
    logger.info("NRBR start: kind=%s rounds=%d oracle=%s", problem.kind, rounds, oracle_cfg.mode)
    for t in range(rounds):
        pick = None
        if hypothesis is not None:
            pick = hypothesis.draw(rng)
            profile = problem.hypotheses[pick]
        else:
            profile = tuple(learner.predictor() for learner in lazy)
        try:
            answers = [oracle(profile) for oracle in oracles]
        except MulticalibError as exc:
            raise OracleFailure(str(exc), round_index=t) from exc

        exact = [s.exact_sparse(profile, supports) for s in sets]
        adversary, realized = [], []
        for a, answer in enumerate(answers):
            index = None if answer.below_threshold else answer.index
            realized.append(ledger.components[a].record_sparse(index, *exact[a]))
            adversary.append({"index": index, "value": answer.value})
            if index is None:
                continue
            if hypothesis is not None:
                hypothesis.update(exact_matrix[:, index])
            else:
                lazy[a].update(sets[a].linear_coefficients(profile, (index, 1.0), problem))

        transcript.records.append(
            RoundRecord(
                index=t,
                strategies=profile,
                adversary=adversary,
                exact_losses=realized,
                iterate_loss=max(s.worst_of(*e)[0] / s.scale for e, s in zip(exact, sets)),
                hypothesis=pick,
            )
        )
        logger.debug("NRBR round %d: iterate loss %.6g", t, transcript.records[-1].iterate_loss)
    ledger.rounds = rounds

    transcript.oracle_calls = sum(o.calls for o in oracles)
    transcript.samples = sum(o.samples for o in oracles)
    transcript.players = (
        {"learner": hypothesis.to_dict()} if hypothesis is not None else {"learners": [l.to_dict() for l in lazy]}
    )
    transcript.rng_state = rng.bit_generator.state
    logger.info(
        "NRBR finished: kind=%s rounds=%d best iterate loss=%.6g oracle calls=%d",
        problem.kind,
        rounds,
        min(r.iterate_loss for r in transcript.records),
        transcript.oracle_calls,
    )
    return transcript.iterates(), transcript


@dataclass
class FindResult:
    index: int
    predictor: object
    scores: list
    samples: int = 0
    oracle_calls: int = 0


def find(candidates, problem, epsilon, delta, mode=SAMPLES_MODE, rng=None, *, oracle_cfg=None, slack=None,
         samples_constant=None):
    """Select the candidate with the smallest estimated multi-objective loss.

    ``slack``, when given, is subtracted from each candidate's score.
    """
    candidates = list(candidates)
    if not candidates:
        raise ContractViolation("find needs at least one candidate")
    if len(candidates) == 1:
        return FindResult(0, candidates[0], [])
    rng = np.random.default_rng(rng)
    sets = problem.objective_sets
    samples = calls = 0
    if mode == SAMPLES_MODE:
        constant = get_setting("SAMPLES_CONSTANT", samples_constant)
        n = math.ceil(constant * epsilon**-2 * math.log(4 * len(candidates) * problem.size / delta))
        supports = [d.empirical(d.sample_rows(rng, n)) for d in problem.distributions]
        samples = n * len(supports)
        scores = [max(s.reported_max_loss(c, supports)[0] for s in sets) for c in candidates]
    elif mode == ORACLE_MODE:
        oracle_cfg = oracle_cfg or OracleConfig(EXACT, epsilon=epsilon, delta=delta)
        oracles = [AdversaryOracle(problem, a, oracle_cfg, rng, rounds=len(candidates)) for a in range(problem.b)]
        scores = [max(o(as_profile(c)).value / o.objective_set.scale for o in oracles) for c in candidates]
        calls = sum(o.calls for o in oracles)
        samples = sum(o.samples for o in oracles)
    else:
        raise ContractViolation(f"unknown find mode {mode!r}")
    if slack is not None:
        scores = [score - slack(c) for score, c in zip(scores, candidates)]
    index = int(np.argmin(scores))
    logger.debug("Find picked candidate %d of %d (score %.6g)", index, len(candidates), scores[index])
    return FindResult(index, candidates[index], [float(s) for s in scores], samples, calls)


def majority_round(ensemble, grid):
    """Deterministic predictor from the modal bin of the ensemble at every point.

    Ties go to the lexicographically smallest bin vector; the output is the
    renormalised mean of the members in the modal bin.
    """
    profiles = as_profiles(ensemble)
    tables = [np.stack([p[a].table for p in profiles]) for a in range(len(profiles[0]))]
    members = tables[0].shape[0]
    keys = np.concatenate([grid.index(t).reshape(members, t.shape[1], -1) for t in tables], axis=2)
    outputs = [np.empty(t.shape[1:]) for t in tables]
    for x in range(keys.shape[1]):
        bins, counts = np.unique(keys[:, x, :], axis=0, return_counts=True)
        chosen = (keys[:, x, :] == bins[int(np.argmax(counts))]).all(axis=1)
        for out, table in zip(outputs, tables):
            mean = table[chosen, x].mean(axis=0)
            out[x] = mean / mean.sum(axis=-1, keepdims=True)
    rounded = tuple(DeterministicPredictor(out) for out in outputs)
    return _unwrap(rounded)


def compute_regret(transcript, player, flavor=EMPIRICAL, weak=False, *, component=0, reference=None):
    """Regret of ``player`` (adversary or learner) read from the transcript's ledger."""
    if player not in (ADVERSARY, LEARNER):
        raise ContractViolation(f"unknown player {player!r}")
    if flavor not in (EMPIRICAL, EXACT):
        raise ContractViolation(f"unknown regret flavor {flavor!r}")
    return transcript.ledger.regret(player, flavor, weak, component=component, reference=reference)
