"""Calibration objective sets and the multi-objective problems built on them.

Objectives are evaluated cell by cell: every objective of a calibration set
is tied to a gate cell (group or distribution, bin vector) and a coordinate,
so exact losses are aggregated over the support once per cell and only the
occupied cells are ever materialised.
"""

import itertools
import logging
from dataclasses import asdict, dataclass, replace
from functools import cached_property

import numpy as np

from .conf import get_setting
from .core import (
    GroupFamily,
    HypothesisClass,
    LevelGrid,
    Prediction,
    as_profile,
    as_profiles,
    simplex_grid,
)
from .exceptions import ContractViolation, SizeCapExceeded

logger = logging.getLogger(__name__)

MEAN = "mean"
MOMENT = "moment"
AGNOSTIC = "agnostic"
CONDITIONAL = "conditional"
COMPETITIVE = "competitive"
GROUPWISE = "groupwise"

REFERENCE_CACHE_SIZE = 4


@dataclass(frozen=True)
class LinearObjective:
    kind: str
    group: int
    bins: tuple = ()
    coord: int = 0
    sign: int = 1
    moment_degree: int | None = None
    component: int = 0
    row: int = 0
    lam: float | None = None
    baseline: int | None = None
    base: "LinearObjective | None" = None

    def negated(self):
        return replace(self, sign=-self.sign)

    def to_dict(self):
        data = {k: v for k, v in asdict(self).items() if v is not None}
        data["bins"] = list(self.bins)
        if self.base is not None:
            data["base"] = self.base.to_dict()
        return data


@dataclass(frozen=True)
class Signature:
    k: int
    rows: tuple

    @property
    def b(self):
        return len(self.rows)


def _predictions(h):
    if isinstance(h, Prediction):
        return (h,)
    if isinstance(h, (tuple, list)):
        return tuple(p if isinstance(p, Prediction) else Prediction(p) for p in h)
    return (Prediction(h),)


def eval_objective(obj, h, z, baseline=None):
    """Value of one objective on one sample; ``h`` is the prediction(s) at ``z.x``."""
    preds = _predictions(h)
    if obj.kind == COMPETITIVE:
        if baseline is None:
            raise ContractViolation("competitive objectives need the baseline prediction at x")
        return 0.5 * (eval_objective(obj.base, preds, z) - eval_objective(obj.base, _predictions(baseline), z))
    row = preds[0].rows[0]
    if obj.kind == GROUPWISE:
        residual = row.copy()
        residual[z.y] -= 1.0
        return z.w[obj.group] * 0.5 * float(residual @ residual)

    grid = LevelGrid(obj.lam)
    if obj.kind == MOMENT:
        if len(preds) != 2 or preds[0].k != 2:
            raise ContractViolation("moment objectives need a binary (mean, moments) prediction pair")
        moment_row = preds[1].rows[obj.row]
        bins = (int(grid.index(row[0])), int(grid.index(moment_row[0])))
        if not z.w[obj.group] or bins != tuple(obj.bins):
            return 0.0
        if obj.component == 0:
            residual = row.copy()
            residual[z.y] -= 1.0
        else:
            y1 = 1.0 if z.y == 0 else 0.0
            target = float(np.clip((y1 - row[0]) ** obj.moment_degree, 0.0, 1.0))
            residual = moment_row - np.array([target, 1.0 - target])
        return obj.sign * float(residual[obj.coord])

    if len(obj.bins) != preds[0].k:
        raise ContractViolation(f"objective binds {len(obj.bins)} coordinates, prediction has {preds[0].k}")
    if obj.kind != CONDITIONAL and not z.w[obj.group]:
        return 0.0
    if tuple(int(b) for b in grid.index(row)) != tuple(obj.bins):
        return 0.0
    return obj.sign * float(row[obj.coord] - (1.0 if z.y == obj.coord else 0.0))


def sparse_weights(q):
    """(indices, weights) of an adversary strategy given densely or sparsely."""
    if isinstance(q, tuple):
        idx, wts = q
        return np.atleast_1d(np.asarray(idx, dtype=np.int64)), np.atleast_1d(np.asarray(wts, dtype=float))
    q = np.asarray(q, dtype=float)
    idx = np.flatnonzero(q)
    return idx, q[idx]


def _check_cap(size, cap, remedy):
    cap = get_setting("OBJECTIVE_CAP", cap)
    if size > cap:
        logger.warning("Refusing an objective set of %d objectives (cap %d)", size, cap)
        raise SizeCapExceeded(f"the objective set would hold {size} objectives, above the cap of {cap}; {remedy}")


class ObjectiveSet:
    kind = None
    sign_closed = False
    permutation_closed = False
    scale = 1.0
    component = 0
    size = 0

    def __len__(self):
        return self.size

    def __getitem__(self, index):
        index = int(index)
        if not 0 <= index < self.size:
            raise IndexError(index)
        return self.describe(index)

    def __iter__(self):
        return (self.describe(i) for i in range(self.size))

    def manifest(self):
        return [self.describe(i).to_dict() for i in range(self.size)]

    def exact_losses(self, h, supports):
        idx, vals = self.exact_sparse(h, supports)
        out = np.zeros(self.size)
        out[idx] = vals
        return out

    def max_loss(self, h, supports):
        """(value, index) of the worst objective; objectives absent from the sparse cells are 0."""
        return self.worst_of(*self.exact_sparse(h, supports))

    def worst_of(self, idx, vals):
        """(value, index) of the worst objective given sparse losses."""
        if vals.size == 0:
            return 0.0, 0
        best = int(np.argmax(vals))
        if vals[best] < 0 and idx.size < self.size:
            free = np.setdiff1d(np.arange(min(self.size, idx.size + 1)), idx)
            return 0.0, int(free[0])
        return float(vals[best]), int(idx[best])

    def reported_max_loss(self, h, supports):
        """``max_loss`` with the recorded scale undone, in the units of the unamplified objectives."""
        value, index = self.max_loss(h, supports)
        return value / self.scale, index

    def sample_loss_vector(self, h, samples):
        idx, vals = self.sample_losses(h, samples)
        out = np.zeros(self.size)
        out[idx] = vals
        return out

    def sample_loss_matrix(self, profiles, samples):
        return np.stack([self.sample_loss_vector(p, samples) for p in profiles])

    def exact_loss_matrix(self, profiles, supports):
        return np.stack([self.exact_losses(p, supports) for p in profiles])

    def linear_coefficients(self, h, q, problem):
        raise ContractViolation(f"{self.kind} objectives are not linear in the prediction")

    def _cells_to_objectives(self, keys, contributions):
        if keys.size == 0:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        cells, inverse = np.unique(keys, return_inverse=True)
        totals = np.zeros((cells.size, self.k))
        np.add.at(totals, inverse.ravel(), contributions)
        base = ((cells[:, None] * self.k + np.arange(self.k)) * 2).ravel()
        return np.concatenate([base, base + 1]), np.concatenate([totals.ravel(), -totals.ravel()])


class CalibrationSet(ObjectiveSet):
    """± objectives for every (gate, bin vector, coordinate).

    The gate is a group bit of the sample for mean and agnostic sets and the
    sampled distribution itself for conditional sets.
    Index layout: ``((gate * n_bins + bin) * k + coord) * 2 + signbit``.
    """

    sign_closed = True

    def __init__(self, kind, gates, grid, k, *, objective_cap=None):
        if k < 2:
            raise ContractViolation("calibration objectives need k >= 2")
        if gates < 1:
            raise ContractViolation("calibration objectives need at least one group")
        self.kind = kind
        self.gates = gates
        self.grid = grid
        self.k = k
        self.gate_by_distribution = kind == CONDITIONAL
        self.n_bins = grid.size**k
        self.size = 2 * gates * self.n_bins * k
        self.permutation_closed = k == 2
        _check_cap(self.size, objective_cap, "use a coarser bin width or fewer classes")

    def encode(self, gate, bin_flat, coord, sign):
        return ((gate * self.n_bins + bin_flat) * self.k + coord) * 2 + (0 if sign > 0 else 1)

    def decode(self, index):
        index = np.asarray(index, dtype=np.int64)
        signbit = index % 2
        rest = index // 2
        coord = rest % self.k
        rest = rest // self.k
        return rest // self.n_bins, rest % self.n_bins, coord, signbit

    def describe(self, index):
        gate, bin_flat, coord, signbit = (int(v) for v in self.decode(index))
        return LinearObjective(
            self.kind,
            gate,
            self.grid.unflatten(bin_flat, self.k),
            coord,
            1 - 2 * signbit,
            lam=self.grid.lam,
        )

    def index_of(self, obj):
        if obj.kind != self.kind:
            raise ContractViolation(f"{obj.kind} objective does not belong to a {self.kind} set")
        bin_flat = int(np.ravel_multi_index(tuple(obj.bins), (self.grid.size,) * self.k))
        return self.encode(obj.group, bin_flat, obj.coord, obj.sign)

    def _predictor(self, profile):
        h = profile[0]
        if h.rows != 1 or h.k != self.k:
            raise ContractViolation(f"expected a single-row {self.k}-class predictor, got {h.signature}")
        return h

    def _check_supports(self, supports):
        if self.gate_by_distribution:
            if len(supports) != self.gates:
                raise ContractViolation(f"expected {self.gates} conditional distributions, got {len(supports)}")
        elif len(supports) != 1 or supports[0].ws.shape[1] != self.gates:
            raise ContractViolation(f"expected one distribution with {self.gates} group bits")

    def _gate_cells(self, d, ws, bins, mass, residual):
        if self.gate_by_distribution:
            return d * self.n_bins + bins, mass[:, None] * residual
        gate_mass = mass[:, None] * ws
        rows, gates = np.nonzero(gate_mass)
        return gates * self.n_bins + bins[rows], gate_mass[rows, gates][:, None] * residual[rows]

    def exact_sparse(self, h, supports):
        profiles = as_profiles(h)
        self._check_supports(supports)
        weight = 1.0 / len(profiles)
        keys, contributions = [], []
        for profile in profiles:
            table = self._predictor(profile).table
            for d, support in enumerate(supports):
                preds = table[support.xs, 0, :]
                residual = preds.copy()
                residual[np.arange(len(support)), support.ys] -= 1.0
                cell_keys, cell_values = self._gate_cells(
                    d, support.ws, self.grid.flat_index(preds), support.probs * weight, residual
                )
                keys.append(cell_keys)
                contributions.append(cell_values)
        return self._cells_to_objectives(np.concatenate(keys), np.concatenate(contributions).reshape(-1, self.k))

    def sample_losses(self, h, samples):
        table = self._predictor(as_profile(h)).table
        keys, contributions = [], []
        for d, z in enumerate(samples):
            pred = table[z.x, 0]
            residual = pred.copy()
            residual[z.y] -= 1.0
            bin_flat = int(self.grid.flat_index(pred))
            gates = [d] if self.gate_by_distribution else [i for i, bit in enumerate(z.w) if bit]
            for gate in gates:
                keys.append(gate * self.n_bins + bin_flat)
                contributions.append(residual)
        return self._cells_to_objectives(
            np.asarray(keys, dtype=np.int64), np.asarray(contributions, dtype=float).reshape(-1, self.k)
        )

    def bin_weights(self, q):
        """Net signed weight per (gate, bin, coordinate) of a dense adversary strategy."""
        q = np.asarray(q, dtype=float).reshape(self.gates, self.n_bins, self.k, 2)
        return q[..., 0] - q[..., 1]

    def gate_weights(self, problem):
        """Per-point weight of each gate, at most 1, used by the learners."""
        if self.gate_by_distribution:
            return problem.conditional_weights
        return problem.base.membership

    def gate_mass(self, problem):
        """Probability mass of each (x, gate) pair and its label mass, for exact per-point losses."""
        if self.gate_by_distribution:
            mass = problem.conditional_mass
            return mass, mass[:, :, None] * problem.base.label_mean[:, None, :]
        px = problem.base.px
        return px[:, None] * problem.base.membership, px[:, None, None] * problem.base.group_label_mean

    def linear_coefficients(self, h, q, problem):
        """Per-point linear loss f(h, x) of the strategy ``q`` under the current bins of ``h``."""
        table = self._predictor(as_profile(h)).table
        idx, wts = sparse_weights(q)
        gate, bin_flat, coord, signbit = self.decode(idx)
        bins_x = self.grid.flat_index(table[:, 0, :])
        weights = self.gate_weights(problem)
        active = (bins_x[:, None] == bin_flat[None, :]) * weights[:, gate] * (wts * (1 - 2 * signbit))
        return (active @ np.eye(self.k)[coord])[:, None, :]


class MomentSet(ObjectiveSet):
    """Objectives of one component of a mean-conditioned moment problem.

    Component 0 holds the mean objectives, component 1 the moment objectives;
    both gate on the group bit, the mean bin and the bin of the moment row.
    Index layout: ``((((gate * nb + v_mean) * nb + v_moment) * n_deg + deg) * 2 + coord) * 2 + signbit``.
    """

    kind = MOMENT
    sign_closed = True
    permutation_closed = True
    k = 2

    def __init__(self, component, gates, grid, degrees, *, objective_cap=None):
        if component not in (0, 1):
            raise ContractViolation("moment problems have a mean and a moment component")
        if not degrees:
            raise ContractViolation("moment objectives need at least one degree")
        self.component = component
        self.gates = gates
        self.grid = grid
        self.degrees = tuple(degrees)
        self.nb = grid.size
        self.size = 2 * gates * self.nb * self.nb * len(self.degrees) * 2
        _check_cap(self.size, objective_cap, "use a coarser bin width or fewer degrees")

    def decode(self, index):
        index = np.asarray(index, dtype=np.int64)
        signbit = index % 2
        rest = index // 2
        coord = rest % 2
        rest = rest // 2
        deg = rest % len(self.degrees)
        rest = rest // len(self.degrees)
        v_moment = rest % self.nb
        rest = rest // self.nb
        return rest // self.nb, rest % self.nb, v_moment, deg, coord, signbit

    def describe(self, index):
        gate, v_mean, v_moment, deg, coord, signbit = (int(v) for v in self.decode(index))
        return LinearObjective(
            MOMENT,
            gate,
            (v_mean, v_moment),
            coord,
            1 - 2 * signbit,
            moment_degree=self.degrees[deg],
            component=self.component,
            row=deg,
            lam=self.grid.lam,
        )

    def index_of(self, obj):
        if obj.kind != MOMENT or obj.component != self.component:
            raise ContractViolation("objective does not belong to this moment component")
        cell = ((obj.group * self.nb + obj.bins[0]) * self.nb + obj.bins[1]) * len(self.degrees) + obj.row
        return (cell * 2 + obj.coord) * 2 + (0 if obj.sign > 0 else 1)

    def _profile(self, h):
        profile = as_profile(h)
        if len(profile) != 2:
            raise ContractViolation("moment objectives evaluate a (mean, moments) predictor pair")
        mean, moments = profile
        if mean.signature != (1, 2) or moments.signature != (len(self.degrees), 2):
            raise ContractViolation("moment predictor signature does not match the degrees")
        return mean.table, moments.table

    def _residual(self, mean, moment_row, ys, degree):
        if self.component == 0:
            residual = mean.copy()
            residual[np.arange(len(ys)), ys] -= 1.0
            return residual
        y1 = (ys == 0).astype(float)
        target = np.clip((y1 - mean[:, 0]) ** degree, 0.0, 1.0)
        return moment_row - np.stack([target, 1.0 - target], axis=1)

    def _cells(self, mean, moments, ws, ys, mass):
        keys, contributions = [], []
        mean_bins = self.grid.index(mean[:, 0])
        gate_mass = mass[:, None] * ws
        rows, gates = np.nonzero(gate_mass)
        for deg, degree in enumerate(self.degrees):
            moment_bins = self.grid.index(moments[:, deg, 0])
            residual = self._residual(mean, moments[:, deg, :], ys, degree)
            cell = ((gates * self.nb + mean_bins[rows]) * self.nb + moment_bins[rows]) * len(self.degrees) + deg
            keys.append(cell)
            contributions.append(gate_mass[rows, gates][:, None] * residual[rows])
        return keys, contributions

    def exact_sparse(self, h, supports):
        if len(supports) != 1:
            raise ContractViolation("moment problems are single-distribution")
        support = supports[0]
        profiles = as_profiles(h)
        keys, contributions = [], []
        for profile in profiles:
            mean_table, moment_table = self._profile(profile)
            k_, c_ = self._cells(
                mean_table[support.xs, 0, :],
                moment_table[support.xs],
                support.ws,
                support.ys,
                support.probs / len(profiles),
            )
            keys.extend(k_)
            contributions.extend(c_)
        return self._cells_to_objectives(np.concatenate(keys), np.concatenate(contributions).reshape(-1, 2))

    def sample_losses(self, h, samples):
        mean_table, moment_table = self._profile(h)
        (z,) = samples
        keys, contributions = self._cells(
            mean_table[[z.x], 0, :],
            moment_table[[z.x]],
            np.asarray([z.w], dtype=float),
            np.asarray([z.y]),
            np.ones(1),
        )
        return self._cells_to_objectives(np.concatenate(keys), np.concatenate(contributions).reshape(-1, 2))

    def linear_coefficients(self, h, q, problem):
        mean_table, moment_table = self._profile(h)
        idx, wts = sparse_weights(q)
        gate, v_mean, v_moment, deg, coord, signbit = self.decode(idx)
        mean_bins = self.grid.index(mean_table[:, 0, 0])
        moment_bins = self.grid.index(moment_table[:, :, 0])
        weights = problem.base.membership
        active = (
            (mean_bins[:, None] == v_mean[None, :])
            * (moment_bins[:, deg] == v_moment[None, :])
            * weights[:, gate]
            * (wts * (1 - 2 * signbit))
        )
        rows = 1 if self.component == 0 else len(self.degrees)
        target = coord if self.component == 0 else deg * 2 + coord
        return (active @ np.eye(rows * 2)[target]).reshape(-1, rows, 2)


class GroupwiseSet(ObjectiveSet):
    """Per-group squared loss ``1[i in w] * ||h(x) - g(y)||^2 / 2``, values in [0, 1]."""

    kind = GROUPWISE

    def __init__(self, gates, k):
        self.gates = gates
        self.k = k
        self.size = gates

    def describe(self, index):
        return LinearObjective(GROUPWISE, int(index), (), 0, 1)

    def index_of(self, obj):
        if obj.kind != GROUPWISE:
            raise ContractViolation("not a group-wise objective")
        return obj.group

    @staticmethod
    def _tables(profiles):
        tables = getattr(profiles, "tables", None)
        if tables is None:
            tables = np.stack([as_profile(p)[0].table for p in profiles])
        return tables

    def exact_sparse(self, h, supports):
        (support,) = supports
        tables = self._tables(as_profiles(h))
        values = self._matrix(tables, support).mean(axis=0)
        return np.arange(self.size), values

    def _matrix(self, tables, support):
        preds = tables[:, support.xs, 0, :]
        residual = preds.copy()
        residual[:, np.arange(len(support)), support.ys] -= 1.0
        squared = 0.5 * (residual**2).sum(axis=2)
        return (squared * support.probs) @ support.ws

    def sample_losses(self, h, samples):
        return np.arange(self.size), self.sample_loss_matrix([as_profile(h)], samples)[0]

    def sample_loss_matrix(self, profiles, samples):
        (z,) = samples
        preds = self._tables(profiles)[:, z.x, 0, :].copy()
        preds[:, z.y] -= 1.0
        return 0.5 * (preds**2).sum(axis=1)[:, None] * np.asarray(z.w, dtype=float)[None, :]

    def exact_loss_matrix(self, profiles, supports):
        (support,) = supports
        return self._matrix(self._tables(profiles), support)


class CompetitiveSet(ObjectiveSet):
    """``(l(h) - l(h')) / 2`` for every base objective l and baseline h'.

    Index layout: ``baseline * len(base) + base_index``.
    """

    kind = COMPETITIVE
    scale = 0.5

    def __init__(self, base, baselines, *, objective_cap=None):
        baselines = baselines if isinstance(baselines, HypothesisClass) else list(baselines)
        if len(baselines) == 0:
            raise ContractViolation("competitive amplification needs at least one baseline")
        if not isinstance(baselines, HypothesisClass):
            baselines = HypothesisClass([as_profile(b)[0] for b in baselines])
        self.base = base
        self.baselines = baselines
        self.component = base.component
        self.k = base.k
        self.size = len(baselines) * len(base)
        self._reference = {}
        _check_cap(self.size, objective_cap, "use fewer baselines")

    def describe(self, index):
        baseline, base_index = divmod(int(index), len(self.base))
        base_obj = self.base.describe(base_index)
        return LinearObjective(
            COMPETITIVE,
            base_obj.group,
            base_obj.bins,
            base_obj.coord,
            base_obj.sign,
            component=self.component,
            lam=base_obj.lam,
            baseline=baseline,
            base=base_obj,
        )

    def index_of(self, obj):
        return obj.baseline * len(self.base) + self.base.index_of(obj.base)

    def _baseline_exact(self, supports):
        key = tuple(id(s) for s in supports)
        if key not in self._reference:
            if len(self._reference) >= REFERENCE_CACHE_SIZE:
                self._reference.pop(next(iter(self._reference)))
            self._reference[key] = (supports, self.base.exact_loss_matrix(self.baselines, supports))
        return self._reference[key][1]

    def _amplify(self, own, reference):
        diff = own[..., None, :] - reference
        if diff.size and np.abs(diff).max() > 2 + 1e-9:
            raise ContractViolation("base objective values left [-1, 1]")
        return 0.5 * diff.reshape(diff.shape[:-2] + (-1,))

    def exact_sparse(self, h, supports):
        own = self.base.exact_losses(h, supports)
        return np.arange(self.size), self._amplify(own, self._baseline_exact(supports))

    def sample_losses(self, h, samples):
        own = self.base.sample_loss_vector(h, samples)
        reference = self.base.sample_loss_matrix(self.baselines, samples)
        return np.arange(self.size), self._amplify(own, reference)

    def sample_loss_matrix(self, profiles, samples):
        own = self.base.sample_loss_matrix(profiles, samples)
        return self._amplify(own, self.base.sample_loss_matrix(self.baselines, samples))

    def exact_loss_matrix(self, profiles, supports):
        own = self.base.exact_loss_matrix(profiles, supports)
        return self._amplify(own, self._baseline_exact(supports))


@dataclass(eq=False)
class MultiObjectiveProblem:
    """Distributions, one objective set per component, and the predictor signature."""

    kind: str
    distributions: tuple
    objective_sets: tuple
    signature: Signature
    grid: LevelGrid | None = None
    base: object = None
    condition_masks: np.ndarray | None = None
    hypotheses: HypothesisClass | None = None
    clipped_targets: bool = False

    def __post_init__(self):
        self.distributions = tuple(self.distributions)
        self.objective_sets = tuple(self.objective_sets)
        if not self.objective_sets:
            raise ContractViolation("a problem needs at least one component")
        if len(self.objective_sets) != self.signature.b:
            raise ContractViolation("one objective set per component is required")
        if self.base is None:
            self.base = self.distributions[0]
        sizes = {d.domain_size for d in self.distributions}
        if sizes != {self.base.domain_size}:
            raise ContractViolation("all distributions must share the domain")
        for a, objective_set in enumerate(self.objective_sets):
            if objective_set.component != a:
                raise ContractViolation(f"objective set {a} is bound to component {objective_set.component}")

    @property
    def b(self):
        return self.signature.b

    @property
    def k(self):
        return self.signature.k

    @property
    def domain_size(self):
        return self.base.domain_size

    @property
    def size(self):
        return sum(len(s) for s in self.objective_sets)

    @cached_property
    def supports(self):
        return [d.support for d in self.distributions]

    @property
    def component_map(self):
        """Component of every objective, in the concatenated global index order."""
        return np.concatenate([np.full(len(s), a) for a, s in enumerate(self.objective_sets)])

    def manifest(self):
        """Every objective in global index order, tagged with its index and the component it trains."""
        owners = self.component_map
        entries = [entry for s in self.objective_sets for entry in s.manifest()]
        return {
            "kind": self.kind,
            "k": self.k,
            "rows": list(self.signature.rows),
            "scales": [s.scale for s in self.objective_sets],
            "objectives": [dict(entry, index=i, component=int(owners[i])) for i, entry in enumerate(entries)],
        }

    @cached_property
    def conditional_mass(self):
        """D_s(x) for every point and conditional distribution, shape (n, |S|)."""
        return np.stack([d.px for d in self.distributions], axis=1)

    @cached_property
    def conditional_weights(self):
        masses = np.array([self.base.px[m].sum() for m in self.condition_masks])
        return self.condition_masks.T * (masses.min() / masses)

    def check_profile(self, h):
        profile = as_profile(h)
        if len(profile) != self.b:
            raise ContractViolation(f"expected {self.b} components, got {len(profile)}")
        for a, component in enumerate(profile):
            expected = (self.domain_size, self.signature.rows[a], self.k)
            if (component.domain_size,) + component.signature != expected:
                raise ContractViolation(f"component {a} has signature {component.signature}, expected {expected[1:]}")
        return profile

    def component_losses(self, h):
        """Worst exact objective per component as ``(value, index)`` pairs, amplification scale undone."""
        for profile in as_profiles(h):
            self.check_profile(profile)
        return [s.reported_max_loss(h, self.supports) for s in self.objective_sets]

    def max_loss(self, h):
        """Multi-objective loss: ``(value, component, index)`` of the worst objective overall."""
        losses = self.component_losses(h)
        component = max(range(len(losses)), key=lambda a: losses[a][0])
        value, index = losses[component]
        return value * 1.0, component, index

    def exact_losses(self, h):
        return [s.exact_losses(h, self.supports) for s in self.objective_sets]


def build_multicalib_objectives(groups, grid, k, *, objective_cap=None):
    if not isinstance(groups, GroupFamily):
        raise ContractViolation("multi-calibration objectives need a group family")
    return CalibrationSet(MEAN, len(groups), grid, k, objective_cap=objective_cap)


def build_multicalib_problem(distribution, groups, grid, *, objective_cap=None):
    if not isinstance(groups, GroupFamily):
        groups = GroupFamily(groups, distribution.domain_size)
    dist = distribution.regroup(groups)
    objective_set = build_multicalib_objectives(groups, grid, dist.k, objective_cap=objective_cap)
    return MultiObjectiveProblem("mc", (dist,), (objective_set,), Signature(dist.k, (1,)), grid=grid)


def moment_degrees(r, allow_odd=False):
    return tuple(a for a in range(1, r + 1) if allow_odd or a % 2 == 0)


def build_moment_objectives(groups, grid, r, *, distribution, allow_odd=False, objective_cap=None):
    """Two-component problem: mean objectives for h_mu and centred-moment objectives for h_m.

    Only even degrees up to ``r`` are built by default; ``allow_odd`` adds the odd
    ones, whose targets are clipped to [0, 1]. With one group, a bin width of 0.5
    and r = 2 each component holds 36 objectives, 72 with odd degrees.
    """
    if r < 2:
        raise ContractViolation("moment calibration needs r >= 2")
    if distribution.k != 2:
        raise ContractViolation("moment calibration is defined for binary labels")
    if not isinstance(groups, GroupFamily):
        groups = GroupFamily(groups, distribution.domain_size)
    dist = distribution.regroup(groups)
    degrees = moment_degrees(r, allow_odd)
    sets = tuple(MomentSet(a, len(groups), grid, degrees, objective_cap=objective_cap) for a in (0, 1))
    clipped = any(a % 2 for a in degrees)
    if clipped:
        logger.info("Odd moment degrees requested; targets are clipped to [0, 1]")
    return MultiObjectiveProblem(
        "moment", (dist,), sets, Signature(2, (1, len(degrees))), grid=grid, clipped_targets=clipped
    )


def build_agnostic_problem(u, grid, k, *, distribution, objective_cap=None):
    if u < 1:
        raise ContractViolation("agnostic calibration needs u >= 1 groups")
    if distribution.u != u or distribution.k != k:
        raise ContractViolation(f"distribution has u={distribution.u}, k={distribution.k}; expected u={u}, k={k}")
    objective_set = CalibrationSet(AGNOSTIC, u, grid, k, objective_cap=objective_cap)
    return MultiObjectiveProblem("agnostic", (distribution,), (objective_set,), Signature(k, (1,)), grid=grid)


def build_conditional_problem(groups, grid, k, *, distribution, objective_cap=None):
    """One conditional distribution D | x in S per group; objectives gate on the distribution."""
    if not isinstance(groups, GroupFamily):
        groups = GroupFamily(groups, distribution.domain_size)
    if distribution.k != k:
        raise ContractViolation(f"distribution has k={distribution.k}, expected {k}")
    conditionals = tuple(
        distribution.condition_on(groups.masks[s], name=f"{distribution.name}|S{s}") for s in range(len(groups))
    )
    objective_set = CalibrationSet(CONDITIONAL, len(groups), grid, k, objective_cap=objective_cap)
    return MultiObjectiveProblem(
        "conditional",
        conditionals,
        (objective_set,),
        Signature(k, (1,)),
        grid=grid,
        base=distribution,
        condition_masks=groups.masks,
    )


def amplify_competitive(objective_set, baselines, *, objective_cap=None):
    return CompetitiveSet(objective_set, baselines, objective_cap=objective_cap)


def grid_hypotheses(domain_size, k, step, *, enumeration_cap=None):
    """Every single-row predictor whose rows lie on the simplex grid of the given step."""
    resolution = round(1 / step)
    if resolution < 1 or abs(resolution * step - 1) > 1e-9:
        raise ContractViolation(f"grid step must be 1/m for an integer m, got {step}")
    points = simplex_grid(k, resolution)
    total = len(points) ** domain_size
    cap = get_setting("BRUTE_FORCE_ENUMERATION_CAP", enumeration_cap)
    if total > cap:
        logger.warning("Refusing to enumerate %d grid predictors (cap %d)", total, cap)
        raise SizeCapExceeded(f"{total} grid predictors exceed the cap of {cap}; use a coarser step or fewer points")
    combos = np.array(list(itertools.product(range(len(points)), repeat=domain_size)), dtype=np.int64)
    return HypothesisClass(points[combos][:, :, None, :])


def build_groupwise_problem(groups, k, hypotheses, *, distribution, baselines=None, objective_cap=None):
    """Objective-wise problem: group-wise squared losses amplified against ``baselines`` (default: all of H)."""
    if groups is not None:
        if not isinstance(groups, GroupFamily):
            groups = GroupFamily(groups, distribution.domain_size)
        distribution = distribution.regroup(groups)
    if distribution.k != k:
        raise ContractViolation(f"distribution has k={distribution.k}, expected {k}")
    if not isinstance(hypotheses, HypothesisClass):
        hypotheses = HypothesisClass(hypotheses)
    base = GroupwiseSet(distribution.u, k)
    amplified = amplify_competitive(base, hypotheses if baselines is None else baselines, objective_cap=objective_cap)
    return MultiObjectiveProblem(
        "competitive", (distribution,), (amplified,), Signature(k, (1,)), hypotheses=hypotheses
    )


def exact_loss(obj, h, dist, baseline=None):
    """Exact expected value of one objective, straight from its definition."""
    profile = as_profile(h)
    reference = as_profile(baseline) if baseline is not None else None

    def value(z):
        preds = tuple(c(z.x) for c in profile)
        ref = tuple(c(z.x) for c in reference) if reference is not None else None
        return eval_objective(obj, preds, z, baseline=ref)

    return dist.exact_expectation(value)
