"""Domain, distribution and predictor primitives.

A distribution is a finite table over (x, w, y): a domain point, a group
membership bit-vector and a class label.  Expectations are exact sums over
that table and sampling always goes through an explicitly passed
``numpy.random.Generator``.
"""

import json
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .exceptions import ContractViolation, SchemaError, ZeroMassGroup

logger = logging.getLogger(__name__)

PROBABILITY_TOLERANCE = 1e-12
ROW_TOLERANCE = 1e-9
_BIN_SLACK = 1e-9


@dataclass(frozen=True)
class DomainPoint:
    index: int

    def check(self, domain_size):
        if not 0 <= self.index < domain_size:
            raise ContractViolation(f"domain point {self.index} outside [0, {domain_size})")
        return self


@dataclass(frozen=True)
class Sample:
    x: int
    w: tuple
    y: int


@dataclass(frozen=True)
class LevelGrid:
    """Half-open bins [v, v + lam) over [0, 1]; the value 1 falls in the last bin."""

    lam: float

    def __post_init__(self):
        if not 0 < self.lam <= 1:
            raise ContractViolation(f"bin width must lie in (0, 1], got {self.lam}")

    @property
    def size(self):
        return math.ceil(1 / self.lam - _BIN_SLACK) + 1

    @property
    def values(self):
        return self.lam * np.arange(self.size)

    def index(self, values):
        idx = np.floor(np.asarray(values, dtype=float) / self.lam + _BIN_SLACK)
        return np.clip(idx, 0, self.size - 1).astype(np.int64)

    def flat_index(self, rows):
        """Mixed-radix index of the bin vector of every row along the last axis."""
        bins = self.index(rows)
        k = bins.shape[-1]
        radix = self.size ** np.arange(k - 1, -1, -1, dtype=np.int64)
        return bins @ radix

    def unflatten(self, flat, k):
        return tuple(int(b) for b in np.unravel_index(int(flat), (self.size,) * k))


def bin_of(p, grid):
    rows = p.rows if isinstance(p, Prediction) else np.atleast_2d(np.asarray(p, dtype=float))
    return tuple(int(b) for b in grid.index(rows).ravel())


def _check_rows(rows):
    if rows.shape[-1] < 2:
        raise ContractViolation("predictions need at least two classes")
    if rows.size and (rows.min() < -ROW_TOLERANCE or rows.max() > 1 + ROW_TOLERANCE):
        raise ContractViolation("prediction values must lie in [0, 1]")
    sums = rows.sum(axis=-1)
    if rows.size and np.abs(sums - 1).max() > ROW_TOLERANCE:
        raise ContractViolation("every prediction row must sum to 1")


class Prediction:
    """r probability rows over k classes for a single domain point."""

    __slots__ = ("rows",)

    def __init__(self, rows):
        rows = np.atleast_2d(np.array(rows, dtype=float))
        if rows.ndim != 2:
            raise ContractViolation("a prediction is a matrix of rows")
        _check_rows(rows)
        rows.setflags(write=False)
        self.rows = rows

    @property
    def r(self):
        return self.rows.shape[0]

    @property
    def k(self):
        return self.rows.shape[1]

    def __eq__(self, other):
        return isinstance(other, Prediction) and np.array_equal(self.rows, other.rows)

    __hash__ = None

    def __repr__(self):
        return f"Prediction({self.rows.tolist()})"


class DeterministicPredictor:
    """A table of predictions, one (rows, k) matrix per domain point."""

    def __init__(self, table):
        table = np.array(table, dtype=float)
        if table.ndim == 2:
            table = table[:, None, :]
        if table.ndim != 3 or table.shape[0] == 0:
            raise ContractViolation("a predictor table has shape (domain, rows, k)")
        _check_rows(table)
        table.setflags(write=False)
        self.table = table

    @property
    def domain_size(self):
        return self.table.shape[0]

    @property
    def rows(self):
        return self.table.shape[1]

    @property
    def k(self):
        return self.table.shape[2]

    @property
    def signature(self):
        return (self.rows, self.k)

    def __call__(self, x):
        return Prediction(self.table[x])

    def with_point(self, x, rows):
        table = self.table.copy()
        table[x] = np.atleast_2d(rows)
        return DeterministicPredictor(table)

    @classmethod
    def constant(cls, domain_size, rows):
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        return cls(np.broadcast_to(rows, (domain_size,) + rows.shape))

    @classmethod
    def uniform(cls, domain_size, k, rows=1):
        return cls(np.full((domain_size, rows, k), 1.0 / k))

    def __eq__(self, other):
        return isinstance(other, DeterministicPredictor) and np.array_equal(self.table, other.table)

    __hash__ = None

    def __repr__(self):
        return f"DeterministicPredictor(domain={self.domain_size}, rows={self.rows}, k={self.k})"

    def to_dict(self):
        return {"k": self.k, "rows": self.rows, "table": self.table.tolist()}


def as_profile(h):
    """Normalise a predictor or a per-component tuple of predictors to a tuple."""
    if isinstance(h, DeterministicPredictor):
        return (h,)
    if isinstance(h, (tuple, list)) and h and all(isinstance(c, DeterministicPredictor) for c in h):
        return tuple(h)
    raise ContractViolation(f"expected a predictor or a tuple of predictors, got {type(h).__name__}")


def profile_signature(profile):
    return tuple((c.domain_size,) + c.signature for c in profile)


class EnsemblePredictor:
    """Uniform mixture of deterministic predictors (or per-component profiles)."""

    def __init__(self, members):
        members = [as_profile(m) for m in members]
        if not members:
            raise ContractViolation("an ensemble needs at least one member")
        signature = profile_signature(members[0])
        for member in members[1:]:
            if profile_signature(member) != signature:
                raise ContractViolation("ensemble members must share their signature")
        self.members = tuple(members)

    def __len__(self):
        return len(self.members)

    @property
    def components(self):
        return len(self.members[0])

    @property
    def weights(self):
        return np.full(len(self.members), 1.0 / len(self.members))

    def component(self, a):
        return EnsemblePredictor([member[a] for member in self.members])

    def to_dict(self):
        return {"members": [profile_to_dict(m) for m in self.members]}


def as_profiles(h):
    """Member profiles of ``h`` with uniform weight."""
    if isinstance(h, EnsemblePredictor):
        return list(h.members)
    return [as_profile(h)]


class HypothesisClass:
    """A finite class of single-component predictors kept as one stacked table."""

    def __init__(self, predictors):
        if isinstance(predictors, np.ndarray):
            tables = np.array(predictors, dtype=float)
        else:
            tables = np.stack([as_profile(p)[0].table for p in predictors])
        if tables.ndim != 4 or tables.shape[0] == 0:
            raise ContractViolation("a hypothesis class needs at least one (domain, rows, k) table")
        _check_rows(tables)
        tables.setflags(write=False)
        self.tables = tables

    def __len__(self):
        return self.tables.shape[0]

    def __getitem__(self, i):
        return (DeterministicPredictor(self.tables[i]),)

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def index_of(self, h):
        table = as_profile(h)[0].table
        matches = np.flatnonzero((self.tables == table).all(axis=(1, 2, 3)))
        return int(matches[0]) if matches.size else None


def simplex_grid(k, resolution):
    """Points of the k-simplex whose coordinates are multiples of 1/resolution."""
    if k < 2 or resolution < 1:
        raise ContractViolation("simplex grids need k >= 2 and resolution >= 1")

    def compositions(total, parts):
        if parts == 1:
            yield (total,)
            return
        for first in range(total + 1):
            for rest in compositions(total - first, parts - 1):
                yield (first,) + rest

    return np.array(list(compositions(resolution, k)), dtype=float) / resolution


def simplex_grid_size(k, resolution):
    return math.comb(resolution + k - 1, k - 1)


class GroupFamily:
    def __init__(self, groups, domain_size):
        groups = [sorted(set(int(x) for x in members)) for members in groups]
        if not groups:
            raise ContractViolation("a group family needs at least one group")
        masks = np.zeros((len(groups), domain_size), dtype=bool)
        for i, members in enumerate(groups):
            if not members:
                raise ContractViolation(f"group {i} is empty")
            for x in members:
                DomainPoint(x).check(domain_size)
            masks[i, members] = True
        masks.setflags(write=False)
        self.masks = masks
        self.groups = groups

    @classmethod
    def whole(cls, domain_size):
        return cls([range(domain_size)], domain_size)

    @property
    def u(self):
        return self.masks.shape[0]

    @property
    def domain_size(self):
        return self.masks.shape[1]

    def __len__(self):
        return self.u

    def membership(self):
        return self.masks.T.astype(float)


@dataclass(frozen=True, eq=False)
class Support:
    """Flat rows of a finite law: point, membership vector, label, probability."""

    xs: np.ndarray
    ws: np.ndarray
    ys: np.ndarray
    probs: np.ndarray

    def __len__(self):
        return len(self.xs)

    def sample(self, row):
        return Sample(int(self.xs[row]), tuple(int(b) for b in self.ws[row]), int(self.ys[row]))

    def reweighted(self, probs):
        return Support(self.xs, self.ws, self.ys, np.asarray(probs, dtype=float))


class TabularDistribution:
    """Finite joint law over (x, w, y).

    ``group_law`` gives, per domain point, a list of ``(w, p, labels)``
    entries where ``labels`` may be ``None`` to fall back on ``label_law[x]``.
    When ``groups`` is given instead, membership is the deterministic feature
    ``w_i = 1[x in S_i]``.  With neither, every point belongs to a single group.
    """

    def __init__(self, px, label_law=None, *, groups=None, group_law=None, k=None, name=""):
        px = np.array(px, dtype=float)
        if px.ndim != 1 or px.size == 0:
            raise ContractViolation("px must be a nonempty probability vector")
        if (px < 0).any():
            raise ContractViolation("px has negative entries")
        if abs(math.fsum(px) - 1) > PROBABILITY_TOLERANCE:
            raise ContractViolation(f"px sums to {math.fsum(px)!r}, not 1")
        n = px.size
        if label_law is not None:
            label_law = np.array(label_law, dtype=float)
            if label_law.shape[0] != n or label_law.ndim != 2:
                raise ContractViolation("label_law needs one row per domain point")
            k = label_law.shape[1] if k is None else k
        if isinstance(groups, GroupFamily):
            self.groups = groups
        elif groups is not None:
            self.groups = GroupFamily(groups, n)
        else:
            self.groups = None

        if group_law is not None:
            entries = [self._read_entries(x, group_law[x], label_law) for x in range(n)]
        else:
            if label_law is None:
                raise ContractViolation("label_law is required without a group_law")
            masks = self.groups.masks if self.groups is not None else np.ones((1, n), dtype=bool)
            entries = [[(tuple(int(b) for b in masks[:, x]), 1.0, label_law[x])] for x in range(n)]
        if len(entries) != n:
            raise ContractViolation("group_law needs one entry list per domain point")

        widths = {len(w) for point in entries for w, _, _ in point}
        label_sizes = {len(labels) for point in entries for _, _, labels in point}
        if len(widths) != 1 or len(label_sizes) != 1:
            raise ContractViolation("membership vectors and label laws must have a fixed length")
        self.u = widths.pop()
        self.k = label_sizes.pop()
        if k is not None and k != self.k:
            raise ContractViolation(f"label laws have {self.k} classes, expected {k}")
        if self.k < 2:
            raise ContractViolation("label laws need k >= 2 classes")
        if self.groups is not None and self.groups.u != self.u:
            raise ContractViolation("group family size does not match membership vectors")
        px.setflags(write=False)
        self.px = px
        self.name = name
        self._entries = entries

    @staticmethod
    def _read_entries(x, point, label_law):
        if not point:
            raise ContractViolation(f"group law at x={x} is empty")
        entries = []
        for entry in point:
            if isinstance(entry, dict):
                w, p, labels = entry["w"], entry["p"], entry.get("label_law")
            else:
                w, p, labels = entry
            if labels is None:
                if label_law is None:
                    raise ContractViolation(f"no label law for x={x}")
                labels = label_law[x]
            labels = np.array(labels, dtype=float)
            if any(b not in (0, 1) for b in w):
                raise ContractViolation(f"membership vector at x={x} is not a bit-vector")
            if p < 0 or (labels < 0).any():
                raise ContractViolation(f"negative probability in the law of x={x}")
            if abs(math.fsum(labels) - 1) > PROBABILITY_TOLERANCE:
                raise ContractViolation(f"label law at x={x} does not sum to 1")
            entries.append((tuple(int(b) for b in w), float(p), labels))
        if abs(math.fsum(p for _, p, _ in entries) - 1) > PROBABILITY_TOLERANCE:
            raise ContractViolation(f"group law at x={x} does not sum to 1")
        return entries

    @property
    def domain_size(self):
        return self.px.size

    @property
    def deterministic_groups(self):
        return all(len(point) == 1 for point in self._entries)

    @cached_property
    def support(self):
        xs, ws, ys, probs = [], [], [], []
        for x, point in enumerate(self._entries):
            if self.px[x] <= 0:
                continue
            for w, pw, labels in point:
                for y, py in enumerate(labels):
                    mass = self.px[x] * pw * py
                    if mass > 0:
                        xs.append(x)
                        ws.append(w)
                        ys.append(y)
                        probs.append(mass)
        support = Support(
            np.array(xs, dtype=np.int64),
            np.array(ws, dtype=float).reshape(len(xs), self.u),
            np.array(ys, dtype=np.int64),
            np.array(probs, dtype=float),
        )
        for array in (support.xs, support.ws, support.ys, support.probs):
            array.setflags(write=False)
        return support

    @cached_property
    def membership(self):
        """P(i in w | x), shape (n, u)."""
        out = np.zeros((self.domain_size, self.u))
        for x, point in enumerate(self._entries):
            for w, pw, _ in point:
                out[x] += pw * np.asarray(w, dtype=float)
        return out

    @cached_property
    def label_mean(self):
        """E[g(y) | x], shape (n, k)."""
        out = np.zeros((self.domain_size, self.k))
        for x, point in enumerate(self._entries):
            for _, pw, labels in point:
                out[x] += pw * labels
        return out

    @cached_property
    def group_label_mean(self):
        """E[1[i in w] g(y) | x], shape (n, u, k)."""
        out = np.zeros((self.domain_size, self.u, self.k))
        for x, point in enumerate(self._entries):
            for w, pw, labels in point:
                out[x] += pw * np.outer(np.asarray(w, dtype=float), labels)
        return out

    def sample(self, rng):
        return self.support.sample(self.sample_rows(rng, 1)[0])

    def sample_rows(self, rng, size):
        """Indices into ``support`` of ``size`` i.i.d. draws."""
        return rng.choice(len(self.support), size=size, p=self.support.probs)

    def empirical(self, rows):
        """Empirical law of the drawn support rows, as a reweighted support."""
        rows = np.asarray(rows, dtype=np.int64)
        if rows.size == 0:
            raise ContractViolation("an empirical law needs at least one sample")
        counts = np.bincount(rows, minlength=len(self.support))
        return self.support.reweighted(counts / rows.size)

    def exact_expectation(self, f):
        support = self.support
        values = np.array([f(support.sample(i)) for i in range(len(support))], dtype=float)
        return float(np.dot(support.probs, values))

    def condition_on(self, mask, name=None):
        """The law of (x, w, y) given x in the masked set, by exact renormalisation."""
        mask = np.asarray(mask, dtype=bool)
        mass = math.fsum(self.px[mask])
        if mass <= 0:
            raise ZeroMassGroup("cannot condition on a group of probability zero")
        px = np.where(mask, self.px / mass, 0.0)
        return TabularDistribution(
            px,
            group_law=self._entries,
            groups=self.groups,
            k=self.k,
            name=name or f"{self.name}|group",
        )

    def regroup(self, groups):
        """Same points and labels with deterministic membership ``w_i = 1[x in S_i]``."""
        if not isinstance(groups, GroupFamily):
            groups = GroupFamily(groups, self.domain_size)
        return TabularDistribution(self.px, self.label_mean, groups=groups, name=self.name)

    def bayes_predictor(self):
        return DeterministicPredictor(self.label_mean)

    @classmethod
    def random_realizable(cls, rng, domain_size, k, groups, concentration=1.0):
        """Uniform px with Dirichlet label laws; Bayes calibrates every group."""
        label_law = rng.dirichlet(np.full(k, concentration), size=domain_size)
        label_law = label_law / label_law.sum(axis=1, keepdims=True)
        return cls(np.full(domain_size, 1.0 / domain_size), label_law, groups=groups, name="random")

    def to_dict(self):
        data = {"name": self.name, "k": self.k, "u": self.u, "domain_size": self.domain_size, "px": self.px.tolist()}
        if self.groups is not None and self.deterministic_groups:
            data["groups"] = self.groups.groups
            data["label_law"] = self.label_mean.tolist()
        else:
            data["group_law"] = [
                [{"w": list(w), "p": p, "label_law": labels.tolist()} for w, p, labels in point]
                for point in self._entries
            ]
        return data

    @classmethod
    def from_dict(cls, data, text=None, path=None):
        if not isinstance(data, dict):
            raise SchemaError("a distribution file holds a JSON object", path=path)
        if "px" not in data:
            raise SchemaError("missing", field="px", line=schema_line(text, "px"), path=path)
        try:
            dist = cls(
                data["px"],
                data.get("label_law"),
                groups=data.get("groups"),
                group_law=data.get("group_law"),
                name=data.get("name", ""),
            )
        except (ContractViolation, KeyError, TypeError) as exc:
            field = _field_of(exc, data)
            raise SchemaError(str(exc), field=field, line=schema_line(text, field), path=path) from exc
        for field, actual in (("domain_size", dist.domain_size), ("k", dist.k), ("u", dist.u)):
            if field in data and data[field] != actual:
                raise SchemaError(
                    f"declares {data[field]} but the tables imply {actual}",
                    field=field,
                    line=schema_line(text, field),
                    path=path,
                )
        return dist


def _field_of(exc, data):
    message = str(exc)
    for field in ("group_law", "label_law", "groups", "px"):
        if field in message and field in data:
            return field
    if "group" in message and "groups" in data:
        return "groups"
    if "label" in message:
        return "label_law" if "label_law" in data else "group_law"
    return "px"


def schema_line(text, field):
    """1-based line of the first occurrence of ``"field"`` in a JSON text."""
    if not text or not field:
        return None
    needle = f'"{field}"'
    for number, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return number
    return None


def read_json(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SchemaError(f"cannot read file: {exc.strerror}", path=path) from exc
    try:
        return json.loads(text), text
    except json.JSONDecodeError as exc:
        raise SchemaError(exc.msg, line=exc.lineno, path=path) from exc


def load_distribution(path):
    data, text = read_json(path)
    return TabularDistribution.from_dict(data, text=text, path=path)


def profile_to_dict(profile):
    if len(profile) == 1:
        return profile[0].to_dict()
    return {"components": [c.to_dict() for c in profile]}


def predictor_to_dict(h):
    if isinstance(h, EnsemblePredictor):
        return h.to_dict()
    return profile_to_dict(as_profile(h))


def predictor_from_dict(data, text=None, path=None):
    """Predictor, per-component profile or ensemble, depending on the keys present."""
    if not isinstance(data, dict):
        raise SchemaError("a predictor file holds a JSON object", path=path)
    if "members" in data:
        if not data["members"]:
            raise SchemaError("an ensemble needs members", field="members", line=schema_line(text, "members"), path=path)
        members = [predictor_from_dict(m, text=text, path=path) for m in data["members"]]
        try:
            return EnsemblePredictor(members)
        except ContractViolation as exc:
            raise SchemaError(str(exc), field="members", line=schema_line(text, "members"), path=path) from exc
    if "components" in data:
        return tuple(predictor_from_dict(c, text=text, path=path) for c in data["components"])
    if "table" not in data:
        raise SchemaError("missing", field="table", line=schema_line(text, "table"), path=path)
    try:
        table = [row if isinstance(row[0], list) else [row] for row in data["table"]]
        h = DeterministicPredictor(table)
    except (ContractViolation, TypeError, IndexError, ValueError) as exc:
        raise SchemaError(str(exc), field="table", line=schema_line(text, "table"), path=path) from exc
    if "k" in data and data["k"] != h.k:
        raise SchemaError(f"declares k={data['k']} but rows have {h.k} entries", field="k", line=schema_line(text, "k"), path=path)
    return h


def load_predictor(path):
    data, text = read_json(path)
    return predictor_from_dict(data, text=text, path=path)


def sample(dist, rng):
    return dist.sample(rng)


def exact_expectation(dist, f):
    return dist.exact_expectation(f)
