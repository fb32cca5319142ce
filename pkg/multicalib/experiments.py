"""Configured experiments: build the problem, run the dynamics, audit, and write the outputs.

Shared by the ``run_experiment``, ``sweep`` and ``selftest`` commands.
"""

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audit import audit_problem, brute_force_opt, covariance_slack
from .conf import get_setting
from .core import (
    GroupFamily,
    LevelGrid,
    load_distribution,
    predictor_to_dict,
    read_json,
    schema_line,
)
from .dynamics import NRBR, NRNR, RunConfig, compute_regret, find, majority_round, run_nrbr, run_nrnr
from .exceptions import ContractViolation, SchemaError, SizeCapExceeded
from .forms import ExperimentConfigForm
from .objectives import (
    build_agnostic_problem,
    build_conditional_problem,
    build_groupwise_problem,
    build_moment_objectives,
    build_multicalib_problem,
    grid_hypotheses,
)
from .players import OracleConfig

logger = logging.getLogger(__name__)

BUNDLED_DIR = Path(__file__).resolve().parent / "bundled"

CSV_COLUMNS = [
    "config",
    "kind",
    "dynamics",
    "seed",
    "rounds",
    "epsilon",
    "delta",
    "lambda",
    "k",
    "r",
    "oracle",
    "audited_loss",
    "opt_reference",
    "target",
    "passed",
    "oracle_calls",
    "samples",
    "adversary_regret_exact",
    "learner_weak_regret_exact",
    "best_iterate_loss",
    "selected_iterate",
]

SWEEP_COLUMNS = [
    "config",
    "rounds",
    "runs",
    "pass_rate",
    "audited_loss_mean",
    "audited_loss_std",
    "audited_loss_q10",
    "audited_loss_median",
    "audited_loss_q90",
    "oracle_calls_mean",
    "samples_mean",
]


def resolve_path(name, base_dir=None):
    path = Path(name)
    if path.is_absolute() or path.exists():
        return path
    if base_dir is not None and (Path(base_dir) / path).exists():
        return Path(base_dir) / path
    return BUNDLED_DIR / path


def load_config(path):
    """Validated configuration dict; ``lambda`` is kept under ``lam``."""
    path = resolve_path(path)
    data, text = read_json(path)
    if not isinstance(data, dict):
        raise SchemaError("a configuration file holds a JSON object", path=path)
    form, unknown = ExperimentConfigForm.from_json(data)
    if unknown:
        raise SchemaError("unknown field", field=unknown[0], line=schema_line(text, unknown[0]), path=path)
    if not form.is_valid():
        field, message = form.first_error()
        raise SchemaError(message, field=field, line=schema_line(text, field), path=path)
    config = dict(form.cleaned_data)
    config["name"] = config["name"] or path.stem
    config["base_dir"] = str(path.parent)
    config["path"] = str(path)
    config["text"] = text
    return config


def _schema_error(config, field, message):
    return SchemaError(message, field=field, line=schema_line(config.get("text"), field), path=config.get("path"))


def build_problem(config):
    """The problem a configuration describes, and its source distribution."""
    dist_path = resolve_path(config["distribution"], config.get("base_dir"))
    distribution = load_distribution(dist_path)
    k = config.get("k") or distribution.k
    if distribution.k != k:
        raise _schema_error(config, "k", f"the distribution has {distribution.k} classes")
    grid = LevelGrid(config["lam"])
    groups = config.get("groups")
    if groups is None:
        groups = distribution.groups.groups if distribution.groups is not None else None
    try:
        if groups is not None:
            groups = GroupFamily(groups, distribution.domain_size)
        elif config["kind"] != "agnostic":
            groups = GroupFamily.whole(distribution.domain_size)
        kind = config["kind"]
        if kind == "mc":
            problem = build_multicalib_problem(distribution, groups, grid)
        elif kind == "moment":
            problem = build_moment_objectives(
                groups, grid, config["r"], distribution=distribution, allow_odd=config.get("allow_odd", False)
            )
        elif kind == "agnostic":
            problem = build_agnostic_problem(distribution.u, grid, k, distribution=distribution)
        elif kind == "conditional":
            problem = build_conditional_problem(groups, grid, k, distribution=distribution)
        else:
            hypotheses = grid_hypotheses(distribution.domain_size, k, config.get("hypothesis_step", 0.25))
            problem = build_groupwise_problem(groups, k, hypotheses, distribution=distribution)
    except SizeCapExceeded:
        raise
    except ContractViolation as exc:
        field = "groups" if "group" in str(exc) else "kind"
        raise _schema_error(config, field, str(exc)) from exc
    return problem, distribution


def reference_value(problem, config):
    """Minmax reference: configured, realizable (0), or brute force on small instances."""
    if config.get("reference") is not None:
        return config["reference"], "configured"
    if config.get("realizable") and problem.hypotheses is None:
        return 0.0, "realizable"
    if problem.hypotheses is not None or problem.domain_size <= get_setting("BRUTE_FORCE_DOMAIN_CAP"):
        try:
            return brute_force_opt(problem, config["brute_force_step"]).value, "brute_force"
        except SizeCapExceeded as exc:
            raise _schema_error(config, "realizable", f"{exc}; declare the instance realizable or a reference") from exc
    raise _schema_error(
        config, "realizable", "the instance is too large for brute force; declare it realizable or give a reference"
    )


@dataclass
class RunResult:
    summary: dict
    transcript: object
    predictor: object
    row: dict
    problem: object = None


def _json_config(config):
    out = {ExperimentConfigForm.json_key(k): v for k, v in config.items() if k not in ("text", "base_dir", "path")}
    return out


def _regret(transcript, player, weak, reference):
    try:
        return compute_regret(transcript, player, "exact", weak, reference=reference)
    except ContractViolation:
        return None


def run_config(config, seed):
    """Run one configured experiment end to end and audit its output exactly."""
    problem, _ = build_problem(config)
    config = dict(config, k=problem.k)
    reference, reference_source = reference_value(problem, config)
    rng = np.random.default_rng(seed)
    run_cfg = RunConfig(
        epsilon=config["epsilon"],
        delta=config["delta"],
        resolution=config.get("resolution"),
        learner=config["learner"],
        feedback=config["feedback"],
    )
    logger.info("Running %s (%s, %s) with seed %s", config["name"], config["kind"], config["dynamics"], seed)

    selected = None
    find_calls = find_samples = 0
    if config["dynamics"] == NRNR:
        predictor, transcript = run_nrnr(problem, config.get("rounds"), run_cfg, rng, seed=seed)
        if config["majority_round"]:
            predictor = majority_round(predictor, problem.grid)
    else:
        oracle_cfg = OracleConfig(
            config["oracle"],
            epsilon=config["epsilon"],
            delta=config["delta"],
            c=config["oracle_c"],
            n_samples=config.get("oracle_samples"),
            sigma=config.get("sigma"),
            buffer_size=config.get("buffer_size"),
            reference=reference,
        )
        iterates, transcript = run_nrbr(problem, config.get("rounds"), oracle_cfg, rng, cfg=run_cfg, seed=seed)
        if config["find"] == "best":
            selected = int(np.argmin([r.iterate_loss for r in transcript.records]))
        else:
            slack = (lambda h: covariance_slack(h, problem)) if config["kind"] == "agnostic" else None
            result = find(
                iterates,
                problem,
                config["epsilon"],
                config["delta"],
                config["find"],
                rng,
                oracle_cfg=oracle_cfg,
                slack=slack,
            )
            selected, find_calls, find_samples = result.index, result.oracle_calls, result.samples
        predictor = iterates[selected]

    report = audit_problem(predictor, problem)
    target = config["target"] if config.get("target") is not None else 2 * config["epsilon"]
    passed = report.value <= target + reference + 1e-12
    head = transcript.summary()
    summary = {
        "config": _json_config(config),
        "seed": seed,
        "rounds": transcript.rounds,
        "audited_loss": report.value,
        "audit": report.to_dict(),
        "opt_reference": reference,
        "opt_source": reference_source,
        "target": target + reference,
        "passed": bool(passed),
        "oracle_calls": transcript.oracle_calls + find_calls,
        "samples": transcript.samples + find_samples,
        "selected_iterate": selected,
        "best_iterate_loss": head.get("best_iterate_loss"),
        "regret": head["regret"],
        "adversary_regret_exact": _regret(transcript, "adversary", False, reference),
        "learner_weak_regret_exact": _regret(transcript, "learner", True, reference),
    }
    if report.breakdown is not None:
        summary["breakdown"] = report.breakdown
    row = {
        "config": config["name"],
        "kind": config["kind"],
        "dynamics": config["dynamics"],
        "seed": seed,
        "rounds": transcript.rounds,
        "epsilon": config["epsilon"],
        "delta": config["delta"],
        "lambda": config["lam"],
        "k": problem.k,
        "r": config.get("r"),
        "oracle": config["oracle"] if config["dynamics"] == NRBR else "",
        "audited_loss": report.value,
        "opt_reference": reference,
        "target": target + reference,
        "passed": int(passed),
        "oracle_calls": summary["oracle_calls"],
        "samples": summary["samples"],
        "adversary_regret_exact": summary["adversary_regret_exact"],
        "learner_weak_regret_exact": summary["learner_weak_regret_exact"],
        "best_iterate_loss": summary["best_iterate_loss"],
        "selected_iterate": selected,
    }
    logger.info("%s seed %s: audited loss %.6g (target %.6g)", config["name"], seed, report.value, target + reference)
    return RunResult(summary, transcript, predictor, row, problem)


def _default(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serialisable")


def dumps(data, **kwargs):
    return json.dumps(data, default=_default, **kwargs)


def csv_text(rows, columns=CSV_COLUMNS):
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({c: "" if row.get(c) is None else row[c] for c in columns})
    return buffer.getvalue()


def write_outputs(result, out_dir):
    """Writes the run files under ``out_dir``.

    summary.json, transcript.jsonl, predictor.json, results.csv, checkpoint.json and the
    objective manifest.json.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "summary.json").write_text(dumps(result.summary, indent=2, sort_keys=True) + "\n")
    with open(out_dir / "transcript.jsonl", "w") as handle:
        for record in result.transcript.records:
            handle.write(dumps(record.to_dict(), sort_keys=True) + "\n")
        handle.write(dumps({"summary": result.transcript.summary()}, sort_keys=True) + "\n")
    (out_dir / "predictor.json").write_text(dumps(predictor_to_dict(result.predictor)) + "\n")
    (out_dir / "results.csv").write_text(csv_text([result.row]))
    (out_dir / "checkpoint.json").write_text(dumps(result.transcript.checkpoint(), sort_keys=True) + "\n")
    if result.problem is not None:
        (out_dir / "manifest.json").write_text(dumps(result.problem.manifest(), sort_keys=True) + "\n")
    return out_dir


def _sweep_task(config, seed, rounds):
    import django
    from django.apps import apps

    if not apps.ready:
        django.setup()
    if rounds is not None:
        config = dict(config, rounds=rounds)
    return rounds, run_config(config, seed).row


def run_sweep(config, seeds, rounds_list=(None,), workers=None):
    """Run every (rounds, seed) pair on a bounded process pool; returns per-run rows and aggregates."""
    workers = get_setting("WORKERS", workers)
    tasks = [(rounds, seed) for rounds in rounds_list for seed in seeds]
    rows = {}
    if workers == 1:
        for rounds, seed in tasks:
            rows[(rounds, seed)] = _sweep_task(config, seed, rounds)[1]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(_sweep_task, config, seed, rounds): (rounds, seed) for rounds, seed in tasks}
            for future in as_completed(futures):
                rows[futures[future]] = future.result()[1]
    ordered = [rows[task] for task in tasks]
    return ordered, aggregate(ordered, config["name"])


def aggregate(rows, name):
    out = []
    for rounds in dict.fromkeys(r["rounds"] for r in rows):
        mine = [r for r in rows if r["rounds"] == rounds]
        losses = np.array([r["audited_loss"] for r in mine])
        out.append(
            {
                "config": name,
                "rounds": rounds,
                "runs": len(mine),
                "pass_rate": float(np.mean([r["passed"] for r in mine])),
                "audited_loss_mean": float(losses.mean()),
                "audited_loss_std": float(losses.std()),
                "audited_loss_q10": float(np.quantile(losses, 0.1)),
                "audited_loss_median": float(np.median(losses)),
                "audited_loss_q90": float(np.quantile(losses, 0.9)),
                "oracle_calls_mean": float(np.mean([r["oracle_calls"] for r in mine])),
                "samples_mean": float(np.mean([r["samples"] for r in mine])),
            }
        )
    return out


def fit_exponent(xs, ys):
    """Least-squares slope of log y against log x."""
    if len(xs) < 2:
        raise ContractViolation("a trend needs at least two points")
    slope, _ = np.polyfit(np.log(xs), np.log(ys), 1)
    return float(slope)

