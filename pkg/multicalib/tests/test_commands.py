import json
import tempfile
from io import StringIO
from pathlib import Path

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase, tag

from multicalib.exceptions import SchemaError
from multicalib.experiments import aggregate, fit_exponent, load_config, run_config, run_sweep
from multicalib.management.commands.sweep import parse_ints
from multicalib.models import ExperimentRun

QUICK_CONFIG = {
    "schema_version": 1,
    "name": "quick",
    "kind": "mc",
    "dynamics": "nrbr",
    "distribution": "realizable_8.json",
    "epsilon": 0.1,
    "lambda": 0.25,
    "rounds": 60,
    "oracle": "exact",
    "find": "best",
    "realizable": True,
    "target": 1.0,
}


class ConfigDirMixin:
    def setUp(self):
        super().setUp()
        directory = tempfile.TemporaryDirectory()
        self.addCleanup(directory.cleanup)
        self.dir = Path(directory.name)

    def write_config(self, data=None, name="quick.json", text=None):
        path = self.dir / name
        path.write_text(text if text is not None else json.dumps(data or QUICK_CONFIG, indent=2))
        return str(path)


class ConfigLoadingTests(ConfigDirMixin, SimpleTestCase):
    def test_bundled_configs_load_by_name(self):
        for name in ("mc_small", "mc_nrbr", "moment_small", "agnostic_remark", "conditional_small", "competitive_small"):
            config = load_config(f"{name}.json")
            self.assertEqual(config["name"], name)

    def test_lambda_is_read_into_lam(self):
        self.assertEqual(load_config(self.write_config())["lam"], 0.25)

    def test_unknown_field_reports_its_line(self):
        path = self.write_config(text='{\n  "kind": "mc",\n  "colour": "blue"\n}\n')
        with self.assertRaises(SchemaError) as ctx:
            load_config(path)
        self.assertEqual(ctx.exception.field, "colour")
        self.assertEqual(ctx.exception.line, 3)

    def test_moment_problems_need_an_order(self):
        path = self.write_config(dict(QUICK_CONFIG, kind="moment", distribution="moment_4.json"))
        with self.assertRaises(SchemaError) as ctx:
            load_config(path)
        self.assertEqual(ctx.exception.field, "r")

    def test_run_config_summary(self):
        result = run_config(load_config(self.write_config()), 3)
        self.assertEqual(result.summary["rounds"], 60)
        self.assertEqual(result.summary["oracle_calls"], 60)
        self.assertEqual(result.summary["config"]["lambda"], 0.25)
        self.assertEqual(result.row["k"], 2)
        self.assertTrue(result.summary["passed"])

    def test_find_uses_the_configured_oracle(self):
        config = dict(QUICK_CONFIG, rounds=20, oracle="empirical", oracle_samples=50, find="oracle")
        result = run_config(load_config(self.write_config(config)), 4)
        self.assertEqual(result.summary["oracle_calls"], 40)
        self.assertEqual(result.summary["samples"], 2000)

    def test_competitive_summary_reports_the_group_loss_gap(self):
        config = dict(
            QUICK_CONFIG, kind="competitive", dynamics="nrnr", distribution="competitive_3.json", rounds=200,
            feedback="exact", target=None, realizable=False,
        )
        result = run_config(load_config(self.write_config(config)), 5)
        problem = result.problem
        base = problem.objective_sets[0].base
        own = base.exact_losses(result.predictor, problem.supports)
        minima = base.exact_loss_matrix(problem.hypotheses, problem.supports).min(axis=0)
        self.assertAlmostEqual(result.summary["audited_loss"], (own - minima).max(), places=12)
        self.assertAlmostEqual(result.summary["opt_reference"], 0.0, places=12)
        self.assertAlmostEqual(result.summary["target"], 0.2)

    def test_aggregate_and_trend(self):
        rows = [{"rounds": 10, "audited_loss": v, "passed": v < 0.2, "oracle_calls": 10, "samples": 0} for v in (0.1, 0.3)]
        (summary,) = aggregate(rows, "quick")
        self.assertEqual(summary["runs"], 2)
        self.assertAlmostEqual(summary["pass_rate"], 0.5)
        self.assertAlmostEqual(fit_exponent([2, 4, 8], [10, 20, 40]), 1.0)

    def test_parse_ints(self):
        self.assertEqual(parse_ints("0-3"), [0, 1, 2, 3])
        self.assertEqual(parse_ints("250,1000, 4000"), [250, 1000, 4000])
        self.assertEqual(parse_ints("1,5-6"), [1, 5, 6])


class RunExperimentCommandTests(ConfigDirMixin, SimpleTestCase):
    def test_writes_every_output(self):
        out = self.dir / "run"
        stdout = StringIO()
        call_command("run_experiment", config=self.write_config(), seed=1, out=str(out), stdout=stdout)
        for name in (
            "summary.json", "transcript.jsonl", "predictor.json", "results.csv", "checkpoint.json", "manifest.json"
        ):
            self.assertTrue((out / name).exists(), name)
        lines = (out / "transcript.jsonl").read_text().splitlines()
        self.assertEqual(len(lines), 61)
        self.assertIn("audited loss", stdout.getvalue())

    def test_schema_errors_exit_with_two(self):
        path = self.write_config(text='{"kind": "mc", "epsilon": 7}')
        with self.assertRaises(CommandError) as ctx:
            call_command("run_experiment", config=path, out=str(self.dir / "bad"), stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 2)

    def test_unknown_dynamics_names_the_field(self):
        path = self.write_config(dict(QUICK_CONFIG, dynamics="gradient"))
        with self.assertRaises(CommandError) as ctx:
            call_command("run_experiment", config=path, out=str(self.dir / "bad"), stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn("dynamics", str(ctx.exception))

    def test_reruns_write_identical_files(self):
        path = self.write_config()
        for name in ("first", "second"):
            call_command("run_experiment", config=path, seed=6, out=str(self.dir / name), stdout=StringIO())
        for produced in sorted((self.dir / "first").iterdir()):
            self.assertEqual(produced.read_bytes(), (self.dir / "second" / produced.name).read_bytes(), produced.name)

    def test_missed_target_exits_with_one(self):
        path = self.write_config(dict(QUICK_CONFIG, rounds=1, target=0.0, realizable=True))
        with self.assertRaises(CommandError) as ctx:
            call_command("run_experiment", config=path, out=str(self.dir / "miss"), stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 1)


class RecordCommandTests(ConfigDirMixin, TestCase):
    def test_run_experiment_records_the_run(self):
        call_command(
            "run_experiment", config=self.write_config(), seed=2, out=str(self.dir / "run"), record=True, stdout=StringIO()
        )
        run = ExperimentRun.objects.get()
        self.assertEqual((run.config_name, run.seed, run.rounds), ("quick", 2, 60))
        self.assertTrue(run.passed)

    def test_sweep_records_every_run(self):
        stdout = StringIO()
        call_command(
            "sweep", config=self.write_config(), seeds="0-2", parallel=1, record=True, batch="nightly", stdout=stdout
        )
        self.assertEqual(ExperimentRun.objects.filter(batch="nightly").count(), 3)
        self.assertIn("3 of 3 runs met their target", stdout.getvalue())


class SweepCommandTests(ConfigDirMixin, SimpleTestCase):
    def test_prints_the_aggregate(self):
        stdout = StringIO()
        call_command("sweep", config=self.write_config(), seeds="0,1", rounds="20,40", parallel=1, stdout=stdout)
        lines = stdout.getvalue().splitlines()
        self.assertTrue(lines[0].startswith("config,rounds,runs"))
        self.assertEqual(len(lines), 4)

    def test_writes_csv_files(self):
        out = self.dir / "sweep"
        call_command("sweep", config=self.write_config(), seeds="0-1", parallel=1, out=str(out), stdout=StringIO())
        self.assertEqual(len((out / "runs.csv").read_text().splitlines()), 3)
        self.assertTrue((out / "sweep.csv").exists())

    def test_bad_seed_list(self):
        with self.assertRaises(CommandError) as ctx:
            call_command("sweep", config=self.write_config(), seeds="a-b", stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 2)


class AuditPredictorCommandTests(SimpleTestCase):
    def test_bayes_predictor_has_no_violation(self):
        stdout = StringIO()
        call_command(
            "audit_predictor", predictor="bayes_realizable_8.json", distribution="realizable_8.json", json=True,
            stdout=stdout,
        )
        report = json.loads(stdout.getvalue())
        self.assertAlmostEqual(report["value"], 0.0, places=12)

    def test_plain_output(self):
        stdout = StringIO()
        call_command("audit_predictor", predictor="bayes_realizable_8.json", distribution="realizable_8.json",
                     stdout=stdout)
        self.assertIn("max violation", stdout.getvalue())
        self.assertIn("witness", stdout.getvalue())

    def test_bad_groups(self):
        with self.assertRaises(CommandError) as ctx:
            call_command(
                "audit_predictor", predictor="bayes_realizable_8.json", distribution="realizable_8.json",
                groups="[[0, 1", stdout=StringIO(),
            )
        self.assertEqual(ctx.exception.returncode, 2)


class SelftestCommandTests(SimpleTestCase):
    def test_single_check(self):
        stdout = StringIO()
        call_command("selftest", check=["bayes_audit"], stdout=stdout)
        self.assertIn("All 1 checks passed", stdout.getvalue())


@tag("slow")
class BundledRunTests(SimpleTestCase):
    def test_mc_small_seed_seven(self):
        result = run_config(load_config("mc_small.json"), 7)
        self.assertLessEqual(result.row["audited_loss"], 0.2)

    def test_median_loss_falls_with_more_rounds(self):
        _, summary = run_sweep(load_config("mc_small.json"), range(5), [250, 1000, 4000], workers=1)
        medians = [entry["audited_loss_median"] for entry in summary]
        self.assertEqual(medians, sorted(medians, reverse=True))
