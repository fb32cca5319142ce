from django.test import TestCase

from multicalib.models import ExperimentRun


def make_summary(**overrides):
    summary = {
        "config": {
            "name": "mc_small",
            "kind": "mc",
            "dynamics": "nrnr",
            "epsilon": 0.1,
            "delta": 0.05,
            "lambda": 0.25,
            "k": 2,
        },
        "seed": 7,
        "rounds": 1000,
        "audited_loss": 0.05,
        "opt_reference": 0.0,
        "target": 0.2,
        "passed": True,
        "oracle_calls": 0,
        "samples": 1000,
    }
    summary.update(overrides)
    return summary


class ExperimentRunTests(TestCase):
    def test_from_summary(self):
        run = ExperimentRun.from_summary(make_summary(), batch="nightly", output_dir="runs/mc_small-seed7")
        run.save()
        stored = ExperimentRun.objects.get(pk=run.pk)
        self.assertEqual(stored.lam, 0.25)
        self.assertIsNone(stored.r)
        self.assertEqual(stored.batch, "nightly")
        self.assertEqual(stored.summary["seed"], 7)

    def test_margin(self):
        run = ExperimentRun.from_summary(make_summary(audited_loss=0.25, passed=False))
        self.assertAlmostEqual(run.margin, -0.05)

    def test_str(self):
        run = ExperimentRun.from_summary(make_summary())
        self.assertEqual(str(run), "mc_small [nrnr] seed 7")

