from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from multicalib.exceptions import MulticalibError, SchemaError
from multicalib.experiments import load_config, run_config, write_outputs
from multicalib.models import ExperimentRun


class Command(BaseCommand):
    help = 'Runs one configured experiment, audits its output exactly and writes summary, transcript and CSV'

    def add_arguments(self, parser):
        parser.add_argument('--config', required=True, help="Configuration file (or the name of a bundled one)")
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--out', help="Output directory (default: runs/<config>-seed<seed>)")
        parser.add_argument('--record', action='store_true', help="Store the run in the database")

    def handle(self, *args, **options):
        try:
            config = load_config(options['config'])
            result = run_config(config, options['seed'])
        except SchemaError as exc:
            raise CommandError(str(exc), returncode=2)
        except MulticalibError as exc:
            raise CommandError(f"{type(exc).__name__}: {exc}", returncode=2)

        out = Path(options['out'] or Path('runs') / f"{config['name']}-seed{options['seed']}")
        write_outputs(result, out)
        summary = result.summary
        if options['record']:
            ExperimentRun.from_summary(summary, output_dir=out).save()

        self.stdout.write(f"rounds={summary['rounds']} oracle_calls={summary['oracle_calls']} samples={summary['samples']}")
        self.stdout.write(f"outputs written to {out}")
        message = f"audited loss {summary['audited_loss']:.6g} against target {summary['target']:.6g}"
        if not summary['passed']:
            raise CommandError(message, returncode=1)
        self.stdout.write(self.style.SUCCESS(message))
