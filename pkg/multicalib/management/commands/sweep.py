from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from multicalib.exceptions import MulticalibError
from multicalib.experiments import CSV_COLUMNS, SWEEP_COLUMNS, csv_text, load_config, run_sweep
from multicalib.models import ExperimentRun


def parse_ints(text):
    """'0-4' or '250,1000,4000' (ranges and lists may be mixed)."""
    values = []
    for part in text.split(','):
        part = part.strip()
        if '-' in part:
            start, end = part.split('-')
            values.extend(range(int(start), int(end) + 1))
        elif part:
            values.append(int(part))
    return values


class Command(BaseCommand):
    help = 'Runs a configuration over many seeds (and round counts) and aggregates the audited losses'

    def add_arguments(self, parser):
        parser.add_argument('--config', required=True)
        parser.add_argument('--seeds', default='0-19', help="Seeds, e.g. '0-19' or '1,5,7'")
        parser.add_argument('--rounds', help="Round counts overriding the config, e.g. '250,1000,4000'")
        parser.add_argument('--parallel', type=int, help="Worker processes (default: MULTICALIB_WORKERS or CPU count)")
        parser.add_argument('--out', help="Directory for runs.csv and sweep.csv (default: print the aggregate)")
        parser.add_argument('--record', action='store_true')
        parser.add_argument('--batch', default='', help="Label stored with recorded runs")

    def handle(self, *args, **options):
        try:
            seeds = parse_ints(options['seeds'])
            rounds = parse_ints(options['rounds']) if options['rounds'] else [None]
        except ValueError:
            raise CommandError("--seeds and --rounds take integers, ranges like 0-19, or comma lists", returncode=2)
        if not seeds:
            raise CommandError("no seeds given", returncode=2)
        try:
            config = load_config(options['config'])
            rows, aggregate = run_sweep(config, seeds, rounds, options['parallel'])
        except MulticalibError as exc:
            raise CommandError(str(exc), returncode=2)

        if options['record']:
            batch = options['batch'] or config['name']
            for row in rows:
                ExperimentRun.from_summary(_row_summary(config, row), batch=batch).save()

        if options['out']:
            out = Path(options['out'])
            out.mkdir(parents=True, exist_ok=True)
            (out / 'runs.csv').write_text(csv_text(rows))
            (out / 'sweep.csv').write_text(csv_text(aggregate, SWEEP_COLUMNS))
            self.stdout.write(f"wrote {out / 'runs.csv'} and {out / 'sweep.csv'}")
        else:
            self.stdout.write(csv_text(aggregate, SWEEP_COLUMNS), ending='')
        passed = sum(row['passed'] for row in rows)
        self.stdout.write(self.style.SUCCESS(f"{passed} of {len(rows)} runs met their target"))


def _row_summary(config, row):
    return {
        'config': {
            'name': config['name'],
            'kind': config['kind'],
            'dynamics': config['dynamics'],
            'epsilon': config['epsilon'],
            'delta': config['delta'],
            'lambda': config['lam'],
            'k': row['k'],
            'r': config.get('r'),
        },
        'seed': row['seed'],
        'rounds': row['rounds'],
        'audited_loss': row['audited_loss'],
        'opt_reference': row['opt_reference'],
        'target': row['target'],
        'passed': bool(row['passed']),
        'oracle_calls': row['oracle_calls'],
        'samples': row['samples'],
        'row': {c: row.get(c) for c in CSV_COLUMNS},
    }
