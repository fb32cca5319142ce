import json

from django.core.management.base import BaseCommand, CommandError

from multicalib.audit import audit_problem
from multicalib.exceptions import MulticalibError
from multicalib.experiments import build_problem, dumps, resolve_path
from multicalib.core import load_predictor


class Command(BaseCommand):
    help = 'Audits a predictor (or ensemble) file exactly against a distribution file'

    def add_arguments(self, parser):
        parser.add_argument('--predictor', required=True)
        parser.add_argument('--distribution', required=True)
        parser.add_argument('--kind', default='mc', choices=['mc', 'moment', 'agnostic', 'conditional'])
        parser.add_argument('--lambda', dest='lam', type=float, default=0.25, help="Bin width")
        parser.add_argument('--groups', help="JSON list of groups (default: the distribution's own)")
        parser.add_argument('--r', type=int, default=2, help="Moment order for --kind moment")
        parser.add_argument('--allow-odd', action='store_true')
        parser.add_argument('--json', action='store_true', help="Print the full report as JSON")

    def handle(self, *args, **options):
        try:
            groups = json.loads(options['groups']) if options['groups'] else None
        except json.JSONDecodeError as exc:
            raise CommandError(f"--groups is not valid JSON: {exc.msg}", returncode=2)
        config = {
            'kind': options['kind'],
            'distribution': str(resolve_path(options['distribution'])),
            'lam': options['lam'],
            'groups': groups,
            'r': options['r'],
            'allow_odd': options['allow_odd'],
        }
        try:
            problem, _ = build_problem(config)
            predictor = load_predictor(resolve_path(options['predictor']))
            report = audit_problem(predictor, problem)
        except MulticalibError as exc:
            raise CommandError(str(exc), returncode=2)

        if options['json']:
            self.stdout.write(dumps(report.to_dict(), indent=2, sort_keys=True))
            return
        self.stdout.write(f"witness: {report.witness.to_dict()}")
        if report.slack is not None:
            self.stdout.write(f"covariance slack: {report.slack:.6g}")
        for name, value in (report.breakdown or {}).items():
            self.stdout.write(f"  {name}: {value:.6g}")
        self.stdout.write(self.style.SUCCESS(f"max violation {report.value:.6g}"))
