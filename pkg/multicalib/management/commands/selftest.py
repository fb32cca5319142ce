from django.core.management.base import BaseCommand, CommandError

from multicalib.selfcheck import CHECKS, run_checks


class Command(BaseCommand):
    help = 'Runs the invariant checks on the bundled instances'

    def add_arguments(self, parser):
        parser.add_argument('--check', action='append', choices=sorted(CHECKS), help="Run only this check (repeatable)")

    def handle(self, *args, **options):
        results = run_checks(options['check'])
        for result in results:
            style = self.style.SUCCESS if result.passed else self.style.ERROR
            self.stdout.write(style(f"{'ok' if result.passed else 'FAIL':4} {result.name}: {result.detail}"))

        failed = [r.name for r in results if not r.passed]
        if failed:
            raise CommandError(f"{len(failed)} check(s) failed: {', '.join(failed)}", returncode=1)
        self.stdout.write(self.style.SUCCESS(f"All {len(results)} checks passed"))
