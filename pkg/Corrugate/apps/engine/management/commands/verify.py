from django.core.management.base import BaseCommand, CommandError

from apps.engine.verification import CHECK_COLUMNS, SUITES, run_suite
from utils.artifacts import write_csv


class Command(BaseCommand):
    help = 'Run the acceptance checks of one module and print a pass/fail table'

    def add_arguments(self, parser):
        parser.add_argument('suite', choices=sorted(SUITES), help='Module to verify')
        parser.add_argument('--csv', help='Also write the checks to this CSV file')

    def handle(self, *args, **options):
        suite = options['suite']
        self.stdout.write(f'🔍 Verifying {suite}...\n')
        checks = run_suite(suite)

        width = max(len(check.name) for check in checks)
        for check in checks:
            mark = self.style.SUCCESS('✅ pass') if check.passed else self.style.ERROR('❌ FAIL')
            self.stdout.write(f'  {check.name:<{width}}  {check.value:>12.4e}  {check.target:<14} {mark}')

        if options['csv']:
            path = write_csv(options['csv'], CHECK_COLUMNS, [check.as_row() for check in checks])
            self.stdout.write(f'\nℹ️  Wrote {path}')

        failed = [check for check in checks if not check.passed]
        if failed:
            raise CommandError(f'{len(failed)} of {len(checks)} {suite} checks failed.')
        self.stdout.write(self.style.SUCCESS(f'\n✅ All {len(checks)} {suite} checks passed.'))
