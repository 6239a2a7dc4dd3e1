from pathlib import Path

from django.core.management.base import BaseCommand

from apps.engine.exponents import c_star, ledger_sweep, steps_exponent, theta_threshold
from utils.artifacts import write_csv
from utils.config import get_setting


class Command(BaseCommand):
    help = 'Exponent bookkeeping: thresholds per dimension, or a lattice sweep of the inequality ledger'

    def add_arguments(self, parser):
        parser.add_argument('--sweep', action='store_true', help='Sweep a lattice of admissible (θ, α, β)')
        parser.add_argument('--n', type=int, action='append', help='Dimension(s) to cover; default 2 to 5')
        parser.add_argument('--points', type=int, default=20, help='Lattice points per exponent')
        parser.add_argument('--csv', help='CSV path for the sweep; default <OUTPUT_DIR>/ledger.csv')

    def handle(self, *args, **options):
        dims = options['n'] or [2, 3, 4, 5]

        if not options['sweep']:
            for n in dims:
                threshold = theta_threshold(n)
                N = steps_exponent(n)
                half = float(threshold) / 2.0
                self.stdout.write(
                    f'  n={n}: θ < {threshold}, N={float(N):g}, c*(θ={half:.4f})={c_star(half, float(N)):.4f}'
                )
            return

        rows = []
        for n in dims:
            cases = ledger_sweep(n, points=options['points'])
            failed = sum(not case.passed for case in cases)
            rows += [case.as_row() for case in cases]
            if failed:
                self.stdout.write(self.style.ERROR(f'❌ n={n}: {failed} of {len(cases)} cases fail'))
            else:
                self.stdout.write(self.style.SUCCESS(f'✅ n={n}: all {len(cases)} cases pass'))

        path = Path(options['csv'] or Path(get_setting('OUTPUT_DIR', 'runs')) / 'ledger.csv')
        write_csv(path, list(rows[0]), rows)
        self.stdout.write(f'\nℹ️  Wrote {len(rows)} ledger rows to {path}')
