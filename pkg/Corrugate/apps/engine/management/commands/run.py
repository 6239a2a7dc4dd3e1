# File: apps/engine/management/commands/run.py

import json
from pathlib import Path

from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand, CommandError

from apps.engine.driver import run_global
from apps.engine.exponents import ledger_check, schedule
from apps.engine.forms import RunConfigForm
from apps.engine.models import RunRecord
from utils.artifacts import read_json


class Command(BaseCommand):
    help = 'Run the global iteration on a flat torus from a JSON configuration and store the run ledger'

    def add_arguments(self, parser):
        parser.add_argument('--config', required=True, help='Path to the JSON run configuration')
        parser.add_argument(
            '--dry-run',
            action='store_true',
            help='Validate the configuration and print the exponent schedule without running',
        )

    def handle(self, *args, **options):
        config = self._load(Path(options['config']))

        if options['dry_run']:
            self._preview(config)
            return

        record = RunRecord.start(config)
        self.stdout.write(f'🔍 Run {record.pk}: n={config.n}, R={config.resolution}, {config.iterations} iteration(s)')
        try:
            artifacts = run_global(config)
        except ValidationError as exc:
            message = '; '.join(exc.messages)
            record.fail(message)
            self.stdout.write(self.style.ERROR(f'❌ Run {record.pk} halted: {message}'))
            raise CommandError(message)

        record.finish(artifacts)
        for iterate in artifacts.iterates:
            if iterate.capped:
                label = self.style.WARNING('capped')
            elif iterate.active:
                label = self.style.SUCCESS('active')
            else:
                label = 'idle'
            self.stdout.write(
                f'  q={iterate.q} {label}: defect {iterate.defect:.4e} '
                f'(target {iterate.target_defect:.4e}), ρ={iterate.rho:.4e}, injectivity {iterate.injectivity:.3g}'
            )
        if artifacts.cap_reached:
            self.stdout.write(self.style.WARNING(
                '⚠️  Iteration cap reached: the next stage needs a finer grid than R allows.'
            ))
        if not artifacts.decreasing():
            self.stdout.write(self.style.WARNING('⚠️  Metric defect did not decrease at every active iterate.'))
        self.stdout.write(self.style.SUCCESS(
            f'\n✅ Run {record.pk} completed; artifacts in {record.output_dir}'
        ))

    def _load(self, path):
        if not path.exists():
            raise CommandError(f'Config file not found: {path}')
        try:
            payload = read_json(path)
        except json.JSONDecodeError as exc:
            raise CommandError(f'Config file is not valid JSON: {exc}')
        if not isinstance(payload, dict):
            raise CommandError('Config file must hold a JSON object.')

        form = RunConfigForm(data=payload)
        if not form.is_valid():
            for field, errors in form.errors.items():
                label = 'config' if field == '__all__' else field
                self.stdout.write(self.style.ERROR(f'❌ {label}: {" ".join(errors)}'))
            raise CommandError('Invalid run configuration.')
        return form.to_config()

    def _preview(self, config):
        try:
            sched = schedule(
                config.n, config.theta, config.theta0, config.alpha0, config.beta0, config.A0,
                iterations=config.iterations + 3,
            )
            level = sched.levels[0]
            case = ledger_check(config.n, level.theta, level.alpha, level.beta)
        except ValidationError as exc:
            message = '; '.join(exc.messages)
            self.stdout.write(self.style.ERROR(f'❌ {message}'))
            raise CommandError(message)

        self.stdout.write(f'🔍 b={level.b:.6f}, κ={case.kappa:.6f}, c*={case.c_star:.6f}, θ_final={sched.theta_final:.6f}')
        for row in sched.as_rows():
            self.stdout.write(f'  q={row["q"]}: δ={row["delta"]:.4e}, log λ={row["log_lambda"]:.4f}')
        if not sched.ordering_ok:
            self.stdout.write(self.style.WARNING('⚠️  δ_{q+1} ≤ δ_q/4 fails somewhere in the schedule'))
        if not (case.passed and case.admissible):
            self.stdout.write(self.style.WARNING('⚠️  Exponent ledger fails on these parameters'))
        self.stdout.write(self.style.WARNING('\n⚠️  DRY RUN MODE - nothing was run or stored'))
