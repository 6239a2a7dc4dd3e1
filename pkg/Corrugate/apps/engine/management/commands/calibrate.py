from django.core.management.base import BaseCommand

from apps.engine.calibration import NOTES, calibrate, write_manifest
from apps.engine.models import CalibrationConstant


class Command(BaseCommand):
    help = 'Measure the existence-only constants (σ₁, c₀, M̄, δ*, λ*) on reference families'

    def add_arguments(self, parser):
        parser.add_argument(
            '--write',
            action='store_true',
            help='Write the calibration manifest and store CalibrationConstant rows',
        )

    def handle(self, *args, **options):
        self.stdout.write('🔍 Calibrating on reference families (this takes a while)...\n')
        constants = calibrate()
        for name, value in constants.items():
            if value is None:
                self.stdout.write(self.style.WARNING(f'  ⚠️  {name}: not reached on the reference grid'))
            else:
                self.stdout.write(f'  {name} = {value:.6g}')

        if not options['write']:
            self.stdout.write(self.style.WARNING('\n⚠️  Not written; pass --write to keep these values'))
            return

        path = write_manifest(constants)
        CalibrationConstant.store(constants, NOTES)
        self.stdout.write(self.style.SUCCESS(f'\n✅ Calibration written to {path} and the database'))
