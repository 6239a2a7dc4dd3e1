from pathlib import Path

from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand, CommandError

from apps.engine.models import RunRecord
from apps.grid.io import load_field, write_obj, write_ply


class Command(BaseCommand):
    help = 'Export a stored embedding as a PLY mesh (all coordinates) and, for surfaces, an OBJ projection'

    def add_arguments(self, parser):
        parser.add_argument('--mesh', action='store_true', help='Write the PLY/OBJ meshes')
        source = parser.add_mutually_exclusive_group(required=True)
        source.add_argument('--run', type=int, help='Id of a stored run; exports its final embedding')
        source.add_argument('--field', help='Path to a field in the grid binary format')
        parser.add_argument('--out', help='Output directory; default is next to the source field')

    def handle(self, *args, **options):
        if not options['mesh']:
            raise CommandError('Nothing to export; pass --mesh.')

        if options['run'] is not None:
            try:
                run = RunRecord.objects.get(pk=options['run'])
            except RunRecord.DoesNotExist:
                raise CommandError(f'Run {options["run"]} not found.')
            if not run.output_dir:
                raise CommandError(f'Run {run.pk} has no output directory.')
            source = Path(run.output_dir) / 'final.bin'
        else:
            source = Path(options['field'])
        if not source.exists():
            raise CommandError(f'Field file not found: {source}')

        try:
            field = load_field(source)
        except ValidationError as exc:
            self.stdout.write(self.style.ERROR(f'❌ {"; ".join(exc.messages)}'))
            raise CommandError('Could not read the field.')

        out = Path(options['out']) if options['out'] else source.parent
        ply = write_ply(field, out / f'{source.stem}.ply')
        self.stdout.write(self.style.SUCCESS(f'✅ PLY: {ply} ({field.resolution ** field.n} vertices, {field.k} coordinates)'))
        if field.n == 2 and field.k >= 3:
            obj = write_obj(field, out / f'{source.stem}.obj')
            self.stdout.write(self.style.SUCCESS(f'✅ OBJ projection: {obj}'))
        else:
            self.stdout.write(self.style.WARNING('⚠️  OBJ projection is only written for surfaces (n = 2)'))
