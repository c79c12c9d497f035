from pathlib import Path

from django.conf import settings

from engine.exceptions import DataError
from glacierSeg.command import GlacierCommand
from runs.figures import write_figures
from runs.pipeline import RunLayout, load_stage_artifacts, resolve_run_dir
from scenes.dataset import Split, load_split


class Command(GlacierCommand):
    help = 'Export comparison strips and front overlays for the images of a run'

    def add_arguments(self, parser):
        parser.add_argument('run', help='run name under the run root, or a run directory')
        parser.add_argument('--run-root', dest='run_root', default=str(settings.RUN_ROOT))
        parser.add_argument('--split', choices=Split.values, default=Split.TEST.value)
        parser.add_argument('--limit', type=int, help='only the first N images')
        parser.add_argument('--out', type=Path, help='output directory (default: <run>/figures/<split>)')

    def handle(self, *args, **options):
        layout = RunLayout(resolve_run_dir(options['run'], options['run_root']))
        stages = layout.completed_stages()
        if not stages:
            raise DataError(f'no trained stages found in {layout.run_dir}')
        dataset = load_split(load_stage_artifacts(layout, stages[0]).data_dir)
        out = options['out'] or layout.run_dir / 'figures' / options['split']
        written = write_figures(layout, dataset, options['split'], out, options['limit'])
        self.stdout.write(self.style.SUCCESS(f'Wrote {len(written)} figures to {out}'))
