import json
from pathlib import Path

from django.conf import settings

from engine.exceptions import ConfigError, DataError, IoError
from glacierSeg.command import GlacierCommand
from runs.metrics import format_rows, format_table
from runs.pipeline import RunLayout, evaluate_stage, load_stage_artifacts, resolve_run_dir
from runs.records import run_history
from runs.serializers import MetricsReportSerializer
from scenes.dataset import Split, load_split


def _fmt(value):
    return 'n/a' if value is None else f'{value:.5f}'


class Command(GlacierCommand):
    help = 'Score every trained method of a run on one split and print a comparison table'

    def add_arguments(self, parser):
        parser.add_argument('run', nargs='?', help='run name under the run root, or a run directory')
        parser.add_argument('--run-root', dest='run_root', default=str(settings.RUN_ROOT))
        parser.add_argument('--split', choices=Split.values, default=Split.TEST.value)
        parser.add_argument('--data-dir', dest='data_dir', help='dataset directory (default: the one the run used)')
        parser.add_argument('--band', type=int, default=settings.GLACIER_SEG['BOUNDARY_BAND'],
                            help='boundary band width in pixels for the uncertainty localization column')
        parser.add_argument('--out', type=Path, help='report path (default: <run>/evaluation_<split>.json)')
        parser.add_argument('--per-image', dest='per_image', action='store_true',
                            help='also print every image\'s scores next to the aggregate')
        parser.add_argument('--history', action='store_true',
                            help='list the recorded runs and stages instead of scoring')

    def handle(self, *args, **options):
        if options['history']:
            lines = run_history(options['run'])
            self.stdout.write('\n'.join(lines) if lines else 'No runs recorded')
            return
        if not options['run']:
            raise ConfigError('give a run name, or --history to list recorded runs')
        layout = RunLayout(resolve_run_dir(options['run'], options['run_root']))
        stages = layout.completed_stages()
        if not stages:
            raise DataError(f'no trained stages found in {layout.run_dir}')

        split = options['split']
        reports = []
        for stage in stages:
            artifacts = load_stage_artifacts(layout, stage)
            dataset = load_split(options['data_dir'] or artifacts.data_dir)
            reports.append(evaluate_stage(layout, stage, dataset, split, artifacts.threshold, options['band']))

        out = options['out'] or layout.run_dir / f'evaluation_{split}.json'
        payload = {'split': split, 'methods': [MetricsReportSerializer(report).data for report in reports]}
        try:
            out.write_text(json.dumps(payload, indent=2, sort_keys=True) + '\n')
        except OSError as exc:
            raise IoError(f'cannot write report {out}: {exc}') from exc

        self.stdout.write(format_table(reports))
        if options['per_image']:
            self.stdout.write('')
            self.stdout.write(format_rows(reports))
        for report in reports:
            if report.error_coverage is not None:
                inside, outside = _fmt(report.boundary_variance), _fmt(report.background_variance)
                self.stdout.write(
                    f'{report.method}: {100 * report.error_coverage:.1f}% of errors flagged uncertain; '
                    f'mean variance {inside} near the front, {outside} elsewhere'
                )
        self.stdout.write(self.style.SUCCESS(f'Report written to {out}'))
