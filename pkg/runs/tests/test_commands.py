import json
import shutil
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase

from engine.bayes import load_raw_variance
from runs.models import EpochRecord, MetricRow, Run, Stage, StageResult
from runs.pipeline import RunLayout
from scenes.imageio import load_mask

from .fixtures import tiny_dataset, tiny_overrides


class CommandTestCase(TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)
        self.dataset = tiny_dataset(self.tmp / 'data')
        self.values = tiny_overrides(self.tmp)
        self.layout = RunLayout(Path(self.values['run_root']) / self.values['name'])

    def tearDown(self):
        self._tmp.cleanup()

    def train(self, stage, *extra):
        v = self.values
        args = ['--stage', stage, '--name', v['name'], '--run-root', v['run_root'], '--data-dir', v['data_dir'],
                '--base-filters', str(v['base_filters']), '--levels', str(v['levels']), '--kernel', str(v['kernel']),
                '--lr', str(v['lr']), '--batch-size', str(v['batch_size']), '--patience', str(v['patience']),
                '--max-epochs', str(v['max_epochs']), '--mc-samples', str(v['mc_samples']),
                '--seed', str(v['seed']), '--mc-seed', str(v['mc_seed']), *extra]
        stdout = StringIO()
        call_command('train', *args, stdout=stdout)
        return stdout.getvalue()


class TrainCommandTests(CommandTestCase):
    def test_stage_one_is_recorded(self):
        output = self.train('1')
        self.assertIn('Bayesian U-Net I finished', output)
        run = Run.objects.get(name='tiny')
        result = run.stages.get(stage=Stage.STAGE1)
        self.assertEqual(result.epochs.count(), 3)
        self.assertEqual(result.metric_rows.count(), 7)
        self.assertIsNotNone(result.threshold)
        self.assertEqual(run.config['levels'], 2)

    def test_retraining_replaces_the_record(self):
        self.train('baseline')
        self.train('baseline', '--force')
        self.assertEqual(StageResult.objects.filter(stage=Stage.BASELINE).count(), 1)
        self.assertEqual(EpochRecord.objects.count(), 3)
        self.assertEqual(MetricRow.objects.count(), 7)

    def test_existing_stage_exits_with_usage_code(self):
        self.train('baseline')
        with self.assertRaises(CommandError) as caught:
            self.train('baseline')
        self.assertEqual(caught.exception.returncode, 1)

    def test_stage_two_before_stage_one_is_a_data_error(self):
        with self.assertRaises(CommandError) as caught:
            self.train('2')
        self.assertEqual(caught.exception.returncode, 2)

    def test_missing_dataset_is_a_data_error(self):
        shutil.rmtree(self.tmp / 'data')
        with self.assertRaises(CommandError) as caught:
            self.train('1')
        self.assertEqual(caught.exception.returncode, 2)

    def test_invalid_flag_value(self):
        with self.assertRaises(CommandError) as caught:
            self.train('1', '--dropout-rate', '1.5')
        self.assertEqual(caught.exception.returncode, 1)

    def test_config_file_is_read(self):
        config = self.tmp / 'config.json'
        config.write_text(json.dumps({'max_epochs': 2}))
        values = self.values
        stdout = StringIO()
        args = ['--stage', '1', '--config', str(config)]
        for key in ('name', 'run_root', 'data_dir', 'base_filters', 'levels', 'kernel', 'mc_samples'):
            args += ['--' + key.replace('_', '-'), str(values[key])]
        call_command('train', *args, stdout=stdout)
        self.assertEqual(Run.objects.get(name='tiny').stages.get().epochs.count(), 2)


class PredictCommandTests(CommandTestCase):
    def test_writes_four_files_per_image(self):
        self.train('1')
        out = self.tmp / 'predictions'
        image = self.dataset.image_path(self.dataset.split('test')[0])
        stdout = StringIO()
        call_command('predict', '--checkpoint', str(self.layout.checkpoint(Stage.STAGE1)), '--image', str(image),
                     '--out', str(out), '--mc-samples', '2', '--patch', '16', stdout=stdout)
        for name in ('0000_mask.pgm', '0000_uncertainty.pgm', '0000_variance.f32', '0000_variance.json'):
            self.assertTrue((out / name).exists(), name)
        self.assertEqual(load_mask(out / '0000_mask.pgm').shape, (16, 16))
        _, threshold = load_raw_variance(out / '0000_variance.f32')
        stage1 = StageResult.objects.get(stage=Stage.STAGE1)
        self.assertAlmostEqual(threshold, stage1.threshold)

    def test_two_channel_checkpoint_needs_uncertainty(self):
        self.train('1')
        self.train('2')
        pair = self.dataset.split('test')[0]
        checkpoint = str(self.layout.checkpoint(Stage.STAGE2))
        with self.assertRaises(CommandError) as caught:
            call_command('predict', '--checkpoint', checkpoint, '--image', str(self.dataset.image_path(pair)),
                         '--out', str(self.tmp / 'p'), '--patch', '16', stdout=StringIO())
        self.assertEqual(caught.exception.returncode, 1)

        variance = self.layout.variance(Stage.STAGE1, 'test', pair.image_id)
        call_command('predict', '--checkpoint', checkpoint, '--image', str(self.dataset.image_path(pair)),
                     '--uncertainty', str(variance), '--out', str(self.tmp / 'p'), '--mc-samples', '2',
                     '--patch', '16', stdout=StringIO())
        self.assertTrue((self.tmp / 'p' / '0000_mask.pgm').exists())

    def test_corrupt_checkpoint_is_a_data_error(self):
        bad = self.tmp / 'bad.bunt'
        bad.write_bytes(b'NOPE' + bytes(16))
        image = self.dataset.image_path(self.dataset.split('test')[0])
        with self.assertRaises(CommandError) as caught:
            call_command('predict', '--checkpoint', str(bad), '--image', str(image), stdout=StringIO())
        self.assertEqual(caught.exception.returncode, 2)


class EvaluateCommandTests(CommandTestCase):
    def test_compares_all_trained_methods(self):
        self.train('baseline')
        self.train('1')
        self.train('2')
        stdout = StringIO()
        call_command('evaluate', self.values['name'], '--run-root', self.values['run_root'], stdout=stdout)
        output = stdout.getvalue()
        for label in (Stage.BASELINE.label, Stage.STAGE1.label, Stage.STAGE2.label):
            self.assertIn(label, output)
        report = json.loads((self.layout.run_dir / 'evaluation_test.json').read_text())
        self.assertEqual(report['split'], 'test')
        self.assertEqual([m['method'] for m in report['methods']],
                         [Stage.BASELINE.label, Stage.STAGE1.label, Stage.STAGE2.label])
        self.assertIsNone(report['methods'][0]['error_coverage'])
        self.assertIsNotNone(report['methods'][1]['error_coverage'])

    def test_per_image_rows(self):
        self.train('1')
        stdout = StringIO()
        call_command('evaluate', self.values['name'], '--run-root', self.values['run_root'], '--per-image',
                     stdout=stdout)
        output = stdout.getvalue()
        self.assertIn(f'{Stage.STAGE1.label} Dice%', output)
        self.assertIn('mean (± SD)', output)
        ids = MetricRow.objects.filter(split='test').values_list('image_id', flat=True)
        for image_id in ids:
            self.assertIn(f'\n{image_id} ', output)

    def test_history_lists_recorded_stages(self):
        self.train('baseline')
        self.train('1')
        stdout = StringIO()
        call_command('evaluate', '--history', stdout=stdout)
        lines = stdout.getvalue().splitlines()
        self.assertTrue(lines[0].startswith('tiny ('))
        stage_lines = [line for line in lines if line.startswith('  ')]
        self.assertEqual(len(stage_lines), 2)
        self.assertTrue(any(line.startswith(f'  {Stage.STAGE1.label}: best epoch') for line in stage_lines))
        self.assertTrue(all('7 scored images' in line for line in stage_lines))

    def test_history_with_empty_database(self):
        stdout = StringIO()
        call_command('evaluate', '--history', stdout=stdout)
        self.assertIn('No runs recorded', stdout.getvalue())

    def test_run_name_is_required_for_scoring(self):
        with self.assertRaises(CommandError) as caught:
            call_command('evaluate', stdout=StringIO())
        self.assertEqual(caught.exception.returncode, 1)

    def test_run_without_stages(self):
        with self.assertRaises(CommandError) as caught:
            call_command('evaluate', 'nothing', '--run-root', str(self.tmp / 'runs'), stdout=StringIO())
        self.assertEqual(caught.exception.returncode, 2)


class FiguresCommandTests(CommandTestCase):
    def test_strip_and_overlay_per_image(self):
        self.train('1')
        out = self.tmp / 'figures'
        call_command('figures', str(self.layout.run_dir), '--out', str(out), '--limit', '1', stdout=StringIO())
        self.assertEqual(sorted(p.name for p in out.iterdir()), ['0000_overlay.png', '0000_strip.png'])


class RecordTests(CommandTestCase):
    def test_string_representations(self):
        self.train('baseline')
        result = StageResult.objects.get()
        self.assertTrue(str(result).startswith('tiny/baseline - dice '))
        self.assertTrue(str(result.run).startswith('tiny ('))
        self.assertTrue(str(result.epochs.first()).startswith('epoch 1:'))
        row = result.metric_rows.first()
        self.assertEqual(str(row), f'{row.split}/{row.image_id}: dice {row.dice:.4f}, iou {row.iou:.4f}')
        self.assertTrue(np.isfinite(result.best_val_loss))
