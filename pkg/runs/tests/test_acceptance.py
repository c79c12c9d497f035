"""Full two-stage run on a synthetic dataset; minutes of CPU time, so opt-in.

    GLACIER_SEG_E2E=1 python manage.py test runs.tests.test_acceptance
"""
import os
import tempfile
import unittest
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from engine.bayes import load_raw_variance
from runs import metrics
from runs.config import load_run_config
from runs.models import Stage
from runs.pipeline import RunLayout, run_baseline, run_stage1, run_stage2
from scenes.dataset import make_dataset
from scenes.imageio import load_mask
from scenes.synthetic import SyntheticSceneParams


@unittest.skipUnless(os.environ.get('GLACIER_SEG_E2E') == '1', 'set GLACIER_SEG_E2E=1 to run')
class TwoStageAcceptanceTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls._tmp = tempfile.TemporaryDirectory()
        tmp = Path(cls._tmp.name)
        cls.dataset = make_dataset(tmp / 'data', 32, 8, 8, SyntheticSceneParams(height=128, width=128), seed=0)
        cls.config = load_run_config(overrides=dict(
            name='acceptance', run_root=str(tmp / 'runs'), data_dir=str(tmp / 'data'),
            base_filters=8, max_epochs=60,
        ))
        cls.baseline = run_baseline(cls.config, cls.dataset)
        cls.stage1 = run_stage1(cls.config, cls.dataset)
        cls.stage2 = run_stage2(cls.config, cls.dataset, cls.stage1)

    @classmethod
    def tearDownClass(cls):
        cls._tmp.cleanup()
        super().tearDownClass()

    def test_stage_one_segments_the_glacier(self):
        self.assertGreaterEqual(self.stage1.reports['test'].mean_dice, 0.90)

    def test_stage_two_keeps_up_with_stage_one(self):
        self.assertGreaterEqual(self.stage2.reports['test'].mean_dice,
                                self.stage1.reports['test'].mean_dice - 0.01)

    def test_baseline_is_reported(self):
        self.assertGreater(self.baseline.reports['test'].mean_dice, 0.5)

    def test_uncertainty_concentrates_at_the_front(self):
        layout = RunLayout(self.config.run_dir)
        localized = []
        for pair in self.dataset.split('test'):
            variance, _ = load_raw_variance(layout.variance(Stage.STAGE1, 'test', pair.image_id))
            inside, outside = metrics.boundary_localization(variance, load_mask(self.dataset.mask_path(pair)), 5)
            localized.append(inside > outside)
        self.assertGreaterEqual(np.mean(localized), 0.9)
