from pathlib import Path

from glacierSeg.command import GlacierCommand
from runs.config import load_run_config
from runs.models import Stage, Stage2Init, ThresholdPolicy
from runs.pipeline import run_baseline, run_stage1, run_stage2
from runs.records import record_stage
from scenes.dataset import load_split

STAGES = {'1': Stage.STAGE1, '2': Stage.STAGE2, 'baseline': Stage.BASELINE}

# flag name → RunConfig field, for flags that override the config file
OVERRIDES = {
    'name': 'name', 'run_root': 'run_root', 'data_dir': 'data_dir',
    'base_filters': 'base_filters', 'levels': 'levels', 'kernel': 'kernel',
    'dropout_rate': 'dropout_rate', 'lr': 'lr', 'batch_size': 'batch_size',
    'patience': 'patience', 'max_epochs': 'max_epochs', 'seed': 'seed',
    'mc_samples': 'mc_samples', 'mc_workers': 'mc_workers', 'mc_seed': 'mc_seed',
    'threshold_policy': 'threshold_policy', 'threshold_value': 'threshold_value',
    'stage2_init': 'stage2_init',
}


class Command(GlacierCommand):
    help = 'Train one stage of the two-stage pipeline (1, 2, or the deterministic baseline)'

    def add_arguments(self, parser):
        parser.add_argument('--stage', choices=sorted(STAGES), required=True)
        parser.add_argument('--config', type=Path, help='JSON run configuration; flags override it')
        parser.add_argument('--name', help='run name (directory under the run root)')
        parser.add_argument('--run-root', dest='run_root')
        parser.add_argument('--data-dir', dest='data_dir')
        parser.add_argument('--base-filters', dest='base_filters', type=int)
        parser.add_argument('--levels', type=int)
        parser.add_argument('--kernel', type=int)
        parser.add_argument('--dropout-rate', dest='dropout_rate', type=float)
        parser.add_argument('--lr', type=float)
        parser.add_argument('--batch-size', dest='batch_size', type=int)
        parser.add_argument('--patience', type=int)
        parser.add_argument('--max-epochs', dest='max_epochs', type=int)
        parser.add_argument('--seed', type=int)
        parser.add_argument('--mc-samples', dest='mc_samples', type=int)
        parser.add_argument('--mc-workers', dest='mc_workers', type=int)
        parser.add_argument('--mc-seed', dest='mc_seed', type=int)
        parser.add_argument('--threshold-policy', dest='threshold_policy', choices=ThresholdPolicy.values)
        parser.add_argument('--threshold-value', dest='threshold_value', type=float)
        parser.add_argument('--stage2-init', dest='stage2_init', choices=Stage2Init.values)
        parser.add_argument('--force', action='store_true', help='replace an existing stage directory')

    def handle(self, *args, **options):
        overrides = {field: options.get(flag) for flag, field in OVERRIDES.items()}
        config = load_run_config(options['config'], overrides)
        stage = STAGES[options['stage']]
        dataset = load_split(config.data_dir)

        if stage == Stage.STAGE1:
            artifacts = run_stage1(config, dataset, force=options['force'])
        elif stage == Stage.STAGE2:
            artifacts = run_stage2(config, dataset, force=options['force'])
        else:
            artifacts = run_baseline(config, dataset, force=options['force'])
        record_stage(config, artifacts)

        test = artifacts.reports['test']
        threshold = 'n/a' if artifacts.threshold is None else f'{artifacts.threshold:.6g}'
        self.stdout.write(self.style.SUCCESS(
            f'{stage.label} finished in {artifacts.stage_dir}: best epoch {artifacts.best_epoch}, '
            f'threshold {threshold}, test dice {100 * test.mean_dice:.2f}%'
        ))
