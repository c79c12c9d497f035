"""Miniature datasets and configurations shared by the run tests."""
from pathlib import Path

from runs.config import load_run_config
from scenes.dataset import make_dataset
from scenes.synthetic import SyntheticSceneParams

TINY_SCENES = SyntheticSceneParams(height=16, width=16)


def tiny_dataset(root: Path, n_train=3, n_val=2, n_test=2, seed=0):
    return make_dataset(root, n_train, n_val, n_test, TINY_SCENES, seed=seed)


def tiny_overrides(tmp: Path, **extra):
    values = dict(
        name='tiny', run_root=str(tmp / 'runs'), data_dir=str(tmp / 'data'),
        base_filters=2, levels=2, kernel=3, lr=1e-2, batch_size=2,
        patience=5, max_epochs=3, mc_samples=3, seed=1, mc_seed=2,
    )
    values.update(extra)
    return values


def tiny_config(tmp: Path, **extra):
    return load_run_config(overrides=tiny_overrides(tmp, **extra))
