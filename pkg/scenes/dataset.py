"""Dataset splits on disk.

Layout::

    <root>/manifest.json
    <root>/<split>/images/NNNN.pgm
    <root>/<split>/masks/NNNN.pgm

The manifest lists every (image, mask) pair with SHA-256 checksums so two
generations can be compared without reading the pixels.
"""
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Union

import numpy as np
from django.db import models

from engine.exceptions import ConfigError, DataError, FormatError, IoError, ShapeError
from engine.optim import TrainingSet

from .imageio import load_image, load_mask, save_image, save_mask
from .synthetic import SyntheticSceneParams, generate_scenes

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'


class Split(models.TextChoices):
    TRAIN = 'train', 'Training'
    VAL = 'val', 'Validation'
    TEST = 'test', 'Test'


@dataclass
class ScenePair:
    image_id: str
    image: str
    mask: str
    image_sha256: str = ''
    mask_sha256: str = ''


@dataclass
class DatasetSplit:
    root: Path
    pairs: Dict[str, List[ScenePair]] = field(default_factory=dict)
    seed: Optional[int] = None
    params: dict = field(default_factory=dict)

    def counts(self) -> Dict[str, int]:
        return {split: len(self.pairs.get(split, [])) for split in Split.values}

    def split(self, name: str) -> List[ScenePair]:
        if name not in self.pairs:
            raise DataError(f'dataset at {self.root} has no {name!r} split')
        return self.pairs[name]

    def image_path(self, pair: ScenePair) -> Path:
        return self.root / pair.image

    def mask_path(self, pair: ScenePair) -> Path:
        return self.root / pair.mask

    def paths(self) -> Iterator[str]:
        for pairs in self.pairs.values():
            for pair in pairs:
                yield pair.image
                yield pair.mask

    def check_disjoint(self) -> None:
        seen = set()
        for path in self.paths():
            if path in seen:
                raise DataError(f'{path} appears more than once in the dataset')
            seen.add(path)

    def to_manifest(self) -> dict:
        return {
            'seed': self.seed,
            'params': self.params,
            'splits': {name: [asdict(pair) for pair in pairs] for name, pairs in self.pairs.items()},
        }


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(dataset: DatasetSplit) -> Path:
    path = dataset.root / MANIFEST_NAME
    try:
        path.write_text(json.dumps(dataset.to_manifest(), indent=2, sort_keys=True) + '\n')
    except OSError as exc:
        raise IoError(f'cannot write manifest {path}: {exc}') from exc
    return path


def make_dataset(root: Union[str, Path], n_train: int, n_val: int, n_test: int,
                 params: Optional[SyntheticSceneParams] = None, seed: int = 0) -> DatasetSplit:
    """Generate and write a seeded synthetic dataset; returns its manifest."""
    counts = dict(zip(Split.values, (n_train, n_val, n_test)))
    for name, count in counts.items():
        if count < 1:
            raise ConfigError(f'{name} split needs at least one scene, got {count}')
    params = params or SyntheticSceneParams()
    params.validate()
    root = Path(root)

    dataset = DatasetSplit(root=root, seed=seed, params=asdict(params))
    scenes = generate_scenes(params, seed, sum(counts.values()))
    for name, count in counts.items():
        pairs = []
        for index in range(count):
            scene = next(scenes)
            image_id = f'{index:04d}'
            image_rel = f'{name}/images/{image_id}.pgm'
            mask_rel = f'{name}/masks/{image_id}.pgm'
            save_image(scene.image, root / image_rel)
            save_mask(scene.mask, root / mask_rel)
            pairs.append(ScenePair(image_id, image_rel, mask_rel, sha256(root / image_rel), sha256(root / mask_rel)))
        dataset.pairs[name] = pairs
        logger.info('wrote %d %s scenes to %s', count, name, root / name)

    dataset.check_disjoint()
    write_manifest(dataset)
    return dataset


def load_split(root: Union[str, Path]) -> DatasetSplit:
    root = Path(root)
    path = root / MANIFEST_NAME
    try:
        manifest = json.loads(path.read_text())
    except OSError as exc:
        raise IoError(f'no dataset manifest at {path}: {exc}') from exc
    except ValueError as exc:
        raise FormatError(f'corrupt dataset manifest {path}: {exc}') from exc
    try:
        pairs = {name: [ScenePair(**entry) for entry in entries]
                 for name, entries in manifest['splits'].items()}
    except (KeyError, TypeError, AttributeError) as exc:
        raise FormatError(f'dataset manifest {path} is malformed: {exc}') from exc
    dataset = DatasetSplit(root=root, pairs=pairs, seed=manifest.get('seed'), params=manifest.get('params', {}))
    dataset.check_disjoint()
    return dataset


def verify_checksums(dataset: DatasetSplit) -> None:
    for pairs in dataset.pairs.values():
        for pair in pairs:
            for rel, expected in ((pair.image, pair.image_sha256), (pair.mask, pair.mask_sha256)):
                path = dataset.root / rel
                if not path.exists():
                    raise DataError(f'{path} listed in the manifest is missing')
                if expected and sha256(path) != expected:
                    raise DataError(f'{path} does not match its manifest checksum')


def load_arrays(dataset: DatasetSplit, name: str) -> TrainingSet:
    """All images and masks of one split as an in-memory TrainingSet."""
    images, masks, ids = [], [], []
    for pair in dataset.split(name):
        image = load_image(dataset.image_path(pair))
        mask = load_mask(dataset.mask_path(pair))
        if image.shape[1:] != mask.shape:
            raise ShapeError(f'{pair.image} and {pair.mask} differ in size')
        images.append(image)
        masks.append(mask[None])
        ids.append(pair.image_id)
    if not images:
        raise DataError(f'split {name!r} is empty')
    return TrainingSet(np.stack(images), np.stack(masks), ids)
