from pathlib import Path

import numpy as np
from django.conf import settings

from engine.bayes import binarize, load_raw_variance, save_heatmap, save_raw_variance
from engine.checkpoint import read_checkpoint
from engine.exceptions import ConfigError, ShapeError
from glacierSeg.command import GlacierCommand
from runs.pipeline import predict_tiled
from scenes.imageio import load_image, save_mask


class Command(GlacierCommand):
    help = 'MC-dropout prediction: binary mask, uncertainty heatmap and raw variance per image'

    def add_arguments(self, parser):
        conf = settings.GLACIER_SEG
        parser.add_argument('--checkpoint', type=Path, required=True)
        parser.add_argument('--image', type=Path, nargs='+', required=True)
        parser.add_argument('--uncertainty', type=Path, nargs='+',
                            help='stage-1 raw variance maps (.f32) for a two-channel checkpoint, one per image')
        parser.add_argument('--out', type=Path, default=Path('predictions'))
        parser.add_argument('--mc-samples', dest='mc_samples', type=int, default=conf['MC_SAMPLES'])
        parser.add_argument('--mc-workers', dest='mc_workers', type=int, default=conf['MC_WORKERS'])
        parser.add_argument('--seed', type=int, default=conf['SEED'])
        parser.add_argument('--patch', type=int, default=conf['PATCH_SIZE'])
        parser.add_argument('--stride', type=int, help='tile stride for large scenes (default: patch / 2)')
        parser.add_argument('--threshold', type=float,
                            help='uncertainty threshold (default: the one stored in the checkpoint)')

    def _inputs(self, options, in_channels):
        images, maps = options['image'], options['uncertainty']
        if in_channels == 1 and maps:
            raise ConfigError('the checkpoint takes one input channel; --uncertainty does not apply')
        if in_channels == 2 and not maps:
            raise ConfigError('the checkpoint takes two input channels; pass --uncertainty maps')
        if maps and len(maps) != len(images):
            raise ConfigError(f'{len(images)} images but {len(maps)} uncertainty maps')

        for index, path in enumerate(images):
            image = load_image(path)
            if maps:
                variance, stored = load_raw_variance(maps[index])
                if stored is None:
                    raise ConfigError(f'{maps[index]} carries no threshold to binarize with')
                if variance.shape != image.shape[1:]:
                    raise ShapeError(f'{maps[index]} does not match the size of {path}')
                image = np.concatenate([image, binarize(variance, stored)[None].astype(np.float32)])
            yield path, image

    def handle(self, *args, **options):
        checkpoint = read_checkpoint(options['checkpoint'])
        net = checkpoint.net
        threshold = options['threshold']
        if threshold is None:
            threshold = checkpoint.metadata.threshold
        patch = options['patch']
        stride = options['stride'] or max(patch // 2, 1)
        out = options['out']
        out.mkdir(parents=True, exist_ok=True)

        for index, (path, image) in enumerate(self._inputs(options, net.spec.in_channels)):
            seed = options['seed'] + index * options['mc_samples']
            result = predict_tiled(net, image, options['mc_samples'], seed, patch, stride,
                                   threshold=threshold, workers=options['mc_workers'])
            stem = path.stem
            save_mask(result.mask, out / f'{stem}_mask.pgm')
            save_heatmap(result.uncertainty.variance, out / f'{stem}_uncertainty.pgm')
            save_raw_variance(result.uncertainty.variance, out / f'{stem}_variance.f32', result.uncertainty.threshold)
            self.stdout.write(f'{path}: foreground {100 * result.mask.mean():.1f}%, '
                              f'uncertain {100 * result.uncertainty.binarized.mean():.1f}%')
        self.stdout.write(self.style.SUCCESS(f"Wrote predictions for {len(options['image'])} images to {out}"))
