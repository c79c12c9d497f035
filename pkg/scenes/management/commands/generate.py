from pathlib import Path

from django.conf import settings

from engine.exceptions import ConfigError
from glacierSeg.command import GlacierCommand
from scenes.dataset import MANIFEST_NAME, make_dataset
from scenes.synthetic import SyntheticSceneParams


class Command(GlacierCommand):
    help = 'Generate a seeded synthetic SAR glacier dataset (images, masks, manifest)'

    def add_arguments(self, parser):
        train, val, test = settings.GLACIER_SEG['SPLIT']
        parser.add_argument('--out', type=Path, default=settings.DATA_DIR, help='dataset directory')
        parser.add_argument('--train', type=int, default=train)
        parser.add_argument('--val', type=int, default=val)
        parser.add_argument('--test', type=int, default=test)
        parser.add_argument('--seed', type=int, default=settings.GLACIER_SEG['SEED'])
        parser.add_argument('--size', type=int, default=settings.GLACIER_SEG['PATCH_SIZE'],
                            help='scene height and width in pixels')
        parser.add_argument('--looks', type=float, default=SyntheticSceneParams.looks,
                            help='speckle looks L of the Gamma(L, 1/L) noise')
        parser.add_argument('--contrast', type=float, default=SyntheticSceneParams.contrast)
        parser.add_argument('--force', action='store_true', help='overwrite an existing dataset')

    def handle(self, *args, **options):
        out = options['out']
        if (out / MANIFEST_NAME).exists() and not options['force']:
            raise ConfigError(f'{out} already holds a dataset; pass --force to overwrite it')
        params = SyntheticSceneParams(
            height=options['size'], width=options['size'],
            looks=options['looks'], contrast=options['contrast'],
        )
        dataset = make_dataset(out, options['train'], options['val'], options['test'], params, options['seed'])
        counts = dataset.counts()
        self.stdout.write(self.style.SUCCESS(
            f"Generated {sum(counts.values())} scenes in {out} "
            f"(train {counts['train']}, val {counts['val']}, test {counts['test']})"
        ))
