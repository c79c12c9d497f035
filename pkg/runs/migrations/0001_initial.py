from django.db import migrations, models
import django.db.models.deletion


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name='Run',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('name', models.CharField(max_length=100, unique=True)),
                ('run_dir', models.CharField(max_length=500)),
                ('config', models.JSONField(default=dict)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'ordering': ['-created_at'],
            },
        ),
        migrations.CreateModel(
            name='StageResult',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('stage', models.CharField(choices=[('baseline', 'U-Net (deterministic)'), ('stage1', 'Bayesian U-Net I'), ('stage2', 'Bayesian U-Net II')], max_length=10)),
                ('checkpoint_path', models.CharField(max_length=500)),
                ('threshold', models.FloatField(blank=True, null=True)),
                ('best_epoch', models.IntegerField(default=0)),
                ('best_val_loss', models.FloatField(blank=True, null=True)),
                ('mean_dice', models.FloatField(blank=True, null=True)),
                ('mean_iou', models.FloatField(blank=True, null=True)),
                ('completed_at', models.DateTimeField(auto_now=True)),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='stages', to='runs.run')),
            ],
            options={
                'ordering': ['run', 'stage'],
                'unique_together': {('run', 'stage')},
            },
        ),
        migrations.CreateModel(
            name='EpochRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('epoch', models.IntegerField()),
                ('train_loss', models.FloatField()),
                ('val_loss', models.FloatField()),
                ('timestamp', models.DateTimeField()),
                ('stage_result', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='epochs', to='runs.stageresult')),
            ],
            options={
                'ordering': ['stage_result', 'epoch'],
            },
        ),
        migrations.CreateModel(
            name='MetricRow',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('split', models.CharField(max_length=5)),
                ('image_id', models.CharField(max_length=20)),
                ('dice', models.FloatField()),
                ('iou', models.FloatField()),
                ('stage_result', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='metric_rows', to='runs.stageresult')),
            ],
            options={
                'ordering': ['stage_result', 'split', 'image_id'],
            },
        ),
    ]
