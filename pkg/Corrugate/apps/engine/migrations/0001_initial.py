# Generated by Django 5.2.7 on 2026-10-17 09:12

import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='CalibrationConstant',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('name', models.CharField(max_length=100, unique=True)),
                ('value', models.FloatField(blank=True, null=True)),
                ('note', models.TextField(blank=True)),
                ('updated_at', models.DateTimeField(auto_now=True)),
            ],
            options={
                'db_table': 'tblcalibration',
                'ordering': ['name'],
                'managed': True,
            },
        ),
        migrations.CreateModel(
            name='RunRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
                ('status', models.CharField(choices=[('running', 'Running'), ('completed', 'Completed'), ('failed', 'Failed')], default='running', max_length=20)),
                ('n', models.PositiveSmallIntegerField()),
                ('resolution', models.PositiveIntegerField()),
                ('config', models.JSONField(default=dict)),
                ('manifest', models.JSONField(blank=True, default=dict)),
                ('output_dir', models.CharField(blank=True, max_length=500)),
                ('final_defect', models.FloatField(blank=True, null=True)),
                ('cap_reached', models.BooleanField(default=False)),
                ('error', models.TextField(blank=True)),
            ],
            options={
                'db_table': 'tblruns',
                'ordering': ['-created_at'],
                'managed': True,
            },
        ),
        migrations.CreateModel(
            name='IterateRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('q', models.PositiveIntegerField()),
                ('active', models.BooleanField(default=False)),
                ('capped', models.BooleanField(default=False)),
                ('delta', models.FloatField(blank=True, null=True)),
                ('lam', models.FloatField(blank=True, null=True)),
                ('frequencies', models.CharField(blank=True, max_length=255)),
                ('rho', models.FloatField()),
                ('defect', models.FloatField()),
                ('target_defect', models.FloatField()),
                ('step_c0', models.FloatField(default=0.0)),
                ('step_c1', models.FloatField(default=0.0)),
                ('step_c2', models.FloatField(default=0.0)),
                ('cauchy', models.JSONField(blank=True, default=dict)),
                ('injectivity', models.FloatField()),
                ('identity_residual', models.FloatField()),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='iterates', to='engine.runrecord')),
            ],
            options={
                'db_table': 'tbliterates',
                'ordering': ['run', 'q'],
                'managed': True,
                'constraints': [models.UniqueConstraint(fields=('run', 'q'), name='unique_iterate_per_run')],
            },
        ),
    ]
