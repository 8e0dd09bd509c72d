# Generated by Django 5.2.7 on 2026-10-17 09:12

import uuid
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='SeparationRun',
            fields=[
                ('id', models.UUIDField(default=uuid.uuid4, editable=False, primary_key=True, serialize=False)),
                ('created_at', models.DateTimeField(auto_now_add=True, db_index=True)),
                ('cost_case', models.CharField(choices=[('case1', 'Sum of kurtoses'), ('case2', 'Sum of squared excess kurtoses')], default='case1', max_length=5)),
                ('n_channels', models.PositiveIntegerField()),
                ('n_samples', models.PositiveIntegerField()),
                ('converged', models.BooleanField(default=False)),
                ('iterations', models.PositiveIntegerField(default=0)),
                ('final_delta_norm', models.FloatField(blank=True, null=True)),
                ('final_cost', models.FloatField(blank=True, null=True)),
                ('convergence_order', models.FloatField(blank=True, null=True)),
                ('data_checksum', models.CharField(max_length=80)),
                ('manifest', models.JSONField(blank=True, default=dict)),
                ('unmixing', models.JSONField(default=list)),
                ('error', models.TextField(blank=True, default='')),
            ],
            options={
                'ordering': ['-created_at'],
            },
        ),
    ]
