"""
Django models for the separation engine.

Only one thing is persisted: the history of separation runs started through the
API or through `manage.py separate --record`. The numerical engine itself never
touches the database.

Models:
    SeparationRun: one finished run with its resolved configuration, outcome and
        recovered unmixing matrix

Notes:
    - Timestamps are timezone-aware (USE_TZ=True)
    - Matrices are stored as JSON nested lists in row-major order
    - `manifest` holds the full RunManifest dump, so a run can be reproduced from
      the database alone
"""
import uuid

import numpy as np
from django.db import models


class SeparationRun(models.Model):
    """
    Recorded outcome of one separation run.

    Attributes:
        id (UUID): Primary key, auto-generated UUID
        created_at (datetime): Recording timestamp (timezone-aware, auto-set, indexed)
        cost_case (str): CASE1 (Σκ) or CASE2 (Σ(κ−3)²)
        n_channels (int): N
        n_samples (int): S
        converged (bool): ‖Δ‖ dropped below tol_delta within the iteration budget
        iterations (int): Newton and fallback iterations (warm start excluded)
        final_delta_norm (float): ‖Δ‖_F of the last step (nullable)
        final_cost (float): cost at the last evaluated iterate (nullable)
        convergence_order (float): fitted order, null when not estimable
        data_checksum (str): "sha256:..." of the input data
        manifest (dict): RunManifest dump
        unmixing (list): final C as nested lists
        error (str): failure message of a run that did not converge (blank otherwise)
    """

    class CostCase(models.TextChoices):
        CASE1 = 'case1', 'Sum of kurtoses'
        CASE2 = 'case2', 'Sum of squared excess kurtoses'

    id = models.UUIDField(primary_key=True, default=uuid.uuid4, editable=False)
    created_at = models.DateTimeField(auto_now_add=True, db_index=True)
    cost_case = models.CharField(max_length=5, choices=CostCase.choices, default=CostCase.CASE1)
    n_channels = models.PositiveIntegerField()
    n_samples = models.PositiveIntegerField()
    converged = models.BooleanField(default=False)
    iterations = models.PositiveIntegerField(default=0)
    final_delta_norm = models.FloatField(null=True, blank=True)
    final_cost = models.FloatField(null=True, blank=True)
    convergence_order = models.FloatField(null=True, blank=True)
    data_checksum = models.CharField(max_length=80)
    manifest = models.JSONField(default=dict, blank=True)
    unmixing = models.JSONField(default=list)
    error = models.TextField(blank=True, default='')

    class Meta:
        ordering = ['-created_at']

    def __str__(self):
        status = "converged" if self.converged else "not converged"
        return f"{self.cost_case} {self.n_channels}x{self.n_samples} ({status}, {self.iterations} it)"

    @property
    def unmixing_matrix(self) -> np.ndarray:
        return np.array(self.unmixing, dtype=float)
