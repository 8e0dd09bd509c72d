from django.contrib import admin
from .models import SeparationRun


@admin.register(SeparationRun)
class SeparationRunAdmin(admin.ModelAdmin):
    list_display = ('created_at', 'cost_case', 'n_channels', 'n_samples', 'converged', 'iterations', 'convergence_order')
    list_filter = ('cost_case', 'converged')
    readonly_fields = ('id', 'created_at', 'data_checksum', 'manifest', 'unmixing')
