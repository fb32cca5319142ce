from django.contrib import admin
from .models import ExperimentRun


class ExperimentRunAdmin(admin.ModelAdmin):
    list_display = ('config_name', 'kind', 'dynamics', 'seed', 'rounds', 'audited_loss', 'target', 'passed', 'created_at')
    list_filter = ('kind', 'dynamics', 'passed', 'batch')
    search_fields = ('config_name', 'batch')
    readonly_fields = ('created_at', 'summary')


admin.site.register(ExperimentRun, ExperimentRunAdmin)

# Admin Site Customization
admin.site.site_header = "Calibration Lab Administration"
admin.site.site_title = "Calibration Lab Admin"
admin.site.index_title = "Recorded experiment runs"
