from django.contrib import admin
from .models import CalibrationConstant, IterateRecord, RunRecord


class IterateInline(admin.TabularInline):
    model = IterateRecord
    extra = 0
    fields = ("q", "active", "capped", "lam", "frequencies", "rho", "defect", "target_defect", "injectivity")
    readonly_fields = fields


@admin.register(RunRecord)
class RunRecordAdmin(admin.ModelAdmin):
    list_display = ("id", "n", "resolution", "status", "final_defect", "cap_reached", "created_at")
    list_filter = ("status", "n", "cap_reached", "created_at")
    search_fields = ("output_dir", "error")
    inlines = [IterateInline]


@admin.register(IterateRecord)
class IterateRecordAdmin(admin.ModelAdmin):
    list_display = ("run", "q", "active", "capped", "lam", "defect", "target_defect", "injectivity")
    list_filter = ("active", "capped")
    search_fields = ("=run__id",)


@admin.register(CalibrationConstant)
class CalibrationConstantAdmin(admin.ModelAdmin):
    list_display = ("name", "value", "updated_at")
    search_fields = ("name", "note")
