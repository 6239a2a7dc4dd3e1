from django.http import JsonResponse
from django.views.decorators.http import require_GET

from .models import CalibrationConstant, RunRecord


# 🔹 All runs, newest first
@require_GET
def run_list(request):
    runs = RunRecord.objects.all()
    status = request.GET.get("status")
    if status:
        runs = runs.filter(status=status)
    return JsonResponse({"runs": [run.as_dict() for run in runs]})


# 🔹 One run with its manifest and iterates
@require_GET
def run_detail(request, run_id):
    try:
        run = RunRecord.objects.get(pk=run_id)
    except RunRecord.DoesNotExist:
        return JsonResponse({"error": "Run not found"}, status=404)

    data = run.as_dict()
    data["config"] = run.config
    data["manifest"] = run.manifest
    data["iterates"] = [iterate.as_dict() for iterate in run.iterates.all()]
    return JsonResponse(data)


# 🔹 Calibrated constants
@require_GET
def calibration_list(request):
    constants = [
        {"name": c.name, "value": c.value, "note": c.note, "updated_at": c.updated_at.isoformat()}
        for c in CalibrationConstant.objects.all()
    ]
    return JsonResponse({"constants": constants})
