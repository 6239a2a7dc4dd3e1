from django.db import models, transaction
from django.utils import timezone

from utils.artifacts import to_plain


class RunRecord(models.Model):
    STATUS_CHOICES = [
        ("running", "Running"),
        ("completed", "Completed"),
        ("failed", "Failed"),
    ]

    created_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(null=True, blank=True)
    status = models.CharField(max_length=20, choices=STATUS_CHOICES, default="running")
    n = models.PositiveSmallIntegerField()
    resolution = models.PositiveIntegerField()
    config = models.JSONField(default=dict)
    manifest = models.JSONField(default=dict, blank=True)
    output_dir = models.CharField(max_length=500, blank=True)
    final_defect = models.FloatField(null=True, blank=True)
    cap_reached = models.BooleanField(default=False)
    error = models.TextField(blank=True)

    class Meta:
        db_table = 'tblruns'
        managed = True
        ordering = ['-created_at']

    def __str__(self):
        return f"run {self.pk} (n={self.n}, R={self.resolution}, {self.status})"

    @classmethod
    def start(cls, config):
        """A running record for a RunConfig, before any numerics happen."""
        return cls.objects.create(
            n=config.n, resolution=config.resolution, config=to_plain(config.as_dict()),
            output_dir=config.output_dir or "",
        )

    @transaction.atomic
    def finish(self, artifacts):
        """Store the manifest and one IterateRecord per iterate of a finished or halted run."""
        self.status = artifacts.status
        self.finished_at = timezone.now()
        self.manifest = to_plain(artifacts.manifest)
        self.final_defect = artifacts.manifest.get("final_defect")
        self.cap_reached = artifacts.cap_reached
        self.error = artifacts.error or ""
        if artifacts.paths:
            self.output_dir = str(artifacts.paths["manifest"].parent)
        self.save()
        self.iterates.all().delete()
        IterateRecord.objects.bulk_create(
            [IterateRecord.from_result(self, result) for result in artifacts.iterates]
        )
        return self

    def fail(self, message):
        self.status = "failed"
        self.finished_at = timezone.now()
        self.error = message
        self.save(update_fields=["status", "finished_at", "error"])

    def as_dict(self):
        return {
            "id": self.pk,
            "status": self.status,
            "n": self.n,
            "resolution": self.resolution,
            "created_at": self.created_at.isoformat(),
            "finished_at": self.finished_at.isoformat() if self.finished_at else None,
            "final_defect": self.final_defect,
            "cap_reached": self.cap_reached,
            "output_dir": self.output_dir,
            "error": self.error,
        }


class IterateRecord(models.Model):
    run = models.ForeignKey(RunRecord, on_delete=models.CASCADE, related_name="iterates")
    q = models.PositiveIntegerField()
    active = models.BooleanField(default=False)
    capped = models.BooleanField(default=False)
    delta = models.FloatField(null=True, blank=True)
    lam = models.FloatField(null=True, blank=True)
    frequencies = models.CharField(max_length=255, blank=True)
    rho = models.FloatField()
    defect = models.FloatField()
    target_defect = models.FloatField()
    step_c0 = models.FloatField(default=0.0)
    step_c1 = models.FloatField(default=0.0)
    step_c2 = models.FloatField(default=0.0)
    cauchy = models.JSONField(default=dict, blank=True)
    injectivity = models.FloatField()
    identity_residual = models.FloatField()

    class Meta:
        db_table = 'tbliterates'
        managed = True
        ordering = ['run', 'q']
        constraints = [
            models.UniqueConstraint(fields=['run', 'q'], name='unique_iterate_per_run'),
        ]

    def __str__(self):
        return f"run {self.run_id} iterate {self.q}"

    @classmethod
    def from_result(cls, run, result):
        c0, c1, c2 = result.step_norms
        return cls(
            run=run,
            q=result.q,
            active=result.active,
            capped=result.capped,
            delta=result.delta,
            lam=result.lam,
            frequencies=" ".join(str(mu) for mu in result.frequencies),
            rho=result.rho,
            defect=result.defect,
            target_defect=result.target_defect,
            step_c0=c0,
            step_c1=c1,
            step_c2=c2,
            cauchy=to_plain({str(exponent): list(pair) for exponent, pair in result.cauchy.items()}),
            injectivity=result.injectivity,
            identity_residual=result.identity_residual,
        )

    def as_dict(self):
        return {
            "q": self.q,
            "active": self.active,
            "capped": self.capped,
            "delta": self.delta,
            "lam": self.lam,
            "frequencies": [int(mu) for mu in self.frequencies.split()],
            "rho": self.rho,
            "defect": self.defect,
            "target_defect": self.target_defect,
            "step_norms": [self.step_c0, self.step_c1, self.step_c2],
            "cauchy": self.cauchy,
            "injectivity": self.injectivity,
            "identity_residual": self.identity_residual,
        }


class CalibrationConstant(models.Model):
    name = models.CharField(max_length=100, unique=True)
    value = models.FloatField(null=True, blank=True)
    note = models.TextField(blank=True)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        db_table = 'tblcalibration'
        managed = True
        ordering = ['name']

    def __str__(self):
        return f"{self.name} = {self.value}"

    @staticmethod
    def store(constants, notes=None):
        """Upsert one row per measured constant."""
        notes = notes or {}
        for name, value in constants.items():
            CalibrationConstant.objects.update_or_create(
                name=name, defaults={"value": value, "note": notes.get(name, "")}
            )
