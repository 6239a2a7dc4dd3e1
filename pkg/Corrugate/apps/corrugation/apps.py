from django.apps import AppConfig


class CorrugationConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.corrugation'
