from django.apps import AppConfig


class DecomposeConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.decompose'
