from django.conf import settings
from django.core.exceptions import ImproperlyConfigured


def get_setting(name, default=None):
    """Return one entry of ``settings.CORRUGATE``."""
    corrugate = getattr(settings, "CORRUGATE", {})
    if name in corrugate:
        return corrugate[name]
    if default is not None:
        return default
    raise ImproperlyConfigured(f"⚠️ CORRUGATE['{name}'] must be set in your settings or .env file.")
