# Corrugate/urls.py
from django.contrib import admin
from django.urls import path, include

urlpatterns = [
    path('admin/', admin.site.urls),

    # 📦 Run ledger and calibration, as JSON
    path('engine/', include('apps.engine.urls')),
]
