from django.contrib import admin
from django.urls import path
from .router import api

# Create your urls here.

urlpatterns = [
    path('admin/', admin.site.urls),
    path('api/', api.urls),
]
