from django.apps import AppConfig


class TaskforgeConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'taskforge'
