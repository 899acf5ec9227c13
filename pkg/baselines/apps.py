from django.apps import AppConfig


class BaselinesConfig(AppConfig):
    name = "baselines"
    label = "baselines"
    verbose_name = "Non-neural baselines"
