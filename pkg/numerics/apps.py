from django.apps import AppConfig


class NumericsConfig(AppConfig):
    name = "numerics"
    label = "numerics"
    verbose_name = "Numeric kernels"
