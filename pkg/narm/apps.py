from django.apps import AppConfig


class NarmConfig(AppConfig):
    name = "narm"
    label = "narm"
    verbose_name = "Attentive session recommender"
