from django.apps import AppConfig


class CliConfig(AppConfig):
    name = "cli"
    label = "cli"
    verbose_name = "Command-line pipeline"
