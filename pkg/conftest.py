import os

import django

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "narmrec.settings")
django.setup()
