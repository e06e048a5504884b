"""
    App configurations in splitfix app.
"""

import logging

from django.apps import AppConfig
from django.conf import settings


class SplitfixConfig(AppConfig):
    """ Class representing the splitfix application and its configuration. """

    name = "splitfix"
    verbose_name = "Splitfix"

    def ready(self) -> None:
        """
            Logs the toolkit version once the app registry is populated, so
            every stage log starts with the version that produced it.
        """

        logging.debug(f"splitfix {settings.VERSION} ready (default run configuration: {settings.SPLITFIX_DEFAULT_CONFIG})")
