#!/usr/bin/env python
"""Django's command-line utility for running the splitfix pipeline stages."""
import os
import sys


def main():
    """Run pipeline stages & administrative tasks."""
    os.environ.setdefault("DJANGO_SETTINGS_MODULE", "core.settings")

    if "--deterministic" in sys.argv:
        # NOTE: BLAS thread pools must be pinned before numpy is first imported
        for thread_variable in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[thread_variable] = "1"

    try:
        from django.core.management import execute_from_command_line
    except ImportError as exc:
        raise ImportError(
            "Couldn't import Django. Are you sure it's installed and "
            "available on your PYTHONPATH environment variable? Did you "
            "forget to activate a virtual environment?"
        ) from exc
    execute_from_command_line(sys.argv)


if __name__ == "__main__":
    main()
