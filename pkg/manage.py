#!/usr/bin/env python
"""Command-line entry point: ``python manage.py bound --predictions ...``."""

from ensemble_bound.cli import app

if __name__ == "__main__":
    app()
