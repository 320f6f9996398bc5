#!/usr/bin/env python
"""Command-line entry point for the verification pipelines."""
import os


def main():
    """Run one pipeline subcommand."""
    os.environ.setdefault("LANDAU_SETTINGS_MODULE", "config.settings.local")
    try:
        from core_apps.cli_io.commands import main as run
    except ImportError as exc:
        raise ImportError(
            "Couldn't import the toolkit. Are numpy, scipy and click installed and "
            "available on your PYTHONPATH environment variable? Did you "
            "forget to activate a virtual environment?"
        ) from exc
    run()


if __name__ == "__main__":
    main()
