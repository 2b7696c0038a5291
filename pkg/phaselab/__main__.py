"""Permite ejecutar ``python -m phaselab``."""

from phaselab.cli import app

if __name__ == "__main__":  # pragma: no cover - manual execution
    app()
