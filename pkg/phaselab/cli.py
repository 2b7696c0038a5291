"""Línea de órdenes ``phaselab``: un subcomando por experimento."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Annotated, Optional

import typer

from phaselab import __version__
from phaselab.config import Config
from phaselab.errors import (
    ConfigError,
    LambdaAboveThreshold,
    NoConvergence,
    NotHyperbolic,
    OutOfDomain,
    PhaselabError,
)
from phaselab.services.experiment import load_config, run_experiment

LOGGER = logging.getLogger(__name__)

EXIT_CONFIG = 2
EXIT_NO_CONVERGENCE = 3
EXIT_MISSING_INPUT = 4
EXIT_NOT_HYPERBOLIC = 5
EXIT_LAMBDA = 6

app = typer.Typer(
    name="phaselab",
    help="Laboratorio numérico para el sistema de Allen–Cahn vectorial.",
    add_completion=False,
)

ConfigPath = Annotated[Path, typer.Argument(help="Archivo de experimento clave = valor")]
OutputDir = Annotated[
    Optional[Path], typer.Option("--output", "-o", help="Directorio de salida (sustituye a 'output')")
]


def exit_code_for(exc: BaseException) -> int:
    """Código de salida asociado a cada familia de error."""

    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, NoConvergence):
        return EXIT_NO_CONVERGENCE
    if isinstance(exc, (FileNotFoundError, OutOfDomain)):
        return EXIT_MISSING_INPUT
    if isinstance(exc, NotHyperbolic):
        return EXIT_NOT_HYPERBOLIC
    if isinstance(exc, LambdaAboveThreshold):
        return EXIT_LAMBDA
    return 1


@app.callback()
def main(
    ctx: typer.Context,
    threads: Annotated[
        Optional[int],
        typer.Option("--threads", envvar="PHASELAB_THREADS", help="Hilos de trabajo"),
    ] = None,
    deterministic: Annotated[
        Optional[bool],
        typer.Option("--deterministic/--no-deterministic", help="Reducciones en orden fijo"),
    ] = None,
    verbose: Annotated[bool, typer.Option("--verbose", "-v", help="Registro en nivel DEBUG")] = False,
) -> None:
    """Ejecuta experimentos reproducibles: solve, measure, connect, cyl, link, hypcheck."""

    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO)
    config = Config()
    ctx.obj = {
        "threads": max(1, threads) if threads is not None else config.threads,
        "deterministic": config.deterministic if deterministic is None else deterministic,
    }


def _execute(ctx: typer.Context, command: str, config_path: Path, output: Optional[Path]) -> None:
    options = ctx.obj or {"threads": 1, "deterministic": True}
    try:
        experiment = load_config(config_path)
        manifest = run_experiment(
            command,
            experiment,
            threads=options["threads"],
            deterministic=options["deterministic"],
            version=__version__,
            output_dir=output,
        )
    except (PhaselabError, FileNotFoundError, ValueError) as exc:
        code = exit_code_for(exc)
        LOGGER.error("El comando '%s' falló (código %d): %s", command, code, exc)
        typer.echo(f"error: {exc}", err=True)
        raise typer.Exit(code) from exc
    typer.echo(f"{command}: {len(manifest.outputs)} archivos, hash {manifest.config_hash[:12]}")


@app.command()
def solve(ctx: typer.Context, config_path: ConfigPath, output: OutputDir = None) -> None:
    """Descenso de gradiente hasta un punto crítico (instantánea + historial)."""

    _execute(ctx, "solve", config_path, output)


@app.command()
def measure(ctx: typer.Context, config_path: ConfigPath, output: OutputDir = None) -> None:
    """Estimaciones de densidad, ajustes de exponentes y esquemas en diferencias."""

    _execute(ctx, "measure", config_path, output)


@app.command()
def connect(ctx: typer.Context, config_path: ConfigPath, output: OutputDir = None) -> None:
    """Conexión heteroclínica, hiperbolicidad y λ*."""

    _execute(ctx, "connect", config_path, output)


@app.command()
def cyl(ctx: typer.Context, config_path: ConfigPath, output: OutputDir = None) -> None:
    """Densidad en el cilindro respecto de una conexión; exige λ < λ*."""

    _execute(ctx, "cyl", config_path, output)


@app.command()
def link(ctx: typer.Context, config_path: ConfigPath, output: OutputDir = None) -> None:
    """Continuación en ε en el disco y distancia a la partición mínima."""

    _execute(ctx, "link", config_path, output)


@app.command()
def hypcheck(ctx: typer.Context, config_path: ConfigPath, output: OutputDir = None) -> None:
    """Muestreo de las hipótesis estructurales del potencial."""

    _execute(ctx, "hypcheck", config_path, output)


if __name__ == "__main__":  # pragma: no cover - manual execution
    app()
