"""Experimentos reproducibles descritos por archivos ``clave = valor``.

Cada comando de la línea de órdenes lee un :class:`ExperimentConfig`, construye
potencial, malla y dato de borde, ejecuta el servicio numérico correspondiente
y deja en el directorio de salida los informes, el ``resolved.cfg`` con todos
los valores por omisión y un ``manifest.json`` con el hash de la configuración.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field as ModelField, ValidationError, field_validator, model_validator

from phaselab.config import Config
from phaselab.errors import (
    CheckFailed,
    ConfigError,
    DegenerateWindow,
    EmptyLevelSet,
    LambdaAboveThreshold,
    NoConvergence,
    NoDecayWindow,
    NotHyperbolic,
)
from phaselab.services import connection1d, density, linking, minimizer
from phaselab.services.grid_field import (
    BoundaryData,
    Field,
    Grid,
    RegionMask,
    arc_data,
    box_mask,
    constant_data,
    disk_mask,
    energy,
    make_field,
    profile_data,
    residual,
)
from phaselab.services.polar import cylinder_constants
from phaselab.services.potentials import PotentialSpec, check_hypotheses, from_name, geodesic_table
from phaselab.services.snapshot import load_field, save_field

LOGGER = logging.getLogger(__name__)

COMMANDS = ("solve", "measure", "connect", "cyl", "link", "hypcheck")


# ----------------------------------------------------------------------
# Lectura de valores
# ----------------------------------------------------------------------
def _clean(text: str) -> str:
    return text.replace("−", "-").strip()


def _numbers(text: str) -> List[float]:
    return [float(part) for part in _clean(text).split(",") if part.strip()]


def _parse_range(text: str) -> List[float]:
    """``inicio:fin:paso`` (fin incluido) o lista separada por comas."""

    raw = _clean(text)
    if ":" not in raw:
        return _numbers(raw)
    parts = [float(p) for p in raw.split(":")]
    if len(parts) != 3:
        raise ValueError(f"Rango mal formado '{text}': se espera inicio:fin:paso.")
    start, stop, step = parts
    if not step > 0 or stop < start:
        raise ValueError(f"Rango vacío o con paso no positivo: '{text}'.")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [start + k * step for k in range(count)]


def _parse_rows(text: str) -> List[List[float]]:
    return [_numbers(row) for row in _clean(text).split(";") if row.strip()]


def _format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        if value and isinstance(value[0], (list, tuple)):
            return "; ".join(_format_value(list(row)) for row in value)
        return ",".join(_format_value(item) for item in value)
    return str(value)


# ----------------------------------------------------------------------
# Modelo de configuración
# ----------------------------------------------------------------------
class ExperimentConfig(BaseModel):
    """Parámetros de un experimento; las claves desconocidas se rechazan."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True, frozen=True)

    # Potencial
    potential: str = ModelField("twowell", description="twowell, product o twopath")
    wells: Optional[List[List[float]]] = ModelField(None, description="Pozos 'x,y; x,y' para product")
    alpha: float = ModelField(2.0, description="Exponente de los pozos (1 ≤ α ≤ 2)")
    scale: Optional[float] = None
    path_gamma: float = 0.9
    path_mu: float = 0.1

    # Reproducibilidad y salida
    seed: int = 0
    output: Optional[str] = ModelField(None, description="Directorio de salida")

    # Malla y dominio
    shape: List[int] = ModelField(default_factory=lambda: [41, 41])
    spacing: float = 0.1
    domain: Literal["box", "disk"] = "box"
    radius: Optional[float] = ModelField(None, description="Radio del disco (por omisión el mayor que cabe)")

    # Dato de borde y dato inicial
    bc: Literal["constant", "profile", "arcs", "perturbed"] = "constant"
    bc_well: int = 0
    bc_wells: List[int] = ModelField(default_factory=lambda: [0, 1])
    bc_width: float = 1.0
    bc_axis: int = 1
    theta1: float = math.pi / 6.0
    theta2: float = 5.0 * math.pi / 6.0
    bc_delta: float = 0.1
    initial: Literal["harmonic", "well", "profile"] = "harmonic"
    noise: float = 0.0

    # Descenso
    dt0: Optional[float] = None
    dt_rule: Literal["fixed", "adaptive"] = "adaptive"
    tol: float = 1e-8
    max_iters: int = 200_000
    log_every: int = 100
    eps: float = 1.0
    symmetric: bool = False
    starts: int = 1
    audit_trials: int = 0

    # Medidas de densidad
    snapshot: Optional[str] = ModelField(None, alias="field", description="Instantánea .fld a medir")
    well: int = 0
    lam: Optional[float] = ModelField(None, alias="lambda")
    lambda_star: Optional[float] = None
    radii: Optional[List[float]] = None
    center: Optional[List[float]] = None
    shell_width: Optional[float] = None
    scheme_T: Optional[float] = None
    scheme_c2: Optional[float] = None
    probes: List[Literal["liouville", "decay", "lower_bound"]] = ModelField(
        default_factory=lambda: ["lower_bound"]
    )

    # Conexiones
    L: float = 10.0
    N: int = 2001
    branch: float = 0.0
    connect_tol: float = 1e-9
    directions: int = 16
    qbar_scan: Optional[List[float]] = None

    # Cilindro
    connect_report: Optional[str] = ModelField(None, description="wqq.json de un 'connect' previo")
    y_nodes: int = 41
    relax: bool = True

    # Enlace y explosión
    eps_schedule: List[float] = ModelField(default_factory=lambda: [0.2, 0.1, 0.05])
    level: Optional[float] = None
    margin: float = 0.0
    blowup_radii: Optional[List[float]] = None

    # Hipótesis del potencial
    box: Optional[List[List[float]]] = None
    samples: int = 2000
    rays: int = 64
    rho0: Optional[float] = None
    geodesic_resolution: Optional[float] = None

    @model_validator(mode="before")
    @classmethod
    def _blank_is_none(cls, data: Any) -> Any:
        if isinstance(data, dict):
            return {key: (None if isinstance(value, str) and not value.strip() else value) for key, value in data.items()}
        return data

    @field_validator("wells", "box", mode="before")
    @classmethod
    def _split_rows(cls, value: Any) -> Any:
        return _parse_rows(value) if isinstance(value, str) else value

    @field_validator("shape", "bc_wells", mode="before")
    @classmethod
    def _parse_ints(cls, value: Any) -> Any:
        if isinstance(value, str):
            numbers = _numbers(value)
            if any(not float(x).is_integer() for x in numbers):
                raise ValueError(f"Se esperaban enteros: '{value}'.")
            return [int(x) for x in numbers]
        return value

    @field_validator("radii", "qbar_scan", "blowup_radii", mode="before")
    @classmethod
    def _parse_ranges(cls, value: Any) -> Any:
        return _parse_range(value) if isinstance(value, str) else value

    @field_validator("center", "eps_schedule", mode="before")
    @classmethod
    def _parse_lists(cls, value: Any) -> Any:
        return _numbers(value) if isinstance(value, str) else value

    @field_validator("probes", mode="before")
    @classmethod
    def _parse_names(cls, value: Any) -> Any:
        if value is None:
            return []
        if isinstance(value, str):
            return [part.strip().lower() for part in value.split(",") if part.strip()]
        return value

    @field_validator("alpha", "spacing", "eps", "tol", "L", "bc_width", "connect_tol", mode="before")
    @classmethod
    def _unicode_minus(cls, value: Any) -> Any:
        return _clean(value) if isinstance(value, str) else value

    @model_validator(mode="after")
    def _check_consistency(self) -> "ExperimentConfig":
        if not 1 <= len(self.shape) <= 3:
            raise ValueError("shape debe tener entre 1 y 3 ejes.")
        if not 1.0 <= self.alpha <= 2.0:
            raise ValueError("alpha debe estar en [1, 2].")
        if not 0 <= self.bc_axis < len(self.shape):
            raise ValueError("bc_axis no corresponde a un eje de la malla.")
        if len(self.bc_wells) != 2:
            raise ValueError("bc_wells necesita exactamente dos índices.")
        if self.bc == "arcs" and len(self.shape) != 2:
            raise ValueError("El dato de dos arcos sólo existe en mallas bidimensionales.")
        if self.N % 2 == 0:
            raise ValueError("N debe ser impar para contener el nodo s = 0.")
        if self.starts < 1:
            raise ValueError("starts debe ser al menos 1.")
        return self

    # ------------------------------------------------------------------
    @classmethod
    def from_entries(cls, entries: Dict[str, str]) -> "ExperimentConfig":
        try:
            return cls.model_validate(entries)
        except ValidationError as exc:
            error = exc.errors()[0]
            key = str(error["loc"][0]) if error.get("loc") else None
            if error.get("type") == "extra_forbidden":
                message = f"Clave desconocida '{key}'."
            elif key is not None:
                message = f"Valor inválido para '{key}': {error['msg']}."
            else:
                message = f"Configuración inconsistente: {error['msg']}."
            raise ConfigError(message, key=key) from exc

    def resolved_text(self) -> str:
        """Todas las claves en orden canónico, con los valores por omisión completados."""

        values = self.model_dump(by_alias=True)
        lines = [f"{name} = {_format_value(values[name])}".rstrip() for name in values]
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.resolved_text().encode("utf-8")).hexdigest()

    def output_dir(self, command: str, config: Optional[Config] = None) -> Path:
        if self.output:
            return Path(self.output)
        return Path((config or Config()).OUTPUT_DIR) / command


def parse_config_text(text: str) -> ExperimentConfig:
    """Una asignación por línea; ``#`` inicia un comentario."""

    entries: Dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"Línea {number} sin '=': {raw.strip()!r}.", key=line.split()[0])
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"Línea {number} sin nombre de clave.")
        if key in entries:
            raise ConfigError(f"Clave duplicada '{key}' en la línea {number}.", key=key)
        entries[key] = value
    return ExperimentConfig.from_entries(entries)


def load_config(path: Path | str) -> ExperimentConfig:
    source = Path(path)
    try:
        text = source.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ConfigError(f"No existe el archivo de experimento {source}.") from exc
    return parse_config_text(text)


# ----------------------------------------------------------------------
# Manifiesto y escritura de informes
# ----------------------------------------------------------------------
@dataclass
class RunManifest:
    """Huella de una ejecución: basta para repetirla."""

    command: str
    config_hash: str
    version: str
    seed: int
    threads: int
    deterministic: bool
    inputs: List[str] = field(default_factory=list)
    outputs: List[str] = field(default_factory=list)
    wall_time: float = 0.0

    def to_payload(self) -> Dict[str, object]:
        return {
            "command": self.command,
            "config_hash": self.config_hash,
            "version": self.version,
            "seed": self.seed,
            "threads": self.threads,
            "deterministic": self.deterministic,
            "inputs": list(self.inputs),
            "outputs": list(self.outputs),
            "wall_time": self.wall_time,
        }


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Tipo no serializable: {type(value).__name__}")


def write_json(path: Path, payload: Dict[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n", encoding="utf-8")
    return path


def write_frame(path: Path, frame: pd.DataFrame) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


# ----------------------------------------------------------------------
# Construcción desde la configuración
# ----------------------------------------------------------------------
def build_potential(cfg: ExperimentConfig) -> PotentialSpec:
    try:
        return from_name(
            cfg.potential,
            wells=cfg.wells,
            alpha=cfg.alpha,
            scale=cfg.scale,
            gamma=cfg.path_gamma,
            mu=cfg.path_mu,
        )
    except ValueError as exc:
        raise ConfigError(str(exc), key="potential") from exc


def build_grid(cfg: ExperimentConfig) -> Grid:
    return Grid.centered(cfg.shape, cfg.spacing)


def build_mask(cfg: ExperimentConfig, grid: Grid) -> np.ndarray:
    if cfg.domain == "box":
        return box_mask(grid)
    room = min(0.5 * (s - 1) * grid.spacing for s in grid.shape) - 1.5 * grid.spacing
    radius = cfg.radius if cfg.radius is not None else room
    if not 0 < radius <= room + 1e-12:
        raise ConfigError(f"El radio {radius:g} no cabe en la malla (máximo {room:g}).", key="radius")
    return disk_mask(grid, (0.0,) * grid.n, radius)


def _well(spec: PotentialSpec, index: int, key: str) -> np.ndarray:
    try:
        return spec.well(index)
    except (IndexError, ValueError) as exc:
        raise ConfigError(f"El potencial no tiene el pozo {index}.", key=key) from exc


def build_boundary(cfg: ExperimentConfig, spec: PotentialSpec) -> BoundaryData:
    if cfg.bc == "constant":
        return constant_data(_well(spec, cfg.bc_well, "bc_well"))
    low = _well(spec, cfg.bc_wells[0], "bc_wells")
    high = _well(spec, cfg.bc_wells[1], "bc_wells")
    if cfg.bc == "profile":
        return profile_data(low, high, cfg.bc_width, axis=cfg.bc_axis)
    if cfg.bc == "arcs":
        return arc_data((0.0, 0.0), cfg.theta1, cfg.theta2, inside=high, outside=low)
    # Pared inferior del eje bc_axis desplazada en δ: el resto del borde queda en el pozo
    base = _well(spec, cfg.bc_well, "bc_well")
    lower = -0.5 * (cfg.shape[cfg.bc_axis] - 1) * cfg.spacing
    shift = np.zeros(spec.m)
    shift[0] = cfg.bc_delta

    def _data(coords: np.ndarray) -> np.ndarray:
        wall = np.isclose(coords[..., cfg.bc_axis], lower)
        return np.where(wall[..., None], base + shift, base)

    return _data


def build_field(cfg: ExperimentConfig, spec: PotentialSpec) -> Field:
    grid = build_grid(cfg)
    nodes = int(np.prod(grid.shape))
    limit = Config().MAX_GRID_NODES
    if nodes > limit:
        raise ConfigError(f"La malla tiene {nodes} nodos, más que el máximo {limit}.", key="shape")
    mask = build_mask(cfg, grid)
    boundary = build_boundary(cfg, spec)
    if cfg.initial == "well":
        start: Any = _well(spec, cfg.bc_well, "bc_well")
    elif cfg.initial == "profile":
        start = profile_data(
            _well(spec, cfg.bc_wells[0], "bc_wells"),
            _well(spec, cfg.bc_wells[1], "bc_wells"),
            cfg.bc_width,
            axis=cfg.bc_axis,
        )
    else:
        start = _well(spec, cfg.bc_well, "bc_well")
    f = make_field(grid, mask, spec.m, start, boundary)
    if cfg.initial == "harmonic":
        f = linking.harmonic_extension(f)
    return f


def build_schedule(cfg: ExperimentConfig) -> minimizer.DescentSchedule:
    try:
        return minimizer.DescentSchedule(
            dt0=cfg.dt0,
            dt_rule=cfg.dt_rule,
            tol=cfg.tol,
            max_iters=cfg.max_iters,
            seed=cfg.seed,
            log_every=cfg.log_every,
        )
    except ValueError as exc:
        raise ConfigError(str(exc), key="dt0") from exc


def _default_radii(grid: Grid, center: np.ndarray, count: int = 8) -> List[float]:
    room = float(np.min(np.minimum(center - np.asarray(grid.origin), np.asarray(grid.upper) - center)))
    step = room / count
    return [step * (k + 1) for k in range(count)]


def _lambda(cfg: ExperimentConfig, spec: PotentialSpec) -> float:
    return cfg.lam if cfg.lam is not None else 0.5 * spec.well_separation()


def _fit_or_none(values: Sequence[float], radii: Sequence[float]) -> Optional[Dict[str, object]]:
    try:
        return density.fit_exponent(values, radii).to_payload()
    except DegenerateWindow as exc:
        LOGGER.warning("Ajuste omitido: %s", exc)
        return None


# ----------------------------------------------------------------------
# Ejecución de comandos
# ----------------------------------------------------------------------
@dataclass
class ExperimentRunner:
    """Ejecuta un comando sobre una configuración y deja sus artefactos en disco."""

    config: ExperimentConfig
    threads: int = 1
    deterministic: bool = True
    version: str = "0.0.0"
    output_dir: Optional[Path] = None
    _inputs: List[str] = field(default_factory=list, init=False, repr=False)
    _outputs: List[str] = field(default_factory=list, init=False, repr=False)

    def __post_init__(self) -> None:
        self.threads = max(1, int(self.threads))

    # --------------------------------------------------------------
    def run(self, command: str) -> RunManifest:
        """Despacha ``command`` y escribe ``resolved.cfg`` y ``manifest.json``."""

        if command not in COMMANDS:
            raise ConfigError(f"Comando desconocido '{command}'.")
        target = self.output_dir or self.config.output_dir(command)
        target.mkdir(parents=True, exist_ok=True)
        self.output_dir = target
        self._inputs, self._outputs = [], []
        self._emit_text("resolved.cfg", self.config.resolved_text())
        started = time.perf_counter()
        LOGGER.info("Comando '%s' con configuración %s", command, self.config.digest()[:12])
        getattr(self, command)()
        manifest = RunManifest(
            command=command,
            config_hash=self.config.digest(),
            version=self.version,
            seed=self.config.seed,
            threads=self.threads,
            deterministic=self.deterministic,
            inputs=list(self._inputs),
            outputs=list(self._outputs),
            wall_time=time.perf_counter() - started,
        )
        write_json(target / "manifest.json", manifest.to_payload())
        LOGGER.info("Comando '%s' terminado en %.2f s", command, manifest.wall_time)
        return manifest

    def _path(self, name: str) -> Path:
        assert self.output_dir is not None
        self._outputs.append(name)
        return self.output_dir / name

    def _emit_text(self, name: str, text: str) -> None:
        self._path(name).write_text(text, encoding="utf-8")

    def _emit_json(self, name: str, payload: Dict[str, Any]) -> None:
        write_json(self._path(name), payload)

    def _emit_frame(self, name: str, frame: pd.DataFrame) -> None:
        write_frame(self._path(name), frame)

    def _resolve_input(self, value: Optional[str], default: str) -> Path:
        assert self.output_dir is not None
        path = Path(value) if value else self.output_dir / default
        self._inputs.append(str(path))
        return path

    # --------------------------------------------------------------
    def solve(self) -> None:
        cfg = self.config
        spec = build_potential(cfg)
        f0 = build_field(cfg, spec)
        sched = build_schedule(cfg)
        summary: Dict[str, Any] = {}
        if cfg.starts > 1 or cfg.noise > 0:
            result = minimizer.multistart(
                f0, spec, sched, starts=cfg.starts, noise=cfg.noise, eps=cfg.eps,
                threads=self.threads, symmetric=cfg.symmetric,
            )
            solution, log = result.best, result.log
            summary["starts"] = {
                "best": result.index,
                "energies": result.energies,
                "converged": result.converged,
            }
            if not log.converged:
                self._finish_solve(solution, log, spec, summary)
                raise NoConvergence("Ningún arranque alcanzó la tolerancia.", best=solution, log=log)
        else:
            runner = minimizer.descend_symmetric if cfg.symmetric else minimizer.descend
            try:
                solution, log = runner(f0, spec, sched, eps=cfg.eps)
            except NoConvergence as exc:
                self._finish_solve(exc.best, exc.log, spec, summary)
                raise
        if cfg.audit_trials > 0:
            audit = minimizer.audit_minimality(
                solution, spec, minimizer.MinimalityAudit(trials=cfg.audit_trials, seed=cfg.seed), eps=cfg.eps
            )
            summary["audit"] = audit.to_payload()
        self._finish_solve(solution, log, spec, summary)

    def _finish_solve(
        self, solution: Field, log: minimizer.ConvergenceLog, spec: PotentialSpec, summary: Dict[str, Any]
    ) -> None:
        save_field(self._path("solution.fld"), solution)
        self._emit_frame("convergence.csv", log.to_frame())
        summary.update(
            {
                "converged": log.converged,
                "iterations": log.iterations,
                "rejected_steps": log.rejected,
                "energy_increases": len(log.increases),
                "energy": energy(solution, RegionMask.everything(solution), spec, self.config.eps),
                "residual": residual(solution, spec, self.config.eps),
                "tolerance": self.config.tol,
                "symmetry_defect": minimizer.symmetry_defect(solution) if spec.symmetric else None,
            }
        )
        self._emit_json("solve.json", summary)

    # --------------------------------------------------------------
    def measure(self) -> None:
        cfg = self.config
        spec = build_potential(cfg)
        f = load_field(self._resolve_input(cfg.snapshot, "solution.fld"))
        if f.m != spec.m:
            raise ConfigError(f"La instantánea tiene {f.m} componentes y el potencial {spec.m}.", key="field")
        a = _well(spec, cfg.well, "well")
        center = np.asarray(cfg.center if cfg.center is not None else [0.0] * f.grid.n, dtype=float)
        radii = cfg.radii if cfg.radii is not None else _default_radii(f.grid, center)
        lam = _lambda(cfg, spec)
        report = density.scan(
            f, a, center, radii, lam, spec,
            lam_star=cfg.lambda_star, shell_width=cfg.shell_width, threads=self.threads,
        )
        self._emit_frame("density.csv", report.to_frame())
        self._emit_frame("shells.csv", report.shells_frame())
        summary: Dict[str, Any] = {
            "report": report.to_payload(),
            "fits": {
                "V": _fit_or_none(report.V, report.radii),
                "J": _fit_or_none(report.J, report.radii),
                "A": _fit_or_none(report.A, report.radii),
            },
        }
        scheme = density.difference_scheme_check(report, T=cfg.scheme_T, c2=cfg.scheme_c2)
        self._emit_frame("scheme.csv", scheme.to_frame())
        summary["scheme"] = scheme.to_payload()
        if "lower_bound" in cfg.probes:
            summary["lower_bound"] = density.lower_bound_check(report).to_payload()
        if "liouville" in cfg.probes:
            summary["liouville"] = density.liouville_probe(f, a, spec).to_payload()
        if "decay" in cfg.probes:
            try:
                summary["decay"] = density.exp_decay_probe(f, a, spec, lam=lam).to_payload()
            except NoDecayWindow as exc:
                LOGGER.warning("Sonda de decaimiento sin ventana: %s", exc)
                summary["decay"] = None
        self._emit_json("measure.json", summary)

    # --------------------------------------------------------------
    def _connection(self, spec: PotentialSpec, branch: float) -> connection1d.ConnectionProfile:
        cfg = self.config
        return connection1d.solve_connection(
            spec, cfg.L, cfg.N, tol=cfg.connect_tol, max_iters=cfg.max_iters, branch=branch
        )

    def connect(self) -> None:
        cfg = self.config
        spec = build_potential(cfg)
        profile = self._connection(spec, cfg.branch)
        save_field(self._path("connection.fld"), profile.to_field())
        self._emit_frame(
            "connection.csv",
            pd.DataFrame(
                {"s": profile.s, **{f"u{c + 1}": profile.values[:, c] for c in range(spec.m)}}
            ),
        )
        self._emit_json("connection.json", profile.to_payload())
        report = connection1d.hyperbolicity(profile, strict=False)
        self._emit_json("hyperbolicity.json", report.to_payload())
        if report.eta <= 0:
            raise NotHyperbolic(report.eta)
        wqq = connection1d.wqq_check(
            profile, directions=cfg.directions, qbar_scan=cfg.qbar_scan,
            seed=cfg.seed, eta=report.eta, threads=self.threads,
        )
        self._emit_frame("wqq.csv", wqq.to_frame())
        payload = wqq.to_payload()
        payload["constants"] = cylinder_constants(report.eta)
        self._emit_json("wqq.json", payload)

    # --------------------------------------------------------------
    def _lambda_star(self) -> float:
        cfg = self.config
        if cfg.lambda_star is not None:
            return cfg.lambda_star
        if cfg.connect_report is None:
            raise ConfigError(
                "El comando 'cyl' necesita λ*: ejecute antes 'connect' e indique connect_report "
                "o fije lambda_star.",
                key="connect_report",
            )
        path = self._resolve_input(cfg.connect_report, "wqq.json")
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} no es un informe JSON válido.", key="connect_report") from exc
        if "lambda_star" not in payload:
            raise ConfigError(f"{path} no contiene 'lambda_star'.", key="connect_report")
        return float(payload["lambda_star"])

    def cyl(self) -> None:
        cfg = self.config
        spec = build_potential(cfg)
        lam_star = self._lambda_star()
        lam = cfg.lam if cfg.lam is not None else 0.5 * lam_star
        if lam >= lam_star:
            raise LambdaAboveThreshold(f"λ = {lam:g} no es menor que λ* = {lam_star:g}.")
        upper = self._connection(spec, abs(cfg.branch))
        lower = self._connection(spec, -abs(cfg.branch)) if cfg.branch else upper
        blend = connection1d.cylinder_blend(lower, upper, cfg.y_nodes, cfg.bc_width)
        u = blend
        relax: Optional[Dict[str, Any]] = None
        if cfg.relax:
            try:
                u, log = connection1d.relax_cylinder(blend, upper, build_schedule(cfg), spec)
            except NoConvergence as exc:
                if exc.best is not None:
                    save_field(self._path("cylinder.fld"), exc.best)
                if exc.log is not None:
                    self._emit_frame("relax.csv", exc.log.to_frame())
                raise
            self._emit_frame("relax.csv", log.to_frame())
            relax = {
                "converged": log.converged,
                "iterations": log.iterations,
                "residual": log.final_residual,
                "energy_increases": len(log.increases),
            }
        save_field(self._path("cylinder.fld"), u)
        y0 = [0.0] * (u.grid.n - 1)
        if cfg.radii is not None:
            radii = cfg.radii
        else:
            span = 0.5 * (cfg.y_nodes - 1) * upper.spacing
            radii = [span * k / 8 for k in range(1, 9)]
        report = connection1d.cyl_density_scan(u, upper, y0, radii, lam, spec, lam_star=lam_star)
        self._emit_frame("cyl_density.csv", report.to_frame())
        polar = connection1d.cyl_polar(u, upper, spec)
        product = connection1d.product_structure_probe(u, upper)
        splices = [
            connection1d.cylinder_splice_check(u, upper, blend.values, fraction * upper.L, spec)
            for fraction in (0.25, 0.5)
        ]
        self._emit_json(
            "cyl.json",
            {
                "lambda": lam,
                "lambda_star": lam_star,
                "report": report.to_payload(),
                "fits": {
                    "V": _fit_or_none(report.V, report.radii),
                    "energy": _fit_or_none(report.J, report.radii),
                },
                "modified_energy": polar.modified_energy(),
                "omitted_kinetic": polar.omitted,
                "energy_excess": connection1d.cylinder_energy_excess(u, upper, spec),
                "product": product.to_payload(),
                "splice": [check.to_payload() for check in splices],
                "relax": relax,
            },
        )
        failed = [check.l for check in splices if check.verdict == "FAIL"]
        if failed and relax is not None:
            raise CheckFailed(f"El empalme cilíndrico baja la energía en l = {failed}.")

    # --------------------------------------------------------------
    def link(self) -> None:
        cfg = self.config
        spec = build_potential(cfg)
        if cfg.radius is None:
            raise ConfigError("El comando 'link' necesita el radio del disco.", key="radius")
        f0, ref = linking.disk_problem(
            cfg.radius, cfg.spacing, spec, theta1=cfg.theta1, theta2=cfg.theta2,
            width=cfg.bc_width, wells=(cfg.bc_wells[0], cfg.bc_wells[1]),
        )
        validation = linking.validate_reference(ref)
        result = linking.eps_continuation(
            f0, spec, cfg.eps_schedule, build_schedule(cfg),
            starts=cfg.starts, noise=cfg.noise, threads=self.threads,
        )
        a_out = spec.well(cfg.bc_wells[0])
        a_in = spec.well(cfg.bc_wells[1])
        gamma = cfg.level if cfg.level is not None else 0.5 * float(np.linalg.norm(a_in - a_out))
        rows = []
        last: Optional[linking.LevelSet] = None
        for eps, solution in zip(result.eps, result.fields):
            ls = linking.extract_levelset(solution, a_out, gamma, epsilon=eps)
            last = ls
            self._emit_frame(f"levelset_eps{eps:g}.csv", ls.to_frame())
            try:
                compact = linking.hausdorff_to_reference(ls, ref, margin=4.0 * eps)
            except EmptyLevelSet:
                compact = float("nan")
            rows.append(
                {
                    "eps": eps,
                    "hausdorff": linking.hausdorff_to_reference(ls, ref, margin=cfg.margin),
                    "hausdorff_4eps": compact,
                    "cell_bound": solution.grid.spacing,
                    "transition_width": linking.transition_width(solution, spec, ref),
                    "converged": eps not in result.failures,
                }
            )
        table = pd.DataFrame(rows)
        self._emit_frame("hausdorff.csv", table)
        summary: Dict[str, Any] = {
            "gamma": gamma,
            "radius": cfg.radius,
            "chord": {
                "p1": list(ref.p1),
                "p2": list(ref.p2),
                "length": ref.length,
                "lattice_length": validation.lattice_length,
                "ratio": validation.ratio,
                "verdict": validation.verdict,
            },
            "failures": list(result.failures),
            "nonincreasing": bool(np.all(np.diff(table["hausdorff"].to_numpy()) <= 1e-12)),
        }
        if cfg.blowup_radii and last is not None:
            midpoint = 0.5 * (np.asarray(ref.p1) + np.asarray(ref.p2))
            blow = linking.blowup_density(
                result.fields[-1], a_out, gamma, midpoint, result.eps[-1], cfg.blowup_radii, ls=last
            )
            summary["blowup"] = {
                "point": list(blow.point),
                "radii": blow.radii,
                "V": blow.V,
                "fit": blow.fit.to_payload(),
            }
        self._emit_json("link.json", summary)

    # --------------------------------------------------------------
    def hypcheck(self) -> None:
        cfg = self.config
        spec = build_potential(cfg)
        if cfg.box is not None:
            box = [(row[0], row[1]) for row in cfg.box]
        else:
            wells = spec.wells_array
            box = [(float(lo) - 1.0, float(hi) + 1.0) for lo, hi in zip(wells.min(axis=0), wells.max(axis=0))]
        report = check_hypotheses(
            spec, box, cfg.samples, directions=cfg.rays, rho0=cfg.rho0, seed=cfg.seed
        )
        summary: Dict[str, Any] = {"hypotheses": report.to_payload()}
        if cfg.geodesic_resolution is not None:
            table = geodesic_table(spec, list(spec.wells_array), cfg.geodesic_resolution, box)
            summary["geodesic"] = {"resolution": cfg.geodesic_resolution, "distances": table}
        self._emit_json("hypcheck.json", summary)


def run_experiment(
    command: str,
    config: ExperimentConfig,
    threads: int = 1,
    deterministic: bool = True,
    version: str = "0.0.0",
    output_dir: Optional[Path] = None,
) -> RunManifest:
    runner = ExperimentRunner(
        config=config, threads=threads, deterministic=deterministic, version=version, output_dir=output_dir
    )
    return runner.run(command)
