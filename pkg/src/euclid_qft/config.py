"""Run configs: INI text with ``[geometry]``, ``[model]`` and ``[run]`` sections.

Example::

    [geometry]
    dim = 2
    extents = 4, 4
    spacing_length = 1.0
    boundary = periodic

    [model]
    mass_inverse_length = 1.0
    # coefficients of phi^0 .. phi^n
    polynomial = 0, 0, 0, 0, 0.1

    [run]
    method = reweight
    samples = 100000
    points = 0,0; 1,0
"""

import configparser
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

from euclid_qft.covariance import STENCILS
from euclid_qft.errors import ConfigError, GeometryError
from euclid_qft.interaction import METHODS, InteractionPolynomial
from euclid_qft.lattice import LatticeGeometry, geometry_from_config, geometry_to_config, make_geometry
from euclid_qft.rng import resolve_seed

SECTIONS = ("geometry", "model", "run")
KNOWN_KEYS = {
    "geometry": ("dim", "extents", "spacing_length", "boundary"),
    "model": ("mass_inverse_length", "polynomial", "stencil"),
    "run": ("method", "samples", "sweeps", "chains", "therm_frac", "nodes", "seed", "points", "output"),
}

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([A-Za-z0-9_\-]+)\s*[=:]")
_GEOMETRY_HINTS = (("extent", "extents"), ("dim", "dim"), ("spacing", "spacing_length"), ("boundary", "boundary"))


@dataclass(frozen=True)
class RunConfig:
    geometry: LatticeGeometry
    mass: float = 1.0
    polynomial: InteractionPolynomial = field(default_factory=InteractionPolynomial.zero)
    stencil: str = "nearest"
    method: str = "reweight"
    samples: int = 100_000
    sweeps: int = 20_000
    chains: int = 2
    therm_frac: float = 0.2
    nodes: int = 16
    seed: int | None = None
    points: tuple[tuple[int, ...], ...] = ()
    output: str | None = None

    @property
    def resolved_seed(self) -> int:
        return resolve_seed(self.seed)

    def with_overrides(self, **overrides) -> "RunConfig":
        """Copy with every non-None override applied, re-validated."""
        changes = {k: v for k, v in overrides.items() if v is not None}
        updated = replace(self, **changes)
        validate(updated)
        return updated

    def echo(self) -> dict:
        """The config as it enters a report, with the seed resolved."""
        return {
            "geometry": geometry_to_config(self.geometry),
            "model": {
                "mass_inverse_length": self.mass,
                "polynomial": list(self.polynomial.coefficients),
                "stencil": self.stencil,
            },
            "run": {
                "method": self.method,
                "samples": self.samples,
                "sweeps": self.sweeps,
                "chains": self.chains,
                "therm_frac": self.therm_frac,
                "nodes": self.nodes,
                "seed": self.resolved_seed,
                "points": [list(p) for p in self.points],
            },
        }


def default_config() -> RunConfig:
    return RunConfig(geometry=make_geometry(2, (4, 4), 1.0))


def validate(config: RunConfig) -> None:
    """Budgets and model checks that must pass before any compute starts."""
    for name in ("samples", "sweeps", "chains", "nodes"):
        value = getattr(config, name)
        if value < 1:
            raise ConfigError(f"{name} must be >= 1, got {value}", field=f"run.{name}")
    if not 0 < config.therm_frac < 1:
        raise ConfigError(f"therm_frac must be in (0, 1), got {config.therm_frac}", field="run.therm_frac")
    if not config.mass > 0:
        raise ConfigError(f"mass must be > 0, got {config.mass}", field="model.mass_inverse_length")
    if config.method not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}, got {config.method!r}", field="run.method")
    if config.stencil not in STENCILS:
        raise ConfigError(f"stencil must be one of {STENCILS}, got {config.stencil!r}", field="model.stencil")
    if config.seed is not None and config.seed < 0:
        raise ConfigError(f"seed must be non-negative, got {config.seed}", field="run.seed")
    for point in config.points:
        if len(point) != config.geometry.dim:
            raise ConfigError(f"point {point} needs {config.geometry.dim} coordinates", field="run.points")
        if any(not 0 <= c < e for c, e in zip(point, config.geometry.extents)):
            raise ConfigError(f"point {point} lies outside extents {config.geometry.extents}", field="run.points")


def _line_numbers(text: str) -> dict[str, int]:
    """``section.key`` (and bare ``section``) to the 1-based line that defines it."""
    lines: dict[str, int] = {}
    section = None
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped[0] in "#;":
            continue
        match = _SECTION_RE.match(line)
        if match:
            section = match.group(1).strip()
            lines.setdefault(section, number)
            continue
        match = _KEY_RE.match(line)
        if match and section is not None:
            lines.setdefault(f"{section}.{match.group(1).lower()}", number)
    return lines


def parse_points(text: str) -> tuple[tuple[int, ...], ...]:
    """``"0,0; 1,0"`` -> ((0, 0), (1, 0))."""
    points = []
    for chunk in text.split(";"):
        if chunk.strip():
            points.append(tuple(int(c) for c in chunk.split(",")))
    return tuple(points)


def parse_coefficients(text: str) -> list[float]:
    return [float(c) for c in text.split(",") if c.strip()]


def parse_config(text: str) -> RunConfig:
    """Parse and validate config text; every failure is a :class:`ConfigError`."""
    lines = _line_numbers(text)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"unreadable config: {e}", line=getattr(e, "lineno", None)) from None

    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]", line=lines.get(section), field=section)
        for key in parser[section]:
            if key not in KNOWN_KEYS[section]:
                where = f"{section}.{key}"
                raise ConfigError(f"unknown key {key!r}", line=lines.get(where), field=where)

    def fail(where: str, message: str):
        return ConfigError(message, line=lines.get(where), field=where)

    def get(section: str, key: str, convert, default):
        if not parser.has_option(section, key):
            return default
        raw = parser.get(section, key).strip()
        try:
            return convert(raw)
        except (ValueError, TypeError) as e:
            raise fail(f"{section}.{key}", f"cannot parse {raw!r}: {e}") from None

    base = default_config()
    if parser.has_section("geometry"):
        block = geometry_to_config(base.geometry)
        block.update({k: v for k, v in parser["geometry"].items()})
        try:
            geometry = geometry_from_config(block)
        except GeometryError as e:
            key = next((k for hint, k in _GEOMETRY_HINTS if hint in str(e)), None)
            where = f"geometry.{key}" if key else "geometry"
            raise fail(where, str(e)) from None
    else:
        geometry = base.geometry

    coefficients = get("model", "polynomial", parse_coefficients, None)
    polynomial = base.polynomial
    if coefficients is not None:
        try:
            polynomial = InteractionPolynomial.from_coefficients(coefficients)
        except ValueError as e:
            raise fail("model.polynomial", str(e)) from None

    output = get("run", "output", str, None)
    config = RunConfig(
        geometry=geometry,
        mass=get("model", "mass_inverse_length", float, base.mass),
        polynomial=polynomial,
        stencil=get("model", "stencil", str, base.stencil),
        method=get("run", "method", str, base.method),
        samples=get("run", "samples", int, base.samples),
        sweeps=get("run", "sweeps", int, base.sweeps),
        chains=get("run", "chains", int, base.chains),
        therm_frac=get("run", "therm_frac", float, base.therm_frac),
        nodes=get("run", "nodes", int, base.nodes),
        seed=get("run", "seed", int, None),
        points=get("run", "points", parse_points, ()),
        output=output or None,
    )
    try:
        validate(config)
    except ConfigError as e:
        if e.field and e.line is None and e.field in lines:
            raise ConfigError(e.message, line=lines[e.field], field=e.field) from None
        raise
    return config


def load_config(path: Path | str) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    return parse_config(text)
