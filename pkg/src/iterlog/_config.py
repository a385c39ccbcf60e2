"""Versioned JSON experiment configurations.

Every document names its schema as ``"iterlog/<kind>/1"`` and is validated
by the pydantic model of that kind. Validation is strict: unknown keys are
rejected and errors carry the JSON path of the offending field. The JSON
Schema of each kind is generated from the same models and shipped under
``schemas/``.
"""

from __future__ import annotations

import hashlib
import json
import os
import typing
from dataclasses import dataclass
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, Strict, ValidationError
from pydantic import field_validator, model_validator

from ._errors import ConfigError
from ._lattice import FIVE_CYCLE_SIGNS

SCHEMA_VERSION = 1

Number = typing.Annotated[float, Strict()]
PositiveNumber = typing.Annotated[float, Strict(), Field(gt=0)]
PositiveInt = typing.Annotated[int, Strict(), Field(ge=1)]
VertexIndex = typing.Annotated[int, Strict(), Field(ge=0)]
VertexName = typing.Annotated[str, Strict()] | typing.Annotated[int, Strict()]
Sign = typing.Literal[1, -1]
# A complex entry is a real number or an [re, im] pair.
ComplexInput = Number | tuple[Number, Number]
# A bare entry is a 1x1 matrix.
MatrixInput = ComplexInput | tuple[tuple[ComplexInput, ...], ...]

Matrix = tuple[tuple[complex, ...], ...]


def canonical_json(value: typing.Any) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_hash(value: typing.Any) -> str:
    return hashlib.sha256(canonical_json(value).encode("utf-8")).hexdigest()


def _complex(value: ComplexInput) -> complex:
    if isinstance(value, tuple):
        return complex(value[0], value[1])
    return complex(value)


def _rows(value: MatrixInput) -> Matrix:
    if value == ():
        return ()
    if isinstance(value, tuple) and isinstance(value[0], tuple):
        return tuple(tuple(_complex(x) for x in row) for row in typing.cast(tuple[tuple[ComplexInput, ...], ...], value))
    return ((_complex(typing.cast(ComplexInput, value)),),)


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# ---------------------------------------------------------------------------
# Payloads
# ---------------------------------------------------------------------------


class VertexSpec(_Model):
    id: VertexName
    mass: PositiveNumber


class GraphSpec(_Model):
    """A directed graph with vertex masses, or an oriented cycle given by ``masses``."""

    vertices: tuple[VertexSpec, ...] = ()
    arrows: tuple[tuple[VertexName, VertexName], ...] = ()
    masses: tuple[PositiveNumber, ...] = ()
    signs: tuple[Sign, ...] | None = None
    periodic: bool = Field(default=True, strict=True)

    @model_validator(mode="after")
    def _check_shape(self) -> GraphSpec:
        if self.masses:
            if self.vertices or self.arrows:
                raise ValueError("give either masses and signs or vertices and arrows")
            if self.signs is None and len(self.masses) != 5:
                raise ValueError("signs are required unless there are five segments")
            return self
        if not self.vertices:
            raise ValueError("expected masses or vertices")
        names = {str(v.id) for v in self.vertices}
        for i, (s, t) in enumerate(self.arrows):
            if str(s) not in names or str(t) not in names:
                raise ValueError(f"arrow {i} refers to an unknown vertex")
        return self

    @property
    def is_cycle(self) -> bool:
        return bool(self.masses)

    @property
    def cycle_signs(self) -> tuple[int, ...]:
        return FIVE_CYCLE_SIGNS if self.signs is None else tuple(self.signs)

    def named_vertices(self) -> list[tuple[str, float]]:
        return [(str(v.id), v.mass) for v in self.vertices]

    def named_arrows(self) -> list[tuple[str, str]]:
        return [(str(s), str(t)) for s, t in self.arrows]


class LatticeConfig(_Model):
    graph: GraphSpec
    iterated: bool = Field(default=False, strict=True)
    walls: bool = Field(default=False, strict=True)


class ArrowSpec(_Model):
    source: VertexIndex
    target: VertexIndex
    matrix: MatrixInput

    def rows(self) -> Matrix:
        return _rows(self.matrix)


class QuiverSpec(_Model):
    dims: tuple[PositiveInt, ...] = Field(min_length=1)
    masses: tuple[PositiveNumber, ...] | None = None
    arrows: tuple[ArrowSpec, ...] = ()
    rho: tuple[MatrixInput, ...] = ()

    @model_validator(mode="after")
    def _check_shapes(self) -> QuiverSpec:
        n = len(self.dims)
        if self.masses is not None and len(self.masses) != n:
            raise ValueError("one positive mass per vertex")
        if self.rho and len(self.rho) != n:
            raise ValueError("one rho entry per vertex")
        for i, arrow in enumerate(self.arrows):
            if arrow.source >= n or arrow.target >= n:
                raise ValueError(f"arrow {i}: vertex index out of range")
            rows = arrow.rows()
            if len({len(r) for r in rows}) > 1:
                raise ValueError(f"arrow {i}: matrix rows have different lengths")
            expected = (self.dims[arrow.target], self.dims[arrow.source])
            if (len(rows), len(rows[0]) if rows else 0) != expected:
                raise ValueError(f"arrow {i}: expected a {expected[0]}x{expected[1]} matrix")
        return self

    def vertex_masses(self) -> tuple[float, ...]:
        return (1.0,) * len(self.dims) if self.masses is None else self.masses

    def rho_matrices(self) -> tuple[Matrix, ...]:
        out = []
        for d, value in zip(self.dims, self.rho):
            m = _rows(value)
            if len(m) == 1 and len(m[0]) == 1 and d > 1:
                m = tuple(tuple(m[0][0] if i == j else 0j for j in range(d)) for i in range(d))
            out.append(m)
        return tuple(out)


class FlowConfig(_Model):
    quiver: QuiverSpec
    mode: typing.Literal["run", "king", "asymptotics"] = "run"
    t_end: PositiveNumber = 50.0
    samples: PositiveInt = 100
    h0: tuple[PositiveNumber, ...] = ()
    tolerance: PositiveNumber = 1e-8

    @model_validator(mode="after")
    def _check_h0(self) -> FlowConfig:
        if self.h0 and len(self.h0) != len(self.quiver.dims):
            raise ValueError("h0 needs one positive scale per vertex")
        return self


class CylinderSpec(_Model):
    length: PositiveNumber
    punctures: tuple[Number, ...] = ()
    rho: typing.Literal["quadratic", "constant"] = "quadratic"
    boundary: typing.Literal["periodic", "dirichlet"] = "periodic"


class GridSpec(_Model):
    ratio: PositiveNumber = 1.15
    h_min: PositiveNumber | None = None
    h_max: PositiveNumber | None = None
    uniform: PositiveInt = 400


class InitialSpec(_Model):
    fourier: tuple[tuple[typing.Annotated[int, Strict()], Number, Number], ...] = ()
    puncture_values: tuple[Number, ...] = ()

    @model_validator(mode="after")
    def _check_one_source(self) -> InitialSpec:
        if bool(self.fourier) == bool(self.puncture_values):
            raise ValueError("give exactly one of fourier or puncture_values")
        return self


class PdeConfig(_Model):
    cylinder: CylinderSpec
    initial: InitialSpec
    t_end: PositiveNumber
    grid: GridSpec = Field(default_factory=GridSpec)
    max_step: PositiveNumber | None = None
    samples: PositiveInt = 60
    svg: bool = Field(default=False, strict=True)


class OdeConfig(_Model):
    graph: GraphSpec
    y0: tuple[PositiveNumber, ...]
    t_end: PositiveNumber
    t0: PositiveNumber = 1.0
    samples: PositiveInt = 200
    svg: bool = Field(default=False, strict=True)

    @model_validator(mode="after")
    def _check_cycle(self) -> OdeConfig:
        if not self.graph.is_cycle:
            raise ValueError("the reduced system needs masses and signs")
        if len(self.y0) != len(self.graph.cycle_signs):
            raise ValueError("y0 needs one positive height per puncture")
        return self


class WallsConfig(_Model):
    graph: GraphSpec
    y0: tuple[PositiveNumber, ...] | None = None
    window: tuple[Number, Number] = (15.0, 25.0)
    grid: tuple[tuple[PositiveNumber, ...], ...] = ()

    @field_validator("window")
    @classmethod
    def _check_window(cls, value: tuple[float, float]) -> tuple[float, float]:
        if not 0 < value[0] < value[1]:
            raise ValueError("expected [s_start, s_end] with 0 < s_start < s_end")
        return value

    @model_validator(mode="after")
    def _check_cycle(self) -> WallsConfig:
        if not self.graph.is_cycle:
            raise ValueError("wall runs need masses and signs")
        n = len(self.graph.masses)
        for i, point in enumerate(self.grid):
            if len(point) != n:
                raise ValueError(f"grid point {i} must list every mass")
        if self.y0 is not None and len(self.y0) != len(self.graph.cycle_signs):
            raise ValueError("y0 needs one positive height per puncture")
        return self

    @property
    def heights(self) -> tuple[float, ...]:
        return (0.1,) * len(self.graph.cycle_signs) if self.y0 is None else self.y0


Payload = LatticeConfig | FlowConfig | PdeConfig | OdeConfig | WallsConfig


# ---------------------------------------------------------------------------
# Documents, one per experiment kind
# ---------------------------------------------------------------------------


class _Document(_Model):
    seed: typing.Annotated[int, Strict(), Field(ge=0)] = 0
    payload: Payload


class LatticeDocument(_Document):
    schema_id: typing.Literal["iterlog/lattice/1"] = Field(alias="schema")
    payload: LatticeConfig


class FlowDocument(_Document):
    schema_id: typing.Literal["iterlog/flow/1"] = Field(alias="schema")
    payload: FlowConfig


class PdeDocument(_Document):
    schema_id: typing.Literal["iterlog/csf-pde/1"] = Field(alias="schema")
    payload: PdeConfig


class OdeDocument(_Document):
    schema_id: typing.Literal["iterlog/csf-ode/1"] = Field(alias="schema")
    payload: OdeConfig


class CompareDocument(_Document):
    schema_id: typing.Literal["iterlog/compare/1"] = Field(alias="schema")
    payload: PdeConfig


class WallsDocument(_Document):
    schema_id: typing.Literal["iterlog/walls/1"] = Field(alias="schema")
    payload: WallsConfig


DOCUMENTS: dict[str, type[_Document]] = {
    "lattice": LatticeDocument,
    "flow": FlowDocument,
    "csf-pde": PdeDocument,
    "csf-ode": OdeDocument,
    "compare": CompareDocument,
    "walls": WallsDocument,
}
KINDS = tuple(DOCUMENTS)


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    payload: Payload
    seed: int = 0
    sha256: str = ""
    source: str = ""


def _json_path(loc: tuple[int | str, ...]) -> str:
    return "$" + "".join(f"[{part}]" if isinstance(part, int) else f".{part}" for part in loc)


def _message(error: typing.Any) -> str:
    kind = error["type"]
    if kind == "extra_forbidden":
        return "unknown field"
    if kind == "missing":
        return "missing required field"
    if kind == "value_error":
        return str(error["ctx"]["error"])
    return str(error["msg"])


def schema_kind(data: typing.Any) -> str:
    """The experiment kind named by ``data["schema"]``."""
    if not isinstance(data, dict):
        raise ConfigError("expected an object")
    schema = data.get("schema")
    if not isinstance(schema, str):
        raise ConfigError("expected a schema string", "$.schema")
    prefix, _, rest = schema.partition("/")
    kind, _, version = rest.rpartition("/")
    if prefix != "iterlog" or kind not in DOCUMENTS:
        raise ConfigError(f"unknown schema {schema!r}", "$.schema")
    if version != str(SCHEMA_VERSION):
        raise ConfigError(f"unsupported schema version {version!r}", "$.schema")
    return kind


def parse_config(data: typing.Any, *, source: str = "") -> ExperimentConfig:
    kind = schema_kind(data)
    try:
        document = DOCUMENTS[kind].model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigError(_message(first), _json_path(tuple(first["loc"]))) from None
    return ExperimentConfig(kind, document.payload, document.seed, config_hash(data), source)


def load_config(path: str | os.PathLike[str]) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed JSON: {e.msg} (line {e.lineno})") from None
    except OSError as e:
        raise ConfigError(f"cannot read {os.fspath(path)!r}: {e.strerror}") from None
    return parse_config(data, source=os.fspath(path))


def json_schema(kind: str) -> dict[str, typing.Any]:
    return DOCUMENTS[kind].model_json_schema(by_alias=True)


def write_schemas(directory: str | os.PathLike[str]) -> list[Path]:
    """Write ``<kind>.json`` for every experiment kind into ``directory``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for kind in DOCUMENTS:
        path = out / f"{kind}.json"
        path.write_text(json.dumps(json_schema(kind), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        paths.append(path)
    return paths
