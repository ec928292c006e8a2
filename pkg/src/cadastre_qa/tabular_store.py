"""Immutable tabular datasets, their declarative schemas, and test fixtures.

Datasets are numbered 1 (year-A cadastre), 2 (year-B cadastre) and
3 (landmarks).  Schemas live in a YAML config document so prompts can be
regenerated for new cadastres without code changes.
"""

from __future__ import annotations

import csv
import random
import re
import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping

import yaml

from .errors import (
    CellTypeError,
    ConfigError,
    EmptyFileError,
    MissingColumnError,
    UnknownColumnError,
)

VALUE_KINDS = ("integer", "real", "text", "latitude", "longitude")
NUMERIC_KINDS = ("integer", "real", "latitude", "longitude")

CellValue = Any  # str | int | float | None

_WHITESPACE_RE = re.compile(r"\s+")


def normalize_text(raw: str) -> str:
    """Lowercase, trim, collapse whitespace and fold diacritics to ASCII base letters."""
    decomposed = unicodedata.normalize("NFD", raw)
    stripped = "".join(ch for ch in decomposed if unicodedata.category(ch) != "Mn")
    return _WHITESPACE_RE.sub(" ", stripped.lower().strip())


@dataclass(frozen=True)
class ColumnMeta:
    """One typed, described column; the description is fed verbatim into prompts."""

    name: str
    value_kind: str
    description: str

    def __post_init__(self) -> None:
        if not self.name:
            raise ConfigError("column name must be non-empty")
        if self.value_kind not in VALUE_KINDS:
            raise ConfigError(f"unknown value kind {self.value_kind!r} for column {self.name!r}")
        if not self.description:
            raise ConfigError(f"column {self.name!r} needs a description")


@dataclass(frozen=True)
class TableSchema:
    """Ordered column layout of one dataset table.

    Column order is stable because generated prompt text depends on it.
    """

    table_name: str
    columns: tuple[ColumnMeta, ...]
    primary_key: str

    def __post_init__(self) -> None:
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate column names in table {self.table_name!r}")
        if self.primary_key not in names:
            raise ConfigError(
                f"primary key {self.primary_key!r} is not a column of {self.table_name!r}"
            )

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def column(self, name: str) -> ColumnMeta:
        for col in self.columns:
            if col.name == name:
                return col
        raise UnknownColumnError(f"no column {name!r} in table {self.table_name!r}")


@dataclass(frozen=True)
class Dataset:
    """Immutable loaded table plus its schema and pipeline-wide number."""

    dataset_number: int
    display_name: str
    schema: TableSchema
    rows: tuple[dict[str, CellValue], ...]

    def __post_init__(self) -> None:
        if self.dataset_number not in (1, 2, 3):
            raise ConfigError(f"dataset number must be 1, 2 or 3, got {self.dataset_number}")

    @property
    def row_count(self) -> int:
        return len(self.rows)

    def column_values(self, column: str) -> list[CellValue]:
        self.schema.column(column)
        return [row[column] for row in self.rows]

    def checksum(self) -> int:
        """Order-sensitive content hash; used to assert reads do not mutate."""
        acc = hash((self.dataset_number, self.schema.column_names))
        for row in self.rows:
            acc = hash((acc, tuple(row[c] for c in self.schema.column_names)))
        return acc


def _coerce(cell: str, kind: str, row_index: int, column: str) -> CellValue:
    # Null policy: empty cells are null for every kind.
    if cell == "":
        return None
    if kind == "integer":
        try:
            return int(cell)
        except ValueError:
            raise CellTypeError(
                f"row {row_index}: cannot read {cell!r} as integer for column {column!r}",
                row=row_index,
                column=column,
            ) from None
    if kind in ("real", "latitude", "longitude"):
        try:
            return float(cell)
        except ValueError:
            raise CellTypeError(
                f"row {row_index}: cannot read {cell!r} as number for column {column!r}",
                row=row_index,
                column=column,
            ) from None
    return cell


def load_dataset(
    path: str | Path,
    schema: TableSchema,
    dataset_number: int,
    display_name: str | None = None,
) -> Dataset:
    """Load and validate a comma-delimited UTF-8 file against ``schema``.

    The header must equal the schema column names in order; cells are coerced
    per column kind. Row indices in errors are 1-based data rows.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFileError(f"{path} has no header row") from None
        expected = list(schema.column_names)
        if header != expected:
            raise MissingColumnError(
                f"{path} header {header!r} does not match schema columns {expected!r}"
            )
        rows: list[dict[str, CellValue]] = []
        for i, raw_row in enumerate(reader, start=1):
            if len(raw_row) != len(expected):
                raise MissingColumnError(
                    f"{path} row {i} has {len(raw_row)} cells, expected {len(expected)}"
                )
            row = {
                col.name: _coerce(cell, col.value_kind, i, col.name)
                for col, cell in zip(schema.columns, raw_row)
            }
            rows.append(row)
    return Dataset(
        dataset_number=dataset_number,
        display_name=display_name or schema.table_name,
        schema=schema,
        rows=tuple(rows),
    )


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Serialize to the comma-delimited on-disk format; nulls become empty cells."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(dataset.schema.column_names)
        for row in dataset.rows:
            writer.writerow(
                "" if row[c] is None else str(row[c]) for c in dataset.schema.column_names
            )


# --- schema config ----------------------------------------------------------


def _schema_from_entry(entry: Mapping[str, Any]) -> TableSchema:
    try:
        columns = tuple(
            ColumnMeta(name=c["name"], value_kind=c["kind"], description=c["description"])
            for c in entry["columns"]
        )
        return TableSchema(
            table_name=entry["table"],
            columns=columns,
            primary_key=entry["primary_key"],
        )
    except KeyError as exc:
        raise ConfigError(f"schema config entry missing key {exc}") from None


@dataclass(frozen=True)
class DatasetSpec:
    """One dataset entry from the schema config document."""

    number: int
    name: str
    schema: TableSchema


def load_schema_config(path: str | Path) -> dict[int, DatasetSpec]:
    """Read the declarative schema document: datasets keyed by number."""
    with Path(path).open(encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, Mapping) or "datasets" not in doc:
        raise ConfigError(f"{path}: expected a mapping with a 'datasets' list")
    specs: dict[int, DatasetSpec] = {}
    for entry in doc["datasets"]:
        number = int(entry["number"])
        if number in specs:
            raise ConfigError(f"{path}: duplicate dataset number {number}")
        specs[number] = DatasetSpec(
            number=number,
            name=str(entry["name"]),
            schema=_schema_from_entry(entry),
        )
    return specs


# --- synthetic fixtures -----------------------------------------------------

FIRST_NAMES = (
    "francesco", "marco", "anna", "zuane", "perina",
    "antonio", "carlo", "maria", "domenico", "iseppo",
)
FAMILY_NAMES = (
    "gritti", "mosto", "bernardo", "capello", "michiel",
    "patarol", "rissardi", "gallo", "giustinian", "panizza",
)
PROPERTY_TYPES = (
    "casa", "bottega", "casa in soler", "bottega da casarol", "magazen",
    "altro appartamento", "casa a pepian", "porzione di bottega",
    "bottega da fabro", "casetta",
)
LOCATIONS = (
    "calle delle carozze", "calle della torre", "fondamenta san domenico",
    "corte carli", "rio terra", "campiello della fraterna",
    "sotto le collonelle", "calle dei ragusei", "corte de ca celsi",
    "fondamenta de carmini",
)
BUILDING_FUNCTIONS = ("casa", "appartamento", "bottega", "magazzeno", "orto", "locale")
DISTRICTS = ("san polo", "san marco", "dorsoduro", "cannaregio", "castello", "santa croce")
PARISHES = (
    "san silvestro", "san polo", "santa maria formosa", "san basso",
    "san provolo", "santa cattarina",
)
PROFESSIONS = (
    "medico", "avocato", "avvocato", "fabro", "casarol",
    "procuratore", "merciaio", "nodaro",
)

# Landmarks fixture bounding box: (lat_min, lat_max, lon_min, lon_max).
LANDMARK_BBOX = (45.42, 45.45, 12.31, 12.36)
LANDMARK_TYPES = ("church", "square")

_CATASTICI_COLUMNS = (
    ("ID", "integer", "Primary key"),
    ("Owner_ID", "integer", "Unique ID of each owner of the property"),
    ("Owner_First_Name", "text", "First name of the owner of the property"),
    ("Owner_Family_Name", "text", "Family name of the owner of the property"),
    ("Property_Type", "text", "Specific type of the property given in Italian"),
    (
        "Rent_Income",
        "integer",
        "Rent price of the property that the owner receives as income, "
        "given in Venice ancient gold coin ducato",
    ),
    (
        "Property_Location",
        "text",
        "Ancient approximate toponym of the property given in Italian",
    ),
)

_BUILDINGS_COLUMNS = (
    ("building_id", "integer", "Unique row identifier of the building record"),
    ("building_functions", "text", "Function of the building given in Italian"),
    ("rent_price", "integer", "Annual rent of the building in ducati"),
    ("district", "text", "District of the city the building belongs to"),
    ("owner_family_name", "text", "Family name of the owner of the building"),
    ("owner_first_name", "text", "First name of the owner of the building"),
    ("parish", "text", "Parish the building belongs to"),
    ("profession", "text", "Profession of the owner of the building"),
)

_LANDMARKS_COLUMNS = (
    ("landmark_name", "text", "Name of the landmark"),
    ("landmark_type", "text", "Type of the landmark, either church or square"),
    ("latitude", "latitude", "Latitude of the landmark in decimal degrees"),
    ("longitude", "longitude", "Longitude of the landmark in decimal degrees"),
)


def _make_schema(table: str, columns: Iterable[tuple[str, str, str]], pk: str) -> TableSchema:
    return TableSchema(
        table_name=table,
        columns=tuple(ColumnMeta(*c) for c in columns),
        primary_key=pk,
    )


CATASTICI_SCHEMA = _make_schema("catastici", _CATASTICI_COLUMNS, "ID")
BUILDINGS_SCHEMA = _make_schema("buildings", _BUILDINGS_COLUMNS, "building_id")
LANDMARKS_SCHEMA = _make_schema("landmarks", _LANDMARKS_COLUMNS, "landmark_name")

FIXTURE_PROFILES = ("catastici", "sommarioni", "landmarks")


def _catastici_row(rng: random.Random, index: int) -> dict[str, CellValue]:
    owner = rng.randrange(len(FIRST_NAMES) * len(FAMILY_NAMES))
    # ~5% of rents are transcription gaps (null).
    rent = None if rng.random() < 0.05 else rng.randint(5, 200)
    return {
        "ID": index,
        "Owner_ID": owner + 1,
        "Owner_First_Name": FIRST_NAMES[owner % len(FIRST_NAMES)],
        "Owner_Family_Name": FAMILY_NAMES[owner // len(FIRST_NAMES)],
        "Property_Type": rng.choice(PROPERTY_TYPES),
        "Rent_Income": rent,
        "Property_Location": rng.choice(LOCATIONS),
    }


def _buildings_row(rng: random.Random, index: int) -> dict[str, CellValue]:
    owner = rng.randrange(len(FIRST_NAMES) * len(FAMILY_NAMES))
    return {
        "building_id": index,
        "building_functions": rng.choice(BUILDING_FUNCTIONS),
        "rent_price": None if rng.random() < 0.05 else rng.randint(5, 200),
        "district": rng.choice(DISTRICTS),
        "owner_family_name": FAMILY_NAMES[owner // len(FIRST_NAMES)],
        "owner_first_name": FIRST_NAMES[owner % len(FIRST_NAMES)],
        "parish": rng.choice(PARISHES),
        "profession": rng.choice(PROFESSIONS),
    }


def _landmarks_row(rng: random.Random, index: int) -> dict[str, CellValue]:
    kind = rng.choice(LANDMARK_TYPES)
    prefix = "chiesa di san" if kind == "church" else "campo san"
    lat_min, lat_max, lon_min, lon_max = LANDMARK_BBOX
    return {
        "landmark_name": f"{prefix} {FIRST_NAMES[rng.randrange(len(FIRST_NAMES))]} {index}",
        "landmark_type": kind,
        "latitude": round(rng.uniform(lat_min, lat_max), 6),
        "longitude": round(rng.uniform(lon_min, lon_max), 6),
    }


_PROFILES = {
    "catastici": (CATASTICI_SCHEMA, _catastici_row, 1, "buildings in Venice, year A"),
    "sommarioni": (BUILDINGS_SCHEMA, _buildings_row, 2, "buildings in Venice, year B"),
    "landmarks": (LANDMARKS_SCHEMA, _landmarks_row, 3, "landmarks in Venice"),
}


def generate_fixture(
    seed: int,
    n_rows: int,
    schema_profile: str,
    dataset_number: int | None = None,
    display_name: str | None = None,
) -> Dataset:
    """Deterministic synthetic dataset for desk-scale testing.

    Pure function of its arguments: the same (seed, n_rows, profile) always
    yields a byte-identical dataset.
    """
    if n_rows < 1:
        raise ConfigError("n_rows must be at least 1")
    if schema_profile not in _PROFILES:
        raise ConfigError(f"unknown fixture profile {schema_profile!r}")
    schema, make_row, default_number, default_name = _PROFILES[schema_profile]
    rng = random.Random(seed)
    rows = tuple(make_row(rng, i + 1) for i in range(n_rows))
    return Dataset(
        dataset_number=default_number if dataset_number is None else dataset_number,
        display_name=display_name or default_name,
        schema=schema,
        rows=rows,
    )
