from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cadastre_qa.config import bundled_data_path
from cadastre_qa.llm_gateway import CachingEmbedder, VectorTableEmbedder
from cadastre_qa.tabular_store import Dataset, generate_fixture, load_schema_config


def _one_hot(axis: int, dim: int = 18) -> tuple[float, ...]:
    vector = [0.0] * dim
    vector[axis] = 1.0
    return tuple(vector)


def _mix(dim: int = 18, **weights: float) -> tuple[float, ...]:
    vector = [0.0] * dim
    for axis, weight in weights.items():
        vector[int(axis.lstrip("a"))] = weight
    return tuple(vector)


# Axes 0-1: dwellings; 2-3: law; 4-5: medicine; the rest one-hot singletons.
CLUSTER_VECTORS: dict[str, tuple[float, ...]] = {
    "casa": _mix(a0=1.0),
    "appartamento": _mix(a0=0.8, a1=0.6),
    "house": _mix(a0=0.9, a1=0.2),
    "houses": _mix(a0=0.85, a1=0.3),
    "apartment": _mix(a0=0.7, a1=0.7),
    "avocato": _mix(a2=1.0),
    "avvocato": _mix(a2=0.95, a3=0.1),
    "lawyers": _mix(a2=0.9, a3=0.3),
    "medico": _mix(a4=1.0),
    "medical doctors": _mix(a4=0.9, a5=0.3),
    "medical doctor": _mix(a4=0.9, a5=0.3),
    "fabro": _one_hot(6),
    "casarol": _one_hot(7),
    "procuratore": _one_hot(8),
    "merciaio": _one_hot(9),
    "nodaro": _one_hot(10),
    "bottega": _one_hot(11),
    "magazzeno": _one_hot(12),
    "orto": _one_hot(13),
    "locale": _one_hot(14),
    "church": _one_hot(15),
    "square": _one_hot(16),
}


@pytest.fixture()
def cluster_embedder() -> CachingEmbedder:
    return CachingEmbedder(VectorTableEmbedder(CLUSTER_VECTORS))


@pytest.fixture(scope="session")
def catastici_dataset():
    return generate_fixture(1, 200, "catastici")


@pytest.fixture(scope="session")
def pipeline_schemas():
    return load_schema_config(bundled_data_path("schemas.yaml"))


@pytest.fixture(scope="session")
def pipeline_datasets(pipeline_schemas):
    datasets = {
        1: generate_fixture(11, 60, "sommarioni", dataset_number=1),
        2: generate_fixture(12, 60, "sommarioni", dataset_number=2),
        3: generate_fixture(13, 20, "landmarks", dataset_number=3),
    }
    # Rebind to the config-declared schemas so table names match the config.
    return {
        number: Dataset(
            dataset_number=number,
            display_name=pipeline_schemas[number].name,
            schema=pipeline_schemas[number].schema,
            rows=ds.rows,
        )
        for number, ds in datasets.items()
    }


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        verdict = "PASS" if report.passed else "FAIL"
        name = report.nodeid.split("::")[-1]
        print(f"[acceptance] {name}: {verdict}", file=sys.stderr)
