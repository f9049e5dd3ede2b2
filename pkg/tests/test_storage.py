# tests/test_storage.py
import json
import os
import struct

import numpy as np
import pytest

from modules.components import build_library
from modules.errors import ConfigurationMismatchError, StorageFormatError
from modules.storage import (
    decode_matrix,
    decode_mesh,
    encode_matrix,
    encode_mesh,
    load_archetype_bundle,
    load_json,
    load_matrix,
    load_snapshots,
    read_csv,
    save_archetype_bundle,
    save_matrix,
    save_snapshots,
    write_csv,
    write_json,
)


# =======================================
# CONTAINERS
# =======================================

def test_mesh_container_header_and_contents(unit_square):
    payload = encode_mesh(unit_square)
    assert payload[:4] == b"OS2M"
    assert struct.unpack_from("<IIIII", payload, 4) == (1, 2, 81, 16, 9)
    mesh = decode_mesh(payload)
    np.testing.assert_array_equal(mesh.nodes, unit_square.nodes)
    np.testing.assert_array_equal(mesh.connectivity, unit_square.connectivity)
    assert mesh.degree == 2
    assert sorted(mesh.tags) == sorted(unit_square.tags)
    np.testing.assert_array_equal(mesh.tags["top"], unit_square.tags["top"])


def test_mesh_container_rejects_bad_payloads(unit_square):
    payload = encode_mesh(unit_square)
    with pytest.raises(StorageFormatError):
        decode_mesh(b"XXXX" + payload[4:])
    with pytest.raises(StorageFormatError):
        decode_mesh(payload[:-3])
    with pytest.raises(StorageFormatError):
        decode_mesh(payload + b"\x00")
    bad_version = payload[:4] + struct.pack("<I", 2) + payload[8:]
    with pytest.raises(StorageFormatError):
        decode_mesh(bad_version)


def test_matrix_container(tmp_path):
    a = np.arange(6.0).reshape(3, 2) / 7.0
    payload = encode_matrix(a)
    assert struct.unpack_from("<III", payload, 4) == (1, 3, 2)
    assert len(payload) == 16 + 8 * 6
    np.testing.assert_array_equal(decode_matrix(payload), a)

    path = str(tmp_path / "v.os2a")
    save_matrix(path, np.array([1.0, 2.0]))
    np.testing.assert_array_equal(load_matrix(path, vector=True), [1.0, 2.0])

    with pytest.raises(StorageFormatError):
        decode_matrix(payload[:-8])
    with pytest.raises(StorageFormatError):
        decode_matrix(b"OS2M" + payload[4:])
    with pytest.raises(ValueError):
        encode_matrix(np.zeros((2, 2, 2)))


# =======================================
# TABLES
# =======================================

def test_csv_uses_17_digits_and_lowercase_booleans(tmp_path):
    path = str(tmp_path / "t.csv")
    write_csv(path, [{"a": 0.1, "b": True, "c": 3}, {"a": 1.0 / 3.0, "b": False, "c": 4}])
    rows = read_csv(path)
    assert rows[0] == {"a": "0.10000000000000001", "b": "true", "c": "3"}
    assert float(rows[1]["a"]) == 1.0 / 3.0
    assert rows[1]["b"] == "false"


def test_json_helpers(tmp_path):
    path = str(tmp_path / "s.json")
    write_json(path, {"x": np.float64(0.5), "n": np.int64(3), "v": np.array([1.0, 2.0]), "nan": float("nan")})
    data = load_json(path)
    assert data == {"x": 0.5, "n": 3, "v": [1.0, 2.0], "nan": "nan"}

    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(StorageFormatError):
        load_json(str(broken))
    with pytest.raises(FileNotFoundError):
        load_json(str(tmp_path / "missing.json"))


# =======================================
# SNAPSHOTS AND BUNDLES
# =======================================

def test_snapshots_round_trip(trained, tmp_path):
    folder = str(tmp_path / "snapshots")
    index = save_snapshots(folder, trained.snapshots)
    assert os.path.exists(index)
    loaded = load_snapshots(folder)
    assert len(loaded.records) == len(trained.snapshots.records)
    assert loaded.parameters == trained.snapshots.parameters
    for a, b in zip(loaded.records, trained.snapshots.records):
        assert (a.config, a.component, a.label) == (b.config, b.component, b.label)
        np.testing.assert_array_equal(a.u, b.u)


def test_bundle_round_trip(trained, tmp_path):
    folder = str(tmp_path / "ext")
    save_archetype_bundle(folder, trained.library["ext"], trained.projected)
    with open(os.path.join(folder, "manifest.json"), encoding="utf-8") as f:
        manifest = json.load(f)
    assert manifest["label"] == "ext"
    assert manifest["projected"] == len(trained.projected["ext"])

    fresh = build_library(trained.cfg)
    restored = load_archetype_bundle(folder, fresh["ext"])
    assert restored["n"] == trained.library["ext"].basis.n
    np.testing.assert_array_equal(fresh["ext"].basis.Z, trained.library["ext"].basis.Z)
    np.testing.assert_array_equal(fresh["ext"].coefficient_means[1], trained.library["ext"].coefficient_means[1])

    with pytest.raises(ConfigurationMismatchError):
        load_archetype_bundle(folder, fresh["int"])
