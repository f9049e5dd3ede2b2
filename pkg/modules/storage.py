# modules/storage.py
"""
Persistence: atomic file writes, the binary mesh (OS2M) and matrix (OS2A)
containers, snapshot records, archetype bundles with a manifest, and report
tables (CSV with 17 significant digits, JSON summaries).
"""

import csv
import io
import json
import os
import struct
import tempfile
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from modules.errors import ConfigurationMismatchError, StorageFormatError
from modules.logger import logger
from modules.mesh import Mesh
from modules.utils import fmt_float

MESH_MAGIC = b"OS2M"
MATRIX_MAGIC = b"OS2A"
FORMAT_VERSION = 1


# =======================================
# ATOMIC WRITE HELPERS
# =======================================

def _atomic_write_bytes(file_path: str, payload: bytes) -> None:
    """
    Writes to a temp file in the target folder, then renames over the target.

    :param file_path: Target file path
    :param payload: Raw bytes
    """
    directory = os.path.dirname(file_path)
    if directory:
        os.makedirs(directory, exist_ok=True)

    temp_fd, temp_path = tempfile.mkstemp(dir=directory or None, suffix=".tmp")
    try:
        with os.fdopen(temp_fd, "wb") as f:
            f.write(payload)
        os.replace(temp_path, file_path)
    except Exception:
        try:
            os.unlink(temp_path)
        except OSError:
            pass
        raise


def _atomic_write(file_path: str, data: Any, indent: int = 4) -> None:
    """Atomically writes JSON data to a file."""
    text = json.dumps(data, indent=indent, ensure_ascii=False)
    _atomic_write_bytes(file_path, text.encode("utf-8"))


def load_json(file_path: str) -> Any:
    try:
        with open(file_path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        logger.error(f"[STORAGE] File not found: {file_path}")
        raise
    except json.JSONDecodeError as e:
        logger.error(f"[STORAGE] Error parsing {file_path}: {e}")
        raise StorageFormatError(f"{file_path}: {e}") from e


def _read(file_path: str) -> bytes:
    try:
        with open(file_path, "rb") as f:
            return f.read()
    except FileNotFoundError:
        logger.error(f"[STORAGE] File not found: {file_path}")
        raise


# =======================================
# BINARY CONTAINERS
# =======================================

def encode_matrix(a: np.ndarray) -> bytes:
    """OS2A: magic, version u32, rows u32, cols u32, then little-endian float64 row-major."""
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"Only vectors and matrices can be stored, got shape {a.shape}")
    header = MATRIX_MAGIC + struct.pack("<III", FORMAT_VERSION, *a.shape)
    return header + np.ascontiguousarray(a, dtype="<f8").tobytes()


def decode_matrix(payload: bytes, vector: bool = False) -> np.ndarray:
    if len(payload) < 16 or payload[:4] != MATRIX_MAGIC:
        raise StorageFormatError("Not an OS2A matrix container")
    version, rows, cols = struct.unpack_from("<III", payload, 4)
    if version != FORMAT_VERSION:
        raise StorageFormatError(f"Unsupported OS2A version {version}")
    expected = 16 + 8 * rows * cols
    if len(payload) != expected:
        raise StorageFormatError(f"OS2A payload has {len(payload)} bytes, expected {expected}")
    a = np.frombuffer(payload, dtype="<f8", offset=16).reshape(rows, cols).astype(float)
    return a.ravel() if vector else a


def encode_mesh(mesh: Mesh) -> bytes:
    """
    OS2M: magic, version u32, d, N_v, N_e, n_lp (u32), nodes as float64 row-major,
    connectivity as uint32, then the tag table (count, then per tag: name length,
    name bytes, facet count, (element, side) pairs as uint32).
    """
    buf = io.BytesIO()
    d, nv, ne, nlp = mesh.dim, mesh.n_nodes, mesh.n_elements, mesh.nodes_per_element
    buf.write(MESH_MAGIC + struct.pack("<IIIII", FORMAT_VERSION, d, nv, ne, nlp))
    buf.write(np.ascontiguousarray(mesh.nodes, dtype="<f8").tobytes())
    buf.write(np.ascontiguousarray(mesh.connectivity, dtype="<u4").tobytes())
    buf.write(struct.pack("<I", len(mesh.tags)))
    for name in sorted(mesh.tags):
        raw = name.encode("utf-8")
        facets = mesh.tags[name]
        buf.write(struct.pack("<I", len(raw)) + raw + struct.pack("<I", len(facets)))
        buf.write(np.ascontiguousarray(facets, dtype="<u4").tobytes())
    return buf.getvalue()


def decode_mesh(payload: bytes) -> Mesh:
    if len(payload) < 24 or payload[:4] != MESH_MAGIC:
        raise StorageFormatError("Not an OS2M mesh container")
    version, d, nv, ne, nlp = struct.unpack_from("<IIIII", payload, 4)
    if version != FORMAT_VERSION:
        raise StorageFormatError(f"Unsupported OS2M version {version}")
    degree = int(round(nlp ** (1.0 / d))) - 1
    if (degree + 1) ** d != nlp:
        raise StorageFormatError(f"n_lp={nlp} is not a tensor-product element size in {d}D")
    try:
        offset = 24
        nodes = np.frombuffer(payload, dtype="<f8", count=nv * d, offset=offset).reshape(nv, d).astype(float)
        offset += 8 * nv * d
        conn = np.frombuffer(payload, dtype="<u4", count=ne * nlp, offset=offset).reshape(ne, nlp).astype(np.int64)
        offset += 4 * ne * nlp
        (n_tags,) = struct.unpack_from("<I", payload, offset)
        offset += 4
        tags = {}
        for _ in range(n_tags):
            (length,) = struct.unpack_from("<I", payload, offset)
            offset += 4
            name = payload[offset:offset + length].decode("utf-8")
            offset += length
            (count,) = struct.unpack_from("<I", payload, offset)
            offset += 4
            tags[name] = np.frombuffer(payload, dtype="<u4", count=2 * count, offset=offset).reshape(count, 2).astype(np.int64)
            offset += 8 * count
    except (struct.error, ValueError) as e:
        raise StorageFormatError(f"Truncated OS2M container: {e}") from e
    if offset != len(payload):
        raise StorageFormatError(f"OS2M container has {len(payload) - offset} trailing bytes")
    return Mesh(nodes, conn, degree, tags=tags)


def save_matrix(file_path: str, a: np.ndarray) -> None:
    _atomic_write_bytes(file_path, encode_matrix(a))


def load_matrix(file_path: str, vector: bool = False) -> np.ndarray:
    return decode_matrix(_read(file_path), vector)


def save_mesh(file_path: str, mesh: Mesh) -> None:
    _atomic_write_bytes(file_path, encode_mesh(mesh))


def load_mesh(file_path: str) -> Mesh:
    return decode_mesh(_read(file_path))


# =======================================
# SNAPSHOTS
# =======================================

def save_snapshots(folder: str, snapshots) -> str:
    """One OS2A record per (configuration, component) plus index.json listing them."""
    records = []
    for r in snapshots.records:
        name = f"snap_k{r.config:04d}_i{r.component:02d}.os2a"
        save_matrix(os.path.join(folder, name), r.u)
        records.append({"config": r.config, "component": r.component, "label": r.label,
                        "mu": [float(v) for v in r.mu], "file": name})
    index_path = os.path.join(folder, "index.json")
    _atomic_write(index_path, {
        "version": FORMAT_VERSION,
        "parameters": [p.to_dict() for p in snapshots.parameters],
        "records": records,
    })
    logger.info(f"[STORAGE] {len(records)} snapshots saved to {folder}")
    return index_path


def load_snapshot_index(folder: str) -> Dict[str, Any]:
    index = load_json(os.path.join(folder, "index.json"))
    if index.get("version") != FORMAT_VERSION or "records" not in index:
        raise StorageFormatError(f"Unsupported snapshot index in {folder}")
    return index


def load_snapshots(folder: str):
    from modules.components import GlobalParameter
    from modules.training import Snapshot, SnapshotSet

    index = load_snapshot_index(folder)
    records = [
        Snapshot(r["config"], r["component"], r["label"], np.asarray(r["mu"], dtype=float),
                 load_matrix(os.path.join(folder, r["file"]), vector=True))
        for r in index["records"]
    ]
    return SnapshotSet(records, [GlobalParameter.from_dict(p) for p in index["parameters"]])


# =======================================
# ARCHETYPE BUNDLES
# =======================================

def _nm(key) -> str:
    return f"n{key[0]}_m{key[1]}"


def save_archetype_bundle(folder: str, arch, projected=None) -> str:
    """
    Mesh, reduced bases, coefficient means, quadrature weights and EIM points of one
    archetype, with a manifest listing their dimensions.
    """
    os.makedirs(folder, exist_ok=True)
    save_mesh(os.path.join(folder, "mesh.os2m"), arch.mesh)
    manifest: Dict[str, Any] = {
        "version": FORMAT_VERSION,
        "label": arch.label,
        "n_dofs": int(arch.n_dofs),
        "N_e": int(arch.mesh.n_elements),
        "N_p": int(len(arch.port_quadrature)),
        "inner_product": arch.inner.kind,
        "parameter_names": list(arch.parameter_names),
        "parameter_box": {k: [float(v) for v in box] for k, box in arch.parameter_box.items()},
        "n": 0,
        "m": 0,
        "element_weights": [],
        "port_weights": [],
        "eim": [],
    }
    if arch.basis is not None:
        manifest.update(n=arch.basis.n, m=arch.basis.m)
        save_matrix(os.path.join(folder, "Z.os2a"), arch.basis.Z)
        save_matrix(os.path.join(folder, "W.os2a"), arch.basis.W)
        save_matrix(os.path.join(folder, "sigma_bubble.os2a"), arch.basis.sigma_bubble)
        save_matrix(os.path.join(folder, "sigma_port.os2a"), arch.basis.sigma_port)
    if arch.coefficient_means is not None:
        save_matrix(os.path.join(folder, "alpha_mean.os2a"), arch.coefficient_means[0])
        save_matrix(os.path.join(folder, "beta_mean.os2a"), arch.coefficient_means[1])
    for key, w in sorted(arch.element_weights.items()):
        save_matrix(os.path.join(folder, f"element_weights_{_nm(key)}.os2a"), w)
        manifest["element_weights"].append(list(key))
    for key, w in sorted(arch.port_weights.items()):
        save_matrix(os.path.join(folder, f"port_weights_{_nm(key)}.os2a"), w)
        manifest["port_weights"].append(list(key))
    for m, idx in sorted(arch.eim_points.items()):
        save_matrix(os.path.join(folder, f"eim_m{m}.os2a"), np.asarray(idx, dtype=float))
        manifest["eim"].append(int(m))
    if projected is not None and arch.label in projected.samples:
        s = projected[arch.label]
        save_matrix(os.path.join(folder, "alphas.os2a"), s.alphas)
        save_matrix(os.path.join(folder, "betas.os2a"), s.betas)
        save_matrix(os.path.join(folder, "mus.os2a"), s.mus)
        save_matrix(os.path.join(folder, "records.os2a"), np.column_stack([s.configs, s.components]).astype(float))
        manifest["projected"] = int(len(s))
    path = os.path.join(folder, "manifest.json")
    _atomic_write(path, manifest)
    logger.info(f"[STORAGE] Bundle '{arch.label}' saved to {folder} (n={manifest['n']}, m={manifest['m']})")
    return path


def load_archetype_bundle(folder: str, arch, atol: float = 1e-12) -> Dict[str, Any]:
    """
    Restores the offline payloads of a bundle onto a freshly built archetype.

    :raises ConfigurationMismatchError: the bundle was built for a different mesh or label
    :raises StorageFormatError: unreadable manifest or container
    """
    from modules.training import ReducedBasisPair

    manifest = load_json(os.path.join(folder, "manifest.json"))
    if manifest.get("version") != FORMAT_VERSION:
        raise StorageFormatError(f"Unsupported bundle version in {folder}")
    if manifest.get("label") != arch.label:
        raise ConfigurationMismatchError(f"Bundle label '{manifest.get('label')}' does not match '{arch.label}'")
    mesh = load_mesh(os.path.join(folder, "mesh.os2m"))
    if mesh.nodes.shape != arch.mesh.nodes.shape or not np.allclose(mesh.nodes, arch.mesh.nodes, atol=atol):
        raise ConfigurationMismatchError(f"Bundle '{arch.label}' was built on a different mesh")

    def path(name: str) -> str:
        return os.path.join(folder, name)

    if manifest["n"] or manifest["m"]:
        arch.basis = ReducedBasisPair(
            load_matrix(path("Z.os2a")), load_matrix(path("W.os2a")),
            load_matrix(path("sigma_bubble.os2a"), vector=True), load_matrix(path("sigma_port.os2a"), vector=True),
            manifest["inner_product"],
        )
    if os.path.exists(path("alpha_mean.os2a")):
        arch.coefficient_means = (load_matrix(path("alpha_mean.os2a"), vector=True),
                                  load_matrix(path("beta_mean.os2a"), vector=True))
    for key in manifest["element_weights"]:
        arch.element_weights[tuple(key)] = load_matrix(path(f"element_weights_{_nm(key)}.os2a"), vector=True)
    for key in manifest["port_weights"]:
        arch.port_weights[tuple(key)] = load_matrix(path(f"port_weights_{_nm(key)}.os2a"), vector=True)
    for m in manifest["eim"]:
        arch.eim_points[int(m)] = load_matrix(path(f"eim_m{m}.os2a"), vector=True).astype(np.int64)
    logger.info(f"[STORAGE] Bundle '{arch.label}' loaded from {folder}")
    return manifest


def save_library(folder: str, library, projected=None) -> List[str]:
    return [save_archetype_bundle(os.path.join(folder, arch.label), arch, projected) for arch in library]


def load_library(folder: str, library) -> Dict[str, Dict[str, Any]]:
    return {arch.label: load_archetype_bundle(os.path.join(folder, arch.label), arch) for arch in library}


# =======================================
# REPORT TABLES
# =======================================

def _cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (float, np.floating)):
        return fmt_float(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(file_path: str, rows: Iterable[Dict[str, Any]], columns: Optional[Sequence[str]] = None) -> str:
    """CSV table with floats at 17 significant digits; columns default to the keys of the first row."""
    rows = list(rows)
    columns = list(columns or (rows[0].keys() if rows else []))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(c, "")) for c in columns])
    _atomic_write_bytes(file_path, buf.getvalue().encode("utf-8"))
    logger.debug(f"[STORAGE] {len(rows)} rows written to {file_path}")
    return file_path


def read_csv(file_path: str) -> List[Dict[str, str]]:
    with open(file_path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if np.isfinite(value) else fmt_float(value)
    return value


def write_json(file_path: str, data: Any) -> str:
    _atomic_write(file_path, _jsonable(data))
    return file_path
