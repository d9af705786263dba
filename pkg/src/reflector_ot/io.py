"""File formats: legacy ASCII VTK, OBJ, CSV, PGM, and the run configuration.

Every writer embeds the configuration hash as a comment where the format
allows, so outputs are self-describing.
"""

import csv
import hashlib

import numpy as np

from .errors import ConfigError, ReflectorOTError


def config_hash(text):
    """Short sha256 of a configuration file's text."""
    return hashlib.sha256(text.encode()).hexdigest()[:16]


# --- PGM --------------------------------------------------------------------


def read_pgm(path):
    """Read a P2 (ASCII) or P5 (binary) grayscale PGM into a uint array."""
    with open(path, "rb") as fh:
        data = fh.read()

    # tokenize the header, honouring '#' comments
    tokens = []
    i = 0
    while len(tokens) < 4 and i < len(data):
        c = data[i : i + 1]
        if c == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j : j + 1].isspace():
                j += 1
            tokens.append(data[i:j])
            i = j
    if len(tokens) < 4 or tokens[0] not in (b"P2", b"P5"):
        raise ReflectorOTError(f"{path}: not a P2/P5 PGM file")
    magic, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic == b"P2":
        vals = np.array(data[i:].split(), dtype=np.int64)
    else:
        i += 1  # single whitespace after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.uint8
        vals = np.frombuffer(data[i:], dtype=dtype, count=width * height).astype(np.int64)
    if vals.size != width * height:
        raise ReflectorOTError(f"{path}: truncated PGM payload")
    return vals.reshape(height, width)


def write_pgm(path, image, maxval=65535, comment=None):
    """Write a nonnegative 2d array as ASCII PGM (P2), scaled by its maximum."""
    img = np.asarray(image, float)
    top = img.max()
    scaled = np.zeros_like(img, dtype=np.int64) if top <= 0 else np.round(
        img / top * maxval
    ).astype(np.int64)
    with open(path, "w") as fh:
        fh.write("P2\n")
        if comment:
            fh.write(f"# {comment}\n")
        fh.write(f"{img.shape[1]} {img.shape[0]}\n{maxval}\n")
        for row in scaled:
            fh.write(" ".join(str(v) for v in row))
            fh.write("\n")


# --- VTK / OBJ / CSV --------------------------------------------------------


def _linearized_cells(mesh):
    """Triangle connectivity for export; order-2 cells split into 4 triangles."""
    tris = mesh.triangles
    if mesh.order == 1 or mesh.tri_midnodes is None:
        return tris.copy()
    m = mesh.tri_midnodes
    out = np.empty((4 * len(tris), 3), dtype=np.int64)
    out[0::4] = np.stack([tris[:, 0], m[:, 0], m[:, 2]], axis=1)
    out[1::4] = np.stack([m[:, 0], tris[:, 1], m[:, 1]], axis=1)
    out[2::4] = np.stack([m[:, 2], m[:, 1], tris[:, 2]], axis=1)
    out[3::4] = np.stack([m[:, 0], m[:, 1], m[:, 2]], axis=1)
    return out


def write_vtk(path, mesh, point_data=None, points=None, comment=""):
    """Legacy ASCII VTK unstructured grid with scalar point data.

    Quadratic geometry is linearised into four sub-triangles per cell for
    portability; ``points`` overrides vertex positions (e.g. a reflector
    surface), defaulting to the mesh nodes on the sphere.
    """
    pts = mesh.vertices if points is None else np.asarray(points, float)
    cells = _linearized_cells(mesh)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 2.0\n")
        fh.write(f"{comment or 'cap mesh'}\n")
        fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {len(pts)} double\n")
        for p in pts:
            fh.write(f"{p[0]:.16e} {p[1]:.16e} {p[2]:.16e}\n")
        fh.write(f"CELLS {len(cells)} {4 * len(cells)}\n")
        for c in cells:
            fh.write(f"3 {c[0]} {c[1]} {c[2]}\n")
        fh.write(f"CELL_TYPES {len(cells)}\n")
        fh.write("\n".join(["5"] * len(cells)))
        fh.write("\n")
        if point_data:
            fh.write(f"POINT_DATA {len(pts)}\n")
            for name, vals in point_data.items():
                vals = np.asarray(vals, float)
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                fh.write("\n".join(f"{v:.16e}" for v in vals))
                fh.write("\n")


def read_vtk_points(path):
    """Vertex array of a legacy ASCII VTK file (round-trip checks)."""
    with open(path) as fh:
        lines = fh.readlines()
    for i, line in enumerate(lines):
        if line.startswith("POINTS"):
            n = int(line.split()[1])
            vals = []
            j = i + 1
            while len(vals) < 3 * n:
                vals.extend(float(t) for t in lines[j].split())
                j += 1
            return np.array(vals).reshape(n, 3)
    raise ReflectorOTError(f"{path}: no POINTS section")


def write_obj(path, mesh, radius, comment=""):
    """Wavefront OBJ of the reflector surface {x * rho(x)}.

    ``radius`` holds rho at every mesh vertex; quadratic cells are linearised.
    """
    pts = mesh.vertices * np.asarray(radius, float)[:, None]
    cells = _linearized_cells(mesh)
    with open(path, "w") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        for p in pts:
            fh.write(f"v {p[0]:.16e} {p[1]:.16e} {p[2]:.16e}\n")
        for c in cells:
            fh.write(f"f {c[0] + 1} {c[1] + 1} {c[2] + 1}\n")


def read_obj_vertices(path):
    verts = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("v "):
                verts.append([float(t) for t in line.split()[1:4]])
    return np.array(verts)


def write_csv(path, header, rows, comment=None):
    """CSV with a header row; optional leading '#' comment line."""
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# --- run configuration ------------------------------------------------------

try:
    import tomllib as _toml
except ModuleNotFoundError:  # python < 3.11
    import tomli as _toml

# every key the config format understands, per section
CONFIG_SCHEMA = {
    "run": {"out_dir", "seed", "threads"},
    "mesh": {"theta", "n", "order"},
    "fem": {"degree"},
    "solver": {
        "tau",
        "cost_sign",
        "max_iter",
        "stop_mode",
        "residual_tol",
        "diagnostics_every",
        "u0",
        "cg_tol",
        "preconditioner",
    },
    "source": {"type", "axis", "halfangle", "height"},
    "target": {
        "type",
        "axis",
        "halfangle",
        "height",
        "width",
        "base",
        "peak",
        "contrast",
        "image",
        "half_side",
        "size",
        "threshold",
        "floor",
        "normalize_to_source",
    },
    "study": {"n_list", "exact_solution"},
    "raytrace": {"rays", "mode", "grid_n", "polar_max", "extent", "smoothing"},
    "continuation": {"alphas"},
}


def load_config(path):
    """Parse and validate a TOML run configuration.

    Unknown sections or keys raise ConfigError naming the offender; the raw
    text is kept for hashing into output files.
    """
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
        cfg = _toml.loads(raw.decode())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except Exception as exc:
        raise ConfigError(f"cannot parse {path}: {exc}")
    for section, body in cfg.items():
        if section not in CONFIG_SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"section [{section}] must be a table")
        for key in body:
            if key not in CONFIG_SCHEMA[section]:
                raise ConfigError(f"unknown key '{key}' in section [{section}]")
    cfg["_hash"] = config_hash(raw.decode())
    return cfg
