"""Delimited text files with ``# key = value`` headers, and run manifests.

Numbers are written with 17 significant digits so binary64 values survive
a text round trip unchanged.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import FormatError
from .numerics import build_grid
from .profile import ContinuationRecord, ProblemParams, ProfileSolution
from .simulator import SimConfig, SimulationTrace, TraceRecord

PROFILE_FORMAT = "nlsblowup-profile"
TRACE_FORMAT = "nlsblowup-trace"
CONTINUATION_FORMAT = "nlsblowup-continuation"
REPORT_FORMAT = "nlsblowup-report"


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _parse_value(text: str):
    text = text.strip()
    if text in ("true", "false"):
        return text == "true"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def write_table(path, header: dict, columns: list[str], rows, blocks: dict | None = None):
    """Header lines, a column line, then comma-separated rows.

    ``blocks`` maps a name to (columns, rows); each block starts with a
    ``# block = name`` line, after two blank lines (gnuplot index style).
    """
    lines = [f"# {k} = {fmt(v)}" for k, v in header.items()]
    if columns:
        lines.append(",".join(columns))
        lines.extend(",".join(fmt(x) for x in row) for row in rows)
    for name, (cols, brows) in (blocks or {}).items():
        lines += ["", "", f"# block = {name}", ",".join(cols)]
        lines.extend(",".join(fmt(x) for x in row) for row in brows)
    Path(path).write_text("\n".join(lines) + "\n")


def read_table(path):
    """Inverse of write_table: (header, columns, rows, blocks) with rows as strings."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    header, blocks = {}, {}
    columns, rows = None, []
    current = None  # name of the block being read, None for the main table
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, sep, value = line[1:].partition("=")
            if not sep:
                continue
            key = key.strip()
            if key == "block":
                current = value.strip()
                blocks[current] = (None, [])
            elif current is None:
                header[key] = _parse_value(value)
            continue
        cells = line.split(",")
        if current is None:
            if columns is None:
                columns = cells
            else:
                rows.append(cells)
        else:
            cols, brows = blocks[current]
            if cols is None:
                blocks[current] = (cells, brows)
            else:
                brows.append(cells)
    return header, columns or [], rows, blocks


def _require(header, keys, path):
    missing = [k for k in keys if k not in header]
    if missing:
        raise FormatError(f"{path}: missing header keys {missing}")


def _floats(rows, ncols, path):
    try:
        arr = np.array([[float(c) for c in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric cell ({exc})") from exc
    if arr.size == 0:
        arr = arr.reshape(0, ncols)
    if arr.ndim != 2 or arr.shape[1] != ncols:
        raise FormatError(f"{path}: expected {ncols} columns")
    return arr


# ---------------------------------------------------------------------------
# Profiles
# ---------------------------------------------------------------------------


def profile_header(sol: ProfileSolution) -> dict:
    return {
        "format": PROFILE_FORMAT,
        "version": __version__,
        "d": sol.params.d,
        "sigma": sol.params.sigma,
        "a": sol.a,
        "q0": sol.q0,
        "residual_norm": sol.residual_norm,
        "iterations": sol.iterations,
        "n_points": sol.grid.n_points,
        "domain_length": sol.grid.domain_length,
    }


def write_profile(path, sol: ProfileSolution, extra: dict | None = None):
    header = profile_header(sol)
    header.update(extra or {})
    rows = zip(sol.grid.nodes, sol.p_real, sol.w_imag)
    write_table(path, header, ["xi", "P", "W"], rows)


def read_profile(path) -> ProfileSolution:
    header, columns, rows, _ = read_table(path)
    if header.get("format") != PROFILE_FORMAT:
        raise FormatError(f"{path}: not a profile file")
    _require(header, ["d", "sigma", "a", "n_points", "domain_length"], path)
    if columns != ["xi", "P", "W"]:
        raise FormatError(f"{path}: unexpected columns {columns}")
    data = _floats(rows, 3, path)
    n = int(header["n_points"])
    if data.shape[0] != n:
        raise FormatError(f"{path}: {data.shape[0]} rows but n_points = {n}")
    grid = build_grid(n, float(header["domain_length"]))
    if not np.allclose(grid.nodes, data[:, 0], rtol=0, atol=1e-12 * grid.domain_length):
        raise FormatError(f"{path}: nodes are not the Chebyshev grid")
    params = ProblemParams(float(header["d"]), float(header["sigma"]))
    return ProfileSolution(params, grid, data[:, 1].copy(), data[:, 2].copy(), float(header["a"]),
                           float(header.get("residual_norm", math.nan)),
                           int(header.get("iterations", 0)))


def write_continuation(path, record: ContinuationRecord, extra: dict | None = None):
    header = {"format": CONTINUATION_FORMAT, "version": __version__}
    header.update(extra or {})
    rows = [(e.params.d, e.params.sigma, e.a, e.q0, e.iterations, e.converged)
            for e in record.entries]
    write_table(path, header, ["d", "sigma", "a", "Q0", "iterations", "converged"], rows)


# ---------------------------------------------------------------------------
# Traces
# ---------------------------------------------------------------------------

TRACE_COLUMNS = ["step_index", "tau", "delta_t", "ln_L", "a", "sup_v", "dist_to_Q"]


def config_header(cfg: SimConfig) -> dict:
    out = {"d": cfg.params.d, "sigma": cfg.params.sigma}
    for k, v in asdict(cfg).items():
        if k != "params":
            out[k] = v
    return out


def write_trace(path, trace: SimulationTrace, extra: dict | None = None):
    header = {"format": TRACE_FORMAT, "version": __version__}
    header.update(config_header(trace.config))
    header.update({"T": trace.T, "a_end": trace.a_end, "stopped_by": trace.stopped_by,
                   "defocusing_steps": trace.defocusing_steps})
    header.update(extra or {})
    rows = [(r.step_index, r.tau, r.delta_t, r.ln_L, r.a, r.sup_v, r.dist_to_Q)
            for r in trace.records]
    write_table(path, header, TRACE_COLUMNS, rows)


def read_trace(path) -> SimulationTrace:
    header, columns, rows, _ = read_table(path)
    if header.get("format") != TRACE_FORMAT:
        raise FormatError(f"{path}: not a trace file")
    if columns != TRACE_COLUMNS:
        raise FormatError(f"{path}: unexpected columns {columns}")
    _require(header, ["d", "sigma", "h", "dtau", "domain_length", "T", "a_end"], path)
    names = {f for f in SimConfig.__dataclass_fields__ if f != "params"}
    kwargs = {k: header[k] for k in names if k in header}
    try:
        cfg = SimConfig(ProblemParams(float(header["d"]), float(header["sigma"])), **kwargs)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad configuration ({exc})") from exc
    records = []
    for r in rows:
        if len(r) != len(TRACE_COLUMNS):
            raise FormatError(f"{path}: expected {len(TRACE_COLUMNS)} columns")
        try:
            records.append(TraceRecord(int(r[0]), float(r[1]), float(r[2]), float(r[3]),
                                       float(r[4]), float(r[5]),
                                       float(r[6]) if r[6].strip() else None))
        except ValueError as exc:
            raise FormatError(f"{path}: non-numeric cell ({exc})") from exc
    trace = SimulationTrace(cfg, records, float(header["T"]), float(header["a_end"]),
                            str(header.get("stopped_by", "")))
    trace.defocusing_steps = int(header.get("defocusing_steps", 0))
    return trace


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


def hash_inputs(params: dict, paths=()) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(params, sort_keys=True, default=str).encode())
    for p in paths:
        h.update(Path(p).read_bytes())
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    parameters: dict
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    input_hash: str = ""
    version: str = __version__
    duration_s: float = 0.0
    status: str = "ok"
    exit_code: int = 0

    def write(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True, default=str)
                              + "\n")

    @classmethod
    def read(cls, path) -> "RunManifest":
        try:
            return cls(**json.loads(Path(path).read_text()))
        except (OSError, ValueError, TypeError) as exc:
            raise FormatError(f"{path}: bad manifest ({exc})") from exc


def manifest_path(output) -> Path:
    p = Path(output)
    return p.with_name(p.name + ".manifest.json")


class Stopwatch:
    def __init__(self):
        self.start = time.perf_counter()

    def elapsed(self) -> float:
        return time.perf_counter() - self.start
