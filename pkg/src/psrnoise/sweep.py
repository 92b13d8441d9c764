"""
Scan orchestration, result tables and plot-data files.

A scan is a list of jobs, one per drive point, each carrying its own list of
sideband frequencies.  Jobs are pure functions of the resolved config, so
the output order is fixed by the grid, never by completion order, and the
CSV is byte-identical for any worker count.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from itertools import product
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .angular import LevelScheme, PolarizationGeometry, SchemeError, build_scheme, geometry_for, load_scheme_file
from .config import ConfigError, grid_values
from .dynamics import DriveConfig, SteadyStateError, solve_drive
from .ensemble import VelocityEnsemble, doppler_average, doppler_width, velocity_grid
from .noisespec import NoiseError, assemble, medium_response, quadrature_spectrum

logger = logging.getLogger(__name__)

COLUMNS = (
    "detuning_Gamma",
    "delta_Gamma",
    "Omega_f_Gamma",
    "C",
    "gamma0_Gamma",
    "doppler",
    "S_min_dB",
    "S_max_dB",
    "theta_min_rad",
    "CN",
    "CA_abs",
    "CA_arg",
    "status",
)
COORDINATES = COLUMNS[:6]

# row status codes
OK = "ok"
STEADY_STATE_ERROR = "steady_state_error"
SINGULAR_FREQUENCY = "singular_frequency"
NUMERICAL_ERROR = "numerical_error"
INTERNAL_ERROR = "internal_error"

JSON_SCHEMA = "psrnoise.result-table/1"


@dataclass(frozen=True)
class Row:
    """One (drive point, sideband frequency) evaluation.

    ``doppler`` is the number of velocity classes averaged, 0 for
    stationary atoms.  Failed rows carry NaN results and a status code.
    """

    detuning_Gamma: float
    delta_Gamma: float
    Omega_f_Gamma: float
    C: float
    gamma0_Gamma: float
    doppler: int
    S_min_dB: float = math.nan
    S_max_dB: float = math.nan
    theta_min_rad: float = math.nan
    CN: float = math.nan
    CA_abs: float = math.nan
    CA_arg: float = math.nan
    status: str = OK
    commutator_error: float = math.nan
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == OK

    @property
    def coordinates(self) -> tuple:
        return tuple(getattr(self, c) for c in COORDINATES)

    @property
    def S_min(self) -> float:
        return 10.0 ** (self.S_min_dB / 10.0)

    @property
    def S_max(self) -> float:
        return 10.0 ** (self.S_max_dB / 10.0)


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


@dataclass
class ResultTable:
    rows: List[Row] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def n_failed(self) -> int:
        return sum(not r.ok for r in self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(getattr(r, c)) for c in COLUMNS])
        return buf.getvalue()

    def to_json_dict(self) -> dict:
        return {
            "schema": JSON_SCHEMA,
            "columns": list(COLUMNS),
            "units": COLUMN_UNITS,
            "metadata": self.metadata,
            "rows": [_row_json(r) for r in self.rows],
        }

    @classmethod
    def from_csv_text(cls, text: str, metadata: Optional[dict] = None) -> "ResultTable":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or tuple(header) != COLUMNS:
            raise ValueError(f"unexpected CSV header {header!r}")
        rows = []
        for rec in reader:
            vals = dict(zip(COLUMNS, rec))
            rows.append(_row_from_strings(vals))
        return cls(rows, dict(metadata or {}))

    @classmethod
    def from_json_dict(cls, data: dict) -> "ResultTable":
        if data.get("schema") != JSON_SCHEMA:
            raise ValueError(f"not a result table (schema {data.get('schema')!r})")
        rows = [_row_from_strings(r) for r in data["rows"]]
        return cls(rows, dict(data.get("metadata", {})))


COLUMN_UNITS = {
    "detuning_Gamma": "Gamma",
    "delta_Gamma": "Gamma",
    "Omega_f_Gamma": "Gamma",
    "C": "1",
    "gamma0_Gamma": "Gamma",
    "doppler": "velocity classes (0 = stationary atoms)",
    "S_min_dB": "dB relative to shot noise",
    "S_max_dB": "dB relative to shot noise",
    "theta_min_rad": "rad, in [0, pi)",
    "CN": "shot-noise units",
    "CA_abs": "shot-noise units",
    "CA_arg": "rad",
    "status": "ok or an error code",
}


def _json_float(v: float):
    return v if math.isfinite(v) else None


def _row_json(r: Row) -> dict:
    out = {}
    for f in fields(Row):
        v = getattr(r, f.name)
        out[f.name] = _json_float(v) if isinstance(v, float) else v
    out["S_min"] = _json_float(r.S_min)
    out["S_max"] = _json_float(r.S_max)
    return out


def _row_from_strings(vals: dict) -> Row:
    kw = {}
    for f in fields(Row):
        if f.name not in vals:
            continue
        v = vals[f.name]
        if f.name in ("status", "message"):
            kw[f.name] = str(v)
        elif f.name == "doppler":
            kw[f.name] = int(v)
        else:
            kw[f.name] = math.nan if v is None else float(v)
    return Row(**kw)


# ---------------------------------------------------------------------------
# Scan definitions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Job:
    detuning: float
    Omega_f: float
    C: float
    gamma0: float
    deltas: Tuple[float, ...]


@dataclass(frozen=True)
class ScanSpec:
    """A validated scan: kind, resolved config and the job list it expands to."""

    kind: str
    config: dict

    KINDS = ("point", "detuning", "noise-frequency", "power-density-2d")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"scan kind must be one of {self.KINDS}, got {self.kind!r}")

    @property
    def workers(self) -> int:
        return int(self.config["run"]["workers"])

    def jobs(self) -> List[Job]:
        cfg = self.config
        dr = cfg["drive"]
        deltas = tuple(cfg["noise"]["delta"])
        base = dict(detuning=dr["detuning"], Omega_f=dr["Omega_f"], C=dr["C"], gamma0=dr["gamma0"])
        if self.kind == "point":
            return [Job(deltas=deltas, **base)]
        if self.kind == "detuning":
            grid = grid_values(cfg["scan"]["detuning"], "scan.detuning")
            return [Job(deltas=deltas, **{**base, "detuning": float(d)}) for d in grid]
        if self.kind == "noise-frequency":
            grid = grid_values(cfg["scan"]["delta"], "scan.delta")
            if np.any(grid < 0):
                raise ConfigError("scan.delta must be >= 0")
            return [Job(deltas=(float(d),), **base) for d in grid]
        om = grid_values(cfg["scan"]["Omega_f"], "scan.Omega_f")
        cs = grid_values(cfg["scan"]["C"], "scan.C")
        return [Job(deltas=deltas, **{**base, "Omega_f": float(o), "C": float(c)}) for o, c in product(om, cs)]


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalContext:
    scheme: LevelScheme
    geometry: PolarizationGeometry
    ensemble: Optional[VelocityEnsemble]
    loss_mode: str
    assembly: str
    share_mode: str


def scheme_from_config(cfg: dict) -> LevelScheme:
    sc, at = cfg["scheme"], cfg["atomic"]
    try:
        if sc["preset"] == "custom":
            return load_scheme_file(sc["custom_file"])
        return build_scheme(
            sc["preset"],
            reference=sc["reference"],
            ground_hfs_mhz=at["ground_hfs_mhz"],
            excited_hfs_mhz=at["excited_hfs_mhz"],
            gamma_mhz=at["gamma_mhz"],
            excited_states=sc["excited_states"],
            toy_splitting=sc["toy_splitting"],
        )
    except (SchemeError, OSError) as exc:
        raise ConfigError(f"scheme: {exc}") from exc


def ensemble_from_config(cfg: dict) -> Optional[VelocityEnsemble]:
    dop = cfg["doppler"]
    if not dop["enabled"]:
        return None
    width = dop["width"]
    if width is None:
        at = cfg["atomic"]
        width = doppler_width(dop["temperature_K"], at["wavelength_m"], at["mass_amu"], at["gamma_mhz"])
    return velocity_grid(
        width, dop["n_classes"], rule=dop["rule"], stretch=dop["stretch"], span=dop["span"]
    )


def context_from_config(cfg: dict) -> EvalContext:
    scheme = scheme_from_config(cfg)
    try:
        geometry = geometry_for(scheme, math.radians(cfg["drive"]["pump_axis_deg"]))
    except (SchemeError, ValueError) as exc:
        raise ConfigError(f"polarization: {exc}") from exc
    return EvalContext(
        scheme=scheme,
        geometry=geometry,
        ensemble=ensemble_from_config(cfg),
        loss_mode=cfg["drive"]["loss_mode"],
        assembly=cfg["noise"]["assembly"],
        share_mode=cfg["doppler"]["shares"],
    )


def evaluate_job(ctx: EvalContext, job: Job) -> List[Row]:
    """All rows of one drive point; failures are confined to their own rows."""
    ens = ctx.ensemble
    n_cls = 0 if ens is None else ens.n_classes
    coords = dict(
        detuning_Gamma=job.detuning, Omega_f_Gamma=job.Omega_f, C=job.C, gamma0_Gamma=job.gamma0, doppler=n_cls
    )
    shifts = [0.0] if ens is None else list(ens.shifts)

    def failed(delta, status, msg):
        return Row(delta_Gamma=delta, status=status, message=msg, **coords)

    try:
        drive = DriveConfig(
            Omega_f=job.Omega_f, detuning=job.detuning, gamma0=job.gamma0, C=job.C,
            deltas=job.deltas, loss_mode=ctx.loss_mode,
        )
        systems = [solve_drive(ctx.scheme, drive.with_(doppler_shift=float(s)), ctx.geometry) for s in shifts]
    except SteadyStateError as exc:
        return [failed(d, STEADY_STATE_ERROR, str(exc)) for d in job.deltas]
    except Exception as exc:  # noqa: BLE001 - isolate the row, keep the scan going
        logger.exception("drive point %s failed", job)
        return [failed(d, INTERNAL_ERROR, f"{type(exc).__name__}: {exc}") for d in job.deltas]

    rows = []
    for d in job.deltas:
        try:
            responses = [medium_response(sys_, [d]) for sys_ in systems]
            resp = responses[0] if ens is None else doppler_average(responses, ens, ctx.share_mode)
            corr = assemble(resp, job.C, ctx.assembly)
            q = quadrature_spectrum(corr)
            vals = np.array([q.S_min[0], q.S_max[0], corr.C_N[0], abs(corr.C_A[0])])
            if not np.all(np.isfinite(vals)) or q.S_min[0] <= 0:
                rows.append(failed(d, NUMERICAL_ERROR, f"non-finite or non-positive noise {vals}"))
                continue
            rows.append(
                Row(
                    delta_Gamma=d,
                    S_min_dB=float(q.S_min_dB[0]),
                    S_max_dB=float(q.S_max_dB[0]),
                    theta_min_rad=float(q.theta_min[0]),
                    CN=float(corr.C_N[0]),
                    CA_abs=float(abs(corr.C_A[0])),
                    CA_arg=float(np.angle(corr.C_A[0])),
                    commutator_error=float(corr.commutator_error[0]),
                    **coords,
                )
            )
        except NoiseError as exc:
            rows.append(failed(d, SINGULAR_FREQUENCY, str(exc)))
        except Exception as exc:  # noqa: BLE001
            logger.exception("row %s delta=%g failed", job, d)
            rows.append(failed(d, INTERNAL_ERROR, f"{type(exc).__name__}: {exc}"))
    return rows


_WORKER_CTX: Optional[EvalContext] = None


def _init_worker(ctx: EvalContext) -> None:
    global _WORKER_CTX
    _WORKER_CTX = ctx
    threadpool_limits(1)


def _worker_job(job: Job) -> List[Row]:
    return evaluate_job(_WORKER_CTX, job)


def run_jobs(ctx: EvalContext, jobs: Sequence[Job], workers: int = 1) -> List[Row]:
    """Evaluate jobs in grid order.

    BLAS is pinned to one thread in every path so that results do not depend
    on how the work is distributed.
    """
    if workers <= 1 or len(jobs) <= 1:
        with threadpool_limits(1):
            chunks = [evaluate_job(ctx, j) for j in jobs]
    else:
        chunksize = max(1, len(jobs) // (4 * workers))
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(ctx,)) as pool:
            chunks = list(pool.map(_worker_job, jobs, chunksize=chunksize))
    return [r for chunk in chunks for r in chunk]


def run_metadata(spec: ScanSpec, ctx: EvalContext) -> dict:
    scheme = ctx.scheme
    meta = {
        "kind": spec.kind,
        "engine": "psrnoise",
        "engine_version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "config": spec.config,
        "scheme": {
            "name": scheme.name,
            "levels": scheme.n,
            "reference": [scheme.levels[i].label for i in scheme.reference],
            "ground_F": scheme.metadata.get("ground_F"),
            # reference transition on the absolute axis (origin: hyperfine-free D1 line)
            "reference_frequency_Gamma": scheme.reference_frequency(),
        },
    }
    if ctx.ensemble is not None:
        meta["doppler"] = {"width_Gamma": ctx.ensemble.width, "n_classes": ctx.ensemble.n_classes}
    return meta


def run_scan(spec: ScanSpec, *, write: bool = True) -> ResultTable:
    """Evaluate a scan; optionally write its CSV/JSON files."""
    ctx = context_from_config(spec.config)
    jobs = spec.jobs()
    rows = run_jobs(ctx, jobs, spec.workers)
    table = ResultTable(rows, run_metadata(spec, ctx))
    table.metadata["n_rows"] = len(rows)
    table.metadata["n_failed"] = table.n_failed
    if write:
        out = spec.config["output"]
        emit_plotdata(table, Path(out["dir"]) / (out["stem"] or spec.kind.replace("-", "_")), out["formats"])
    return table


# ---------------------------------------------------------------------------
# Stitching
# ---------------------------------------------------------------------------


class StitchError(ValueError):
    pass


def stitch_manifolds(a: ResultTable, b: ResultTable) -> ResultTable:
    """Join an F=1 and an F=2 detuning scan on the absolute laser-frequency axis.

    The absolute axis measures the laser from the hyperfine-free D1 line, so
    the midpoint of the ground hyperfine gap sits at 0: F=2 rows are kept
    below it, F=1 rows above.  In the stitched table ``detuning_Gamma`` holds
    the absolute frequency; the metadata records the split and the values on
    either side of it.
    """
    tabs = {}
    for t in (a, b):
        sch = t.metadata.get("scheme", {})
        F = sch.get("ground_F")
        if F not in (1, 2) or "reference_frequency_Gamma" not in sch:
            raise StitchError("stitching needs detuning scans of the rb87-d1-Fg1 and rb87-d1-Fg2 presets")
        if F in tabs:
            raise StitchError(f"both tables cover the F={F} ground manifold")
        tabs[F] = t
    if set(tabs) != {1, 2}:
        raise StitchError("need one F=1 and one F=2 table")

    def atomic(t):
        return t.metadata.get("config", {}).get("atomic")

    if atomic(tabs[1]) != atomic(tabs[2]):
        raise StitchError("tables use different atomic constants; their absolute axes do not align")

    def others(t):
        return sorted({(r.delta_Gamma, r.Omega_f_Gamma, r.C, r.gamma0_Gamma, r.doppler) for r in t.rows})

    if others(tabs[1]) != others(tabs[2]):
        raise StitchError("tables differ in delta, Omega_f, C, gamma0 or Doppler settings")

    split = 0.0
    parts = {}
    for F, t in tabs.items():
        off = float(t.metadata["scheme"]["reference_frequency_Gamma"])
        keep = (lambda x: x < split) if F == 2 else (lambda x: x >= split)
        shifted = [Row(**{**asdict(r), "detuning_Gamma": r.detuning_Gamma + off}) for r in t.rows]
        parts[F] = [r for r in shifted if keep(r.detuning_Gamma)]
    rows = sorted(parts[2] + parts[1], key=lambda r: (r.delta_Gamma, r.Omega_f_Gamma, r.C, r.gamma0_Gamma, r.detuning_Gamma))
    coords = [r.coordinates for r in rows]
    if len(set(coords)) != len(coords):
        raise StitchError("stitched axis has duplicate points")

    boundary = []
    for key in others(tabs[1]):
        lo = [r for r in parts[2] if (r.delta_Gamma, r.Omega_f_Gamma, r.C, r.gamma0_Gamma, r.doppler) == key]
        hi = [r for r in parts[1] if (r.delta_Gamma, r.Omega_f_Gamma, r.C, r.gamma0_Gamma, r.doppler) == key]
        entry = {"delta_Gamma": key[0], "Omega_f_Gamma": key[1], "C": key[2], "gamma0_Gamma": key[3]}
        if lo and hi:
            l, h = lo[-1], hi[0]
            entry.update(
                below_detuning_Gamma=l.detuning_Gamma, above_detuning_Gamma=h.detuning_Gamma,
                S_min_dB_jump=_json_float(h.S_min_dB - l.S_min_dB), S_max_dB_jump=_json_float(h.S_max_dB - l.S_max_dB),
            )
        boundary.append(entry)
    meta = {
        "kind": "stitched",
        "engine": "psrnoise",
        "engine_version": __version__,
        "axis": "detuning_Gamma is the laser frequency from the hyperfine-free D1 line",
        "split_Gamma": split,
        "boundary": boundary,
        "sources": {f"F{F}": tabs[F].metadata for F in (1, 2)},
        "n_rows": len(rows),
        "n_failed": sum(not r.ok for r in rows),
    }
    return ResultTable(rows, meta)


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def emit_plotdata(table: ResultTable, stem, formats: Sequence[str] = ("csv", "json")) -> List[Path]:
    """Write ``stem.csv`` / ``stem.json``.  Raises OSError if the path is unwritable."""
    stem = Path(stem)
    written = []
    for fmt in formats:
        path = stem.with_suffix("." + fmt)
        if fmt == "csv":
            data = table.to_csv_text()
        elif fmt == "json":
            data = json.dumps(table.to_json_dict(), indent=1, allow_nan=False) + "\n"
        else:
            raise ValueError(f"unknown output format {fmt!r}")
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(data)
        written.append(path)
    return written


def read_table(path) -> ResultTable:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        return ResultTable.from_json_dict(json.loads(text))
    meta = {}
    side = path.with_suffix(".json")
    if side.exists():
        meta = json.loads(side.read_text(encoding="utf-8")).get("metadata", {})
    return ResultTable.from_csv_text(text, meta)


# ---------------------------------------------------------------------------
# Oracle check
# ---------------------------------------------------------------------------


def run_oracle_check(cfg: dict, *, write: bool = True):
    """Engine vs regression oracle at the configured drive over ``scan.delta``.

    Returns the engine table (with the oracle values in the metadata) and the
    deviation report.
    """
    from .noisespec import sideband_correlations
    from .oracle import compare_report, regression_spectrum

    if cfg["doppler"]["enabled"]:
        raise ConfigError("oracle-check runs on stationary atoms; set doppler.enabled: false")
    ctx = context_from_config(cfg)
    dr = cfg["drive"]
    deltas = grid_values(cfg["scan"]["delta"], "scan.delta")
    drive = DriveConfig(
        Omega_f=dr["Omega_f"], detuning=dr["detuning"], gamma0=dr["gamma0"], C=dr["C"],
        deltas=deltas, loss_mode=ctx.loss_mode,
    )
    orc = cfg["oracle"]
    with threadpool_limits(1):
        system = solve_drive(ctx.scheme, drive, ctx.geometry)
        engine = sideband_correlations(system, None, dr["C"], deltas, ctx.assembly)
        ref = regression_spectrum(
            system, deltas, dr["C"], mode=ctx.assembly, rtol=orc["rtol"], atol=orc["atol"],
            horizon_factor=orc["horizon_factor"], decay_tol=orc["decay_tol"],
        )
    report = compare_report(ref, engine, orc["tolerance"])
    q = quadrature_spectrum(engine)
    rows = [
        Row(
            detuning_Gamma=dr["detuning"], delta_Gamma=float(d), Omega_f_Gamma=dr["Omega_f"], C=dr["C"],
            gamma0_Gamma=dr["gamma0"], doppler=0,
            S_min_dB=float(q.S_min_dB[k]), S_max_dB=float(q.S_max_dB[k]), theta_min_rad=float(q.theta_min[k]),
            CN=float(engine.C_N[k]), CA_abs=float(abs(engine.C_A[k])), CA_arg=float(np.angle(engine.C_A[k])),
            commutator_error=float(engine.commutator_error[k]),
        )
        for k, d in enumerate(deltas)
    ]
    spec = ScanSpec("point", cfg)
    meta = run_metadata(spec, ctx)
    meta["kind"] = "oracle-check"
    meta["oracle"] = {
        "passed": report.passed,
        "tolerance": report.tolerance,
        "max_deviation": report.max_deviation,
        "rms_deviation": report.rms_deviation,
        "horizon": ref.horizon,
        "n_steps": ref.n_steps,
        "tail": ref.tail,
        "CN": [float(x) for x in ref.C_N],
        "CA_abs": [float(abs(x)) for x in ref.C_A],
        "CA_arg": [float(np.angle(x)) for x in ref.C_A],
        "dev_CN": [float(x) for x in report.dev_CN],
        "dev_CA_abs": [float(x) for x in report.dev_CA_abs],
        "dev_CA_arg": [float(x) for x in report.dev_CA_arg],
    }
    table = ResultTable(rows, meta)
    if write:
        out = cfg["output"]
        emit_plotdata(table, Path(out["dir"]) / (out["stem"] or "oracle_check"), out["formats"])
    return table, report
