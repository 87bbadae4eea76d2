"""Command-line interface: ``densgroup simulate | fit | report``.

Every command validates its inputs and computes all of its outputs in
memory before anything is written, so a failing run leaves no partial
artifacts behind.

Exit codes
----------
0  success
2  validation error (bad flags, config values or output location)
3  ingestion error (unreadable or inconsistent input files)
4  numerical failure inside the estimation pipeline
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import logging
import os
import re
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .clustering import IcTrace
from .density import Grid, RawSample
from .exceptions import ConfigError, DensGroupError, IngestionError
from .pipeline import densities_from_samples, fit_model, lqd_matrix
from .selection import backward_eliminate, fitted_densities, fve_table
from .simulation import DgpConfig, McReport, run_mc, write_tables
from .splines import fit_initial

log = logging.getLogger("densgroup")

EXIT_OK, EXIT_VALIDATION, EXIT_INGESTION, EXIT_NUMERICAL = 0, 2, 3, 4
OUTPUT_ENV = "DENSGROUP_OUTPUT_DIR"
CONFIG_SECTION = "densgroup"
RESCALE_MARGIN = 0.005


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclass
class RunConfig:
    """All parameters of one command; flags override the config file."""

    command: str = "fit"
    out: str | None = None
    seed: int = 0
    # estimation
    grid_count: int = 101
    order: int = 4
    u_knots: int | None = None
    x_knots: int | None = None
    bandwidth_policy: str = "cv"
    q_norm: str = "2"
    k: int | None = None
    k_max: int = 8
    criterion: str = "gbic"
    # fit
    samples: str | None = None
    covariates: str | None = None
    covariate_scaling: str = "none"
    min_obs: int = 10
    eliminate: bool = True
    recluster: bool = False
    # simulate
    n: int = 100
    T: int = 100
    reps: int = 50
    cells: str | None = None
    criteria: str = "gaic,gbic"
    noise_covariates: int = 0
    jobs: int = 1
    # report
    artifacts: str | None = None
    x_grid_count: int = 51
    subjects: str | None = None

    def validate(self) -> None:
        def require(cond: bool, msg: str) -> None:
            if not cond:
                raise ConfigError(msg)

        require(self.command in ("simulate", "fit", "report"), f"unknown command {self.command!r}")
        require(self.grid_count >= 11, "grid_count must be at least 11")
        require(2 <= self.order <= 6, "order must lie in [2, 6]")
        for name in ("u_knots", "x_knots"):
            val = getattr(self, name)
            require(val is None or val >= 0, f"{name} must be nonnegative")
        require(self.bandwidth_policy in ("cv", "rate"), "bandwidth_policy must be cv or rate")
        require(self.q_norm in ("1", "2", "inf"), "q_norm must be 1, 2 or inf")
        require(self.k is None or self.k >= 1, "k must be at least 1")
        require(self.k_max >= 1, "k_max must be at least 1")
        require(self.criterion in ("gaic", "gbic"), "criterion must be gaic or gbic")
        require(self.covariate_scaling in ("none", "minmax"), "covariate_scaling must be none or minmax")
        require(self.min_obs >= 2, "min_obs must be at least 2")
        require(self.x_grid_count >= 2, "x_grid_count must be at least 2")
        require(self.jobs >= 1, "jobs must be at least 1")
        if self.command == "simulate":
            require(self.reps >= 1, "reps must be at least 1")
            require(self.n >= 2, "n must be at least 2")
            require(self.T >= 10, "T must be at least 10")
            require(self.noise_covariates >= 0, "noise_covariates must be nonnegative")
            self.simulation_cells()
            require(len(self.criterion_list()) > 0, "criteria must not be empty")
            for c in self.criterion_list():
                require(c in ("gaic", "gbic"), f"unknown criterion {c!r}")
        if self.command == "fit":
            for name in ("samples", "covariates"):
                path = getattr(self, name)
                require(path is not None, f"--{name} is required")
                require(Path(path).is_file(), f"{name} file {path!r} not found")
        if self.command == "report":
            require(self.artifacts is not None, "--artifacts is required")
            require(Path(self.artifacts).is_dir(), f"artifact directory {self.artifacts!r} not found")
        require(self.out is not None, f"no output directory (use --out or set {OUTPUT_ENV})")
        _check_writable(Path(self.out))

    def q_value(self) -> float:
        return np.inf if self.q_norm == "inf" else float(self.q_norm)

    def criterion_list(self) -> list[str]:
        return [c.strip().lower() for c in self.criteria.split(",") if c.strip()]

    def simulation_cells(self) -> list[tuple[int, int]]:
        if not self.cells:
            return [(self.n, self.T)]
        cells = []
        for item in self.cells.split(","):
            m = re.fullmatch(r"\s*(\d+)\s*x\s*(\d+)\s*", item)
            if not m:
                raise ConfigError(f"cell {item!r} is not of the form NxT")
            n, T = int(m.group(1)), int(m.group(2))
            if n < 2 or T < 10:
                raise ConfigError(f"cell {item!r} needs n >= 2 and T >= 10")
            cells.append((n, T))
        return cells

    def to_dict(self) -> dict:
        return asdict(self)


_FIELD_TYPES = {
    "seed": int, "grid_count": int, "order": int, "u_knots": int, "x_knots": int,
    "k": int, "k_max": int, "min_obs": int, "n": int, "T": int, "reps": int,
    "noise_covariates": int, "jobs": int, "x_grid_count": int,
    "eliminate": bool, "recluster": bool,
}


def _coerce(name: str, raw):
    kind = _FIELD_TYPES.get(name, str)
    if raw is None or (isinstance(raw, str) and raw.strip() == ""):
        return None
    if kind is int and isinstance(raw, str) and raw.strip().lower() == "none":
        return None
    try:
        if kind is bool:
            if isinstance(raw, bool):
                return raw
            text = str(raw).strip().lower()
            if text not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(text)
            return text in ("1", "true", "yes", "on")
        if kind is int:
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError(raw)
            return int(str(raw).strip()) if isinstance(raw, str) else int(raw)
        return str(raw).strip()
    except ValueError as err:
        raise ConfigError(f"invalid value {raw!r} for {name}") from err


def read_config_file(path: str | Path) -> dict:
    """Key-value settings from an INI file (section ``[densgroup]``) or a
    previous run's ``manifest.json``."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {str(path)!r} not found")
    known = {f.name for f in fields(RunConfig)} - {"command"}
    if path.suffix == ".json":
        try:
            payload = json.loads(path.read_text())
        except json.JSONDecodeError as err:
            raise ConfigError(f"config file {str(path)!r} is not valid JSON") from err
        raw = payload.get("config", payload)
    else:
        parser = configparser.ConfigParser()
        try:
            parser.read(path)
        except configparser.Error as err:
            raise ConfigError(f"cannot parse config file {str(path)!r}: {err}") from err
        if not parser.has_section(CONFIG_SECTION):
            raise ConfigError(f"config file lacks a [{CONFIG_SECTION}] section")
        raw = dict(parser.items(CONFIG_SECTION))
    settings = {}
    for key, value in raw.items():
        name = key.replace("-", "_")
        if name == "command":
            continue
        if name == "t":
            name = "T"
        if name not in known:
            raise ConfigError(f"unknown config key {key!r}")
        settings[name] = _coerce(name, value)
    return settings


def _check_writable(out: Path) -> None:
    if out.exists() and not out.is_dir():
        raise ConfigError(f"output path {str(out)!r} is not a directory")
    probe = out
    while not probe.exists():
        probe = probe.parent
    if not probe.is_dir() or not os.access(probe, os.W_OK):
        raise ConfigError(f"output directory {str(out)!r} is not writable")


# --------------------------------------------------------------------------
# small I/O helpers
# --------------------------------------------------------------------------

def _fmt(x) -> str:
    return repr(float(x))


def _csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _json(payload) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _safe_name(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", str(text))


def write_outputs(out: str | Path, files: dict[str, str]) -> None:
    """Write every prepared file; nothing is written before this point."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for name in sorted(files):
        (out / name).write_text(files[name])


# --------------------------------------------------------------------------
# ingestion
# --------------------------------------------------------------------------

@dataclass
class Ingested:
    """Samples and covariates aligned by subject."""

    subject_ids: list[str]
    samples: list[RawSample]
    X: np.ndarray
    covariate_names: list[str]
    rescale: dict
    covariate_rescale: dict
    skipped: list[dict] = field(default_factory=list)


def _read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            rows = [r for r in reader if r and any(c.strip() for c in r)]
    except (OSError, UnicodeDecodeError, csv.Error) as err:
        raise IngestionError(f"cannot read {str(path)!r}: {err}") from err
    if not rows:
        raise IngestionError(f"{str(path)!r} is empty")
    return [c.strip() for c in rows[0]], rows[1:]


def ingest(samples_path, covariates_path, *, min_obs: int = 10,
           covariate_scaling: str = "none") -> Ingested:
    """Read long-format samples and a covariate table.

    Sample values are mapped to [0, 1] by a shared min-max rescaling
    widened by 0.5% of the range on each side.  Subjects with fewer than
    ``min_obs`` observations are skipped and reported.
    """
    s_head, s_rows = _read_csv(samples_path)
    if s_head[:2] != ["subject_id", "value"] or len(s_head) != 2:
        raise IngestionError("samples header must be 'subject_id,value'")
    c_head, c_rows = _read_csv(covariates_path)
    if not c_head or c_head[0] != "subject_id" or len(c_head) < 2:
        raise IngestionError("covariates header must be 'subject_id,x1,...,xp'")
    names = c_head[1:]

    values: dict[str, list[float]] = {}
    for lineno, row in enumerate(s_rows, start=2):
        if len(row) != 2:
            raise IngestionError(f"samples line {lineno}: expected 2 fields")
        try:
            v = float(row[1])
        except ValueError as err:
            raise IngestionError(f"samples line {lineno}: {row[1]!r} is not a number") from err
        if not np.isfinite(v):
            raise IngestionError(f"samples line {lineno}: non-finite value")
        values.setdefault(row[0].strip(), []).append(v)

    cov: dict[str, list[float]] = {}
    order: list[str] = []
    for lineno, row in enumerate(c_rows, start=2):
        if len(row) != len(c_head):
            raise IngestionError(f"covariates line {lineno}: expected {len(c_head)} fields")
        sid = row[0].strip()
        if sid in cov:
            raise IngestionError(f"covariates line {lineno}: duplicate subject {sid!r}")
        try:
            cov[sid] = [float(c) for c in row[1:]]
        except ValueError as err:
            raise IngestionError(f"covariates line {lineno}: non-numeric value") from err
        if not np.all(np.isfinite(cov[sid])):
            raise IngestionError(f"covariates line {lineno}: non-finite value")
        order.append(sid)

    only_samples = sorted(set(values) - set(cov))
    only_cov = sorted(set(cov) - set(values))
    if only_samples or only_cov:
        parts = []
        if only_samples:
            parts.append(f"missing from covariates: {', '.join(only_samples)}")
        if only_cov:
            parts.append(f"missing from samples: {', '.join(only_cov)}")
        raise IngestionError("subject mismatch; " + "; ".join(parts))

    skipped = []
    kept = []
    for sid in order:
        if len(values[sid]) < min_obs:
            log.warning("skipping subject %s: %d observations", sid, len(values[sid]))
            skipped.append({"subject_id": sid, "observations": len(values[sid])})
        else:
            kept.append(sid)
    if len(kept) < 2:
        raise IngestionError("fewer than two subjects with enough observations")

    pooled = np.concatenate([values[s] for s in kept])
    lo, hi = float(pooled.min()), float(pooled.max())
    if hi <= lo:
        raise IngestionError("all sample values are identical; cannot rescale")
    pad = RESCALE_MARGIN * (hi - lo)
    lo_s, hi_s = lo - pad, hi + pad
    samples = [
        RawSample(j + 1, np.clip((np.asarray(values[s]) - lo_s) / (hi_s - lo_s), 0.0, 1.0))
        for j, s in enumerate(kept)
    ]

    X = np.array([cov[s] for s in kept], dtype=float).reshape(len(kept), len(names))
    cov_rescale = {}
    if covariate_scaling == "minmax":
        for l, name in enumerate(names):
            a, b = X[:, l].min(), X[:, l].max()
            if b <= a:
                raise ConfigError(f"covariate {name!r} is constant; cannot rescale")
            X[:, l] = (X[:, l] - a) / (b - a)
            cov_rescale[name] = {"min": float(a), "max": float(b)}
    bad = [names[l] for l in range(len(names)) if np.any(X[:, l] < 0) or np.any(X[:, l] > 1)]
    if bad:
        raise ConfigError(f"covariate column(s) outside [0, 1]: {', '.join(bad)}")

    rescale = {"data_min": lo, "data_max": hi, "lower": lo_s, "upper": hi_s,
               "margin_fraction": RESCALE_MARGIN}
    return Ingested(kept, samples, X, names, rescale, cov_rescale, skipped)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def _manifest(cfg: RunConfig, inputs: dict[str, str] | None = None, **extra) -> str:
    payload = {
        "tool": "densgroup",
        "version": __version__,
        "command": cfg.command,
        "seed": cfg.seed,
        "config": {k: v for k, v in cfg.to_dict().items() if k not in ("command", "out")},
        "input_sha256": inputs or {},
    }
    payload.update(extra)
    return _json(payload)


def cmd_simulate(cfg: RunConfig) -> dict[str, str]:
    """Monte Carlo tables for every configured (n, T) cell."""
    reports: list[McReport] = []
    for n, T in cfg.simulation_cells():
        dgp = DgpConfig(n=n, T=T, seed=cfg.seed, grid_count=cfg.grid_count,
                        noise_covariates=cfg.noise_covariates)
        reports.append(run_mc(dgp, reps=cfg.reps, criteria=tuple(cfg.criterion_list()),
                              cv=cfg.bandwidth_policy == "cv", k_max=cfg.k_max, n_jobs=cfg.jobs))
    t1, t2 = write_tables(reports)
    mc = [json.loads(r.to_json()) for r in reports]
    return {
        "table1.csv": t1,
        "table2.csv": t2,
        "mc_report.json": _json(mc),
        "manifest.json": _manifest(cfg, failures=[r.failures for r in reports]),
    }


def cmd_fit(cfg: RunConfig) -> dict[str, str]:
    """Fit the grouped density model to ingested data."""
    data = ingest(cfg.samples, cfg.covariates, min_obs=cfg.min_obs,
                  covariate_scaling=cfg.covariate_scaling)
    grid = Grid(cfg.grid_count)
    dens = densities_from_samples(data.samples, grid)
    F = lqd_matrix(dens)
    n_obs = int(round(np.mean([s.size for s in data.samples])))
    initial = fit_initial(F, data.X, grid=grid, order=cfg.order, n_obs=n_obs,
                          u_knots=cfg.u_knots, x_knots=cfg.x_knots)
    model = fit_model(F, data.X, grid=grid, n_obs=n_obs, k=cfg.k, k_max=min(cfg.k_max, len(F)),
                      criterion=cfg.criterion, q_norm=cfg.q_value(),
                      cv=cfg.bandwidth_policy == "cv", initial=initial, order=cfg.order)
    refined = model.refined
    u = grid.points
    files: dict[str, str] = {}

    files["partition.csv"] = model.partition.to_csv(data.subject_ids)
    trace = model.trace or IcTrace(cfg.criterion, [], model.k)
    files["ic_trace.json"] = trace.to_json() + "\n"
    curves = refined.group_curves
    files["group_curves.csv"] = _csv_text(
        ["u"] + [f"group_{k}" for k in range(1, model.k + 1)],
        ([_fmt(u[t])] + [_fmt(v) for v in curves[:, t]] for t in range(grid.count)),
    )
    for l, name in enumerate(data.covariate_names):
        xs = refined.x_lattice(l, cfg.x_grid_count)
        surf = refined.additive_surface(l, xs)          # (x, u)
        rows = ([_fmt(u[t]), _fmt(xs[j]), _fmt(surf[j, t])]
                for t in range(grid.count) for j in range(xs.size))
        files[f"additive_{_safe_name(name)}.csv"] = _csv_text(["u", "x", "value"], rows)

    fitted = fitted_densities(refined.fitted(), grid)
    rows = []
    for sid, z, v in zip(data.subject_ids, dens, fitted):
        rows += [[sid, _fmt(u[t]), _fmt(z.values[t]), _fmt(v.values[t])] for t in range(grid.count)]
    files["fitted_densities.csv"] = _csv_text(["subject_id", "u", "observed", "fitted"], rows)

    fves, gains, v_inf = fve_table(refined, dens)
    fve_payload = {
        "full_model": {
            "v_inf": v_inf,
            "covariates": {name: {"fve": fves[l], "v": gains[l]}
                           for l, name in enumerate(data.covariate_names)},
        },
        "elimination": None,
    }
    elim_csv = None
    if cfg.eliminate:
        report = backward_eliminate(
            F, data.X, dens, grid=grid, names=data.covariate_names, n_obs=n_obs,
            partition=None if cfg.recluster else model.partition, recluster=cfg.recluster,
            criterion=cfg.criterion, k=cfg.k, cv=cfg.bandwidth_policy == "cv",
        )
        fve_payload["elimination"] = report.to_dict()
        elim_csv = report.to_csv()
    files["fve_report.json"] = _json(fve_payload)
    if elim_csv is not None:
        files["fve_report.csv"] = elim_csv

    files["manifest.json"] = _manifest(
        cfg,
        {"samples": _sha256(cfg.samples), "covariates": _sha256(cfg.covariates)},
        rescale=data.rescale,
        covariate_rescale=data.covariate_rescale,
        skipped_subjects=data.skipped,
        subjects=len(data.subject_ids),
        k=model.k,
        bandwidths=refined.bandwidths.as_dict(),
        covariate_names=data.covariate_names,
    )
    return files


def _pivot(path: Path) -> tuple[list[float], list[float], dict]:
    head, rows = _read_csv(path)
    if head != ["u", "x", "value"]:
        raise IngestionError(f"{path.name} is not an additive-surface file")
    us, xs, vals = [], [], {}
    for r in rows:
        u, x, v = r
        if u not in vals:
            us.append(u)
            vals[u] = {}
        if x not in xs:
            xs.append(x)
        vals[u][x] = v
    return us, xs, vals


def cmd_report(cfg: RunConfig) -> dict[str, str]:
    """Plot-ready CSVs derived from the artifacts of ``fit``."""
    art = Path(cfg.artifacts)
    required = ["manifest.json", "fitted_densities.csv", "group_curves.csv", "partition.csv"]
    missing = [name for name in required if not (art / name).is_file()]
    if missing:
        raise IngestionError(f"missing artifact(s): {', '.join(missing)}")
    files: dict[str, str] = {}
    wanted = None if not cfg.subjects else {s.strip() for s in cfg.subjects.split(",")}

    head, rows = _read_csv(art / "fitted_densities.csv")
    if head != ["subject_id", "u", "observed", "fitted"]:
        raise IngestionError("fitted_densities.csv has an unexpected header")
    overlays: dict[str, list] = {}
    for r in rows:
        if wanted is None or r[0] in wanted:
            overlays.setdefault(r[0], []).append(r[1:])
    if wanted is not None and wanted - set(overlays):
        raise IngestionError(f"unknown subject(s): {', '.join(sorted(wanted - set(overlays)))}")
    for sid, rows_ in overlays.items():
        files[f"overlay_{_safe_name(sid)}.csv"] = _csv_text(["u", "observed", "fitted"], rows_)

    heatmaps = []
    for path in sorted(art.glob("additive_*.csv")):
        us, xs, vals = _pivot(path)
        name = path.stem[len("additive_"):]
        files[f"heatmap_{name}.csv"] = _csv_text(
            ["u"] + xs, ([u] + [vals[u][x] for x in xs] for u in us)
        )
        heatmaps.append({"covariate": name, "u_count": len(us), "x_count": len(xs)})

    head, rows = _read_csv(art / "group_curves.csv")
    files["group_curves_plot.csv"] = _csv_text(head, rows)
    files["report_index.json"] = _json({
        "overlays": sorted(f"overlay_{_safe_name(s)}.csv" for s in overlays),
        "heatmaps": heatmaps,
        "artifact_sha256": {p.name: _sha256(p) for p in sorted(art.iterdir()) if p.is_file()},
    })
    return files


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "report": cmd_report}


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI file with a [densgroup] section, or a manifest.json")
    p.add_argument("--out", help=f"output directory (default: ${OUTPUT_ENV})")
    p.add_argument("--seed", type=int)
    p.add_argument("--grid-count", type=int, help="points on the common grid (default 101)")
    p.add_argument("--order", type=int, help="B-spline order (default 4, cubic)")
    p.add_argument("--u-knots", type=int, help="interior knots of the u basis")
    p.add_argument("--x-knots", type=int, help="interior knots of each covariate basis")
    p.add_argument("--bandwidth-policy", choices=["cv", "rate"])
    p.add_argument("--q-norm", choices=["1", "2", "inf"])
    p.add_argument("--k", type=int, help="force the number of groups")
    p.add_argument("--k-max", type=int, help="largest group count considered (default 8)")
    p.add_argument("--criterion", choices=["gaic", "gbic"])
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="densgroup",
        description="Latent group structure in density-valued responses with covariates.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Monte Carlo study on the three-group design")
    _add_common(p)
    p.add_argument("--n", type=int, help="subjects per dataset")
    p.add_argument("--T", type=int, dest="T", help="observations per subject")
    p.add_argument("--reps", type=int, help="replications per cell (default 50)")
    p.add_argument("--cells", help="comma-separated NxT cells, e.g. 50x50,100x100")
    p.add_argument("--criteria", help="comma-separated criteria (default gaic,gbic)")
    p.add_argument("--noise-covariates", type=int, help="extra pure-noise covariates")
    p.add_argument("--jobs", type=int, help="worker processes")

    p = sub.add_parser("fit", help="fit the model to sample and covariate CSV files")
    _add_common(p)
    p.add_argument("--samples", help="long-format CSV: subject_id,value")
    p.add_argument("--covariates", help="CSV: subject_id,x1,...,xp")
    p.add_argument("--covariate-scaling", choices=["none", "minmax"])
    p.add_argument("--min-obs", type=int, help="skip subjects with fewer observations (default 10)")
    p.add_argument("--x-grid-count", type=int, help="covariate lattice size (default 51)")
    p.add_argument("--no-eliminate", dest="eliminate", action="store_const", const=False,
                   help="skip backward elimination in the FVE report")
    p.add_argument("--recluster", action="store_const", const=True,
                   help="re-estimate groups after each elimination step")

    p = sub.add_parser("report", help="plot-ready CSVs from fit artifacts")
    _add_common(p)
    p.add_argument("--artifacts", help="directory written by 'fit'")
    p.add_argument("--subjects", help="comma-separated subject ids for overlays (default all)")
    return parser


def resolve_config(args: argparse.Namespace, environ=None) -> RunConfig:
    """Defaults, then config file, then environment, then flags."""
    environ = os.environ if environ is None else environ
    settings: dict = {}
    if getattr(args, "config", None):
        settings.update(read_config_file(args.config))
    if settings.get("out") is None and environ.get(OUTPUT_ENV):
        settings["out"] = environ[OUTPUT_ENV]
    known = {f.name for f in fields(RunConfig)}
    for key, value in vars(args).items():
        if key in known and value is not None:
            settings[key] = value
    settings["command"] = args.command
    cfg = RunConfig(**settings)
    cfg.validate()
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        cfg = resolve_config(args)
        files = COMMANDS[cfg.command](cfg)
    except ConfigError as err:
        print(f"validation error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except IngestionError as err:
        print(f"ingestion error: {err}", file=sys.stderr)
        return EXIT_INGESTION
    except (DensGroupError, ArithmeticError, np.linalg.LinAlgError, ValueError) as err:
        print(f"numerical failure: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    try:
        write_outputs(cfg.out, files)
    except OSError as err:
        print(f"validation error: cannot write outputs: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
