"""Grid sweeps: theory and simulation side by side, emitted as CSV or JSON lines.

Config files are TOML::

    model = "rf"                 # lr | rf | nn

    [axes]                       # expanded as a cartesian product, in this order
    gamma = [0.5, 1.0, 2.0]      # broadcast to every layer
    depth = [1]
    alpha = {start = 0.1, stop = 2.0, num = 20}
    sigma2 = [1.0]
    eta = [0.0]
    # widths = [[1.5, 0.5], [2.0, 2.0]]   per-layer alternative to gamma/depth

    [sim]                        # optional
    d = 100
    n_reps = 10
    base_seed = 0

    [output]
    path = "out.csv"
    format = "csv"               # csv | jsonl
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import math
import os
import struct
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Iterable, Optional, Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import simulator as sim
from .model import Architecture, DomainError, ModelKind, Scenario
from .theory import MultipleRoots, NoPhysicalRoot, epsilon

SCHEMA_VERSION = 1
FORMATS = ("csv", "jsonl")
AXES = ("alpha", "gamma", "depth", "widths", "sigma2", "eta")

COLUMNS = (
    "model", "alpha", "sigma2", "eta", "depth", "gammas",
    "d", "p", "widths_sim", "gammas_realized",
    "phase", "epsilon_theory", "z",
    "epsilon_sim_mean", "epsilon_sim_se", "n_reps", "seed", "flags",
)
INT_COLUMNS = {"depth", "d", "p", "n_reps", "seed", "n1"}
# optimal rows: gamma_star is a float, ell_star a ";"-joined tie set
FLOAT_COLUMNS = {
    "alpha", "sigma2", "eta", "epsilon_theory", "z", "epsilon_sim_mean", "epsilon_sim_se",
    "gamma", "gamma_realized", "gap_theory", "gap_sim_mean", "gap_sim_se",
    "gamma_star", "sigma_tilde2",
}
LIST_FLOAT_COLUMNS = {"gammas", "gammas_realized"}
LIST_INT_COLUMNS = {"widths_sim"}
LIST_STR_COLUMNS = {"flags"}

# exit codes
OK, USAGE, DOMAIN, NUMERICAL = 0, 1, 2, 3
NUMERICAL_FLAGS = {"no_physical_root", "multiple_roots", "ill_conditioned", "numerical_error"}


class ConfigError(ValueError):
    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def fmt_float(x: Optional[float]) -> str:
    if x is None:
        return ""
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return format(x, ".17g")


def _fmt_cell(col: str, v: Any) -> str:
    if v is None:
        return ""
    if col in FLOAT_COLUMNS:
        return fmt_float(v)
    if col in LIST_FLOAT_COLUMNS:
        return ";".join(fmt_float(x) for x in v)
    if col in LIST_INT_COLUMNS or col in LIST_STR_COLUMNS:
        return ";".join(str(x) for x in v)
    return str(v)


def _parse_cell(col: str, text: str) -> Any:
    if text == "":
        return () if col in LIST_FLOAT_COLUMNS | LIST_INT_COLUMNS | LIST_STR_COLUMNS else None
    if col in FLOAT_COLUMNS:
        return float(text)
    if col in INT_COLUMNS:
        return int(text)
    if col in LIST_FLOAT_COLUMNS:
        return tuple(float(x) for x in text.split(";"))
    if col in LIST_INT_COLUMNS:
        return tuple(int(x) for x in text.split(";"))
    if col in LIST_STR_COLUMNS:
        return tuple(text.split(";"))
    return text


def _json_value(v: Any) -> Any:
    if isinstance(v, float) and not math.isfinite(v):
        return fmt_float(v)
    if isinstance(v, tuple):
        return [_json_value(x) for x in v]
    return v


def render_rows(
    rows: Sequence[dict], fmt: str = "csv", columns: Sequence[str] = COLUMNS,
    meta: Optional[dict] = None,
) -> str:
    """Serialize rows; CSV carries metadata as leading ``#`` comments."""
    meta = {"schema_version": SCHEMA_VERSION, **(meta or {})}
    buf = io.StringIO()
    if fmt == "csv":
        for k, v in meta.items():
            buf.write(f"# {k}: {v}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt_cell(c, r.get(c)) for c in columns])
    elif fmt == "jsonl":
        buf.write(json.dumps({"meta": meta}) + "\n")
        for r in rows:
            buf.write(json.dumps({c: _json_value(r.get(c)) for c in columns}) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return buf.getvalue()


def parse_csv(text: str) -> tuple[dict, list[dict]]:
    """Inverse of ``render_rows(..., 'csv')``: (metadata, typed rows)."""
    meta = {}
    body = []
    for line in text.splitlines(keepends=True):
        if line.startswith("# ") and not body:
            k, _, v = line[2:].rstrip("\n").partition(": ")
            meta[k] = v
        else:
            body.append(line)
    reader = csv.reader(io.StringIO("".join(body)))
    header = next(reader)
    rows = [{c: _parse_cell(c, t) for c, t in zip(header, rec)} for rec in reader]
    return meta, rows


def write_atomic(text: str, path: str) -> None:
    """Write via a temporary file in the target directory and rename."""
    if path == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".dlc-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def derive_seed(base_seed: int, *key: Any) -> int:
    """63-bit seed from the base seed and a parameter tuple.

    Numbers hash by their binary64 bit pattern, so 0 and 0.0 give the same seed.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(base_seed)).encode())
    for k in key:
        if isinstance(k, (int, float, np.integer, np.floating)) and not isinstance(k, bool):
            h.update(b"f" + struct.pack("<d", float(k) + 0.0))
        elif isinstance(k, (tuple, list)):
            h.update(b"(")
            for x in k:
                h.update(struct.pack("<d", float(x)))
            h.update(b")")
        else:
            h.update(b"s" + str(k).encode())
        h.update(b"|")
    return int.from_bytes(h.digest(), "little") >> 1


@dataclass(frozen=True)
class SimConfig:
    d: int = sim.DEFAULT_D
    n_reps: int = sim.DEFAULT_REPS
    base_seed: int = 0


@dataclass(frozen=True)
class GridPoint:
    model: ModelKind
    scenario: Scenario
    arch: Optional[Architecture]


@dataclass
class SweepGrid:
    model: ModelKind
    axes: dict[str, list]
    sim: Optional[SimConfig] = None
    out_path: str = "-"
    out_format: str = "csv"

    def points(self) -> list[GridPoint]:
        """Cartesian product, last axis varying fastest."""
        names = list(self.axes)
        pts = []
        for combo in itertools.product(*(self.axes[n] for n in names)):
            v = dict(zip(names, combo))
            s = Scenario(float(v["alpha"]), float(v.get("sigma2", 1.0)), float(v.get("eta", 0.0)))
            arch = None
            if "widths" in v:
                arch = Architecture([float(g) for g in v["widths"]])
            elif "gamma" in v:
                arch = Architecture.equal(float(v["gamma"]), int(v.get("depth", 1)))
            pts.append(GridPoint(self.model, s, arch))
        return pts


def _expand_axis(name: str, spec: Any, problems: list[str]) -> list:
    if isinstance(spec, dict):
        extra = set(spec) - {"start", "stop", "num", "step", "spacing"}
        if extra:
            problems.append(f"axes.{name}: unknown range keys {sorted(extra)}")
            return []
        try:
            start, stop = float(spec["start"]), float(spec["stop"])
        except (KeyError, TypeError, ValueError):
            problems.append(f"axes.{name}: range needs numeric 'start' and 'stop'")
            return []
        if "step" in spec:
            step = float(spec["step"])
            if not step > 0:
                problems.append(f"axes.{name}: step must be > 0")
                return []
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            return [round(start + i * step, 12) for i in range(max(n, 0))]
        num = spec.get("num")
        if not isinstance(num, int) or num < 0:
            problems.append(f"axes.{name}: range needs integer 'num' >= 0 or 'step'")
            return []
        if spec.get("spacing", "linear") == "log":
            return np.geomspace(start, stop, num).tolist() if num else []
        return np.linspace(start, stop, num).tolist()
    if isinstance(spec, list):
        return spec
    problems.append(f"axes.{name}: expected a list or a range table")
    return []


def grid_from_config(cfg: dict) -> SweepGrid:
    """Validate a parsed config; every problem is collected before raising."""
    problems: list[str] = []
    for k in set(cfg) - {"model", "axes", "sim", "output"}:
        problems.append(f"unknown top-level key {k!r}")
    model = None
    try:
        model = ModelKind.parse(cfg.get("model", ""))
    except ValueError:
        problems.append(f"model: expected one of lr, rf, nn, got {cfg.get('model')!r}")
    raw_axes = cfg.get("axes")
    axes: dict[str, list] = {}
    if not isinstance(raw_axes, dict):
        problems.append("axes: missing table")
        raw_axes = {}
    for name, spec in raw_axes.items():
        if name not in AXES:
            problems.append(f"axes.{name}: unknown axis (expected one of {', '.join(AXES)})")
            continue
        axes[name] = _expand_axis(name, spec, problems)
    if "alpha" not in axes:
        problems.append("axes.alpha: required")
    if "widths" in axes and ("gamma" in axes or "depth" in axes):
        problems.append("axes.widths: cannot be combined with gamma/depth")
    if model in (ModelKind.RF, ModelKind.NN) and not ("widths" in axes or "gamma" in axes):
        problems.append(f"axes: model {model.value} needs 'gamma' or 'widths'")
    if "depth" in axes and "gamma" not in axes:
        problems.append("axes.depth: needs a gamma axis")
    for name, vals in axes.items():
        if name == "widths":
            for w in vals:
                if not (isinstance(w, list) and w and all(isinstance(x, (int, float)) for x in w)):
                    problems.append(f"axes.widths: entry {w!r} is not a non-empty list of numbers")
        elif name == "depth":
            if any(not isinstance(x, int) or isinstance(x, bool) or x < 1 for x in vals):
                problems.append("axes.depth: entries must be integers >= 1")
        elif any(not isinstance(x, (int, float)) or isinstance(x, bool) for x in vals):
            problems.append(f"axes.{name}: entries must be numbers")
    if any(len(v) == 0 for v in axes.values()) or (not axes and raw_axes is not None):
        problems.append("axes: empty grid")

    sim_cfg = None
    if "sim" in cfg:
        sc = cfg["sim"]
        if not isinstance(sc, dict):
            problems.append("sim: expected a table")
        else:
            for k in set(sc) - {"d", "n_reps", "base_seed"}:
                problems.append(f"sim.{k}: unknown key")
            d = sc.get("d", sim.DEFAULT_D)
            n_reps = sc.get("n_reps", sim.DEFAULT_REPS)
            seed = sc.get("base_seed", 0)
            if not isinstance(d, int) or d < 1:
                problems.append("sim.d: integer >= 1 required")
            if not isinstance(n_reps, int) or n_reps < 2:
                problems.append("sim.n_reps: integer >= 2 required")
            if not isinstance(seed, int) or seed < 0:
                problems.append("sim.base_seed: non-negative integer required")
            sim_cfg = SimConfig(d, n_reps, seed)

    out = cfg.get("output", {})
    if not isinstance(out, dict):
        problems.append("output: expected a table")
        out = {}
    for k in set(out) - {"path", "format"}:
        problems.append(f"output.{k}: unknown key")
    fmt = out.get("format", "csv")
    if fmt not in FORMATS:
        problems.append(f"output.format: expected one of {FORMATS}, got {fmt!r}")
    if problems:
        raise ConfigError(problems)
    grid = SweepGrid(model, axes, sim_cfg, str(out.get("path", "-")), fmt)
    try:
        grid.points()
    except (DomainError, TypeError, ValueError) as exc:
        raise ConfigError([f"axes: invalid grid point: {exc}"]) from exc
    return grid


def load_config(path: str) -> SweepGrid:
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc.strerror}"]) from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"{path}: {exc}"]) from exc
    return grid_from_config(cfg)


def _simulate(pt: GridPoint, cfg: SimConfig, row: dict) -> None:
    d = cfg.d
    s = pt.scenario
    p = int(round(s.alpha * d))
    widths = [int(round(g * d)) for g in pt.arch.widths] if pt.arch else []
    row.update(d=d, p=p, widths_sim=tuple(widths),
               gammas_realized=tuple(n / d for n in widths))
    gammas = pt.arch.widths if pt.arch else ()
    seed = derive_seed(cfg.base_seed, pt.model.value, s.alpha, s.sigma2, s.eta, gammas)
    if p < 1 or any(n < 1 for n in widths):
        row["flags"] += ("sim_size_zero",)
        return
    try:
        if pt.model is ModelKind.LR:
            est = sim.simulate_lr_error(d, p, s, cfg.n_reps, seed, workers=1)
        elif pt.model is ModelKind.RF:
            est = sim.simulate_rf_error(widths, d, p, s, cfg.n_reps, seed, workers=1)
        elif len(widths) == 1:
            est = sim.simulate_nn_error_two_layer(widths[0], d, p, s, cfg.n_reps, seed, workers=1)
        else:
            row["flags"] += ("sim_unsupported_depth",)
            return
    except sim.RegimeAmbiguous:
        row["flags"] += ("regime_ambiguous",)
        return
    except sim.IllConditioned:
        row["flags"] += ("ill_conditioned",)
        return
    except (ArithmeticError, np.linalg.LinAlgError):
        row["flags"] += ("numerical_error",)
        return
    row.update(epsilon_sim_mean=est.mean, epsilon_sim_se=est.se, n_reps=est.n, seed=seed)


def evaluate_point(pt: GridPoint, sim_cfg: Optional[SimConfig] = None) -> dict:
    """One ResultRow for a grid point; failures become flags, never exceptions."""
    s = pt.scenario
    row: dict[str, Any] = {
        "model": pt.model.value,
        "alpha": s.alpha,
        "sigma2": s.sigma2,
        "eta": s.eta,
        "depth": pt.arch.depth if pt.arch else 0,
        "gammas": tuple(pt.arch.widths) if pt.arch else (),
        "flags": (),
    }
    try:
        res = epsilon(pt.model, s, pt.arch)
        row.update(phase=res.phase.kind.value, epsilon_theory=res.epsilon, z=res.z)
        if res.divergent:
            row["flags"] += ("divergent",)
        row["flags"] += tuple(f for f in res.flags if f not in row["flags"])
    except NoPhysicalRoot:
        row["flags"] += ("no_physical_root",)
    except MultipleRoots:
        row["flags"] += ("multiple_roots",)
    except DomainError:
        row["flags"] += ("domain_error",)
    except ArithmeticError:
        row["flags"] += ("numerical_error",)
    if sim_cfg is not None:
        _simulate(pt, sim_cfg, row)
    return row


def _workers() -> int:
    env = os.environ.get("DLC_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def pool_map(fn, items: Sequence, workers: Optional[int] = None) -> list:
    """Ordered parallel map over a thread pool sized by ``DLC_THREADS``."""
    workers = _workers() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def run_grid(grid: SweepGrid, workers: Optional[int] = None) -> list[dict]:
    return pool_map(lambda pt: evaluate_point(pt, grid.sim), grid.points(), workers)


def exit_code(rows: Iterable[dict]) -> int:
    flags = set(itertools.chain.from_iterable(r.get("flags", ()) for r in rows))
    if flags & NUMERICAL_FLAGS:
        return NUMERICAL
    if "domain_error" in flags:
        return DOMAIN
    return OK


def run_sweep(grid: SweepGrid, out_path: Optional[str] = None, fmt: Optional[str] = None,
              workers: Optional[int] = None) -> tuple[int, list[dict]]:
    rows = run_grid(grid, workers)
    meta = {"model": grid.model.value, "axes": ",".join(grid.axes)}
    if grid.sim:
        meta.update(d=grid.sim.d, n_reps=grid.sim.n_reps, base_seed=grid.sim.base_seed)
    text = render_rows(rows, fmt or grid.out_format, meta=meta)
    write_atomic(text, out_path or grid.out_path)
    return exit_code(rows), rows


GAP_COLUMNS = (
    "gamma", "n1", "gamma_realized", "gap_theory", "gap_sim_mean", "gap_sim_se",
    "n_reps", "seed", "flags",
)


def gap_row(gamma: float, s: Scenario, d: int, n_reps: int, base_seed: int) -> dict:
    """Theory gap plus paired simulation sharing (X, w*, xi) between RF and NN."""
    from .perturbation import gap_exact_two_layer

    row: dict[str, Any] = {"gamma": gamma, "flags": ()}
    arch = Architecture([gamma])
    if gamma > s.alpha:
        row["gap_theory"] = gap_exact_two_layer(gamma, s)
    else:
        rf = epsilon(ModelKind.RF, s, arch)
        nn = epsilon(ModelKind.NN, s, arch)
        row["gap_theory"] = rf.epsilon - nn.epsilon
        row["flags"] += ("bottlenecked",) + (("divergent",) if rf.divergent else ())
    p = int(round(s.alpha * d))
    n1 = int(round(gamma * d))
    row.update(n1=n1, gamma_realized=n1 / d)
    if p < 1 or n1 < 1:
        row["flags"] += ("sim_size_zero",)
        return row
    seed = derive_seed(base_seed, "gap", s.alpha, s.sigma2, s.eta, (gamma,))
    try:
        rf_est = sim.simulate_rf_error([n1], d, p, s, n_reps, seed, workers=1)
        nn_est = sim.simulate_nn_error_two_layer(n1, d, p, s, n_reps, seed, workers=1)
    except sim.RegimeAmbiguous:
        row["flags"] += ("regime_ambiguous",)
        return row
    except sim.IllConditioned:
        row["flags"] += ("ill_conditioned",)
        return row
    diff = rf_est.samples - nn_est.samples
    row.update(
        gap_sim_mean=float(np.mean(diff)),
        gap_sim_se=float(np.std(diff, ddof=1) / math.sqrt(len(diff))),
        n_reps=n_reps,
        seed=seed,
    )
    return row


def render_gap_rows(rows: Sequence[dict], fmt: str, meta: dict) -> str:
    return render_rows(rows, fmt, GAP_COLUMNS, meta)
