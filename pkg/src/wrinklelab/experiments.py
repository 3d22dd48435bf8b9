"""
Reproducible experiment harness.

Four experiments share one configuration type:

* ``solve``        one minimization with its full diagnostic bundle;
* ``scan``         sigma_L over a list of L plus the pairwise inequalities
                   sigma_{NL} <= sigma_L, sigma_{aL} <= a^2 sigma_L and
                   sigma_L <= 4 sigma_1;
* ``scaling``      the upper-bound deformation built from the minimizer on
                   L0, its normalized excess L^2 (E_L - E_0) and the
                   repair-based certificate;
* ``repair-test``  repair of the 0.9-scaled cascade over a list of L.

Every run writes into ``<out>/<experiment>/``: an append-only
``records.jsonl`` (one line per finished job, used to resume), CSV series
and a ``summary.json``.  Outputs contain no timestamps, floats are written
with ``repr`` and every row carries the configuration hash, so reruns with
the same configuration are byte-identical.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .cascade import build_cascade
from .fvk import E0, assemble_upper_bound
from .repair import ETA_MAX, certificate_terms, default_eta, repair
from .solver import SolveOptions, SolveResult, default_grids, minimize, regularity_report, structural_checks
from .spectral import CoefficientField

EXPERIMENTS = ("solve", "scan", "scaling", "repair-test")
ENV_PREFIX = "WRINKLELAB_"
RECORDS = "records.jsonl"
SUMMARY = "summary.json"

# scan and scaling tolerances
DEC_RTOL = 1e-3
INEQ_ATOL = 1e-9
EXCESS_SLACK = 0.15
MONOTONE_NOISE = 0.05
CERT_SLACK = 0.05
FEAS_TOL = 1e-10


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class NonConvergence(RuntimeError):
    """At least one solve did not reach the gradient tolerance."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

_SOLVER_FIELDS = {f.name for f in dataclasses.fields(SolveOptions)} - {"seed"}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment settings.

    Attributes
    ----------
    experiment : str
        One of ``EXPERIMENTS``.
    L : tuple of float
        Half-periods; for ``scaling`` the target periods ``N L0``.
    N, gamma : int, float
        x-grid size and grading exponent.
    M : int or None
        Mode cap; None uses the grid-matched default.
    solver : tuple of (str, value)
        Overrides of :class:`SolveOptions` fields (the seed comes from ``seed``).
    eta : "default" or float
        Repair scale; "default" is ``min(L^{-1/2}, pi^{-6}/2)``.
    L0 : float
        Base period of the scaling experiment.
    out : str
        Output directory.
    seed : int
        Seed of the first solver restart (unsigned 64-bit).
    workers : int
        Size of the process pool for per-L jobs.
    """

    experiment: str = "scan"
    L: tuple = (1.0, 2.0, 4.0, 8.0)
    N: int = 128
    gamma: float = 2.0
    M: int | None = None
    solver: tuple = ()
    eta: object = "default"
    L0: float = 4.0
    out: str = "runs"
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        try:
            self._validate()
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def _validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        Ls = tuple(float(v) for v in np.atleast_1d(self.L))
        if not Ls:
            raise ConfigError("L list is empty")
        if any(not math.isfinite(v) or v < 1 for v in Ls):
            raise ConfigError("every L must be finite and >= 1")
        if len(set(Ls)) != len(Ls):
            raise ConfigError("L list has duplicates")
        object.__setattr__(self, "L", tuple(sorted(Ls)))
        if self.experiment == "solve" and len(Ls) != 1:
            raise ConfigError("solve takes exactly one L")
        if int(self.N) != self.N or self.N < 8:
            raise ConfigError("N must be an integer >= 8")
        object.__setattr__(self, "N", int(self.N))
        if not float(self.gamma) > 0:
            raise ConfigError("gamma must be > 0")
        object.__setattr__(self, "gamma", float(self.gamma))
        if self.M is not None:
            if int(self.M) != self.M or self.M < 2:
                raise ConfigError("M must be an integer >= 2")
            object.__setattr__(self, "M", int(self.M))
            need = 2 * int(math.floor(max(Ls + (float(self.L0),))))
            if self.M < need:
                raise ConfigError(f"M must be at least 2 floor(L) = {need}")
        solver = dict(self.solver)
        unknown = set(solver) - _SOLVER_FIELDS
        if unknown:
            raise ConfigError(f"unknown solver options: {sorted(unknown)}")
        object.__setattr__(self, "solver", tuple(sorted(solver.items())))
        self.solve_options()
        if self.eta != "default":
            eta = float(self.eta)
            if not 0 < eta < ETA_MAX:
                raise ConfigError(f"eta must be 'default' or lie in (0, pi^-6) = (0, {ETA_MAX:.6g})")
            object.__setattr__(self, "eta", eta)
        if not float(self.L0) >= 1:
            raise ConfigError("L0 must be >= 1")
        object.__setattr__(self, "L0", float(self.L0))
        if self.experiment == "scaling":
            for v in Ls:
                n = v / self.L0
                if abs(n - round(n)) > 1e-12 or round(n) < 1:
                    raise ConfigError(f"scaling needs L / L0 integer; got L = {v}, L0 = {self.L0}")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        object.__setattr__(self, "seed", int(self.seed))
        if int(self.workers) != self.workers or self.workers < 1:
            raise ConfigError("workers must be a positive integer")
        object.__setattr__(self, "workers", int(self.workers))
        if not isinstance(self.out, (str, os.PathLike)) or not str(self.out):
            raise ConfigError("out must be a directory path")
        object.__setattr__(self, "out", str(self.out))

    def solve_options(self) -> SolveOptions:
        # numpy seeds take values below 2^64; the seed of restart r is seed + r
        return SolveOptions(**dict(self.solver), seed=self.seed)

    def eta_for(self, L: float) -> float:
        return default_eta(L) if self.eta == "default" else float(self.eta)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["L"] = list(self.L)
        d["solver"] = dict(self.solver)
        return d

    def content_dict(self) -> dict:
        """Settings that influence results (output location and pool size excluded)."""
        d = self.to_dict()
        d.pop("out")
        d.pop("workers")
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.content_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        if "L" in d:
            d["L"] = tuple(np.atleast_1d(d["L"]).tolist())
        if "solver" in d:
            if not isinstance(d["solver"], dict):
                raise ConfigError("solver must be an object")
            d["solver"] = tuple(d["solver"].items())
        return cls(**d)


_ENV_KEYS = {
    "EXPERIMENT": "experiment",
    "L": "L",
    "GRID_N": "N",
    "N": "N",
    "GAMMA": "gamma",
    "MODES": "M",
    "M": "M",
    "ETA": "eta",
    "L0": "L0",
    "OUT": "out",
    "SEED": "seed",
    "WORKERS": "workers",
    "SOLVER": "solver",
}


def parse_L(text: str) -> list:
    try:
        return [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse L list {text!r}") from exc


def _env_value(key: str, raw: str):
    if key == "L":
        return parse_L(raw)
    if key in ("experiment", "out"):
        return raw
    if key == "eta" and raw == "default":
        return raw
    try:
        return json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse {ENV_PREFIX}{key.upper()}={raw!r}") from exc


def env_overrides(environ=None) -> dict:
    """Configuration values from ``WRINKLELAB_*`` variables."""
    environ = os.environ if environ is None else environ
    out = {}
    for name, key in _ENV_KEYS.items():
        raw = environ.get(ENV_PREFIX + name)
        if raw is not None:
            out[key] = _env_value(key, raw)
    return out


def load_config(path=None, overrides: dict | None = None, environ=None) -> ExperimentConfig:
    """Defaults, then the JSON file, then environment, then ``overrides``."""
    d = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError:
            raise
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: top level must be an object")
    d.update(env_overrides(environ))
    d.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return ExperimentConfig.from_dict(d)


# ---------------------------------------------------------------------------
# deterministic output
# ---------------------------------------------------------------------------


def _num(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    return _num(obj)


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, repr floats, NaN mapped to null."""
    return json.dumps(_clean(obj), sort_keys=True, indent=1) + "\n"


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else repr(v) if isinstance(v, float) else v for v in map(_num, row)])
    return buf.getvalue()


def write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def L_tag(L: float) -> str:
    return f"L{L:g}"


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScanRecord:
    """One finished solve."""

    L: float
    sigma: float
    iterations: int
    converged: bool
    grad_norm: float
    pricing_margin: float | None
    constraint_residual: float
    checks_passed: bool
    checks: dict = dc_field(default_factory=dict)
    config_hash: str = ""
    code_version: str = __version__

    def to_dict(self) -> dict:
        return _clean(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "ScanRecord":
        return cls(**d)


def read_records(path: Path, config_hash: str) -> dict:
    """Records of ``config_hash`` keyed by L; later lines win."""
    out = {}
    if not path.exists():
        return out
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        try:
            d = json.loads(line)
        except json.JSONDecodeError:
            continue  # a torn final line from an interrupted run
        if d.get("config_hash") == config_hash:
            out[float(d["L"])] = ScanRecord.from_dict(d)
    return out


def append_record(path: Path, rec: ScanRecord):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a") as fh:
        fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
        fh.flush()
        os.fsync(fh.fileno())


# ---------------------------------------------------------------------------
# solve bundle
# ---------------------------------------------------------------------------


def solve_L(L: float, cfg: ExperimentConfig) -> SolveResult:
    xg, fr = default_grids(L, cfg.N, cfg.gamma, cfg.M)
    return minimize(CoefficientField.zeros(fr, xg), cfg.solve_options())


def mu_csv(res: SolveResult, ch: str) -> str:
    """Columns x, then mu_k for every active mode (blank where undefined)."""
    f = res.field
    act = f.active_modes()
    header = ["x"] + [f"mu_m{m + 1}" for m in act] + ["config_hash"]
    rows = []
    for i, x in enumerate(f.x):
        vals = [float(res.mu[j, i]) if res.mu_mask[j, i] else None for j in act]
        rows.append([float(x)] + vals + [ch])
    return csv_text(header, rows)


def lambda_csv(res: SolveResult, ch: str) -> str:
    rows = [[float(x), float(lam), ch] for x, lam in zip(res.field.x, res.lam)]
    rows.append([1.0, None, ch])
    text = csv_text(["x", "lambda", "config_hash"], rows[:-1])
    return text + f"# atom at x=1: {res.mu_atom!r}\n"


def spectrum_csv(res: SolveResult, ch: str) -> str:
    f = res.field
    act = f.active_modes()
    rows = []
    for i, x in enumerate(f.x):
        for j in act:
            if f.a[j, i] > 0:
                rows.append([float(x), int(j + 1), float(f.k[j]), float(f.a[j, i]), ch])
    return csv_text(["x", "m", "k", "amplitude", "config_hash"], rows)


def _bundle(res: SolveResult, cfg: ExperimentConfig, L: float):
    ch = cfg.config_hash()
    report = structural_checks(res)
    reg = regularity_report(res.field)
    rec = ScanRecord(
        L=L,
        sigma=res.sigma_estimate,
        iterations=res.iterations,
        converged=res.converged,
        grad_norm=res.grad_norm,
        pricing_margin=res.pricing_margin if math.isfinite(res.pricing_margin) else None,
        constraint_residual=res.constraint_residual,
        checks_passed=report.passed,
        checks={c.name: c.passed for c in report.checks},
        config_hash=ch,
    )
    files = {
        "solution.json": dumps(res.to_dict()),
        "checks.json": dumps(report.to_dict()),
        "mu.csv": mu_csv(res, ch),
        "lambda.csv": lambda_csv(res, ch),
        "spectrum.csv": spectrum_csv(res, ch),
        "regularity.csv": csv_text(
            ["name", "quantity", "constant", "argmax", "config_hash"],
            [[r.name, r.quantity, r.constant, r.argmax, ch] for r in reg],
        ),
    }
    return rec, files


def _solve_job(args):
    L, cfg_dict = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    return _bundle(solve_L(L, cfg), cfg, L)


def _pool_map(fn, items, workers: int):
    """Ordered map; a bounded process pool when ``workers > 1``."""
    if workers <= 1 or len(items) <= 1:
        for it in items:
            yield fn(it)
        return
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as ex:
        yield from ex.map(fn, items)


def run_solves(cfg: ExperimentConfig, Ls, root: Path) -> dict:
    """Solve every L not yet recorded; returns records keyed by L.

    The parent process is the only writer: it appends each record and its
    per-L files in L order as results arrive.
    """
    ch = cfg.config_hash()
    rec_path = root / RECORDS
    have = read_records(rec_path, ch)
    todo = [L for L in Ls if L not in have or not (root / L_tag(L) / "solution.json").exists()]
    args = [(L, cfg.to_dict()) for L in todo]
    for L, (rec, files) in zip(todo, _pool_map(_solve_job, args, cfg.workers)):
        for name, text in files.items():
            write_text(root / L_tag(L) / name, text)
        append_record(rec_path, rec)
        have[L] = rec
    return {L: have[L] for L in Ls}


def load_solution(root: Path, L: float) -> CoefficientField:
    d = json.loads((root / L_tag(L) / "solution.json").read_text())
    return CoefficientField.from_dict(d["field"])


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def _summary(cfg, rows, checks, extra=None) -> dict:
    out = {
        "experiment": cfg.experiment,
        "config": cfg.content_dict(),
        "config_hash": cfg.config_hash(),
        "code_version": __version__,
        "rows": rows,
        "checks": checks,
        "passed": all(c["passed"] for c in checks if c["passed"] is not None),
    }
    out.update(extra or {})
    return out


def _finish(cfg, root: Path, summary: dict, csv_name: str, header, table):
    write_text(root / csv_name, csv_text(header, table))
    write_text(root / SUMMARY, dumps(summary))
    return summary


def sigma_inequalities(sigma: dict, rtol: float = DEC_RTOL, atol: float = INEQ_ATOL) -> list:
    """Pairwise checks on a table ``L -> sigma_L``.

    * ``L' = n L`` with integer n >= 2: ``sigma_{L'} <= sigma_L (1 + rtol)``;
    * ``L' = alpha L`` with rational non-integer alpha > 1:
      ``sigma_{L'} <= alpha^2 sigma_L + atol``;
    * every L: ``sigma_L <= 4 sigma_1 + atol`` when L = 1 is present.
    """
    out = []
    Ls = sorted(sigma)
    for i, L in enumerate(Ls):
        for L2 in Ls[i + 1 :]:
            alpha = Fraction(L2).limit_denominator(1000) / Fraction(L).limit_denominator(1000)
            if alpha.denominator == 1:
                rhs = sigma[L] * (1 + rtol)
                kind = "periodic"
            else:
                rhs = float(alpha) ** 2 * sigma[L] + atol
                kind = "rescale"
            out.append(
                {"kind": kind, "L": L, "L2": L2, "lhs": sigma[L2], "rhs": rhs, "passed": bool(sigma[L2] <= rhs)}
            )
    if 1.0 in sigma:
        for L in Ls:
            rhs = 4 * sigma[1.0] + atol
            out.append({"kind": "sup", "L": 1.0, "L2": L, "lhs": sigma[L], "rhs": rhs, "passed": bool(sigma[L] <= rhs)})
    return out


def _record_rows(recs: dict) -> list:
    return [recs[L].to_dict() for L in sorted(recs)]


def run_solve(cfg: ExperimentConfig) -> dict:
    root = Path(cfg.out) / "solve"
    recs = run_solves(cfg, cfg.L, root)
    rows = _record_rows(recs)
    checks = [{"kind": "converged", "L": r["L"], "passed": r["converged"]} for r in rows]
    checks += [{"kind": "structural", "L": r["L"], "passed": r["checks_passed"]} for r in rows]
    summary = _summary(cfg, rows, checks)
    return _finish(cfg, root, summary, "solve.csv", *_scan_table(cfg, recs))


def _scan_table(cfg, recs):
    ch = cfg.config_hash()
    header = ["L", "sigma", "iterations", "converged", "grad_norm", "pricing_margin", "checks_passed", "config_hash"]
    table = [
        [r.L, r.sigma, r.iterations, r.converged, r.grad_norm, r.pricing_margin, r.checks_passed, ch]
        for r in (recs[L] for L in sorted(recs))
    ]
    return header, table


def sigma_scan(cfg: ExperimentConfig) -> dict:
    """sigma_L for every L of the configuration and the pairwise inequalities."""
    root = Path(cfg.out) / "scan"
    recs = run_solves(cfg, cfg.L, root)
    ineq = sigma_inequalities({L: r.sigma for L, r in recs.items()})
    checks = [dict(c, passed=c["passed"]) for c in ineq]
    checks += [{"kind": "converged", "L": L, "passed": r.converged} for L, r in sorted(recs.items())]
    summary = _summary(cfg, _record_rows(recs), checks)
    header, table = _scan_table(cfg, recs)
    write_text(
        root / "inequalities.csv",
        csv_text(
            ["kind", "L", "L2", "lhs", "rhs", "passed", "config_hash"],
            [[c["kind"], c["L"], c["L2"], c["lhs"], c["rhs"], c["passed"], cfg.config_hash()] for c in ineq],
        ),
    )
    return _finish(cfg, root, summary, "sigma_scan.csv", header, table)


SCALING_HEADER = [
    "h", "L", "N", "delta", "n_y", "E_L", "E_0", "scaled_excess",
    "T1a", "T1c", "T2", "T3", "T4", "T5",
    "sigma_L0", "sigma_L", "delta_hat", "certificate", "config_hash",
]  # fmt: skip


def scaling_law(cfg: ExperimentConfig) -> dict:
    """Normalized excess of the upper-bound deformation and its certificate."""
    root = Path(cfg.out) / "scaling"
    Ls = sorted(set(cfg.L) | {cfg.L0})
    recs = run_solves(cfg, Ls, root)
    u = load_solution(root, cfg.L0)
    ch = cfg.config_hash()
    rows = []
    for L in cfg.L:
        N = int(round(L / cfg.L0))
        d = assemble_upper_bound(u, N)
        ct = certificate_terms(d, recs[L].sigma, cfg.eta_for(L))
        e = ct["energy"]
        rows.append(
            {
                "h": L**-2, "L": L, "N": N, "delta": 1.0 / L, "n_y": d.n_y,
                "E_L": e.total, "E_0": E0, "scaled_excess": ct["scaled_excess"],
                "T1a": e.T1a, "T1c": e.T1c, "T2": e.T2, "T3": e.T3, "T4": e.T4, "T5": e.T5,
                "sigma_L0": recs[cfg.L0].sigma, "sigma_L": recs[L].sigma,
                "delta_hat": ct["delta_hat"], "certificate": ct["certificate"], "config_hash": ch,
                "budget": ct["budget"].to_dict(),
            }
        )  # fmt: skip
    checks = []
    s0 = recs[cfg.L0].sigma
    for r in rows:
        ex = r["scaled_excess"]
        checks.append({"kind": "excess_positive", "L": r["L"], "value": ex, "passed": bool(ex > 0)})
        checks.append(
            {"kind": "excess_bracket", "L": r["L"], "value": ex, "bound": s0 * (1 + EXCESS_SLACK), "passed": bool(ex <= s0 * (1 + EXCESS_SLACK))}
        )  # fmt: skip
        lhs = r["sigma_L"] - r["delta_hat"]
        rhs = ex + CERT_SLACK * r["sigma_L"]
        checks.append({"kind": "certificate", "L": r["L"], "lhs": lhs, "rhs": rhs, "passed": bool(lhs <= rhs)})
    for a, b in zip(rows, rows[1:]):
        ok = b["scaled_excess"] <= a["scaled_excess"] * (1 + MONOTONE_NOISE)
        checks.append({"kind": "nonincreasing", "L": a["L"], "L2": b["L"], "passed": bool(ok)})
    checks += [{"kind": "converged", "L": L, "passed": r.converged} for L, r in sorted(recs.items())]
    summary = _summary(cfg, rows, checks, {"solves": _record_rows(recs)})
    table = [[r[k] for k in SCALING_HEADER] for r in rows]
    return _finish(cfg, root, summary, "scaling.csv", SCALING_HEADER, table)


REPAIR_HEADER = [
    "L", "eta", "feasibility_margin", "g0_max", "penalty", "energy_v", "energy_g", "delta_hat",
    "ramp", "cascade", "single_mode", "deficit_max", "deficit_constant", "k0", "config_hash",
]  # fmt: skip


def repair_input(L: float, cfg: ExperimentConfig, scale: float = 0.9) -> CoefficientField:
    """The cascade (b = 1) with amplitudes scaled by ``scale``."""
    xg, fr = default_grids(L, cfg.N, cfg.gamma, cfg.M)
    c = build_cascade(L, 1.0, xg, fr)
    return c.replace(scale * c.a)


def repair_test(cfg: ExperimentConfig) -> dict:
    """Repair of the 0.9-scaled cascade for every L."""
    root = Path(cfg.out) / "repair-test"
    ch = cfg.config_hash()
    rows = []
    for L in cfg.L:
        res = repair(repair_input(L, cfg), cfg.eta_for(L))
        b = res.budget
        rows.append(
            {
                "L": L, "eta": b.eta, "feasibility_margin": res.feasibility_margin,
                "g0_max": float(np.max(res.field.a[:, 0])), "penalty": b.penalty,
                "energy_v": b.energy_v, "energy_g": b.energy_g, "delta_hat": b.delta_hat,
                "ramp": b.ramp_overhead, "cascade": b.cascade_energy, "single_mode": b.single_mode_energy,
                "deficit_max": b.deficit_max, "deficit_constant": b.deficit_constant, "k0": b.k0,
                "config_hash": ch,
            }
        )  # fmt: skip
    checks = []
    for r in rows:
        checks.append({"kind": "feasible", "L": r["L"], "value": r["feasibility_margin"], "passed": bool(r["feasibility_margin"] >= -FEAS_TOL)})
        checks.append({"kind": "g0_zero", "L": r["L"], "value": r["g0_max"], "passed": bool(r["g0_max"] == 0.0)})
    for a, b in zip(rows, rows[1:]):
        checks.append(
            {"kind": "delta_hat_decreasing", "L": a["L"], "L2": b["L"], "passed": bool(b["delta_hat"] < a["delta_hat"])}
        )
    summary = _summary(cfg, rows, checks)
    table = [[r[k] for k in REPAIR_HEADER] for r in rows]
    return _finish(cfg, root, summary, "repair.csv", REPAIR_HEADER, table)


RUNNERS = {"solve": run_solve, "scan": sigma_scan, "scaling": scaling_law, "repair-test": repair_test}


def run(cfg: ExperimentConfig) -> dict:
    """Run the configured experiment; raises NonConvergence after writing outputs."""
    summary = RUNNERS[cfg.experiment](cfg)
    bad = [c["L"] for c in summary["checks"] if c["kind"] == "converged" and not c["passed"]]
    if bad:
        raise NonConvergence(f"solver did not converge for L = {bad}")
    return summary


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def report(out) -> dict:
    """Collect every ``summary.json`` under ``out`` into ``report.json`` and ``report.md``.

    Only persisted files are read, so regenerating the report is
    byte-identical.  An empty directory gives a valid empty report.
    """
    out = Path(out)
    bundle = {"code_version": __version__, "experiments": {}}
    for name in EXPERIMENTS:
        p = out / name / SUMMARY
        if p.exists():
            bundle["experiments"][name] = json.loads(p.read_text())
    lines = ["# wrinklelab report", ""]
    if not bundle["experiments"]:
        lines.append("No experiments found.")
    for name, s in bundle["experiments"].items():
        lines += [f"## {name}", "", f"config hash `{s['config_hash']}`, code version {s['code_version']}", ""]
        lines.append(f"overall: {'PASS' if s['passed'] else 'FAIL'}")
        lines.append("")
        for c in s["checks"]:
            tag = "info" if c["passed"] is None else ("PASS" if c["passed"] else "FAIL")
            detail = ", ".join(f"{k}={_fmt(v)}" for k, v in c.items() if k not in ("kind", "passed"))
            lines.append(f"- {tag} {c['kind']}: {detail}")
        series = sorted(p.relative_to(out).as_posix() for p in (out / name).rglob("*.csv"))
        if series:
            lines += ["", "series:"] + [f"- {s_}" for s_ in series]
        lines.append("")
    text = "\n".join(lines).rstrip() + "\n"
    out.mkdir(parents=True, exist_ok=True)
    write_text(out / "report.json", dumps(bundle))
    write_text(out / "report.md", text)
    return bundle
