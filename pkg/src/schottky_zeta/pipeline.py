"""Staged runs: orbit-table cache, result envelope, CSV/JSON export."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .congruence import collision_scan, congruence_context
from .moebius import SchottkyGroup, validate_schottky
from .pressure import PeriodicOrbitTable, bowen_dimension, build_orbit_table, pressure_table
from .resonances import (
    Rectangle,
    TestFunction,
    counting_probe,
    find_resonances,
    run_trace_formula,
)
from .transfer import ZetaFunction

log = logging.getLogger(__name__)

try:
    from importlib.metadata import version as _pkg_version

    VERSION = _pkg_version("artifact")
except Exception:  # not installed
    VERSION = "0+unknown"


class ValidationFailure(RuntimeError):
    exit_code = 2


class NumericalFailure(RuntimeError):
    exit_code = 3


# ------------------------------------------------------------------- cache


def _table_arrays(table: PeriodicOrbitTable) -> dict[str, np.ndarray]:
    arrs = {}
    for n in range(1, table.n_max + 1):
        arrs[f"lengths_{n}"] = table.lengths[n]
        arrs[f"prime_{n}"] = table.prime[n]
        for q, res in table.residues.items():
            arrs[f"res_{q}_{n}"] = res[n]
        if n in table.letters:
            arrs[f"letters_{n}"] = table.letters[n]
    return arrs


def _content_hash(arrs: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for k in sorted(arrs):
        h.update(k.encode())
        h.update(np.ascontiguousarray(arrs[k]).tobytes())
    return h.hexdigest()


class OrbitCache:
    """Orbit tables on disk keyed by (group digest, depth, moduli).

    Each file stores its key and a content hash; a file whose key or hash
    does not match is never served (it is rebuilt and overwritten).
    """

    def __init__(self, root: Path | None):
        self.root = Path(root) if root else None
        self.hits = 0
        self.misses = 0
        self.rejected = 0

    def _path(self, digest: str, n_max: int, qs: tuple[int, ...]) -> Path:
        tag = "-".join(str(q) for q in qs) or "1"
        return self.root / f"orbits_{digest}_n{n_max}_q{tag}.npz"

    def load(self, digest: str, n_max: int, qs: tuple[int, ...]) -> PeriodicOrbitTable | None:
        if self.root is None:
            return None
        path = self._path(digest, n_max, qs)
        if not path.exists():
            return None
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            arrs = {k: z[k] for k in z.files if k != "meta"}
        key_ok = meta.get("digest") == digest and meta.get("n_max") == n_max and tuple(meta.get("qs", ())) == qs
        if not key_ok or meta.get("content") != _content_hash(arrs):
            log.warning("orbit cache entry %s does not match its key or hash; rebuilding", path.name)
            self.rejected += 1
            return None
        lengths = {n: arrs[f"lengths_{n}"] for n in range(1, n_max + 1)}
        prime = {n: arrs[f"prime_{n}"] for n in range(1, n_max + 1)}
        residues = {q: {n: arrs[f"res_{q}_{n}"] for n in range(1, n_max + 1)} for q in qs}
        letters = {n: arrs[f"letters_{n}"] for n in range(1, n_max + 1) if f"letters_{n}" in arrs}
        return PeriodicOrbitTable(n_max, lengths, prime, residues, letters, digest)

    def store(self, table: PeriodicOrbitTable, qs: tuple[int, ...]) -> None:
        if self.root is None:
            return
        self.root.mkdir(parents=True, exist_ok=True)
        arrs = _table_arrays(table)
        meta = {"digest": table.group_digest, "n_max": table.n_max, "qs": list(qs), "content": _content_hash(arrs)}
        path = self._path(table.group_digest, table.n_max, qs)
        tmp = path.with_suffix(".tmp.npz")
        np.savez(tmp, meta=np.array(json.dumps(meta)), **arrs)
        tmp.replace(path)

    def table(self, g: SchottkyGroup, n_max: int, qs) -> PeriodicOrbitTable:
        qs = tuple(sorted(q for q in set(qs) if q > 1))
        t = self.load(g.digest(), n_max, qs)
        if t is not None:
            self.hits += 1
            return t
        self.misses += 1
        t = build_orbit_table(g, n_max, qs=qs)
        self.store(t, qs)
        return t


# ---------------------------------------------------------------- envelope


def _clean(x):
    """JSON-safe copy: complex -> [re, im], numpy scalars -> python, nan -> None."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (complex, np.complexfloating)):
        return [_clean(float(x.real)), _clean(float(x.imag))]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


@dataclass
class ResultEnvelope:
    config: dict
    config_hash: str
    payloads: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    versions: dict = field(default_factory=dict)
    failed_stage: str | None = None
    error: str | None = None

    def add_table(self, name: str, columns: list[str], rows: list[list]) -> None:
        self.tables[name] = {"columns": columns, "rows": _clean(rows)}

    def payload_hash(self) -> str:
        """Hash of the numerical content (timings excluded)."""
        blob = json.dumps({"payloads": self.payloads, "tables": self.tables}, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "config": self.config,
            "payload_hash": self.payload_hash(),
            "payloads": self.payloads,
            "timings": self.timings,
            "versions": self.versions,
            "failed_stage": self.failed_stage,
            "error": self.error,
        }

    @property
    def ok(self) -> bool:
        return self.failed_stage is None


def _versions() -> dict:
    import scipy

    return {"artifact": VERSION, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()}


def csv_text(columns: list[str], rows: list[list]) -> str:
    """CSV body with ``repr``-exact floats, so identical runs give identical bytes."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow(["" if v is None else repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def export(env: ResultEnvelope, out_dir, formats=("json", "csv")) -> list[Path]:
    """Write ``envelope.json`` and one CSV per table (whitespace-free columns,
    header line first; gnuplot reads them with ``set datafile separator ','``)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt in formats:
        if fmt == "json":
            p = out / "envelope.json"
            p.write_text(json.dumps(env.to_dict(), indent=2, sort_keys=True) + "\n")
            written.append(p)
        elif fmt == "csv":
            for name, t in env.tables.items():
                p = out / f"{name}.csv"
                p.write_text(csv_text(t["columns"], t["rows"]))
                written.append(p)
        else:
            raise ValueError(f"unsupported export format {fmt!r}")
    return written


# ------------------------------------------------------------------ stages


class _Run:
    def __init__(self, cfg: RunConfig, g: SchottkyGroup, env: ResultEnvelope, cache: OrbitCache):
        self.cfg, self.g, self.env, self.cache = cfg, g, env, cache
        self._table = None
        self._delta = None

    def table(self) -> PeriodicOrbitTable:
        if self._table is None:
            self._table = self.cache.table(self.g, self.cfg.n_max, self.cfg.qs)
        return self._table

    def delta(self) -> float:
        if self._delta is None:
            self._delta = bowen_dimension(self.table()).delta
        return self._delta

    # each stage returns its payload

    def validate(self):
        rep = validate_schottky(self.g)
        payload = {"ok": rep.ok, "messages": rep.messages, "min_gap": rep.min_gap, "max_circle_error": rep.max_circle_error}
        if not rep.ok:
            raise ValidationFailure("; ".join(rep.messages))
        return payload

    def dimension(self):
        t = self.table()
        xs = np.round(np.linspace(0.0, 2.0, 21), 10)
        rows = [[float(x), pressure_table(t, float(x)).extrapolated] for x in xs]
        self.env.add_table("pressure", ["x", "P"], rows)
        d = bowen_dimension(t)
        self._delta = d.delta
        return {"delta": d.delta, "bracket": list(d.bracket), "n_max": d.n_max}

    def girth(self):
        out = []
        for q in self.cfg.qs:
            if q == 1:
                continue
            ctx = congruence_context(self.g, q)
            rep = collision_scan(self.g, ctx, self.cfg.girth_depth)
            out.append(rep.to_dict())
            if rep.collisions_below_threshold or not rep.certificates_ok:
                raise NumericalFailure(f"girth bound violated at q = {q}")
        return out

    def zeta(self):
        a, b, c, d = self.cfg.zeta_grid
        nx, ny = self.cfg.zeta_grid_shape
        rows = []
        for q in self.cfg.qs:
            Z = ZetaFunction(self.g, q, self.cfg.M)
            for re in np.linspace(a, b, nx):
                for im in np.linspace(c, d, ny):
                    v = Z.logdet(complex(re, im))
                    rows.append([q, float(re), float(im), v.real, v.imag])
        self.env.add_table("zeta_grid", ["q", "re", "im", "log_abs_det", "arg_det"], rows)
        return {"points": len(rows)}

    def resonances(self):
        rows, summary = [], []
        for q in self.cfg.qs:
            Z = ZetaFunction(self.g, q, self.cfg.M)
            for rect in self.cfg.rectangles:
                rs = find_resonances(Z, Rectangle(*rect), tol=self.cfg.tol, step=self.cfg.step)
                for z in sorted(rs.zeros, key=lambda z: (z.s.real, z.s.imag)):
                    rows.append([q, z.s.real, z.s.imag, z.multiplicity, z.residual])
                summary.append(
                    {"q": q, "rectangle": rect, "count": rs.count, "leading_real": rs.leading_real(),
                     "topological": rs.topological, "evaluations": rs.evaluations}
                )
        self.env.add_table("resonances", ["q", "re", "im", "multiplicity", "residual"], rows)
        return summary

    def counts(self):
        rows, summary = [], []
        for q in self.cfg.qs:
            rep = counting_probe(ZetaFunction(self.g, q, self.cfg.M), self.cfg.r_grid, step=self.cfg.step)
            rows.extend([q, r, n] for r, n in zip(rep.r, rep.N))
            summary.append({"q": q, "N": rep.N, "ratio": rep.ratio, "monotone": rep.monotone})
            if not rep.monotone:
                raise NumericalFailure(f"N_q(r) not monotone at q = {q}")
        self.env.add_table("counts", ["q", "r", "N_q"], rows)
        return summary

    def trace_check(self):
        t = self.table()
        lm = t.min_length
        a, b = self.cfg.support or (lm - 0.5, lm + 1.5)
        out = []
        for q in self.cfg.qs:
            Z = ZetaFunction(self.g, q, self.cfg.M)
            rep, _ = run_trace_formula(
                Z, TestFunction(a, b), t, sigma_floor=self.cfg.trace_floor, T_max=self.cfg.trace_T_max, tol=self.cfg.tol
            )
            out.append(rep.to_dict())
            if rep.status != "pass":
                raise NumericalFailure(f"trace formula at q = {q}: {rep.status}")
        return out


def run_pipeline(cfg: RunConfig, stages=None) -> ResultEnvelope:
    """Run the configured stages in order; the first failure stops the run and
    is recorded in the (partial) envelope."""
    env = ResultEnvelope(cfg.to_dict(), cfg.hash(), versions=_versions())
    stages = list(stages or cfg.stages)
    try:
        g = cfg.load_group()
    except ValueError as e:
        env.failed_stage, env.error = "load", str(e)
        return env
    run = _Run(cfg, g, env, OrbitCache(cfg.cache_path()))
    for st in stages:
        t0 = time.perf_counter()
        try:
            env.payloads[st] = _clean(getattr(run, st.replace("-", "_"))())
        except (ValidationFailure, NumericalFailure, ValueError, RuntimeError) as e:
            env.failed_stage, env.error = st, f"{type(e).__name__}: {e}"
            env.timings[st] = time.perf_counter() - t0
            log.error("stage %s failed: %s", st, e)
            break
        env.timings[st] = time.perf_counter() - t0
    env.timings["orbit_cache"] = {"hits": run.cache.hits, "misses": run.cache.misses, "rejected": run.cache.rejected}
    return env


def exit_code(env: ResultEnvelope) -> int:
    if env.ok:
        return 0
    if env.failed_stage in ("load", "validate") or (env.error or "").startswith("ValidationFailure"):
        return 2
    return 3
