"""Batch pipeline: solve -> extract -> verify -> compare, with an artifact manifest."""
from __future__ import annotations

import hashlib
import json
import logging
import time
import warnings
from pathlib import Path

import numpy as np

from .analysis import ValidityWarning, check_validity, extract_contours, mask, slice_field
from .config import Problem, RunConfig, parse_number
from .control import simulate_many, slice_sampler, verify_region
from .grid import ValueField, load_field, save_field, save_mask
from .oracle import brute_force_many, compare_field, probe_lattice, write_oracle_csv
from .solver import solve

log = logging.getLogger(__name__)

STAGES = ("solve", "extract", "verify", "compare")


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _level_tag(J: float) -> str:
    return f"{J:g}".replace("-", "m").replace(".", "p")


def _slice_tag(fixed: dict) -> str:
    if not fixed:
        return "full"
    return "_".join(f"d{d}-{v:.6g}".replace(".", "p").replace("-", "m", 1) for d, v in sorted(fixed.items()))


class Pipeline:
    def __init__(self, cfg: RunConfig, root: str | Path | None = None):
        self.cfg = cfg
        self.problem = Problem(cfg)
        self.run_id = cfg.digest()[:12]
        self.out = Path(root if root is not None else cfg.output) / self.run_id
        self.artifacts: list[dict] = []
        self.timings: dict = {}
        self.warnings: list[str] = []
        self.completed: list[str] = []
        self.failed: dict | None = None
        self.summary: dict = {}

    # -- bookkeeping --------------------------------------------------------
    def _record(self, path: Path, stage: str, kind: str, volatile: bool = False):
        entry = {"path": str(path.relative_to(self.out)), "stage": stage, "kind": kind,
                 "sha256": None if volatile else file_digest(path)}
        if volatile:
            entry["note"] = "contains timings; digest omitted"
        self.artifacts.append(entry)
        sidecar = Path(str(path) + ".json")
        if sidecar.exists():
            self.artifacts.append({"path": str(sidecar.relative_to(self.out)), "stage": stage,
                                   "kind": kind + "-meta", "sha256": file_digest(sidecar)})

    def manifest(self) -> dict:
        return {
            "run_id": self.run_id,
            "config": self.cfg.resolved(),
            "resolved": {"dt": self.problem.solver.dt, "steps": self.problem.solver.steps,
                         "horizon": self.problem.solver.horizon,
                         "lambda": self.problem.costs.lam, "Lambda": self.problem.costs.Lam,
                         "validity_bound": self.problem.validity_bound},
            "stages_completed": self.completed,
            "failure": self.failed,
            "warnings": self.warnings,
            "summary": self.summary,
            "artifacts": self.artifacts,
            "timings": self.timings,
        }

    def write_manifest(self, name: str = "manifest.json") -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        path.write_text(json.dumps(self.manifest(), indent=2, default=float) + "\n")
        return path

    def _check_levels(self):
        levels = self.cfg.levels
        if not levels:
            return
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ValidityWarning)
            check_validity(levels, self.problem.validity_bound)
        for w in caught:
            msg = str(w.message)
            log.warning(msg)
            self.warnings.append(msg)

    # -- stages ---------------------------------------------------------------
    def solve(self) -> ValueField:
        p = self.problem
        self._check_levels()
        t0 = time.perf_counter()
        field, report = solve(p.model, p.costs, p.target, p.grid, p.solver,
                              progress=lambda s: log.debug("step %d max %.4g", s.step, s.max_value))
        self.timings["solve"] = time.perf_counter() - t0
        self.timings["solve_steps"] = [s.wall_time for s in report.steps]
        self.out.mkdir(parents=True, exist_ok=True)
        fpath = save_field(field, self.out / "field.rchf")
        self._record(fpath, "solve", "field")
        rpath = self.out / "solve_report.json"
        report.to_json(rpath)
        self._record(rpath, "solve", "report", volatile=True)
        self.summary["field_digest"] = field.digest()
        self.summary["value_range"] = list(field.value_range)
        return field

    def extract(self, field: ValueField):
        p = self.problem
        levels = self.cfg.levels
        t0 = time.perf_counter()
        cdir = self.out / "contours"
        mdir = self.out / "masks"
        if self.cfg.analysis.masks:
            mdir.mkdir(parents=True, exist_ok=True)
            for J in levels:
                path = save_mask(mask(field, J), field.grid, field.meta, mdir / f"mask_J{_level_tag(J)}.rchf", J)
                self._record(path, "extract", "mask")
        if self.cfg.analysis.contours:
            cdir.mkdir(parents=True, exist_ok=True)
            for fixed in p.slices():
                f2, spec = slice_field(field, fixed)
                for J in levels:
                    contour = extract_contours(f2, J, spec.to_dict())
                    stem = f"contour_{_slice_tag(fixed)}_J{_level_tag(J)}"
                    contour.to_json(cdir / f"{stem}.json")
                    contour.to_csv(cdir / f"{stem}.csv")
                    self._record(cdir / f"{stem}.json", "extract", "contour")
                    self._record(cdir / f"{stem}.csv", "extract", "contour-table")
        self.timings["extract"] = time.perf_counter() - t0

    def verify(self, field: ValueField):
        v = self.cfg.verify
        if v is None:
            return
        p = self.problem
        levels = v.levels or self.cfg.levels
        fixed = {int(d): parse_number(x) for d, x in v.slice.items()}
        t0 = time.perf_counter()
        samples = slice_sampler(field, fixed, v.stride)
        report = verify_region(field, p.model, p.costs, p.target, levels, samples,
                               band_cells=v.band_cells, cost_tolerance=v.cost_tolerance,
                               max_steps=v.max_steps)
        self.timings["verify"] = time.perf_counter() - t0
        path = self.out / "verification.json"
        report.to_json(path)
        self._record(path, "verify", "verification")
        self.summary["verification"] = {str(lv.J): {"predicted_inside": lv.predicted_inside,
                                                   "successes": lv.successes,
                                                   "success_rate": lv.success_rate}
                                        for lv in report.levels}

    def compare(self, field: ValueField):
        o = self.cfg.oracle
        if o is None:
            return
        p = self.problem
        dt = o.dt or p.solver.dt
        bounds = [(parse_number(a), parse_number(b)) for a, b in o.bounds]
        probes = probe_lattice(bounds, o.per_dim)
        domain = [None if ax.periodic else (ax.lower, ax.upper) for ax in p.grid.axes] if o.restrict_to_grid else None
        t0 = time.perf_counter()
        results = brute_force_many(p.model, p.costs, p.target, probes, o.steps, dt, budget=o.budget,
                                   domain=domain, problem_digest=field.meta.problem_digest)
        stats = compare_field(field, results, o.thresholds)
        self.timings["compare"] = time.perf_counter() - t0
        path = self.out / "oracle.csv"
        write_oracle_csv(results, path)
        self._record(path, "compare", "oracle")
        doc = {"probes": stats.count, "mean_abs_error": stats.mean_abs, "max_abs_error": stats.max_abs,
               "within_dt_plus_0.1": stats.fraction_within(dt + 0.1),
               "agreement": {str(J): {"agree": a, "considered": n} for J, (a, n) in stats.agreement.items()}}
        spath = self.out / "oracle_compare.json"
        spath.write_text(json.dumps(doc, indent=2) + "\n")
        self._record(spath, "compare", "oracle-stats")
        self.summary["oracle"] = doc

    def simulate(self, field: ValueField, starts: np.ndarray, max_steps: int | None = None) -> list[Path]:
        p = self.problem
        max_steps = max_steps or 2 * max(field.meta.step_index, 1)
        trajs = simulate_many(field, p.model, p.costs, p.target, starts, max_steps)
        tdir = self.out / "trajectories"
        tdir.mkdir(parents=True, exist_ok=True)
        paths = []
        for i, tr in enumerate(trajs):
            path = tdir / f"trajectory_{i:03d}.csv"
            tr.to_csv(path)
            self._record(path, "simulate", "trajectory")
            paths.append(path)
            log.info("start %s: reached=%s cost=%.6g hit_time=%s", starts[i].tolist(), tr.reached_target,
                     tr.accumulated_cost, tr.first_hit_time)
        return paths

    def _enabled(self, stage: str) -> bool:
        if stage == "verify":
            return self.cfg.verify is not None
        if stage == "compare":
            return self.cfg.oracle is not None
        return True

    def run(self, stages=STAGES, field_path=None, manifest_name="manifest.json") -> ValueField | None:
        """Run ``stages`` in pipeline order; on failure the manifest still records what finished."""
        field = None
        if field_path is not None:
            field = load_field(field_path)
        for stage in STAGES:
            if stage not in stages or not self._enabled(stage):
                continue
            try:
                if stage == "solve":
                    field = self.solve()
                else:
                    if field is None:
                        field = load_field(self.out / "field.rchf")
                    getattr(self, stage)(field)
            except Exception as exc:
                self.failed = {"stage": stage, "error": f"{type(exc).__name__}: {exc}"}
                self.write_manifest(manifest_name)
                raise
            self.completed.append(stage)
        self.write_manifest(manifest_name)
        return field
