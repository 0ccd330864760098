"""Scenario-driven command line front end.

Subcommands:

* ``predict <scenario.json> [--out DIR]`` runs the configured number of
  prediction steps and prints a JSON summary (final moments, per-step
  pre-renormalization mass and wall clock); with ``--out`` the final
  densities are also dumped in the ASCII grid format.
* ``bench <scenario.json> --repeats K [--sweep N1,N2,...]`` times one
  prediction step per predictor (median over K runs after one warm-up)
  and prints a CSV table; sweep mode reruns the scenario at several
  per-axis counts and reports fitted log-log slopes on stderr.
* ``compare <scenario.json>`` runs both predictors side by side and
  prints a JSON report of per-step weight and moment differences,
  failing (exit 1) if they exceed the oracle threshold.

Scenario files are JSON with explicit keys mirroring the fields below.
The environment variable ``POINTMASS_THREADS`` overrides the worker
count of the internal sine transforms.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import statistics
import sys
import time
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Sequence

import numpy as np

from . import predict_cd, predict_dd
from .grid import LatticeGrid, PointMassDensity, save_pmd
from .models import (
    ContinuousDynamicsModel,
    DiscreteDynamicsModel,
    GaussianDensity,
    LaplaceDensity,
)

__all__ = ["Scenario", "run_predict", "run_bench", "run_compare", "main"]

#: Oracle-agreement thresholds for ``compare`` (relative max norm).
COMPARE_THRESHOLDS = {"dd": 1e-10, "cd": 1e-8}

CSV_COLUMNS = ["predictor", "n_x", "counts", "N", "median_s", "ratio"]


def _matrix(value: Any, n: int, name: str) -> list[list[float]]:
    arr = np.asarray(value, dtype=float)
    if arr.shape != (n, n):
        raise ValueError(f"scenario field '{name}' must be a {n}x{n} matrix")
    if not np.isfinite(arr).all():
        raise ValueError(f"scenario field '{name}' must be finite")
    return [[float(v) for v in row] for row in arr]


def _vector(value: Any, n: int, name: str) -> list[float]:
    arr = np.asarray(value, dtype=float)
    if arr.shape != (n,):
        raise ValueError(f"scenario field '{name}' must be a length-{n} vector")
    if not np.isfinite(arr).all():
        raise ValueError(f"scenario field '{name}' must be finite")
    return [float(v) for v in arr]


@dataclass
class Scenario:
    """Parsed, validated benchmark/prediction scenario."""

    kind: str
    grid_counts: list[int]
    grid_steps: list[float]
    grid_center: list[float]
    initial: dict[str, Any]
    steps: int
    predictor: str
    F: list[list[float]] | None = None
    noise: dict[str, Any] | None = None
    A: list[list[float]] | None = None
    Q: list[float] | None = None
    sampling_period: float = 1.0
    substeps: int | None = None
    inflation_coverage: float | None = None
    allow_even_counts: bool = field(default=False, compare=False)

    def __post_init__(self) -> None:
        if self.kind not in ("dd", "cd"):
            raise ValueError(f"scenario kind must be 'dd' or 'cd', got {self.kind!r}")
        if self.predictor not in ("standard", "efficient", "both"):
            raise ValueError(
                "scenario predictor must be 'standard', 'efficient' or 'both', "
                f"got {self.predictor!r}"
            )
        self.grid_counts = [int(n) for n in self.grid_counts]
        n = len(self.grid_counts)
        if n == 0 or any(c < 1 for c in self.grid_counts):
            raise ValueError("grid counts must be positive integers")
        self.grid_steps = _vector(self.grid_steps, n, "grid.steps")
        if any(s <= 0 for s in self.grid_steps):
            raise ValueError("grid steps must be positive")
        self.grid_center = _vector(self.grid_center, n, "grid.center")
        self.steps = int(self.steps)
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")

        if self.predictor in ("efficient", "both") and not self.allow_even_counts:
            even = [c for c in self.grid_counts if c % 2 == 0]
            if even:
                raise ValueError(
                    "the efficient predictor requires odd per-axis counts, "
                    f"got {self.grid_counts}"
                )

        if self.kind == "dd":
            if self.F is None or self.noise is None:
                raise ValueError("dd scenarios require 'F' and 'noise'")
            if self.A is not None or self.Q is not None or self.substeps is not None:
                raise ValueError("dd scenarios must not set 'A', 'Q' or 'substeps'")
            self.F = _matrix(self.F, n, "F")
            if abs(np.linalg.det(np.asarray(self.F))) == 0.0:
                raise ValueError("scenario field 'F' must be nonsingular")
            self.noise = self._canonical_noise(self.noise, n)
            self.sampling_period = 1.0  # unused for dd; canonical for round trips
        else:
            if self.A is None or self.Q is None:
                raise ValueError("cd scenarios require 'A' and 'Q'")
            if self.F is not None or self.noise is not None:
                raise ValueError("cd scenarios must not set 'F' or 'noise'")
            self.A = _matrix(self.A, n, "A")
            self.Q = _vector(self.Q, n, "Q")
            if any(q < 0 for q in self.Q):
                raise ValueError("scenario field 'Q' entries must be nonnegative")
            self.sampling_period = float(self.sampling_period)
            if self.sampling_period <= 0:
                raise ValueError("sampling_period must be positive")
            if self.substeps is not None:
                self.substeps = int(self.substeps)
                if self.substeps < 1:
                    raise ValueError("substeps must be a positive integer")

        self.initial = self._canonical_initial(self.initial, n)

        if self.inflation_coverage is not None:
            self.inflation_coverage = float(self.inflation_coverage)
            if self.inflation_coverage <= 0:
                raise ValueError("inflation_coverage must be positive")
            if self.kind != "dd" or self.predictor != "efficient":
                raise ValueError(
                    "inflation_coverage applies only to dd scenarios with "
                    "predictor 'efficient'"
                )

    @staticmethod
    def _canonical_noise(noise: dict[str, Any], n: int) -> dict[str, Any]:
        kind = noise.get("type")
        if kind == "gaussian":
            return {
                "type": "gaussian",
                "covariance": _matrix(noise.get("covariance"), n, "noise.covariance"),
            }
        if kind == "laplace":
            scales = _vector(noise.get("scales"), n, "noise.scales")
            if any(s <= 0 for s in scales):
                raise ValueError("noise.scales must be positive")
            return {"type": "laplace", "scales": scales}
        raise ValueError("noise.type must be 'gaussian' or 'laplace'")

    @staticmethod
    def _canonical_initial(initial: dict[str, Any], n: int) -> dict[str, Any]:
        kind = initial.get("type")
        if kind == "gaussian":
            return {
                "type": "gaussian",
                "mean": _vector(initial.get("mean"), n, "initial.mean"),
                "covariance": _matrix(
                    initial.get("covariance"), n, "initial.covariance"
                ),
            }
        if kind == "uniform":
            return {"type": "uniform"}
        raise ValueError("initial.type must be 'gaussian' or 'uniform'")

    # -- (de)serialization ----------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict[str, Any], *, allow_even_counts: bool = False
                  ) -> Scenario:
        grid = data.get("grid")
        if not isinstance(grid, dict):
            raise ValueError("scenario must contain a 'grid' object")
        known = {
            "kind", "grid", "initial", "steps", "predictor", "F", "noise",
            "A", "Q", "sampling_period", "substeps", "inflation_coverage",
        }
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(
            kind=data.get("kind", ""),
            grid_counts=list(grid.get("counts", [])),
            grid_steps=list(grid.get("steps", [])),
            grid_center=list(grid.get("center", [])),
            initial=dict(data.get("initial", {})),
            steps=data.get("steps", 0),
            predictor=data.get("predictor", ""),
            F=data.get("F"),
            noise=data.get("noise"),
            A=data.get("A"),
            Q=data.get("Q"),
            sampling_period=data.get("sampling_period", 1.0),
            substeps=data.get("substeps"),
            inflation_coverage=data.get("inflation_coverage"),
            allow_even_counts=allow_even_counts,
        )

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "kind": self.kind,
            "grid": {
                "counts": list(self.grid_counts),
                "steps": list(self.grid_steps),
                "center": list(self.grid_center),
            },
            "initial": self.initial,
            "steps": self.steps,
            "predictor": self.predictor,
        }
        if self.kind == "dd":
            out["F"] = self.F
            out["noise"] = self.noise
        else:
            out["A"] = self.A
            out["Q"] = self.Q
            out["sampling_period"] = self.sampling_period
            out["substeps"] = self.substeps
        if self.inflation_coverage is not None:
            out["inflation_coverage"] = self.inflation_coverage
        return out

    @classmethod
    def load(cls, path: str, *, allow_even_counts: bool = False) -> Scenario:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        return cls.from_dict(data, allow_even_counts=allow_even_counts)

    # -- construction of runtime objects ---------------------------------------

    def build_grid(self) -> LatticeGrid:
        return LatticeGrid.axis_aligned(
            self.grid_counts, self.grid_steps, self.grid_center
        )

    def build_model(self) -> DiscreteDynamicsModel | ContinuousDynamicsModel:
        if self.kind == "dd":
            assert self.F is not None and self.noise is not None
            if self.noise["type"] == "gaussian":
                dens = GaussianDensity(np.asarray(self.noise["covariance"]))
            else:
                dens = LaplaceDensity(np.asarray(self.noise["scales"]))
            return DiscreteDynamicsModel(np.asarray(self.F), dens)
        assert self.A is not None and self.Q is not None
        return ContinuousDynamicsModel(
            np.asarray(self.A),
            np.diag(self.Q),
            sampling_period=self.sampling_period,
            substeps=self.substeps,
        )

    def build_initial(self, grid: LatticeGrid) -> PointMassDensity:
        if self.initial["type"] == "uniform":
            return PointMassDensity(grid, np.ones(grid.size)).normalized()
        dens = GaussianDensity(
            np.asarray(self.initial["covariance"]),
            mean=np.asarray(self.initial["mean"]),
        )
        return PointMassDensity.from_density(dens, grid)

    def step_functions(
        self,
    ) -> dict[str, Callable[[PointMassDensity, Any], PointMassDensity]]:
        """Selected predictor callables keyed by name."""
        mod = predict_dd if self.kind == "dd" else predict_cd
        table: dict[str, Callable] = {}
        if self.predictor in ("standard", "both"):
            table["standard"] = mod.predict_standard
        if self.predictor in ("efficient", "both"):
            if self.kind == "dd" and self.inflation_coverage is not None:
                coverage = self.inflation_coverage

                def inflated(pmd, model, *, normalized=True):
                    return predict_dd.predict_inflated(
                        pmd, model, coverage=coverage, normalized=normalized
                    )

                table["efficient"] = inflated
            else:
                table["efficient"] = mod.predict_efficient
        return table


# -- commands ------------------------------------------------------------------


def run_predict(scenario: Scenario, out_dir: str | None = None) -> dict[str, Any]:
    """Run the scenario's prediction steps and summarize the results."""
    grid = scenario.build_grid()
    model = scenario.build_model()
    initial = scenario.build_initial(grid)
    summary: dict[str, Any] = {
        "kind": scenario.kind,
        "steps": scenario.steps,
        "results": {},
    }
    for name, step in scenario.step_functions().items():
        pmd = initial
        masses: list[float] = []
        clocks: list[float] = []
        for _ in range(scenario.steps):
            start = time.perf_counter()
            raw = step(pmd, model, normalized=False)
            clocks.append(time.perf_counter() - start)
            masses.append(raw.mass)
            pmd = raw.normalized()
        mean, cov = pmd.moments()
        entry: dict[str, Any] = {
            "final_mean": [float(v) for v in mean],
            "final_covariance": [[float(v) for v in row] for row in cov],
            "mass_before_renormalization": masses,
            "wall_clock_s": clocks,
        }
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            dump = os.path.join(out_dir, f"pmd_{name}.txt")
            save_pmd(pmd, dump)
            entry["dump"] = dump
        summary["results"][name] = entry
    return summary


def _with_counts(scenario: Scenario, per_axis: int) -> Scenario:
    """Scenario rerun at a different per-axis count, preserving the span."""
    new_counts = [per_axis] * len(scenario.grid_counts)
    new_steps = [
        s * (c - 1) / (per_axis - 1)
        for s, c in zip(scenario.grid_steps, scenario.grid_counts)
    ]
    return replace(scenario, grid_counts=new_counts, grid_steps=new_steps)


def run_bench(
    scenario: Scenario,
    repeats: int,
    sweep: Sequence[int] | None = None,
) -> tuple[list[dict[str, Any]], dict[str, float]]:
    """Time one prediction step per predictor; median over ``repeats``.

    Returns the CSV rows and, when sweeping, the fitted log-log slope of
    median time versus total point count per predictor.
    """
    if repeats < 3:
        raise ValueError("bench requires at least 3 repeats")
    variants = (
        [scenario] if sweep is None else [_with_counts(scenario, n) for n in sweep]
    )
    rows: list[dict[str, Any]] = []
    measured: dict[str, list[tuple[int, float]]] = {}
    for variant in variants:
        grid = variant.build_grid()
        model = variant.build_model()
        initial = variant.build_initial(grid)
        medians: dict[str, float] = {}
        for name, step in variant.step_functions().items():
            step(initial, model)  # warm-up
            times = []
            for _ in range(repeats):
                start = time.perf_counter()
                step(initial, model)
                times.append(time.perf_counter() - start)
            medians[name] = statistics.median(times)
            measured.setdefault(name, []).append((grid.size, medians[name]))
        ratio = ""
        if "standard" in medians and "efficient" in medians:
            ratio = medians["standard"] / medians["efficient"]
        for name in medians:
            rows.append(
                {
                    "predictor": name,
                    "n_x": grid.dim,
                    "counts": "x".join(str(c) for c in grid.counts),
                    "N": grid.size,
                    "median_s": medians[name],
                    "ratio": ratio,
                }
            )
    slopes: dict[str, float] = {}
    if sweep is not None:
        for name, points in measured.items():
            if len(points) >= 2:
                log_n = np.log([p[0] for p in points])
                log_t = np.log([p[1] for p in points])
                slopes[name] = float(np.polyfit(log_n, log_t, 1)[0])
    return rows, slopes


def run_compare(scenario: Scenario) -> dict[str, Any]:
    """Step both predictors side by side and report their differences."""
    if scenario.predictor != "both":
        raise ValueError("compare requires a scenario with predictor 'both'")
    grid = scenario.build_grid()
    model = scenario.build_model()
    initial = scenario.build_initial(grid)
    steps = scenario.step_functions()
    threshold = COMPARE_THRESHOLDS[scenario.kind]

    std = eff = initial
    records: list[dict[str, Any]] = []
    worst = 0.0
    for k in range(scenario.steps):
        std = steps["standard"](std, model)
        eff = steps["efficient"](eff, model)
        if std.grid != eff.grid:
            raise ValueError("predictors diverged onto different grids")
        rel = float(
            np.abs(std.weights - eff.weights).max() / np.abs(std.weights).max()
        )
        mean_s, cov_s = std.moments()
        mean_e, cov_e = eff.moments()
        records.append(
            {
                "step": k + 1,
                "max_rel_weight_diff": rel,
                "mean_abs_diff": float(np.abs(mean_s - mean_e).max()),
                "cov_frobenius_diff": float(np.linalg.norm(cov_s - cov_e)),
            }
        )
        worst = max(worst, rel)
    return {
        "kind": scenario.kind,
        "threshold": threshold,
        "steps": records,
        "max_rel_weight_diff": worst,
        "passed": worst <= threshold,
    }


# -- entry point ----------------------------------------------------------------


def _rows_to_csv(rows: list[dict[str, Any]]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS)
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pointmass",
        description="Point-mass prediction runner and benchmark",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_predict = sub.add_parser("predict", help="run prediction steps")
    p_predict.add_argument("scenario")
    p_predict.add_argument("--out", default=None, help="directory for PMD dumps")

    p_bench = sub.add_parser("bench", help="time one prediction step")
    p_bench.add_argument("scenario")
    p_bench.add_argument("--repeats", type=int, required=True)
    p_bench.add_argument(
        "--sweep",
        default=None,
        help="comma-separated per-axis counts to sweep, e.g. 33,65,129",
    )
    p_bench.add_argument("--out", default=None, help="also write the CSV here")

    p_compare = sub.add_parser("compare", help="run both predictors and compare")
    p_compare.add_argument("scenario")
    p_compare.add_argument("--out", default=None, help="also write the JSON here")
    p_compare.add_argument(
        "--debug-allow-even",
        action="store_true",
        help="debug: skip the odd-count scenario validation",
    )
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "predict":
            scenario = Scenario.load(args.scenario)
            summary = run_predict(scenario, args.out)
            print(json.dumps(summary, indent=2))
            return 0
        if args.command == "bench":
            scenario = Scenario.load(args.scenario)
            sweep = None
            if args.sweep:
                sweep = [int(tok) for tok in args.sweep.split(",") if tok]
            rows, slopes = run_bench(scenario, args.repeats, sweep)
            text = _rows_to_csv(rows)
            sys.stdout.write(text)
            if args.out:
                with open(args.out, "w", encoding="utf-8") as fh:
                    fh.write(text)
            for name, slope in sorted(slopes.items()):
                print(f"slope {name} {slope:.4f}", file=sys.stderr)
            return 0
        if args.command == "compare":
            scenario = Scenario.load(
                args.scenario, allow_even_counts=args.debug_allow_even
            )
            report = run_compare(scenario)
            text = json.dumps(report, indent=2)
            print(text)
            if args.out:
                with open(args.out, "w", encoding="utf-8") as fh:
                    fh.write(text)
            return 0 if report["passed"] else 1
    except (ValueError, OSError, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
