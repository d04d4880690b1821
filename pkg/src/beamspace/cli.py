"""Experiment harness: config ingestion, seeded Monte Carlo sweeps, scheme
dispatch, aggregation, and plot-ready CSV emission."""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import __version__
from .channel import sample_all_channels
from .pdd import run_pdd
from .rate import SchemeResult
from .scenario import SystemConfig, rng_stream, sample_geometry
from .so import baseline_ia_like, run_exhaustive, run_so

SWEEP_AXES = ("power_dbm", "ut_antennas", "rf_chains", "none")
SCHEMES = ("pdd", "so", "ia_like", "exhaustive")
EXHAUSTIVE_GUARD = 10**6

# Stream tags: sub-keys under (seed, trial) so every random quantity has its
# own counter-based stream, independent of execution order.
_GEOMETRY_TAG = 0
_CHANNEL_TAG = 1
_PDD_TAG = 2
_IA_TAG = 3

FLOAT_FMT = "{:.9g}"


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment: a base scenario, an optional sweep axis, the schemes to
    compare, and the trial budget."""

    base: SystemConfig
    sweep_axis: str = "none"
    sweep_values: tuple = ()
    schemes: tuple[str, ...] = ("pdd", "so", "ia_like")
    trials: int = 100
    output_dir: str = "results"

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentSpec":
        problems = []
        known = {"base", "sweep_axis", "sweep_values", "schemes", "trials", "output_dir"}
        unknown = set(doc) - known
        if unknown:
            problems.append(f"unknown keys: {sorted(unknown)}")

        base = SystemConfig()
        base_doc = doc.get("base", {})
        if not isinstance(base_doc, dict):
            problems.append("base must be an object")
        else:
            base_known = {f for f in SystemConfig.__dataclass_fields__}
            base_unknown = set(base_doc) - base_known
            if base_unknown:
                problems.append(f"unknown base keys: {sorted(base_unknown)}")
            else:
                try:
                    base = SystemConfig(**base_doc)
                except ValueError as exc:
                    problems.append(str(exc))

        axis = doc.get("sweep_axis", "none")
        if axis not in SWEEP_AXES:
            problems.append(f"sweep_axis must be one of {SWEEP_AXES}")
        values = tuple(doc.get("sweep_values", ()))
        if axis != "none" and not values:
            problems.append("sweep_values must be nonempty when sweeping")
        if axis == "none" and not values:
            values = ()

        schemes = tuple(doc.get("schemes", ("pdd", "so", "ia_like")))
        bad = [s for s in schemes if s not in SCHEMES]
        if bad or not schemes:
            problems.append(f"schemes must be a nonempty subset of {SCHEMES}")

        trials = doc.get("trials", 100)
        if not isinstance(trials, int) or trials < 1:
            problems.append("trials must be a positive integer")

        output_dir = doc.get("output_dir", "results")

        spec = None
        if not problems:
            spec = cls(
                base=base, sweep_axis=axis, sweep_values=values,
                schemes=schemes, trials=trials, output_dir=str(output_dir),
            )
            problems.extend(spec.validate())
        if problems:
            raise ValueError("invalid experiment spec: " + "; ".join(problems))
        return spec

    def validate(self) -> list[str]:
        problems = []
        for value in self.sweep_points():
            try:
                cfg = apply_sweep(self.base, self.sweep_axis, value)
            except ValueError as exc:
                problems.append(f"sweep value {value}: {exc}")
                continue
            if "exhaustive" in self.schemes:
                if math.comb(cfg.bs_antennas, cfg.rf_chains) > EXHAUSTIVE_GUARD:
                    problems.append(
                        f"sweep value {value}: exhaustive scheme infeasible, "
                        f"C({cfg.bs_antennas},{cfg.rf_chains}) too large"
                    )
        return problems

    def sweep_points(self) -> tuple:
        # axis "none" still runs once, under a sentinel sweep value of 0
        return self.sweep_values if self.sweep_axis != "none" else (0,)

    def to_dict(self) -> dict:
        return {
            "base": {
                "bs_antennas": self.base.bs_antennas,
                "rf_chains": self.base.rf_chains,
                "num_users": self.base.num_users,
                "ut_antennas": list(self.base.ut_antennas),
                "num_paths": list(self.base.num_paths),
                "noise_power_dbm": self.base.noise_power_dbm,
                "max_power_dbm": list(self.base.max_power_dbm),
                "carrier_ghz": self.base.carrier_ghz,
                "cell_radius_m": self.base.cell_radius_m,
                "seed": self.base.seed,
            },
            "sweep_axis": self.sweep_axis,
            "sweep_values": list(self.sweep_values),
            "schemes": list(self.schemes),
            "trials": self.trials,
            "output_dir": self.output_dir,
        }


@dataclass(frozen=True)
class TrialResult:
    scheme: str
    sweep_value: float
    trial_index: int
    rate_bits: float
    wall_ms: float
    converged: bool
    outer_iters: int


def apply_sweep(base: SystemConfig, axis: str, value) -> SystemConfig:
    """Instantiate the scenario for one sweep point."""
    if axis == "none":
        return base
    if axis == "power_dbm":
        return replace(base, max_power_dbm=float(value))
    if axis == "ut_antennas":
        return replace(base, ut_antennas=int(value))
    if axis == "rf_chains":
        return replace(base, rf_chains=int(value))
    raise ValueError(f"unknown sweep axis {axis!r}")


def _check_feasible(cfg: SystemConfig, result: SchemeResult) -> None:
    sel = result.selection
    if sel.num_selected != cfg.rf_chains:
        raise RuntimeError("selection does not use every RF chain exactly once")
    s_mat = sel.matrix()
    if not np.allclose(s_mat @ s_mat.T, np.eye(cfg.rf_chains), atol=1e-12):
        raise RuntimeError("selector rows are not orthonormal")
    concat = result.phases.concat
    if np.max(np.abs(np.abs(concat) - 1.0)) > 1e-12:
        raise RuntimeError("phases lost unit modulus")


def run_single_trial(
    cfg: SystemConfig, schemes: tuple[str, ...], sweep_value, trial: int
) -> tuple[list[TrialResult], dict]:
    """One Monte Carlo trial: one channel draw shared by every scheme."""
    geometry = sample_geometry(cfg, rng_stream(cfg.seed, trial, _GEOMETRY_TAG))
    channels = sample_all_channels(cfg, geometry, rng_stream(cfg.seed, trial, _CHANNEL_TAG))
    results: list[TrialResult] = []
    traces: dict = {}
    for scheme in SCHEMES:
        if scheme not in schemes:
            continue
        start = time.perf_counter()
        if scheme == "pdd":
            out = run_pdd(cfg, channels, rng=rng_stream(cfg.seed, trial, _PDD_TAG))
        elif scheme == "so":
            out = run_so(cfg, channels)
        elif scheme == "ia_like":
            out = baseline_ia_like(cfg, channels, rng_stream(cfg.seed, trial, _IA_TAG))
        else:
            out = run_exhaustive(cfg, channels)
        wall_ms = (time.perf_counter() - start) * 1000.0
        _check_feasible(cfg, out)
        results.append(
            TrialResult(
                scheme=scheme,
                sweep_value=float(sweep_value),
                trial_index=trial,
                rate_bits=out.rate_bits,
                wall_ms=wall_ms,
                converged=out.converged,
                outer_iters=out.outer_iters,
            )
        )
        if scheme == "pdd":
            traces[(float(sweep_value), trial)] = out.trace
    return results, traces


def _trial_task(args):
    spec_doc, value, trial = args
    spec = ExperimentSpec.from_dict(spec_doc)
    cfg = apply_sweep(spec.base, spec.sweep_axis, value)
    return run_single_trial(cfg, spec.schemes, value, trial)


def pool_size() -> int:
    env = os.environ.get("BEAMSPACE_THREADS", "").strip()
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_experiment(spec: ExperimentSpec):
    """Run all sweep points and trials; returns (results, summaries, traces).

    Within a trial all schemes see byte-identical channels; trials are
    distributed over a process pool but the output is order-independent.
    """
    tasks = [
        (spec.to_dict(), value, trial)
        for value in spec.sweep_points()
        for trial in range(spec.trials)
    ]
    workers = min(pool_size(), len(tasks)) or 1
    results: list[TrialResult] = []
    traces: dict = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for res, tr in pool.map(_trial_task, tasks, chunksize=4):
                results.extend(res)
                traces.update(tr)
    else:
        for task in tasks:
            res, tr = _trial_task(task)
            results.extend(res)
            traces.update(tr)
    results.sort(key=lambda r: (r.scheme, r.sweep_value, r.trial_index))
    summaries = summarize(results)
    return results, summaries, traces


def summarize(results: list[TrialResult]) -> list[dict]:
    """Per (scheme, sweep value): mean rate with a normal-approximation 95% CI."""
    groups: dict = {}
    for r in results:
        groups.setdefault((r.scheme, r.sweep_value), []).append(r.rate_bits)
    out = []
    for (scheme, value), rates in sorted(groups.items()):
        arr = np.asarray(rates)
        mean = float(arr.mean())
        half = 0.0
        if arr.size > 1:
            half = 1.96 * float(arr.std(ddof=1)) / math.sqrt(arr.size)
        out.append(
            {
                "scheme": scheme,
                "sweep_value": value,
                "mean_rate": mean,
                "ci95_low": mean - half,
                "ci95_high": mean + half,
                "n": arr.size,
            }
        )
    return out


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return FLOAT_FMT.format(x)
    return str(x)


def _write_csv(path: str, header: list[str], rows) -> None:
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(x) for x in row])
    except OSError as exc:
        raise RuntimeError(f"failed writing {path}: {exc}") from exc


def emit_results(results, summaries, traces, out_dir: str, spec: ExperimentSpec) -> dict:
    """Write trials.csv, summary.csv, per-run convergence traces, and a
    manifest echoing the spec; returns the paths written."""
    traces_dir = os.path.join(out_dir, "traces")
    try:
        os.makedirs(traces_dir, exist_ok=True)
    except OSError as exc:
        raise RuntimeError(f"failed creating {traces_dir}: {exc}") from exc

    trials_path = os.path.join(out_dir, "trials.csv")
    _write_csv(
        trials_path,
        ["scheme", "sweep_value", "trial_index", "rate_bits", "wall_ms",
         "converged", "outer_iters"],
        (
            (r.scheme, r.sweep_value, r.trial_index, r.rate_bits, r.wall_ms,
             r.converged, r.outer_iters)
            for r in results
        ),
    )

    summary_path = os.path.join(out_dir, "summary.csv")
    _write_csv(
        summary_path,
        ["scheme", "sweep_value", "mean_rate", "ci95_low", "ci95_high", "n"],
        (
            (s["scheme"], s["sweep_value"], s["mean_rate"], s["ci95_low"],
             s["ci95_high"], s["n"])
            for s in summaries
        ),
    )

    trace_paths = []
    for (value, trial), rows in sorted(traces.items()):
        name = f"pdd_v{value:g}_t{trial:05d}.csv"
        path = os.path.join(traces_dir, name)
        _write_csv(
            path,
            ["outer_iter", "rate_bits", "violation_h", "rho", "inner_iters"],
            rows,
        )
        trace_paths.append(path)

    manifest_path = os.path.join(out_dir, "manifest.json")
    try:
        with open(manifest_path, "w") as fh:
            json.dump({"spec": spec.to_dict(), "version": __version__}, fh,
                      indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise RuntimeError(f"failed writing {manifest_path}: {exc}") from exc

    return {
        "trials": trials_path,
        "summary": summary_path,
        "manifest": manifest_path,
        "traces": trace_paths,
    }


def check_ordering_gates(summaries) -> list[str]:
    """Mean-rate ordering gates used by --assert: at every sweep point the
    joint optimizer should not trail the sequential one, which should not
    trail the random-phase baseline."""
    by_value: dict = {}
    for s in summaries:
        by_value.setdefault(s["sweep_value"], {})[s["scheme"]] = s["mean_rate"]
    failures = []
    slack = 1e-9
    for value, means in sorted(by_value.items()):
        if "pdd" in means and "so" in means and means["pdd"] < means["so"] - slack:
            failures.append(f"sweep {value}: mean(pdd) < mean(so)")
        if "so" in means and "ia_like" in means and means["so"] < means["ia_like"] - slack:
            failures.append(f"sweep {value}: mean(so) < mean(ia_like)")
    return failures


def _cmd_simulate(args) -> int:
    try:
        with open(args.config) as fh:
            doc = json.load(fh)
    except OSError as exc:
        print(f"cannot read config {args.config}: {exc}", file=sys.stderr)
        return 1
    if args.trials is not None:
        doc["trials"] = args.trials
    if args.seed is not None:
        doc.setdefault("base", {})["seed"] = args.seed
    if args.out is not None:
        doc["output_dir"] = args.out
    try:
        spec = ExperimentSpec.from_dict(doc)
    except ValueError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    try:
        results, summaries, traces = run_experiment(spec)
    except Exception as exc:  # trial failures surface as a nonzero exit
        print(f"experiment failed: {exc}", file=sys.stderr)
        return 1
    emit_results(results, summaries, traces, spec.output_dir, spec)
    for s in summaries:
        print(
            f"{s['scheme']:>10s}  sweep={_fmt(float(s['sweep_value'])):>8s}  "
            f"mean={s['mean_rate']:.4f}  n={s['n']}"
        )
    if args.assert_gates:
        failures = check_ordering_gates(summaries)
        if failures:
            for f in failures:
                print("GATE FAILED: " + f, file=sys.stderr)
            return 2
    return 0


def _cmd_oracle(args) -> int:
    cfg = SystemConfig(
        bs_antennas=args.n, rf_chains=args.l, num_users=args.k,
        ut_antennas=args.ut, num_paths=args.paths, seed=args.seed,
    )
    gaps = []
    for trial in range(args.trials):
        geometry = sample_geometry(cfg, rng_stream(cfg.seed, trial, _GEOMETRY_TAG))
        channels = sample_all_channels(
            cfg, geometry, rng_stream(cfg.seed, trial, _CHANNEL_TAG)
        )
        greedy = run_so(cfg, channels)
        exact = run_exhaustive(cfg, channels)
        gap = exact.rate_bits - greedy.rate_bits
        rel = greedy.rate_bits / exact.rate_bits if exact.rate_bits > 0 else 1.0
        gaps.append(rel)
        print(
            f"trial {trial}: greedy={greedy.rate_bits:.6f}  "
            f"exhaustive={exact.rate_bits:.6f}  gap={gap:.6f}  ratio={rel:.4f}"
        )
    print(f"worst greedy/exhaustive ratio over {args.trials} trials: {min(gaps):.4f}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="beamspace",
        description="Monte Carlo simulator for joint beam selection and "
        "phase-only beamforming in a lens-array uplink",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run an experiment from a JSON spec")
    sim.add_argument("--config", required=True, help="path to the experiment JSON")
    sim.add_argument("--trials", type=int, default=None, help="override trial count")
    sim.add_argument("--seed", type=int, default=None, help="override base seed")
    sim.add_argument("--out", default=None, help="override output directory")
    sim.add_argument(
        "--assert", dest="assert_gates", action="store_true",
        help="fail (exit 2) if the mean-rate ordering gates do not hold",
    )
    sim.set_defaults(func=_cmd_simulate)

    orc = sub.add_parser("oracle", help="greedy vs exhaustive selection gap")
    orc.add_argument("--n", type=int, required=True, help="number of beams")
    orc.add_argument("--l", type=int, required=True, help="number of RF chains")
    orc.add_argument("--k", type=int, required=True, help="number of users")
    orc.add_argument("--seed", type=int, default=0)
    orc.add_argument("--ut", type=int, default=2, help="antennas per user")
    orc.add_argument("--paths", type=int, default=3, help="paths per user")
    orc.add_argument("--trials", type=int, default=1)
    orc.set_defaults(func=_cmd_oracle)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
