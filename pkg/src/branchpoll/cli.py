"""Command-line entry point: ``python -m branchpoll <command> --config FILE``.

Exit codes: 0 ok, 2 configuration error, 3 stability-guard violation,
4 censored fraction above the configured threshold (artifacts are still
written), 1 I/O or other runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .branching_core import LIFE_PERIOD_COLUMNS, LifePeriodBatch, Mode, ProcessConfig, simulate_life_periods
from .config import COMMANDS, ExperimentSpec, build_spec, load_spec
from .errors import ConfigurationError, GuardViolation
from .matrix_analysis import classify, kesten_check
from .polling_map import associated_environment
from .polling_sim import POLLING_COLUMNS, PollingBatch, run_busy_periods, run_generalized_busy_periods
from .rng import make_stream
from .tail_stats import (MIN_TAIL_SAMPLES, UNRELIABLE_CENSORED_FRACTION, SampleSet, hill_estimator, ks_distance,
                         read_csv_samples)

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_GUARD, EXIT_CAP = 0, 1, 2, 3, 4
CHUNK = 10_000


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return repr(float(x))


def _header(spec: ExperimentSpec) -> str:
    return f"# branchpoll {__version__} spec_sha256={spec.spec_hash} seed={spec.seed} command={spec.command}"


def write_csv(path, spec: ExperimentSpec, columns, rows):
    """CSV with a provenance comment line; header-only when ``rows`` is empty."""
    with open(path, "w", newline="") as fh:
        fh.write(_header(spec) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


# ---------------------------------------------------------------------------
# Replicate chunks.  Chunk c always uses stream (seed, c + 1), so results do
# not depend on the number of workers.
# ---------------------------------------------------------------------------


def _chunks(n: int):
    return [(c, min(CHUNK, n - c * CHUNK)) for c in range(math.ceil(n / CHUNK))]


def _branching_chunk(process: ProcessConfig, seed: int, c: int, size: int) -> LifePeriodBatch:
    batch = simulate_life_periods(process, size, make_stream(seed, c + 1))
    batch.first_id = c * CHUNK
    return batch


def _polling_chunk(polling, generalized: bool, seed: int, c: int, size: int) -> PollingBatch:
    run = run_generalized_busy_periods if generalized else run_busy_periods
    batch = run(polling, size, make_stream(seed, c + 1))
    batch.first_id = c * CHUNK
    return batch


def _job(args):
    raw, kind, c, size = args
    spec = build_spec(raw)
    if kind == "branching":
        return _branching_chunk(spec.process, spec.seed, c, size)
    if kind == "associated":
        return _branching_chunk(_associated_process(spec.polling), spec.seed + 1, c, size)
    return _polling_chunk(spec.polling, kind == "generalized", spec.seed, c, size)


def _run_chunks(spec: ExperimentSpec, kind: str, n: int):
    jobs = [(spec.raw, kind, c, size) for c, size in _chunks(n)]
    if spec.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            return list(pool.map(_job, jobs))
    if kind == "branching":
        return [_branching_chunk(spec.process, spec.seed, c, size) for _, _, c, size in jobs]
    if kind == "associated":
        proc = _associated_process(spec.polling)
        return [_branching_chunk(proc, spec.seed + 1, c, size) for _, _, c, size in jobs]
    return [_polling_chunk(spec.polling, kind == "generalized", spec.seed, c, size) for _, _, c, size in jobs]


def _associated_process(polling) -> ProcessConfig:
    env = associated_environment(polling.cycles, polling.disciplines, polling.product_mode, polling.start_station)
    start = np.zeros(env.m, dtype=np.int64)
    start[0] = 1
    return ProcessConfig(env, Mode.MBPIFPRE, start, generation_cap=polling.max_cycles)


def _empty_life_batch():
    z = np.zeros(0)
    return LifePeriodBatch(z.astype(np.int64), z, z.astype(bool), z.astype(np.int64))


def _merge_life(parts) -> LifePeriodBatch:
    return LifePeriodBatch.concatenate(parts) if parts else _empty_life_batch()


def _merge_polling(parts) -> PollingBatch:
    if not parts:
        z = np.zeros(0)
        return PollingBatch(z, z, z, z.astype(np.int64), z.astype(np.int64), z.astype(bool))
    names = ("theta_P", "duration_services", "duration_switchover", "n_cycles", "n_services", "censored")
    return PollingBatch(*(np.concatenate([getattr(p, f) for p in parts]) for f in names))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


class Summary:
    def __init__(self, spec: ExperimentSpec):
        self.spec = spec
        self.lines = [_header(spec), f"command: {spec.command}"]
        self.cap_exceeded = False

    def add(self, line: str):
        self.lines.append(line)

    def censoring(self, label: str, censored: np.ndarray):
        n = censored.size
        k = int(censored.sum())
        frac = k / n if n else 0.0
        self.add(f"{label}: {n} replicates, {k} censored ({100 * frac:.3f}%)")
        if frac > UNRELIABLE_CENSORED_FRACTION:
            self.add(f"WARNING: {label} censored fraction {100 * frac:.3f}% exceeds "
                     f"{100 * UNRELIABLE_CENSORED_FRACTION:g}%; tail fits are unreliable")
        if frac > self.spec.censored_threshold:
            self.cap_exceeded = True

    def tail(self, label: str, samples: SampleSet, k="auto"):
        """Tail fit line; returns the fit or None when there are too few samples."""
        if len(samples) < MIN_TAIL_SAMPLES:
            self.add(f"tail fit {label}: skipped ({len(samples)} uncensored samples < {MIN_TAIL_SAMPLES})")
            return None
        try:
            fit = hill_estimator(samples, k)
        except ConfigurationError as exc:
            self.add(f"tail fit {label}: skipped ({exc})")
            return None
        self.add(f"tail fit {label}: hill_index={fit.hill_index:.6g} ci=[{fit.ci[0]:.6g}, {fit.ci[1]:.6g}] "
                 f"k={fit.k_used} n={fit.n} excluded_censored={fit.n_censored} "
                 f"hill_plot_flat={'yes' if fit.flat else 'no'}{' UNRELIABLE' if fit.unreliable else ''}")
        return fit

    def check(self, name: str, ok: bool):
        self.add(f"invariant {name}: {'pass' if ok else 'FAIL'}")

    def write(self, path):
        with open(path, "w") as fh:
            fh.write("\n".join(self.lines) + "\n")


def _hill_plot_csv(path, spec, fit):
    rows = [] if fit is None else [(int(k), v) for k, v in fit.hill_plot]
    write_csv(path, spec, ("k", "hill_index"), rows)


def _cmd_analyze(spec: ExperimentSpec, out: str, summary: Summary):
    opts = dict(spec.analysis)
    kappa0 = opts.pop("kesten_kappa0", None)
    kwargs = {"n": opts.get("lyapunov_n", 1000), "replicates": opts.get("lyapunov_replicates", 2000),
              "kappa_n": opts.get("s_n", 50), "kappa_replicates": opts.get("s_replicates", 100_000)}
    for key in ("x_grid", "method", "tol", "x_max"):
        if key in opts:
            kwargs[key] = opts[key]
    dist = spec.process.env_dist
    report = classify(dist, rng=make_stream(spec.seed, 0), **kwargs)
    write_csv(os.path.join(out, "s_curve.csv"), spec, ("x", "s_hat", "ci_lo", "ci_hi"), report.s_rows())
    summary.add(f"classification: {report.classification}")
    summary.add(f"alpha: {report.alpha:.6g} ci=[{report.alpha_ci[0]:.6g}, {report.alpha_ci[1]:.6g}]")
    summary.add(f"kappa: {report.kappa:.6g} ci=[{report.kappa_ci[0]:.6g}, {report.kappa_ci[1]:.6g}] "
                f"status={report.kappa_status}")
    summary.add(f"norm: {report.norm}")
    summary.add("method: " + ", ".join(f"{k}={v}" for k, v in report.method.items()))
    if kappa0 is None:
        kappa0 = report.kappa if math.isfinite(report.kappa) and report.kappa > 0 else 1.0
    kr = kesten_check(dist, kappa0, n_samples=min(spec.replicates, 100_000) or 1000,
                      rng=make_stream(spec.seed, 1))
    for line in kr.lines():
        summary.add(f"kesten: {line}")
    summary.check("s(0) == 1", all(e.s_hat == 1.0 for e in report.s_curve if e.x == 0))


def _cmd_branching(spec: ExperimentSpec, out: str, summary: Summary):
    batch = _merge_life(_run_chunks(spec, "branching", spec.replicates))
    write_csv(os.path.join(out, "life_periods.csv"), spec, LIFE_PERIOD_COLUMNS, batch.rows())
    summary.censoring("life periods", batch.censored)
    ok = ~batch.censored
    summary.check("theta_total >= 0", bool(np.all(batch.theta_total >= 0)))
    summary.check("upsilon >= 1 for completed life periods", bool(np.all(batch.upsilon[ok] >= 1)))
    fit = summary.tail("theta_total", SampleSet.from_records(batch.theta_total, batch.censored))
    _hill_plot_csv(os.path.join(out, "hill_plot.csv"), spec, fit)


def _cmd_polling(spec: ExperimentSpec, out: str, summary: Summary):
    generalized = spec.busy_period == "generalized"
    batch = _merge_polling(_run_chunks(spec, "generalized" if generalized else "standard", spec.replicates))
    name = "generalized_busy_periods.csv" if generalized else "busy_periods.csv"
    write_csv(os.path.join(out, name), spec, POLLING_COLUMNS, batch.rows())
    summary.add(f"busy period: {spec.busy_period}; final product: {spec.polling.product_mode.value}")
    summary.censoring("busy periods", batch.censored)
    ok = ~batch.censored
    summary.check("theta_P >= 0", bool(np.all(batch.theta_P >= 0)))
    summary.check("at least one service per completed busy period", bool(np.all(batch.n_services[ok] >= 1)))
    fit = summary.tail("theta_P", SampleSet.from_records(batch.theta_P, batch.censored))
    _hill_plot_csv(os.path.join(out, "hill_plot.csv"), spec, fit)


def _cmd_equivalence(spec: ExperimentSpec, out: str, summary: Summary):
    pol = _merge_polling(_run_chunks(spec, "generalized", spec.replicates))
    br = _merge_life(_run_chunks(spec, "associated", spec.replicates))
    write_csv(os.path.join(out, "polling_generalized.csv"), spec, POLLING_COLUMNS, pol.rows())
    write_csv(os.path.join(out, "branching_life_periods.csv"), spec, LIFE_PERIOD_COLUMNS, br.rows())
    summary.add(f"final product: {spec.polling.product_mode.value}; start station {spec.polling.start_station}")
    summary.censoring("polling generalized busy periods", pol.censored)
    summary.censoring("branching life periods", br.censored)
    a = SampleSet.from_records(pol.theta_P, pol.censored)
    b = SampleSet.from_records(br.theta_total, br.censored)
    if min(len(a), len(b)) >= MIN_TAIL_SAMPLES:
        stat, p = ks_distance(a, b)
        summary.add(f"KS statistic={stat:.6g} p_value={p:.6g} ({'consistent' if p > 0.01 else 'REJECTED'} at 0.01)")
        ma, mb = a.values.mean(), b.values.mean()
        se = math.sqrt(a.values.var(ddof=1) / len(a) + b.values.var(ddof=1) / len(b))
        summary.add(f"means: polling={ma:.6g} branching={mb:.6g} z={(ma - mb) / se if se else 0.0:.3f}")
        summary.check("cycles vs generations KS p > 0.01",
                      ks_distance(SampleSet(pol.n_cycles[~pol.censored]),
                                  SampleSet(br.upsilon[~br.censored]))[1] > 0.01)
    else:
        summary.add("KS: skipped (too few uncensored samples)")
    fa = summary.tail("polling theta_P", a)
    fb = summary.tail("branching theta_total", b)
    if fa is not None and fb is not None:
        overlap = fa.ci[0] <= fb.ci[1] and fb.ci[0] <= fa.ci[1]
        summary.check("Hill indices within joint CIs", overlap)


def _cmd_tail_fit(spec: ExperimentSpec, out: str, summary: Summary):
    tf = spec.tail_fit
    samples = read_csv_samples(tf["input"], tf["column"])
    summary.add(f"input: {tf['input']} column {tf['column']}")
    total = len(samples) + samples.n_censored
    summary.censoring("records", np.arange(total) < samples.n_censored)
    fit = summary.tail(tf["column"], samples, tf["k"])
    _hill_plot_csv(os.path.join(out, "hill_plot.csv"), spec, fit)


_COMMANDS = {"analyze": _cmd_analyze, "simulate-branching": _cmd_branching, "simulate-polling": _cmd_polling,
             "validate-equivalence": _cmd_equivalence, "tail-fit": _cmd_tail_fit}


def run_experiment(spec: ExperimentSpec) -> int:
    out = spec.out_dir
    os.makedirs(out, exist_ok=True)
    summary = Summary(spec)
    _COMMANDS[spec.command](spec, out, summary)
    summary.write(os.path.join(out, "summary.txt"))
    return EXIT_CAP if summary.cap_exceeded else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="branchpoll", description=__doc__.splitlines()[0])
    p.add_argument("command", nargs="?", choices=COMMANDS,
                   help="overrides the config's 'command' field when given")
    p.add_argument("--config", required=True, metavar="PATH", help="YAML experiment file")
    p.add_argument("--seed", type=int, metavar="N")
    p.add_argument("--replicates", type=int, metavar="N")
    p.add_argument("--workers", type=int, metavar="N")
    p.add_argument("--out", metavar="DIR")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"seed": args.seed, "replicates": args.replicates, "workers": args.workers, "out": args.out}
    try:
        spec = load_spec(args.config, overrides)
        if args.command and args.command != spec.command:
            raw = dict(spec.raw, command=args.command)
            spec = build_spec(raw)
        status = run_experiment(spec)
    except GuardViolation as exc:
        print(f"guard violation: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if status == EXIT_CAP:
        print(f"censored fraction above threshold {spec.censored_threshold}; see {spec.out_dir}/summary.txt",
              file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
