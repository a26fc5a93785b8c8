"""Batch front end.

    lieswitch decompose --config run.yaml [--out DIR]
    lieswitch simulate  --config run.yaml [--seed INT] [--step REAL]
    lieswitch entropy   --config run.yaml
    lieswitch certify   --config run.yaml

Each command writes ``<out>/<command>.yaml`` plus CSV side files.  Exit
codes: 0 ok, 1 other failure, 2 configuration, 3 algebra, 4 entropy data.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .entropy import CompactSet, entropy_estimate, lyapunov_det_exponent
from .errors import AlgebraError, EntropyDataError, InsufficientGrowthData, LieSwitchError
from .lie_algebra import GeneratorSet, is_semisimple, is_solvable, levi_decomposition
from .report import dump_report
from .stability import (
    certify,
    derive_seed,
    envelope,
    gues_fit,
    radical_bound_check,
    trajectory_ensemble,
)
from .switched_system import (
    SwitchingSignal,
    evolve_factored,
    evolve_full,
    evolve_parts,
    factorization_residual,
    merge_traces,
    random_signal,
    trace_to_csv,
)

log = logging.getLogger("lieswitch")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_ALGEBRA = 3
EXIT_ENTROPY = 4

_ENTROPY_STREAM = 0
_CSV_ROWS = 2000


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, AlgebraError):
        return EXIT_ALGEBRA
    if isinstance(exc, EntropyDataError):
        return EXIT_ENTROPY
    return EXIT_FAILURE


class _Run:
    """Accumulates a report; a failing stage is recorded before the file is written."""

    def __init__(self, command: str, cfg: RunConfig, out: Path):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.path = self.out / f"{command}.yaml"
        self.report = {
            "tool": "lieswitch",
            "version": __version__,
            "command": command,
            "status": "ok",
            "config": cfg.echo(),
            "results": {},
        }
        self.code = EXIT_OK

    @property
    def results(self) -> dict:
        return self.report["results"]

    @contextmanager
    def stage(self, name: str):
        try:
            yield
        except LieSwitchError as exc:
            self.report["status"] = "FAILED"
            self.report["failed_stage"] = name
            err = {"type": type(exc).__name__, "message": str(exc)}
            if isinstance(exc, InsufficientGrowthData):
                err["hint"] = "raise entropy.grid_resolution or use larger epsilons"
            self.report["error"] = err
            self.code = exit_code_for(exc)
            raise _Abort() from exc

    def finish(self) -> int:
        dump_report(self.report, self.path)
        return self.code


class _Abort(Exception):
    pass


def _decompose(cfg: RunConfig):
    gens = GeneratorSet.from_matrices(cfg.matrices())
    decomp = levi_decomposition(gens, cfg.tolerances.rank)
    if decomp.reconstruction_error > cfg.tolerances.split * max(1.0, max(np.linalg.norm(A) for A in gens.modes)):
        from .errors import ResidualTooLarge

        raise ResidualTooLarge(f"reconstruction error {decomp.reconstruction_error:.3e}")
    return gens, decomp


def _decomposition_record(decomp, tol: float) -> dict:
    rec = decomp.to_record()
    levi_traces = [abs(float(np.trace(b))) for b in decomp.levi.basis]
    rec["checks"] = {
        "radical_solvable": is_solvable(decomp.radical, tol),
        "levi_semisimple": is_semisimple(decomp.levi, tol),
        "levi_max_abs_trace": max(levi_traces, default=0.0),
        "algebra_jacobi_residual": decomp.algebra.jacobi_residual(),
        "dimension_sum_ok": decomp.radical.dim + decomp.levi.dim == decomp.algebra.dim,
    }
    return rec


def _box(cfg: RunConfig) -> CompactSet:
    e = cfg.entropy
    return CompactSet(np.array(e.center), np.array(e.half_widths), e.grid_resolution)


def _entropy_traces(cfg: RunConfig, gens: GeneratorSet, decomp):
    e = cfg.entropy
    T = max(e.horizons)
    step = e.step or cfg.tolerances.step
    traces = []
    for i in range(e.signals):
        sig = random_signal(derive_seed(cfg.signal.seed, _ENTROPY_STREAM, i), cfg.signal.switch_rate, T, gens.N)
        if e.flow == "full":
            zeros = [np.zeros_like(A) for A in gens.modes]
            traces.append(evolve_parts(zeros, gens.modes, sig, step))
        else:
            traces.append(evolve_factored(decomp, sig, step))
    return traces


def _entropy_stage(run: _Run, cfg: RunConfig, gens, decomp):
    e = cfg.entropy
    traces = _entropy_traces(cfg, gens, decomp)
    K = _box(cfg)
    estimates = [entropy_estimate(tr, K, e.epsilons, e.horizons, e.time_samples) for tr in traces]
    h_max = max(est.h_estimate for est in estimates)
    run.results["entropy"] = {
        "flow": e.flow,
        "per_signal": [
            dict(signal=tr.signal.to_pairs(), **est.to_record()) for tr, est in zip(traces, estimates)
        ],
        "h_max": h_max,
    }
    path = run.out / "entropy_r_table.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["signal", "epsilon", "T", "r", "r_greedy"])
        for s, est in enumerate(estimates):
            raw = est.diagnostics["greedy_counts"]
            for i, eps in enumerate(est.epsilons):
                for j, T in enumerate(est.horizons):
                    w.writerow([s, f"{eps:.12g}", f"{T:.12g}", int(est.spanning_counts[i, j]), int(raw[i][j])])
    return traces, estimates, h_max


def _lyapunov_stage(run: _Run, cfg: RunConfig, decomp, traces):
    per_signal = [lyapunov_det_exponent(tr) for tr in traces]
    T = max(cfg.entropy.horizons)
    step = cfg.entropy.step or cfg.tolerances.step
    per_mode = []
    if cfg.entropy.flow == "levi":
        for p in range(1, decomp.N + 1):
            tr = evolve_factored(decomp, SwitchingSignal.constant(p, T), step)
            per_mode.append(lyapunov_det_exponent(tr).lambda_star)
    lam = max(l.lambda_star for l in per_signal)
    run.results["lyapunov"] = {
        "lambda_star_per_signal": [l.lambda_star for l in per_signal],
        "lambda_star_per_mode_constant_signal": per_mode,
        "lambda_star": lam,
        "horizon": T,
    }
    return lam


def cmd_decompose(cfg: RunConfig, out: Path) -> int:
    run = _Run("decompose", cfg, out)
    try:
        with run.stage("decompose"):
            _, decomp = _decompose(cfg)
            run.results["decomposition"] = _decomposition_record(decomp, cfg.tolerances.rank)
    except _Abort:
        pass
    return run.finish()


def _signal(cfg: RunConfig, N: int) -> SwitchingSignal:
    s = cfg.signal
    return random_signal(s.seed, s.switch_rate, s.horizon, N)


def cmd_simulate(cfg: RunConfig, out: Path) -> int:
    run = _Run("simulate", cfg, out)
    step = cfg.tolerances.step
    try:
        with run.stage("decompose"):
            gens, decomp = _decompose(cfg)
        with run.stage("simulate"):
            sig = _signal(cfg, gens.N)
            full = evolve_full(gens, sig, step)
            fact = evolve_factored(decomp, sig, step)
            residual = factorization_residual(full, fact)
            tr = merge_traces(full, fact)
            Ph = tr.matrices("Phi_h")
            direct = np.linalg.slogdet(Ph)[1]
            x0 = np.array(cfg.signal.x0) if cfg.signal.x0 is not None else np.eye(gens.n)[0]
            states = tr.matrices("Phi") @ x0
            run.results["signal"] = {"pairs": sig.to_pairs(), "horizon": sig.horizon,
                                     "switch_count": sig.switch_count}
            run.results["propagation"] = {
                "samples": len(tr.times),
                "step": step,
                "factorization_residual": residual,
                "expm_deviation": full.expm_deviation,
                "local_error_proxy": full.local_error,
                "liouville_mismatch": float(np.max(np.abs(tr.logdet_h - direct))),
                "max_abs_det_levi_minus_one": float(np.max(np.abs(np.exp(direct) - 1))),
                "lambda_star_levi": lyapunov_det_exponent(tr, "h").lambda_star,
                "lambda_star_full": lyapunov_det_exponent(tr, "full").lambda_star,
                "Phi_final": tr.matrices("Phi")[-1],
                "Phi_h_final": Ph[-1],
                "Phi_m_final": tr.matrices("Phi_m")[-1],
                "x0": x0,
                "x_final": states[-1],
            }
            stride = max(1, len(tr.times) // _CSV_ROWS)
            trace_to_csv(tr, run.out / "trace.csv", stride=stride)
            with (run.out / "signal.csv").open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["breakpoint", "mode"])
                for t, p in sig.to_pairs():
                    w.writerow([f"{t:.12g}", p])
        with run.stage("radical_bound"):
            run.results["radical_bound"] = radical_bound_check(decomp, sig, step, seed=cfg.signal.seed).to_record()
    except _Abort:
        pass
    return run.finish()


def cmd_entropy(cfg: RunConfig, out: Path) -> int:
    run = _Run("entropy", cfg, out)
    try:
        with run.stage("decompose"):
            gens, decomp = _decompose(cfg)
        with run.stage("entropy"):
            traces, _, _ = _entropy_stage(run, cfg, gens, decomp)
        with run.stage("lyapunov"):
            _lyapunov_stage(run, cfg, decomp, traces)
    except _Abort:
        pass
    return run.finish()


def cmd_certify(cfg: RunConfig, out: Path) -> int:
    run = _Run("certify", cfg, out)
    s = cfg.signal
    step = cfg.tolerances.step
    try:
        with run.stage("decompose"):
            gens, decomp = _decompose(cfg)
            run.results["decomposition"] = _decomposition_record(decomp, cfg.tolerances.rank)
        with run.stage("entropy"):
            traces, _, h_max = _entropy_stage(run, cfg, gens, decomp)
        with run.stage("lyapunov"):
            lam = _lyapunov_stage(run, cfg, decomp, traces)
        with run.stage("certify"):
            cert = certify(decomp, h_max, lam)
        with run.stage("gues_fit"):
            ens = trajectory_ensemble(gens, s.count, s.seed, s.switch_rate, s.horizon, step,
                                      workers=cfg.workers)
            fit = gues_fit(ens.times, ens.norms, cfg.tolerances.fit_window,
                           min_trajectories=min(10, s.count))
            cert = cert.with_empirical(fit)
            E = envelope(ens.times, ens.norms)
            with (run.out / "envelope.csv").open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["t", "envelope", "fitted_bound"])
                for t, e in zip(ens.times, E):
                    w.writerow([f"{t:.12g}", f"{e:.12g}", f"{fit.M * np.exp(-fit.rate * t):.12g}"])
        with run.stage("radical_bound"):
            rb = radical_bound_check(decomp, _signal(cfg, gens.N), step, seed=s.seed)
        run.results["certificate"] = cert.to_record()
        run.results["certificate"]["predicted_rate"] = cert.predicted_rate
        run.results["radical_bound"] = rb.to_record()
        run.results["ensemble"] = {"trajectories": s.count, "horizon": s.horizon}
    except _Abort:
        pass
    return run.finish()


COMMANDS = {
    "decompose": cmd_decompose,
    "simulate": cmd_simulate,
    "entropy": cmd_entropy,
    "certify": cmd_certify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lieswitch", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="YAML/JSON run configuration or a previous report")
    parser.add_argument("--out", help="output directory (default: config 'outputs')")
    parser.add_argument("--seed", type=int, help="override signal.seed")
    parser.add_argument("--step", type=float, help="override tolerances.step")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.signal.seed = args.seed
        if args.step is not None:
            if not args.step > 0:
                raise ConfigError("--step must be positive")
            cfg.tolerances.step = args.step
    except ConfigError as exc:
        print(f"lieswitch: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out or cfg.outputs)
    code = COMMANDS[args.command](cfg, out)
    log.info("wrote %s (exit %d)", out / f"{args.command}.yaml", code)
    if code != EXIT_OK:
        print(f"lieswitch: {args.command} failed, see {out / (args.command + '.yaml')}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
