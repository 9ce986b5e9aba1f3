"""Command-line pipeline: model -> cycle -> periodic solution -> runs -> estimates.

Exit codes: 0 success, 1 configuration, 2 no cycle, 3 insufficient
statistics, 4 truncation/resolution.  All outputs land in --out together
with a manifest embedding the fully resolved configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import artifacts as art
from . import audits
from .config import RunConfig, load_config, write_manifest
from .errors import (
    ConfigurationError,
    ConvergenceError,
    MfoscError,
    NoCycleError,
    StatisticsError,
    TruncationError,
)
from .galerkin import find_periodic_solution
from .hermite import HermiteBasis
from .particle import CoupledPair, couple_to_mckean_vlasov, run_replicas
from .phase import (
    PhaseExtractor,
    dephasing_trace,
    estimate_coefficients,
    oracle_comparison,
)
from .reduced import SmoothedField, build_isochron, find_limit_cycle, oracle_phase_coefficients

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NO_CYCLE = 2
EXIT_STATISTICS = 3
EXIT_TRUNCATION = 4


def _load(args) -> RunConfig:
    cfg = load_config(args.config, threads=args.threads) if args.config \
        else RunConfig.defaults(threads=args.threads)
    if args.seed is not None:
        cfg.experiment["seed"] = int(args.seed)
    return cfg


def _outdir(args, cfg: RunConfig) -> Path:
    out = Path(args.out) if args.out else Path(cfg.output["directory"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_find_cycle(args) -> int:
    cfg = _load(args)
    out = _outdir(args, cfg)
    model = cfg.build_model()
    num = cfg.numerics
    field = SmoothedField(model, order=int(num["quad_order"]))
    cycle = find_limit_cycle(field, tol=float(num["cycle_tol"]),
                             n_samples=int(num["n_cycle_samples"]))
    iso = build_isochron(field, cycle)
    path = out / "cycle.json"
    art.save_cycle_artifact(path, cycle, iso, model, quad_order=int(num["quad_order"]))
    write_manifest(out, cfg, [path.name], extra={"model_hash": model.fingerprint()})
    mults = ", ".join(f"{m:.6g}" for m in np.sort(np.abs(cycle.multipliers))[::-1])
    print(f"period {cycle.period:.9g}")
    print(f"multiplier moduli [{mults}]")
    print(f"shooting residual {cycle.shooting_residual:.3g}")
    print(f"artifact {path}")
    return EXIT_OK


def cmd_find_periodic(args) -> int:
    cfg = _load(args)
    out = _outdir(args, cfg)
    num = cfg.numerics
    cycle_path = Path(args.cycle) if args.cycle else out / "cycle.json"
    model, field, cycle, iso = art.load_cycle_artifact(cycle_path)
    basis = HermiteBasis.for_model(model, theta=float(num["theta"]),
                                   r=float(num["r"]), L=int(num["l_max"]))
    artifact, solver = find_periodic_solution(
        model, cycle, L=int(num["l_max"]), dt=float(num["galerkin_dt"]),
        basis=basis, tol=float(num["periodic_tol"]),
        n_snapshots=int(num["n_snapshots"]))
    path = out / "periodic.json"
    art.save_periodic_artifact(path, artifact, model)
    write_manifest(out, cfg, [path.name, cycle_path.name] if cycle_path.parent == out
                   else [path.name],
                   extra={"model_hash": model.fingerprint()})
    print(f"period {artifact.period:.9g}")
    print(f"residual {artifact.residual:.3g} after {artifact.iterations} iterations")
    print(f"mass error {artifact.mass_error:.3g}, centering error {artifact.mean_error:.3g}")
    print(f"artifact {path}")
    return EXIT_OK


def _auto_stride(period: float, dt: float) -> int:
    return max(1, int(round(period / 10.0 / dt)))


def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = _outdir(args, cfg)
    model = cfg.build_model()
    exp = cfg.experiment
    num = cfg.numerics
    dt = float(num["dt"])
    horizon = float(exp["horizon"])
    stride = max(1, int(round(float(exp["observation_stride"]) / dt))) \
        if exp["observation_stride"] else max(1, int(round(horizon / dt / 200)))
    m0 = None
    if args.cycle:
        _, _, cycle, _ = art.load_cycle_artifact(args.cycle)
        m0 = cycle.samples[0]
    files = []
    for N in exp["n"]:
        times, traces = run_replicas(model, int(N), int(exp["replicas"]), horizon, dt,
                                     int(exp["seed"]), m0=m0, record_stride=stride,
                                     threads=cfg.threads)
        for rep in range(traces.shape[0]):
            name = f"trace_n{N}_r{rep:04d}.csv"
            data = np.column_stack([times, traces[rep]])
            hdr = "t," + ",".join(f"m_{c + 1}" for c in range(model.d))
            np.savetxt(out / name, data, delimiter=",", header=hdr, comments="")
            files.append(name)
    write_manifest(out, cfg, files, extra={"model_hash": model.fingerprint()})
    print(f"wrote {len(files)} trace files to {out}")
    return EXIT_OK


def cmd_phase_diffusion(args) -> int:
    cfg = _load(args)
    out = _outdir(args, cfg)
    exp = cfg.experiment
    num = cfg.numerics
    if int(exp["replicas"]) < 1:
        raise StatisticsError("replica count is zero; nothing to estimate")
    cycle_path = Path(args.cycle) if args.cycle else out / "cycle.json"
    model, field, cycle, iso = art.load_cycle_artifact(cycle_path)
    periodic = None
    if args.periodic:
        _, periodic, _ = art.load_periodic_artifact(args.periodic)
    else:
        default_p = out / "periodic.json"
        if default_p.exists():
            _, periodic, _ = art.load_periodic_artifact(default_p)
    extractor = PhaseExtractor.build(iso, model.delta, artifact=periodic)
    oracle = oracle_phase_coefficients(cycle, iso, model)

    dt = float(num["dt"])
    stride = max(1, int(round(float(exp["observation_stride"]) / dt))) \
        if exp["observation_stride"] else _auto_stride(extractor.period, dt)
    files = []
    per_n = {}
    for N in exp["n"]:
        N = int(N)
        horizon_wall = float(exp["t_final"]) * N
        nsteps = int(round(horizon_wall / dt))
        nsteps -= nsteps % stride
        horizon_wall = nsteps * dt
        times, traces = run_replicas(model, N, int(exp["replicas"]), horizon_wall, dt,
                                     int(exp["seed"]), m0=cycle.samples[0],
                                     record_stride=stride, threads=cfg.threads)
        phase_traces = [dephasing_trace(times, traces[rep], extractor, N, replica=rep)
                        for rep in range(traces.shape[0])]
        est = estimate_coefficients(phase_traces, seed=int(exp["seed"]))
        block = est.to_dict()
        block["oracle"] = oracle_comparison(est, oracle, model.delta)
        per_n[str(N)] = block
        name = f"phase_traces_n{N}.csv"
        with open(out / name, "w") as fh:
            fh.write("replica,t,v\n")
            for tr in phase_traces:
                for t, v in zip(tr.times, tr.v):
                    fh.write(f"{tr.replica},{t:.10g},{v:.10g}\n")
        files.append(name)

    result = {"per_n": per_n, "delta": model.delta,
              "period": extractor.period, "calibrated": periodic is not None}
    if len(per_n) >= 2:
        keys = sorted(per_n, key=int)
        pairs = []
        for a, b in zip(keys[:-1], keys[1:]):
            ea, eb = per_n[a], per_n[b]

            def overlaps(ca, cb):
                return not (ca[1] < cb[0] or cb[1] < ca[0])

            pairs.append({
                "n_low": int(a),
                "n_high": int(b),
                "b_ci_overlap": overlaps(ea["b_ci"], eb["b_ci"]),
                "a2_ci_overlap": overlaps(ea["a2_ci"], eb["a2_ci"]),
            })
        result["cross_n"] = pairs
    est_path = out / "estimates.json"
    with open(est_path, "w") as fh:
        json.dump(result, fh, indent=2)
    files.append(est_path.name)
    write_manifest(out, cfg, files, extra={"model_hash": model.fingerprint()})
    print(json.dumps({k: {"b_hat": v["b_hat"], "a2_hat": v["a2_hat"]}
                      for k, v in per_n.items()}, indent=2))
    return EXIT_OK


def cmd_audit_norms(args) -> int:
    cfg = _load(args)
    out = _outdir(args, cfg)
    model = cfg.build_model()
    num = cfg.numerics
    report = audits.norm_property_battery(model, theta=float(num["theta"]),
                                          r=float(num["r"]), L=int(num["l_max"]))
    path = out / "norm_audit.json"
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, default=float)
    write_manifest(out, cfg, [path.name], extra={"model_hash": model.fingerprint()})
    print(f"gram error {report['gram_error']:.3g}; eigen residual {report['eigen_residual']:.3g}")
    print(f"delta sweep: {report['delta_sweep']['violations']} violations, "
          f"worst tail {report['delta_sweep']['worst_tail_fraction']:.2%}")
    print(f"report {path}")
    if not report["ok"]:
        print("audit failed", file=sys.stderr)
        return EXIT_TRUNCATION
    return EXIT_OK


def cmd_couple(args) -> int:
    cfg = _load(args)
    out = _outdir(args, cfg)
    model = cfg.build_model()
    exp = cfg.experiment
    num = cfg.numerics
    dt = float(num["dt"])
    horizon = float(exp["horizon"])
    replicas = int(exp["replicas"])
    ns = [int(n) for n in exp["coupling_n"]]
    results = {}
    files = []
    for N in ns:
        finals = []
        curves = []
        for rep in range(replicas):
            pair = CoupledPair.initialize(model, N, dt, int(exp["seed"]), replica=rep,
                                          proxy_factor=int(exp["proxy_factor"]))
            times, sup_err = couple_to_mckean_vlasov(pair, model, horizon)
            finals.append(sup_err[-1])
            curves.append(sup_err)
        curves = np.asarray(curves)
        name = f"coupling_n{N}.csv"
        data = np.column_stack([times, curves.mean(axis=0)])
        np.savetxt(out / name, data, delimiter=",", header="t,mean_sup_error", comments="")
        files.append(name)
        results[str(N)] = {
            "mean_final_sup_error": float(np.mean(finals)),
            "sd_final_sup_error": float(np.std(finals, ddof=1)) if replicas > 1 else 0.0,
            "replicas": replicas,
        }
    keys = sorted(results, key=int)
    ratios = {}
    for a, b in zip(keys[:-1], keys[1:]):
        ratios[f"{b}/{a}"] = (results[b]["mean_final_sup_error"]
                              / results[a]["mean_final_sup_error"])
    payload = {"per_n": results, "ratios": ratios, "horizon": horizon}
    path = out / "coupling.json"
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
    files.append(path.name)
    write_manifest(out, cfg, files, extra={"model_hash": model.fingerprint()})
    print(json.dumps(payload["ratios"], indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfosc",
                                description="mean-field oscillator ensemble toolchain")
    p.add_argument("--config", help="TOML configuration file")
    p.add_argument("--out", help="output directory (default from config)")
    p.add_argument("--seed", type=int, help="override experiment seed")
    p.add_argument("--threads", type=int, default=1, help="worker threads for replica sweeps")
    sub = p.add_subparsers(dest="command", required=True)

    sc = sub.add_parser("find-cycle", help="locate the reduced limit cycle and isochron")
    sc.set_defaults(func=cmd_find_cycle)

    sp = sub.add_parser("find-periodic", help="periodic solution of the spectral limit system")
    sp.add_argument("--cycle", help="cycle artifact path (default <out>/cycle.json)")
    sp.set_defaults(func=cmd_find_periodic)

    ss = sub.add_parser("simulate", help="particle trace runs")
    ss.add_argument("--cycle", help="start the mean on the cycle from this artifact")
    ss.set_defaults(func=cmd_simulate)

    sd = sub.add_parser("phase-diffusion", help="replica sweep and drift/diffusion estimates")
    sd.add_argument("--cycle", help="cycle artifact path (default <out>/cycle.json)")
    sd.add_argument("--periodic", help="periodic-solution artifact for phase calibration")
    sd.set_defaults(func=cmd_phase_diffusion)

    sa = sub.add_parser("audit-norms", help="weighted-norm property battery")
    sa.set_defaults(func=cmd_audit_norms)

    sk = sub.add_parser("couple", help="propagation-of-chaos coupling experiment")
    sk.set_defaults(func=cmd_couple)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    command = args.command
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoCycleError as exc:
        print(f"no cycle: {exc}", file=sys.stderr)
        return EXIT_NO_CYCLE
    except ConvergenceError as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return EXIT_NO_CYCLE if command == "find-cycle" else EXIT_TRUNCATION
    except StatisticsError as exc:
        print(f"insufficient statistics: {exc}", file=sys.stderr)
        return EXIT_STATISTICS
    except TruncationError as exc:
        print(f"truncation failure: {exc}", file=sys.stderr)
        return EXIT_TRUNCATION
    except MfoscError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
