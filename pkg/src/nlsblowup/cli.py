"""Command-line entry point.

    nlsblowup profile solve    --d 3 --sigma 1 --a0 0.917 --q00 1.885
    nlsblowup profile continue --from q.csv --target-d 5
    nlsblowup profile diagnose --profile q.csv
    nlsblowup simulate         --d 3 --sigma 1 --init gaussian:5
    nlsblowup analyze          --trace trace.csv --profile q.csv

Every command accepts ``--config FILE`` with ``key = value`` lines naming
long options (dashes or underscores); flags given on the command line win.
Each output file is accompanied by ``<output>.manifest.json``.

Exit codes: 0 ok, 2 bad flags, 3 no convergence, 4 converged to the
trivial solution, 5 instability, 6 not blowing up, 7 file format.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, analysis, profile, simulator
from . import io as nio
from .errors import (ContinuationStalled, Instability, InvalidArgument, NLSBlowupError,
                     NotBlowingUp, NotEnergyCritical, ParameterMismatch)

EXIT_OK = 0
EXIT_USAGE = 2

DEFAULT_K_LIST = (20, 40, 60, 80, 100, 120, 140, 160, 180, 200)
DEFAULT_XI_LIST = (1, 5, 10, 50)


class UsageError(Exception):
    pass


def _float_list(text):
    try:
        return [float(x) for x in str(text).replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _positive(text):
    x = float(text)
    if not x > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return x


def read_config(path) -> dict:
    """``key = value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}")
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"{path}:{n}: expected key = value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nlsblowup", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value file; command-line flags override it")
        return p

    prof = sub.add_parser("profile", help="profile equation: solve, continue, diagnose")
    psub = prof.add_subparsers(dest="action", required=True)

    p = common(psub.add_parser("solve", help="shooting guess + Newton solve"))
    p.add_argument("--d", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--a0", type=_positive, help="estimate of a")
    p.add_argument("--q00", type=_positive, help="estimate of Q(0)")
    p.add_argument("--n", type=int, default=profile.DEFAULT_N, help="collocation points")
    p.add_argument("--L-D", dest="L_D", type=_positive, default=profile.DEFAULT_K,
                   help="domain length")
    p.add_argument("--out", default="profile.csv")
    p.set_defaults(handler=cmd_profile_solve, required_opts=("d", "sigma", "a0", "q00"))

    p = common(psub.add_parser("continue", help="continuation in d, then sigma"))
    p.add_argument("--from", dest="from_file")
    p.add_argument("--target-d", dest="target_d", type=float)
    p.add_argument("--target-sigma", dest="target_sigma", type=float)
    p.add_argument("--step", type=_positive, default=0.1)
    p.add_argument("--out-dir", dest="out_dir", default="continuation")
    p.set_defaults(handler=cmd_profile_continue, required_opts=("from_file",))

    p = common(psub.add_parser("diagnose", help="phase plane, Hamiltonian, C0, identities"))
    p.add_argument("--profile")
    p.add_argument("--k-list", dest="k_list", type=_float_list,
                   default=",".join(map(str, DEFAULT_K_LIST)))
    p.add_argument("--xi-list", dest="xi_list", type=_float_list,
                   default=",".join(map(str, DEFAULT_XI_LIST)))
    p.add_argument("--volterra-xi-max", dest="volterra_xi_max", type=_positive, default=50.0)
    p.add_argument("--out", default="diagnostics.csv")
    p.set_defaults(handler=cmd_profile_diagnose, required_opts=("profile",))

    p = common(sub.add_parser("simulate", help="dynamic-rescaling blow-up simulation"))
    p.add_argument("--d", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--init", help="FAMILY:AMPLITUDE, FAMILY in gaussian, rational")
    p.add_argument("--h", type=_positive, default=0.1)
    p.add_argument("--dtau", type=_positive, help="default 1e-4 / 2^(sigma-2)")
    p.add_argument("--L-D", dest="L_D", type=_positive, help="default 100 (d < 3.5) or 200")
    p.add_argument("--bc", choices=(simulator.BC_EXACT, simulator.BC_AB),
                   default=simulator.BC_EXACT)
    p.add_argument("--corrector", choices=(simulator.CORRECTOR_TRAPEZOID,
                                           simulator.CORRECTOR_LAGGED),
                   default=simulator.CORRECTOR_TRAPEZOID)
    p.add_argument("--stop-L", dest="stop_L", type=_positive, default=1e-24)
    p.add_argument("--tau-max", dest="tau_max", type=_positive, default=2000.0)
    p.add_argument("--record-every", dest="record_every", type=int, default=100)
    p.add_argument("--profile", help="profile file; records carry the distance to it")
    p.add_argument("--out", default="trace.csv")
    p.set_defaults(handler=cmd_simulate, required_opts=("d", "sigma", "init"))

    p = common(sub.add_parser("analyze", help="rate fit, relative error, a and profile checks"))
    p.add_argument("--trace")
    p.add_argument("--profile")
    p.add_argument("--L-floor", dest="L_floor", type=_positive, default=1e-20)
    p.add_argument("--out", default="analysis.csv")
    p.set_defaults(handler=cmd_analyze, required_opts=("trace",))
    return parser


def _leaf_parser(parser, argv):
    """The subparser that will handle ``argv`` (for config defaults)."""
    node = parser
    for tok in argv:
        actions = [a for a in node._actions if isinstance(a, argparse._SubParsersAction)]
        if not actions:
            break
        if tok in actions[0].choices:
            node = actions[0].choices[tok]
    return node


def parse_args(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        leaf = _leaf_parser(parser, argv)
        names = {}  # config key -> dest, by dest or by long option name
        for a in leaf._actions:
            names[a.dest] = a.dest
            for opt in a.option_strings:
                names[opt.lstrip("-").replace("-", "_")] = a.dest
        try:
            cfg = read_config(known.config)
        except UsageError as exc:
            parser.error(str(exc))
        unknown = sorted(set(cfg) - set(names) - {"config"})
        if unknown:
            parser.error(f"unknown config keys: {', '.join(unknown)}")
        # string defaults go through each option's type
        leaf.set_defaults(**{names[k]: v for k, v in cfg.items() if k != "config"})
    args = parser.parse_args(argv)
    missing = [k for k in args.required_opts if getattr(args, k, None) is None]
    if missing:
        flags = ", ".join("--" + m.replace("_", "-").replace("from-file", "from") for m in missing)
        parser.error(f"missing required option(s): {flags}")
    return args


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _params_of(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items())
            if k not in ("handler", "required_opts") and not callable(v)}


def _finish(args, command, outputs, inputs, clock, status="ok", exit_code=0):
    params = _params_of(args)
    manifest = nio.RunManifest(command, params, [str(p) for p in inputs],
                               [str(p) for p in outputs], nio.hash_inputs(params, inputs),
                               __version__, clock.elapsed(), status, exit_code)
    for out in outputs:
        manifest.write(nio.manifest_path(out))
    return exit_code


def _manifest_ref(out) -> dict:
    return {"manifest": nio.manifest_path(out).name}


def _report(fields: dict):
    for k, v in fields.items():
        print(f"{k} = {nio.fmt(v)}")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_profile_solve(args) -> int:
    clock = nio.Stopwatch()
    params = profile.ProblemParams(args.d, args.sigma)
    sol = profile.solve_from_estimates(params, args.a0, args.q00, args.n, args.L_D)
    try:
        oscillating, _ = profile.detect_oscillation(profile.phase_path(sol))
    except InvalidArgument:
        oscillating = False
    summary = {"a": sol.a, "q0": sol.q0, "residual_norm": sol.residual_norm,
               "iterations": sol.iterations, "oscillating": oscillating,
               "n_maxima": sol.n_maxima()}
    out = Path(args.out)
    nio.write_profile(out, sol, {"oscillating": oscillating, "n_maxima": sol.n_maxima(),
                                 **_manifest_ref(out)})
    _report(summary)
    return _finish(args, "profile solve", [out], [], clock)


def _profile_name(p: profile.ProblemParams) -> str:
    return f"profile_d{p.d:.6g}_s{p.sigma:.6g}.csv"


def cmd_profile_continue(args) -> int:
    clock = nio.Stopwatch()
    start = nio.read_profile(args.from_file)
    target = profile.ProblemParams(
        start.params.d if args.target_d is None else args.target_d,
        start.params.sigma if args.target_sigma is None else args.target_sigma,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = out_dir / "continuation.csv"
    code, status = EXIT_OK, "ok"
    try:
        record = profile.continue_in_parameter(start, target, args.step)
    except ContinuationStalled as exc:
        record, code, status = exc.record, exc.exit_code, f"stalled: {exc}"
        print(f"error: {exc}", file=sys.stderr)
    outputs = [table]
    for sol in record.solutions[1:]:
        path = out_dir / _profile_name(sol.params)
        nio.write_profile(path, sol, _manifest_ref(path))
        outputs.append(path)
    nio.write_continuation(table, record, {"status": status, **_manifest_ref(table)})
    for e in record.entries:
        if e.converged:
            print(f"d = {e.params.d:.6g}  sigma = {e.params.sigma:.6g}  a = {e.a:.10f}  "
                  f"Q0 = {e.q0:.10f}  iterations = {e.iterations}")
    return _finish(args, "profile continue", outputs, [args.from_file], clock, status, code)


def diagnose(sol: profile.ProfileSolution, k_list, xi_list, volterra_xi_max=50.0):
    """All profile diagnostics as (header fields, blocks) for a report file."""
    path = profile.phase_path(sol)
    oscillating, changes = (False, 0)
    if path.c.size:
        oscillating, changes = profile.detect_oscillation(path)
    ks = [k for k in k_list if k <= sol.grid.domain_length]
    ham = profile.hamiltonian_study(sol, ks) if ks else None
    ident = [(xi, *profile.identity_residuals(sol, xi)) for xi in xi_list
             if 0 < xi <= sol.grid.domain_length]
    fields = {"d": sol.params.d, "sigma": sol.params.sigma, "a": sol.a, "q0": sol.q0,
              "oscillating": oscillating, "sign_changes": changes,
              "volterra_residual": profile.volterra_residual(
                  sol, min(volterra_xi_max, sol.grid.domain_length))}
    if abs(sol.params.s_c - 1) <= 1e-12:
        if np.any(sol.q) and sol.a > 0:
            c_num, c_pred, abs_err, rel_err = profile.c0_check(sol)
        else:
            c_num = c_pred = abs_err = rel_err = 0.0
        fields.update(c0_num=c_num, c0_pred=c_pred, c0_abs_err=abs_err, c0_rel_err=rel_err)
    blocks = {
        "phase_path": (["xi", "C", "D", "psi"], list(zip(path.xi, path.c, path.d_log, path.psi))),
        "hamiltonian": (["k", "H"], [] if ham is None else list(zip(ham.k_trunc, ham.h_value))),
        "identities": (["xi", "residual_1", "residual_2"], ident),
    }
    return fields, blocks


def cmd_profile_diagnose(args) -> int:
    clock = nio.Stopwatch()
    sol = nio.read_profile(args.profile)
    fields, blocks = diagnose(sol, args.k_list, args.xi_list, args.volterra_xi_max)
    out = Path(args.out)
    header = {"format": nio.REPORT_FORMAT, "version": __version__, "kind": "diagnostics",
              **fields, **_manifest_ref(out)}
    nio.write_table(out, header, [], [], blocks)
    _report(fields)
    return _finish(args, "profile diagnose", [out], [args.profile], clock)


def _check_match(p, q, what):
    if abs(p.d - q.d) > 1e-12 or abs(p.sigma - q.sigma) > 1e-12:
        raise ParameterMismatch(f"{what} is for (d, sigma) = ({q.d:g}, {q.sigma:g}), "
                                f"the run for ({p.d:g}, {p.sigma:g})")


def cmd_simulate(args) -> int:
    clock = nio.Stopwatch()
    params = profile.ProblemParams(args.d, args.sigma)
    u0 = simulator.parse_init(args.init)
    cfg = simulator.SimConfig(params, h=args.h, dtau=args.dtau, domain_length=args.L_D,
                              stop_L=args.stop_L, tau_max=args.tau_max, bc_kind=args.bc,
                              record_every=args.record_every, corrector=args.corrector)
    inputs, q_ref = [], None
    if args.profile:
        sol = nio.read_profile(args.profile)
        _check_match(params, sol.params, "the profile")
        q_ref, _ = profile.rescale_family(sol, 1.0)
        inputs.append(args.profile)
    out = Path(args.out)
    code, status = EXIT_OK, "ok"
    try:
        trace = simulator.run(u0, cfg, q_ref)
        if trace.stopped_by == "tau_max":
            code, status = NotBlowingUp.exit_code, "tau_max reached before stop_L"
    except (Instability, NotBlowingUp) as exc:
        trace, code, status = exc.trace, exc.exit_code, str(exc)
    if code:
        print(f"error: {status}", file=sys.stderr)
    nio.write_trace(out, trace, {"init": args.init, "status": status, **_manifest_ref(out)})
    last = trace.records[-1] if trace.records else None
    _report({"stopped_by": trace.stopped_by, "T": trace.T, "a_end": trace.a_end,
             "tau": last.tau if last else 0.0, "ln_L": last.ln_L if last else 0.0,
             "records": len(trace.records)})
    return _finish(args, "simulate", [out], inputs, clock, status, code)


def analyze(trace, sol=None, L_floor=1e-20):
    """Report fields and the four plot blocks for a trace."""
    T, t_minus = analysis.reconstruct_times(trace)
    fit = analysis.fit_rate(trace)
    series = analysis.relative_error_series(trace, L_floor=L_floor)
    fields = {"d": trace.config.params.d, "sigma": trace.config.params.sigma, "T": T,
              "slope": fit.slope, "intercept": fit.intercept, "fit_points": fit.n_points,
              "fit_residual_rms": fit.residual_rms, "a_end": trace.a_end,
              "e_rel_median": float(np.median(series.e_rel)) if series.e_rel.size else math.nan}
    try:
        fields["stabilization_onset_L"] = analysis.stabilization_onset(series)
    except NLSBlowupError:
        pass
    ln_L = trace.column("ln_L")
    pos = t_minus > 0
    blocks = {
        "rate": (["ln_T_minus_t", "ln_L"], list(zip(np.log(t_minus[pos]), ln_L[pos]))),
        "a": (["tau", "a"], list(zip(trace.column("tau"), trace.column("a")))),
    }
    if sol is not None:
        a_end, a_tilde, diff = analysis.compare_a(trace, sol)
        fields.update(a_tilde=a_tilde, a_diff=diff)
        dist = [(r.tau, r.dist_to_Q) for r in trace.records if r.dist_to_Q is not None]
        if dist:
            blocks["distance"] = (["tau", "dist_to_Q"], dist)
    blocks["e_rel"] = (["ln_L", "e_rel"], list(zip(series.ln_L, series.e_rel)))
    return fields, blocks


def cmd_analyze(args) -> int:
    clock = nio.Stopwatch()
    trace = nio.read_trace(args.trace)
    inputs = [args.trace]
    sol = None
    if args.profile:
        sol = nio.read_profile(args.profile)
        inputs.append(args.profile)
    fields, blocks = analyze(trace, sol, args.L_floor)
    out = Path(args.out)
    header = {"format": nio.REPORT_FORMAT, "version": __version__, "kind": "analysis",
              **fields, **_manifest_ref(out)}
    nio.write_table(out, header, [], [], blocks)
    _report(fields)
    return _finish(args, "analyze", [out], inputs, clock)


def main(argv=None) -> int:
    args = parse_args(argv)  # exits with 2 on bad flags
    try:
        return args.handler(args)
    except NotEnergyCritical as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except NLSBlowupError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
