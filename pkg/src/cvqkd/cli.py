"""Command-line front end: key-rate sweeps, sessions, decoy design, benches.

Every command emits versioned CSV (schema comment first) and a short textual
summary; there is no plotting here, the CSV is meant for external tools.
Exit codes: 0 success, 1 runtime failure or infeasibility, 2 usage or config.
"""

import argparse
import contextlib
import dataclasses
import math
import sys

import numpy as np
from scipy import stats

from . import decoy, modulation, protocol, reconciliation, security
from .channel import ChannelParams, distance_to_T

SCHEMA = "# cvqkd-csv-v1"

SWEEP_VARIABLES = ("distance_km", "va", "xi", "alpha")


@contextlib.contextmanager
def _out_stream(path):
    if path is None:
        yield sys.stdout
    else:
        with open(path, "w") as fh:
            yield fh


def _parse_d_list(text, parser, allow_inf):
    values = []
    for part in text.split(","):
        part = part.strip()
        if part == "inf":
            if not allow_inf:
                parser.error("d=inf is not supported by this command")
            values.append(math.inf)
            continue
        try:
            d = int(part)
        except ValueError:
            parser.error(f"bad block dimension {part!r}")
        if d not in (1, 2, 4, 8):
            parser.error(f"d must be in {{1, 2, 4, 8}}, got {d}")
        values.append(d)
    if not values:
        parser.error("empty d list")
    return values


def _sweep_values(args, parser):
    if args.steps < 2:
        parser.error("--steps must be at least 2")
    if args.scale == "log":
        if args.start <= 0 or args.stop <= 0:
            parser.error("log scale needs positive --start/--stop")
        return np.geomspace(args.start, args.stop, args.steps)
    return np.linspace(args.start, args.stop, args.steps)


def _detection_for(d, choice):
    if choice != "auto":
        return choice
    return "homodyne" if d == 1 else "heterodyne"


def cmd_keyrate(args, parser):
    ds = _parse_d_list(args.d, parser, allow_inf=True)
    values = _sweep_values(args, parser)
    if args.optimize_va and args.sweep in ("va", "alpha"):
        parser.error(f"--optimize-va conflicts with sweeping {args.sweep}")
    if args.transmittance is not None and args.distance_km is not None:
        parser.error("give either --transmittance or --distance-km, not both")
    base_t = args.transmittance
    if args.distance_km is not None:
        base_t = distance_to_T(args.distance_km)
    if base_t is None:
        base_t = 1.0

    with _out_stream(args.out) as out:
        out.write(f"{SCHEMA} keyrate\n")
        out.write(
            "sweep,value,d,v_a,t,xi,eta,beta,detection,t_eff,snr,"
            "i_ab,chi_be,k,delta_xi,z_d,z_epr,f_factor\n"
        )
        for value in values:
            value = float(value)
            t, xi, v_a = base_t, args.xi, args.va
            if args.sweep == "distance_km":
                t = distance_to_T(value)
            elif args.sweep == "xi":
                xi = value
            elif args.sweep == "va":
                v_a = value
            elif args.sweep == "alpha":
                v_a = 2.0 * value * value
            for d in ds:
                detection = _detection_for(d, args.detection)
                try:
                    params = ChannelParams(
                        t=t, xi=xi, eta=args.eta, detection=detection,
                        eta_trusted=args.eta_trusted,
                    )
                    if args.optimize_va:
                        v_a = security.optimize_va(
                            d, params, args.beta, (args.va_min, args.va_max)
                        )
                    report = security.secret_key_rate(d, v_a, params, args.beta)
                except ValueError as exc:
                    print(f"error: {exc}", file=sys.stderr)
                    return 2
                d_text = "inf" if math.isinf(d) else str(int(d))
                fields = [
                    args.sweep, repr(float(value)), d_text, repr(report.v_a),
                    repr(report.t), repr(report.xi), repr(report.eta),
                    repr(report.beta), report.detection, repr(report.t_eff),
                    repr(report.snr), repr(report.i_ab), repr(report.chi_be),
                    repr(report.k), repr(report.delta_xi), repr(report.z_d),
                    repr(report.z_epr), repr(report.f_factor),
                ]
                out.write(",".join(fields) + "\n")
    return 0


def cmd_simulate(args, parser):
    try:
        config = protocol.ProtocolConfig.from_file(args.config)
    except (OSError, protocol.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.n_symbols is not None:
        overrides["n_symbols"] = args.n_symbols
    if args.flow is not None:
        flow = "gaussian" if args.flow == "gaussian-postselected" else args.flow
        overrides["flow"] = flow
    if overrides:
        try:
            config = dataclasses.replace(config, **overrides)
        except protocol.ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
    try:
        transcript = protocol.run_session(config)
    except protocol.ProtocolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.out is not None:
        protocol.save_transcript(transcript, args.out)
    result = transcript.reconcile_result
    print(
        f"t_hat={repr(transcript.t_hat)} xi_hat={repr(transcript.xi_hat)} "
        f"beta_achieved={repr(result.beta_achieved)} k={repr(transcript.report.k)} "
        f"key_bits={transcript.alice_bits.size}"
    )
    if transcript.report.k <= 0.0:
        print("error: key-rate bound is not positive; no key emitted", file=sys.stderr)
        return 1
    return 0


def cmd_decoy_opt(args, parser):
    try:
        design = decoy.optimize_decoy(
            args.d, args.alpha, args.p, n_radii_max=args.max_radii, n_max=args.nmax
        )
    except decoy.InfeasibleDecoyError as exc:
        print(
            f"error: infeasible: {exc} (violating photon number "
            f"{exc.photon_number})",
            file=sys.stderr,
        )
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    pi_d, k_star = decoy.povm_scale(args.d, args.alpha)
    print(f"pi_d={repr(pi_d)} k_star={k_star} p={repr(args.p)} feasible=yes")
    print(
        f"epsilon={repr(design.epsilon)} n_radii={len(design.radii)} "
        f"n_max={design.n_max}"
    )
    for radius, weight in zip(design.radii, design.weights):
        print(f"radius={repr(radius)} weight={repr(weight)}")
    if args.out is not None:
        design.save(args.out)
        print(f"design written to {args.out}")
    return 0


def cmd_reconcile_bench(args, parser):
    try:
        code = protocol.resolve_code(args.code)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    ds = _parse_d_list(args.d, parser, allow_inf=False)
    if args.snr < 0:
        parser.error("--snr must be nonnegative")
    if args.frames < 1:
        parser.error("--frames must be at least 1")

    master = np.random.SeedSequence(args.seed)
    with _out_stream(args.out) as out:
        out.write(f"{SCHEMA} reconcile-bench\n")
        out.write("d,frame,success,pre_bit_errors,post_bit_errors\n")
        for d, child in zip(ds, master.spawn(len(ds))):
            rng = np.random.default_rng(child)
            n_blocks = math.ceil(args.frames * code.n_bits / d)
            x = modulation.sample_sphere_blocks(d, 1.0, n_blocks, rng)
            if math.isfinite(args.snr) and args.snr > 0:
                sigma = math.sqrt(1.0 / (d * args.snr))
                y = x + sigma * rng.standard_normal(x.shape)
            else:
                sigma = 0.0
                y = x.copy()
            # separate reduction pass to expose the virtual-channel noise w
            u, t_blocks = reconciliation.bob_reduce(y, rng)
            v = reconciliation.alice_reduce(x, t_blocks)
            w = (v - u).reshape(-1)
            result = reconciliation.reconcile(x, y, code, rng)

            n_frames = result.n_frames
            used = n_frames * code.n_bits
            pre = (u.reshape(-1)[:used] < 0) != (v.reshape(-1)[:used] < 0)
            pre_frames = pre.reshape(n_frames, code.n_bits).sum(axis=1)
            post = (result.alice_bits != result.bob_bits).reshape(
                n_frames, code.n_bits
            ).sum(axis=1)
            for i in range(n_frames):
                out.write(
                    f"{d},{i},{int(result.frame_success[i])},"
                    f"{int(pre_frames[i])},{int(post[i])}\n"
                )
            if sigma > 0:
                ks_p = stats.kstest(w, "norm", args=(0.0, sigma)).pvalue
            else:
                ks_p = float("nan")
            out.write(
                f"# summary d={d} frames={n_frames} "
                f"success_rate={repr(float(np.mean(result.frame_success)))} "
                f"beta_achieved={repr(result.beta_achieved)} "
                f"snr_hat={repr(result.snr_hat)} ks_p={repr(float(ks_p))}\n"
            )
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cvqkd",
        description="Key-rate analysis and protocol simulation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    kr = sub.add_parser("keyrate", help="sweep a variable and emit key-rate CSV")
    kr.add_argument("--sweep", choices=SWEEP_VARIABLES, required=True)
    kr.add_argument("--start", type=float, required=True)
    kr.add_argument("--stop", type=float, required=True)
    kr.add_argument("--steps", type=int, required=True)
    kr.add_argument("--scale", choices=("linear", "log"), default="linear")
    kr.add_argument("--d", default="1,8", help="comma list from {1,2,4,8,inf}")
    kr.add_argument("--va", type=float, default=0.5, help="fixed modulation variance")
    kr.add_argument("--xi", type=float, default=0.0)
    kr.add_argument("--eta", type=float, default=1.0)
    kr.add_argument("--eta-trusted", action="store_true")
    kr.add_argument("--beta", type=float, default=0.95)
    kr.add_argument("--transmittance", type=float, default=None)
    kr.add_argument("--distance-km", type=float, default=None)
    kr.add_argument("--detection", choices=("auto", "homodyne", "heterodyne"),
                    default="auto")
    kr.add_argument("--optimize-va", action="store_true")
    kr.add_argument("--va-min", type=float, default=0.05)
    kr.add_argument("--va-max", type=float, default=5.0)
    kr.add_argument("--out", default=None)
    kr.set_defaults(func=cmd_keyrate)

    sim = sub.add_parser("simulate", help="run one session from a config file")
    sim.add_argument("--config", required=True)
    sim.add_argument("--out", default=None, help="transcript output directory")
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--n-symbols", type=int, default=None)
    sim.add_argument("--flow", choices=("gaussian-postselected", "decoy"),
                     default=None)
    sim.set_defaults(func=cmd_simulate)

    do = sub.add_parser("decoy-opt", help="design a decoy radius mixture")
    do.add_argument("--d", type=int, required=True)
    do.add_argument("--alpha", type=float, required=True)
    do.add_argument("--p", type=float, required=True)
    do.add_argument("--nmax", type=int, default=None)
    do.add_argument("--max-radii", type=int, default=12)
    do.add_argument("--out", default=None)
    do.set_defaults(func=cmd_decoy_opt)

    rb = sub.add_parser("reconcile-bench", help="benchmark reconciliation codes")
    rb.add_argument("--d", default="8", help="comma list from {1,2,4,8}")
    rb.add_argument("--snr", type=float, default=1.0,
                    help="per-use SNR of the virtual channel (inf = noiseless)")
    rb.add_argument("--code", default="rep16", help="'identity', 'repN', or a file")
    rb.add_argument("--frames", type=int, default=100)
    rb.add_argument("--seed", type=int, default=0)
    rb.add_argument("--out", default=None)
    rb.set_defaults(func=cmd_reconcile_bench)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args, parser)


if __name__ == "__main__":
    sys.exit(main())
