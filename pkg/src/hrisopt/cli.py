"""Command-line driver: Monte-Carlo sweeps, model validation suites,
plot-source data extraction, and the exhaustive tiny-instance search.

Every output file starts with a `# manifest_sha256=...` comment tying it to
the exact resolved config; reruns of the same config are byte-identical.
"""

import argparse
import csv
import dataclasses
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import bench, model
from . import subsolvers as sub
from .channel import FadingParams, Geometry, gen_channel_set, substream
from .config import ConfigError, parse_config, watts_to_dbm
from .linalg import dtilde
from .model import AntennaSelection, HrisConfig, Solution, SystemParams
from .pebcd import ConvergenceError, PebcdOptions, run


def _fmt(value):
    """CSV cell text: floats round-trip exactly, NaN becomes empty."""
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return repr(value)
    return str(value)


def _hash_comment(digest):
    return f"# manifest_sha256={digest}"


def _write_csv(path, digest, header, rows):
    with open(path, "w", newline="") as f:
        if digest:
            f.write(_hash_comment(digest) + "\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------- sweep

def _result_row(r):
    return [_fmt(getattr(r, name)) for name in bench.RESULT_FIELDS]


def cmd_sweep(args):
    config = parse_config(args.config, args.override)
    out_dir = Path(args.out) if args.out else Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    digest = config.manifest_hash()
    (out_dir / "run_manifest.yaml").write_text(
        _hash_comment(digest) + "\n" + config.manifest()
    )

    total = (len(config.schemes) * len(config.p_hris_grid_dbm)
             * len(config.seeds))
    results_path = out_dir / "results.csv"
    t0 = time.perf_counter()
    done = 0

    # completed trials are flushed immediately (in completion order) so an
    # interrupted run leaves usable partial results; the finished file is
    # rewritten in task order below for run-to-run byte identity
    stream = open(results_path, "w", newline="")
    writer = csv.writer(stream, lineterminator="\n")
    stream.write(_hash_comment(digest) + "\n")
    writer.writerow(bench.RESULT_FIELDS)
    stream.flush()

    def flush_row(r):
        nonlocal done
        done += 1
        writer.writerow(_result_row(r))
        stream.flush()
        print(f"[{done}/{total}] {r.scheme} "
              f"p_hris={watts_to_dbm(r.p_hris):+.1f} dBm "
              f"seed={r.seed} mse={r.mse:.6g}")

    try:
        results = bench.monte_carlo(
            config, threads=args.threads, on_result=flush_row
        )
    finally:
        stream.close()

    _write_csv(results_path, digest, bench.RESULT_FIELDS,
               [_result_row(r) for r in results])
    summary = bench.summarize(results)
    _write_csv(out_dir / "summary.csv", digest, bench.SUMMARY_FIELDS,
               [[_fmt(row[k]) for k in bench.SUMMARY_FIELDS]
                for row in summary])
    print(f"sweep complete: {total} trials in "
          f"{time.perf_counter() - t0:.1f} s -> {out_dir}")
    return 0


# ------------------------------------------------------------- plotdata

def _read_results(path):
    digest = None
    rows = []
    with open(path, newline="") as f:
        first = f.readline()
        if first.startswith("# manifest_sha256="):
            digest = first.strip().partition("=")[2]
        else:
            f.seek(0)
        reader = csv.DictReader(f)
        missing = set(bench.RESULT_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(
                f"{path}: missing columns {', '.join(sorted(missing))}"
            )

        def num(rec, key):
            return float(rec[key]) if rec[key] else math.nan

        for rec in reader:
            rows.append(bench.TrialResult(
                scheme=rec["scheme"],
                seed=int(rec["seed"]),
                p_hris=float(rec["p_hris"]),
                mse=num(rec, "mse"),
                empirical_mse=num(rec, "empirical_mse"),
                hris_power=num(rec, "hris_power"),
                n_active=int(rec["n_active"]),
                iterations=int(rec["iterations"]),
                wall_time=0.0,
            ))
    return digest, rows


def _check_grouping(rows):
    """Trial rows must arrive grouped by (scheme, budget), seeds ascending."""
    finished = set()
    current, prev_seed = None, None
    for r in rows:
        key = (r.scheme, r.p_hris)
        if key != current:
            if key in finished:
                raise ValueError(
                    f"results not sorted: group {key} appears twice"
                )
            if current is not None:
                finished.add(current)
            current, prev_seed = key, None
        if prev_seed is not None and r.seed <= prev_seed:
            raise ValueError(
                f"results not sorted: seeds out of order in group {key}"
            )
        prev_seed = r.seed


PLOT_FIELDS = ("budget_dbm", "scheme", "mean_mse", "ci_low", "ci_high")


def cmd_plotdata(args):
    path = Path(args.results)
    if not path.exists():
        raise ValueError(f"results file {path} does not exist")
    digest, rows = _read_results(path)
    if not rows:
        raise ValueError(f"{path} contains no data rows")
    _check_grouping(rows)
    summary = bench.summarize(rows)     # sorted by (scheme, budget)
    out = Path(args.out) if args.out else path.with_name(
        "plot_mse_vs_budget.csv"
    )
    _write_csv(out, digest, PLOT_FIELDS, [
        [_fmt(watts_to_dbm(row["p_hris"])), row["scheme"],
         _fmt(row["mean_mse"]), _fmt(row["ci_low"]), _fmt(row["ci_high"])]
        for row in summary
    ])
    print(f"wrote {out} ({len(summary)} rows)")
    return 0


# ----------------------------------------------------------- bruteforce

def cmd_bruteforce(args):
    config = parse_config(args.config, args.override)
    params = dataclasses.replace(
        config.system, p_hris=config.p_hris_grid_watts[0]
    )
    print(f"enumerating {bench.config_count(params)} configurations "
          f"per seed at p_hris={config.p_hris_grid_dbm[0]:+.1f} dBm")
    rows = []
    for seed in config.seeds:
        channels = gen_channel_set(config.geometry, config.fading, params,
                                   seed)
        sol = bench.brute_force(params, channels)
        act = int(sol.hris.gamma.sum())
        print(f"seed {seed}: mse={sol.mse:.8g} mu={sol.hris.mu:.6g} "
              f"active={act}/{params.n} "
              f"antennas={sol.antenna.selected.tolist()} "
              f"phases={sol.hris.phase_idx.tolist()}")
        rows.append([_fmt(v) for v in (
            seed, params.p_hris, sol.mse, sol.hris_power, act, sol.hris.mu,
        )])
    if args.out:
        _write_csv(Path(args.out), config.manifest_hash(),
                   ("seed", "p_hris", "mse", "hris_power", "n_active", "mu"),
                   rows)
        print(f"wrote {args.out}")
    return 0


# ------------------------------------------------------------- validate

def _random_design(params, channels, rng):
    """A random feasible discrete design with its MMSE receiver."""
    weights = params.p_tilde * np.abs(channels.h_r) ** 2 + params.sigma_a2
    gamma = (rng.random(params.n) < 0.5).astype(int)
    cap = params.p_hris / params.mu_min ** 2
    for i in rng.permutation(params.n):
        if float(gamma @ weights) <= cap:
            break
        gamma[i] = 0
    mass = float(gamma @ weights)
    if mass > 0.0:
        mu = float(rng.uniform(params.mu_min,
                               math.sqrt(params.p_hris / mass)))
    else:
        mu = 1.0
    hris = HrisConfig(
        phase_idx=rng.integers(0, params.n_phases, params.n),
        gamma=gamma, mu=mu, b_bits=params.b_bits,
    )
    sel = np.sort(rng.permutation(params.n_r)[:params.l])
    antenna = AntennaSelection(sel)
    omega_mat, h = model.omega_and_h(
        channels, gamma.astype(float), mu, hris.theta, params
    )
    w = sub.mmse_receiver(antenna, omega_mat, h, params)
    mse = model.mse_analytic(w, antenna, channels, hris, params)
    return Solution(antenna=antenna, hris=hris, w=w, mse=mse,
                    hris_power=model.hris_power(hris, channels, params))


def _suite_analytic():
    """Analytic MSE against straight signal simulation."""
    params = SystemParams(n_r=8, l=3, n=8, b_bits=2, p=0.01, k_t=0.08,
                          k_r=0.08, sigma_a2=1e-11, sigma_b2=1e-11,
                          p_hris=0.01)
    geom, fade = Geometry(), FadingParams()
    worst = 0.0
    for seed in range(5):
        channels = gen_channel_set(geom, fade, params, seed)
        sol = _random_design(params, channels, substream(seed, "init"))
        emp = model.simulate_empirical_mse(
            sol, channels, params, 200_000, substream(seed, "signal")
        )
        worst = max(worst, abs(sol.mse - emp) / sol.mse)
    return worst <= 0.01, [
        f"max |analytic - empirical| / analytic = {worst:.4%} "
        f"over 5 random designs, 2e5 symbols (tolerance 1%)"
    ]


def _suite_phasenoise():
    """Phase-noise averaging identity and the attenuation constant."""
    rng = np.random.default_rng(7)
    lines = []
    worst = 0.0
    for b in (1, 2, 3):
        a_mat = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
        half = np.pi / 2 ** b
        phi = rng.uniform(-half, half, size=(200_000, 8))
        e = np.exp(1j * phi)
        mean_outer = np.einsum("si,sj->ij", e, e.conj()) / phi.shape[0]
        eps = math.sin(half) / half
        target = eps ** 2 * a_mat + (1.0 - eps ** 2) * dtilde(a_mat)
        err = np.max(np.abs(mean_outer * a_mat - target)) / np.max(
            np.abs(a_mat)
        )
        worst = max(worst, err)
    lines.append(f"max entrywise deviation of E[phase-noise average] = "
                 f"{worst:.4%} over B in {{1,2,3}} (tolerance 1%)")
    eps2 = math.sin(math.pi / 4) / (math.pi / 4)
    drift = abs(eps2 - 0.900316)
    lines.append(f"attenuation constant at B=2: {eps2:.6f} "
                 f"(|delta| = {drift:.2e}, tolerance 1e-6)")
    return worst <= 0.01 and drift <= 1e-6, lines


def _restriction_spread(samples):
    """Max spread of (model value - restriction value) across block settings."""
    offsets = [f - r for f, r in samples]
    scale = max(1.0, max(abs(f) for f, _ in samples))
    return (max(offsets) - min(offsets)) / scale


def _suite_decomposition():
    """Each QP coefficient builder against the objective it restricts."""
    params = SystemParams(n_r=6, l=2, n=5, b_bits=2, p=0.01, k_t=0.08,
                          k_r=0.08, sigma_a2=1e-11, sigma_b2=1e-11,
                          p_hris=0.01)
    geom, fade = Geometry(), FadingParams()
    tol = 1e-9
    worst = {"gain": 0.0, "amp": 0.0, "mode": 0.0, "antenna": 0.0,
             "phase": 0.0, "lift": 0.0}
    for seed in range(3):
        channels = gen_channel_set(geom, fade, params, seed)
        rng = substream(seed, "init")
        sel = np.sort(rng.permutation(params.n_r)[:params.l])
        antenna = AntennaSelection(sel)
        a_mat = antenna.matrix(params.n_r)
        w = rng.standard_normal(params.l) + 1j * rng.standard_normal(params.l)
        theta = np.exp(2j * np.pi * rng.random(params.n))
        gamma0 = rng.random(params.n)
        mu0 = float(rng.uniform(1.0, 3.0))

        def f_model(gamma, mu, th, a=a_mat, wv=w):
            return model.mse_relaxed(wv, a, channels, gamma, mu, th, params)

        k_mat, k_vec = sub.build_K_k(channels, theta, params, w, antenna)
        cores = sub.iteration_cores(channels, params, w, antenna)
        d_gxg = cores.d_gxg

        def gain_restr(gamma, mu):
            omega = (mu - 1.0) * gamma + 1.0
            amp = mu * gamma
            return float(
                np.real(omega @ k_mat @ omega) + 2.0 * np.real(omega @ k_vec)
                + params.sigma_a2 * float(amp ** 2 @ d_gxg)
            )

        pairs = [(gamma0, mu0)] + [
            (rng.random(params.n), float(rng.uniform(1.0, 3.0)))
            for _ in range(2)
        ]
        worst["gain"] = max(worst["gain"], _restriction_spread(
            [(f_model(g, m, theta), gain_restr(g, m)) for g, m in pairs]
        ))

        a_quad, b_lin, _ = sub.amp_coeffs(
            gamma0, k_mat, k_vec, d_gxg, channels, params
        )
        worst["amp"] = max(worst["amp"], _restriction_spread(
            [(f_model(gamma0, m, theta), a_quad * m ** 2 + 2 * b_lin * m)
             for m in (1.0, 1.7, 2.9)]
        ))

        e1, e_lin, e2 = sub.build_mode_qp(
            channels, mu0, k_mat, k_vec, d_gxg, params
        )
        gs = [gamma0, rng.random(params.n), rng.random(params.n)]
        worst["mode"] = max(worst["mode"], _restriction_spread(
            [(f_model(g, mu0, theta),
              float(np.real(g @ e1 @ g)) + float(g @ e_lin)) for g in gs]
        ))

        omega_mat, h_eff = model.omega_and_h(
            channels, gamma0, mu0, theta, params
        )
        m_mat, m_vec = sub.build_antenna_qp(w, omega_mat, h_eff, params)
        for _ in range(3):
            a_rand = rng.standard_normal((params.l, params.n_r))
            direct = model.mse_relaxed(
                w, a_rand, channels, gamma0, mu0, theta, params
            )
            a_stacked = a_rand.reshape(-1)
            restr = (
                float(np.real(a_stacked @ m_mat @ a_stacked))
                - 2.0 * float(np.real(a_stacked @ m_vec))
                + params.sigma_b2_tilde * float(np.real(w.conj() @ w)) + 1.0
            )
            worst["antenna"] = max(
                worst["antenna"],
                abs(direct - restr) / max(1.0, abs(direct)),
            )

        omega_vec = (mu0 - 1.0) * gamma0 + 1.0
        n_mat, n_vec, n_lift, n_lift_vec = sub.build_phase_qp(
            channels, omega_vec, params, w, antenna, lift=True
        )

        def phase_restr(th):
            return float(np.real(th.conj() @ n_mat @ th)
                         + 2.0 * np.real(th.conj() @ n_vec))

        thetas = [theta] + [
            np.exp(2j * np.pi * rng.random(params.n)) for _ in range(2)
        ]
        worst["phase"] = max(worst["phase"], _restriction_spread(
            [(f_model(gamma0, mu0, th), phase_restr(th)) for th in thetas]
        ))

        # one-hot lift must agree with the unlifted value exactly
        alphabet = sub.phase_alphabet(params.b_bits)
        idx = rng.integers(0, params.n_phases, params.n)
        z_mat = np.zeros((params.n, params.n_phases))
        z_mat[np.arange(params.n), idx] = 1.0
        z = z_mat.reshape(-1)
        lifted = (float(np.real(z @ n_lift @ z))
                  + 2.0 * float(np.real(z @ n_lift_vec)))
        unlifted = phase_restr(alphabet[idx])
        worst["lift"] = max(
            worst["lift"], abs(lifted - unlifted) / max(1.0, abs(unlifted))
        )

    lines = [
        f"{name} restriction: max relative deviation {value:.2e} "
        f"(tolerance 1e-9)"
        for name, value in worst.items()
    ]
    return all(v <= tol for v in worst.values()), lines


def _suite_bruteforce():
    """Full optimizer against exhaustive enumeration on tiny instances."""
    params = SystemParams(n_r=4, l=2, n=3, b_bits=1, p=0.01, k_t=0.08,
                          k_r=0.08, sigma_a2=1e-11, sigma_b2=1e-11,
                          p_hris=0.01)
    geom, fade = Geometry(), FadingParams()
    lines, ok = [], True
    for seed in (0, 1, 2):
        channels = gen_channel_set(geom, fade, params, seed)
        ref = bench.brute_force(params, channels)
        try:
            res = run(params, channels, options=PebcdOptions())
        except ConvergenceError as err:
            res = err
        gap = (res.solution.mse - ref.mse) / ref.mse
        lines.append(f"seed {seed}: optimizer {res.solution.mse:.8f} vs "
                     f"exhaustive {ref.mse:.8f} (gap {gap:+.2%})")
        ok = ok and (-1e-9 <= gap * ref.mse) and (gap <= 0.10)
    lines.append("pass requires every gap in [-1e-9, +10%]")
    return ok, lines


SUITES = {
    "analytic": _suite_analytic,
    "phasenoise": _suite_phasenoise,
    "decomposition": _suite_decomposition,
    "bruteforce": _suite_bruteforce,
}


def cmd_validate(args):
    if args.config or args.override:
        parse_config(args.config, args.override)   # surface config problems
    names = args.suite or list(SUITES)
    all_ok = True
    for name in names:
        passed, lines = SUITES[name]()
        all_ok = all_ok and passed
        print(f"suite {name}: {'PASS' if passed else 'FAIL'}")
        for line in lines:
            print(f"    {line}")
    return 0 if all_ok else 1


# ----------------------------------------------------------------- main

def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="hrisopt",
        description="Hybrid-RIS uplink design toolkit: sweeps, validation, "
                    "plot data, exhaustive search.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    def add_config_flags(p):
        p.add_argument("--config", default=None,
                       help="preset name (paper, desk, tiny) or config file")
        p.add_argument("--override", action="append", default=[],
                       metavar="KEY=VALUE",
                       help="dotted config override, e.g. system.n_r=16")

    p_sweep = commands.add_parser(
        "sweep", help="run the Monte-Carlo benchmark sweep")
    add_config_flags(p_sweep)
    p_sweep.add_argument("--threads", type=int, default=1)
    p_sweep.add_argument("--out", default=None,
                         help="output directory (default: config output_dir)")
    p_sweep.set_defaults(func=cmd_sweep)

    p_validate = commands.add_parser(
        "validate", help="run the model validation suites")
    add_config_flags(p_validate)
    p_validate.add_argument("--suite", action="append", default=None,
                            choices=sorted(SUITES),
                            help="run only this suite (repeatable)")
    p_validate.set_defaults(func=cmd_validate)

    p_plot = commands.add_parser(
        "plotdata", help="aggregate a results CSV into plot-ready series")
    p_plot.add_argument("results", help="path to a sweep results.csv")
    p_plot.add_argument("--out", default=None)
    p_plot.set_defaults(func=cmd_plotdata)

    p_bf = commands.add_parser(
        "bruteforce", help="exhaustively enumerate tiny instances")
    add_config_flags(p_bf)
    p_bf.add_argument("--out", default=None, help="optional CSV path")
    p_bf.set_defaults(func=cmd_bruteforce)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(err, file=sys.stderr)
        return 2
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
