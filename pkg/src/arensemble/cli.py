"""Command-line entry point: ``arensemble <command> [flags]``.

Commands
--------
synth     write a synthetic panel CSV
backtest  select, refit and evaluate ensemblers on a panel CSV
campaign  seed-replicated synthetic experiments
verify    numerical check of the worst-case / regularization identity
report    summarize campaign or backtest CSVs, optionally as an SVG chart

Every command that writes files puts a ``manifest.json`` next to them.

Config files
------------
``--config FILE`` reads a TOML file.  Top-level keys apply to every command,
a table named after the command (``[backtest]``) overrides them, and flags
given on the command line override both.  Keys use the flag names with
``-`` or ``_``; list-valued flags take TOML arrays or comma strings::

    seed = 1
    [campaign]
    vary = "drift"
    values = [0.0, 0.5]
    seeds = 30

Exit codes: 0 success, 2 usage, 3 data, 4 numerical, 5 verification.
"""

import argparse
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .exceptions import (
    EnsembleError,
    LeakageError,
    MapeGuardError,
    NumericalError,
    PanelError,
    VerificationError,
)
from .metrics import REPORT_FIELDS
from .panel import PanelSchema, SplitSpec, load_panel
from .synth import DRIFT_KINDS, SynthConfig, generate

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL, EXIT_VERIFY = 0, 2, 3, 4, 5

log = logging.getLogger("arensemble")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# value parsing


def _floats(text):
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _ints(text):
    vals = _floats(text)
    if any(v != int(v) for v in vals):
        raise UsageError(f"expected integers, got {text!r}")
    return tuple(int(v) for v in vals)


def _names(text):
    if isinstance(text, (list, tuple)):
        return tuple(str(v) for v in text)
    return tuple(v.strip() for v in str(text).split(",") if v.strip())


def _seeds(args):
    """Explicit seed list from ``--seed`` or ``--seeds`` (count or list)."""
    if args.seeds is not None:
        vals = _ints(args.seeds)
        if len(vals) == 1:
            start = int(args.seed) if args.seed is not None else 0
            return tuple(range(start, start + vals[0]))
        return vals
    if args.seed is not None:
        return (int(args.seed),)
    raise UsageError("a seed is required: pass --seed S or --seeds N")


# ---------------------------------------------------------------------------
# config and manifest


def _load_config(path):
    if sys.version_info >= (3, 11):
        import tomllib
    else:
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"invalid config file {path}: {exc}") from None


def _merge_config(args, parser_defaults, config):
    """Fill arguments left at their defaults from the config mapping."""
    flat = {k: v for k, v in config.items() if not isinstance(v, dict)}
    flat.update(config.get(args.command, {}))
    for key, value in flat.items():
        dest = key.replace("-", "_")
        if dest not in parser_defaults:
            raise UsageError(f"unknown config key {key!r} for {args.command}")
        if getattr(args, dest) == parser_defaults[dest]:
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            setattr(args, dest, value)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(outdir, args, outputs, inputs=(), seeds=None, extra=None):
    config = {k: v for k, v in sorted(vars(args).items())
              if k not in ("func", "config", "verbose")}
    manifest = {
        "command": args.command,
        "config": config,
        "seeds": list(seeds) if seeds is not None else None,
        "code_version": __version__,
        "inputs": {os.path.basename(p): _sha256(p) for p in inputs},
        "outputs": sorted(os.path.basename(p) for p in outputs),
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(outdir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return path


def _outdir(args):
    if not args.out:
        raise UsageError("--out DIR is required")
    os.makedirs(args.out, exist_ok=True)
    return args.out


# ---------------------------------------------------------------------------
# shared flag groups


def _add_synth_flags(p):
    g = p.add_argument_group("synthetic data")
    g.add_argument("--T", type=int, default=4000, help="number of time steps")
    g.add_argument("--m", type=int, default=10, help="number of ensemble members")
    g.add_argument("--drift", choices=DRIFT_KINDS, default="none")
    g.add_argument("--sigma-drift", type=float, default=0.5)
    g.add_argument("--s-drift", type=float, default=0.5)
    g.add_argument("--p-drift", type=float, default=0.5)
    g.add_argument("--noise-sd", type=float, default=0.1)
    g.add_argument("--period", type=float, default=500.0)


def _synth_config(args, seed):
    return SynthConfig(T=args.T, m=args.m, drift=args.drift, sigma_drift=args.sigma_drift,
                       s_drift=args.s_drift, p_drift=args.p_drift, noise_sd=args.noise_sd,
                       period=args.period, seed=seed)


def _add_grid_flags(p, synthetic=False):
    g = p.add_argument_group("hyperparameter grid")
    g.add_argument("--lam", default=None, help="comma list of ridge / adaptive ridge weights")
    g.add_argument("--tau", default=None, help="comma list of adaptive windows")
    g.add_argument("--exp3-window", default=None, help="comma list of Exp3 regret windows")
    g.add_argument("--pa-epsilon", default=None, help="comma list of PA margins")
    g.add_argument("--metric", default="mae", help="validation metric")
    g.add_argument("--mode", choices=("faithful", "squared"), default="faithful")
    g.add_argument("--standardize", action="store_true",
                   help="rescale by training-target mean and std")
    g.add_argument("--allow-underdetermined", action="store_true",
                   help="allow fewer training rows than adaptive rule parameters")
    g.add_argument("--train-frac", type=float, default=0.5)
    g.add_argument("--val-frac", type=float, default=0.25)
    p.set_defaults(synthetic_grid=synthetic)


def _grid(args):
    from .pipeline import GridSpec

    base = GridSpec.synthetic() if args.synthetic_grid else GridSpec()
    changes = {"metric": args.metric, "mode": args.mode, "standardize": bool(args.standardize),
               "allow_underdetermined": bool(args.allow_underdetermined)}
    if args.lam is not None:
        changes["lam"] = _floats(args.lam)
    if args.tau is not None:
        changes["tau"] = _ints(args.tau)
    if args.exp3_window is not None:
        changes["exp3_window"] = _ints(args.exp3_window)
    if args.pa_epsilon is not None:
        changes["pa_epsilon"] = _floats(args.pa_epsilon)
    return base.replace(**changes)


def _split(args):
    return SplitSpec(train_frac=args.train_frac, val_frac=args.val_frac)


def _write_rows(path, header, rows):
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args):
    seeds = _seeds(args)
    if len(seeds) != 1:
        raise UsageError("synth takes a single --seed")
    outdir = _outdir(args)
    panel = generate(_synth_config(args, seeds[0]))
    path = os.path.join(outdir, "panel.csv")
    panel.to_csv(path)
    _write_manifest(outdir, args, [path], seeds=seeds)
    print(f"wrote {panel.n_rows} rows x {panel.n_members} members to {path}")
    return EXIT_OK


def _read_panel(args):
    schema = PanelSchema(
        timestamp=args.timestamp_col, target=args.target_col,
        members=list(_names(args.member_cols)) if args.member_cols else None,
        series=args.series_col,
    )
    try:
        return load_panel(args.panel, schema, lead_time=args.lead_time)
    except FileNotFoundError:
        raise PanelError(f"panel file not found: {args.panel}") from None


def cmd_backtest(args):
    from .pipeline import METHOD_LABELS, check_methods, run_algorithm1
    from .panel import AccessLog

    if not args.panel:
        raise UsageError("--panel FILE is required")
    methods = check_methods(_names(args.methods))
    grid = _grid(args)
    panel = _read_panel(args)
    outdir = _outdir(args)
    access = AccessLog()
    results = {}
    for m in methods:
        results[m] = run_algorithm1(panel, grid, m, split=_split(args), access_log=access,
                                    emit_weights=args.emit_weights and m in ("exp3", "pa", "adaptive"))
    outputs = []
    rows = [[m] + results[m].report.csv_row() for m in methods]
    path = os.path.join(outdir, "report.csv")
    _write_rows(path, ["method"] + list(REPORT_FIELDS), rows)
    outputs.append(path)
    path = os.path.join(outdir, "chosen_params.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({m: {"params": r.params, "val_score": r.val_score} for m, r in results.items()},
                  fh, indent=2, sort_keys=True)
    outputs.append(path)
    if "adaptive" in results:
        path = os.path.join(outdir, "adaptive_rule.json")
        rule = results["adaptive"].model.rule_
        rule.members = panel.members
        rule.to_json(path)
        outputs.append(path)
    if args.emit_weights:
        _, b2 = _split(args).boundaries(panel.n_rows)
        for m, r in results.items():
            if r.weights is None:
                continue
            path = os.path.join(outdir, f"weights_{m}.csv")
            ts = panel.timestamps[b2:]
            _write_rows(path, ["timestamp"] + list(panel.members),
                        [[int(t)] + [repr(float(v)) for v in w] for t, w in zip(ts, r.weights)])
            outputs.append(path)
    _write_manifest(outdir, args, outputs, inputs=[args.panel])
    _print_table(["method"] + [f for f in REPORT_FIELDS if f != "n_cases"],
                 [[METHOD_LABELS[m]] + [getattr(results[m].report, f) for f in REPORT_FIELDS[:-1]]
                  for m in methods])
    return EXIT_OK


def cmd_campaign(args):
    from .pipeline import ExperimentCampaign, run_campaign, timing_probe

    seeds = _seeds(args)
    if not args.vary:
        raise UsageError("--vary is required")
    if args.values is None:
        raise UsageError("--values is required")
    values = _floats(args.values)
    if args.vary in ("m", "tau", "train_size"):
        values = _ints(args.values)
    outdir = _outdir(args)
    template = _synth_config(args, 0)
    if args.drift == "none" and args.vary in ("drift", "m", "tau", "train_size"):
        template = template.replace(drift="gaussian")
    if args.vary == "p_drift":
        template = template.replace(drift="bernoulli")
    grid = _grid(args)
    campaign = ExperimentCampaign(template=template, vary=args.vary, values=values, seeds=seeds,
                                  methods=_names(args.methods), grid=grid, split=_split(args))

    def progress(done, total):
        log.info("campaign cells done: %d/%d", done, total)

    result = run_campaign(campaign, n_jobs=args.jobs, progress=progress)
    if args.timing:
        result.timing = timing_probe(N_values=(100, 3000), taus=(2, 3, 5, 10), ms=(10,),
                                     seed=seeds[0], mode=args.mode)
    paths = result.write(outdir)
    _write_manifest(outdir, args, list(paths.values()), seeds=seeds,
                    extra={"n_failed": result.n_failed, "campaign": campaign.to_dict()})
    _print_results(result.results, args.metric_report)
    if result.n_failed:
        log.warning("%d of %d runs failed (see raw.csv)", result.n_failed, len(result.raw))
        if not args.allow_partial:
            return EXIT_NUMERICAL
    return EXIT_OK


def _parse_norm_pair(text):
    from .robustcheck import as_order

    parts = _names(text)
    if len(parts) != 2:
        raise UsageError(f"--norms takes RESIDUAL,REGULARIZER, got {text!r}")
    try:
        return as_order(parts[0]), as_order(parts[1])
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_verify(args):
    from .robustcheck import UncertaintySet, as_order, random_instance, verify_equivalence

    seeds = _seeds(args)
    if args.frobenius is not None:
        try:
            p = as_order(args.frobenius)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    else:
        g, h = _parse_norm_pair(args.norms)
    failed = 0
    for seed in seeds:
        rng = np.random.default_rng(seed)
        X, y, beta, lam = random_instance(rng, T=args.T_small, m=args.m_small)
        uset = UncertaintySet.frobenius(p, lam) if args.frobenius is not None else UncertaintySet.induced(h, g, lam)
        rep = verify_equivalence(X, y, beta, uset, n_samples=args.samples, seed=seed)
        line = {"seed": seed, "status": "pass" if rep.passed else "fail", **rep.to_dict()}
        if rep.passed:
            line.pop("violating_delta")
        failed += not rep.passed
        print(json.dumps(line, sort_keys=True))
    return EXIT_VERIFY if failed else EXIT_OK


def _print_table(header, rows):
    cells = [[str(h) for h in header]] + [
        [f"{v:.4f}" if isinstance(v, float) else str(v) for v in r] for r in rows]
    widths = [max(len(c[j]) for c in cells) for j in range(len(header))]
    for i, c in enumerate(cells):
        print("  ".join(s.ljust(w) if j == 0 else s.rjust(w) for j, (s, w) in enumerate(zip(c, widths))))
        if i == 0:
            print("  ".join("-" * w for w in widths))


def _print_results(results, metric):
    values = sorted({r["value"] for r in results})
    methods = list(dict.fromkeys(r["method"] for r in results))
    table = {(r["method"], r["value"]): r[f"{metric}_mean"] for r in results}
    _print_table([f"{metric} (mean)"] + [str(v) for v in values],
                 [[m] + [table.get((m, v), float("nan")) for v in values] for m in methods])


def _read_csv(path):
    import csv

    try:
        with open(path, encoding="utf-8", newline="") as fh:
            return list(csv.DictReader(fh))
    except FileNotFoundError:
        raise PanelError(f"file not found: {path}") from None


def _num(v):
    try:
        return float(v)
    except (TypeError, ValueError):
        return v


def cmd_report(args):
    if not args.results:
        raise UsageError("--results FILE is required")
    rows = [{k: _num(v) for k, v in r.items()} for r in _read_csv(args.results)]
    if not rows:
        raise PanelError(f"{args.results} has no rows")
    metric = args.metric_report
    if f"{metric}_mean" in rows[0]:
        _print_results(rows, metric)
        if args.svg:
            write_svg_chart(rows, metric, args.svg)
            print(f"wrote {args.svg}")
    elif metric in rows[0]:
        _print_table(["method", metric], [[r["method"], r[metric]] for r in rows])
        if args.svg:
            raise UsageError("--svg needs a campaign results.csv")
    else:
        raise PanelError(f"{args.results} has no column for metric {metric!r}")
    return EXIT_OK


def write_svg_chart(rows, metric, path):
    """Mean +- one std per method against the varied value, as a static SVG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    methods = list(dict.fromkeys(r["method"] for r in rows))
    fig, ax = plt.subplots(figsize=(7, 4))
    for m in methods:
        sub = sorted((r for r in rows if r["method"] == m), key=lambda r: r["value"])
        x = np.array([r["value"] for r in sub], dtype=float)
        mu = np.array([r[f"{metric}_mean"] for r in sub], dtype=float)
        sd = np.array([r[f"{metric}_std"] for r in sub], dtype=float)
        ax.plot(x, mu, marker="o", label=m)
        ax.fill_between(x, mu - sd, mu + sd, alpha=0.15)
    ax.set_xlabel(str(rows[0].get("vary", "value")))
    ax.set_ylabel(metric)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = argparse.ArgumentParser(prog="arensemble", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    def common(p):
        p.add_argument("--config", help="TOML file with defaults for this command")
        p.add_argument("--out", help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("synth", help="write a synthetic panel CSV")
    common(p)
    _add_synth_flags(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("backtest", help="select, refit and evaluate ensemblers on a panel")
    common(p)
    p.add_argument("--panel", help="panel CSV file")
    p.add_argument("--methods", default="best,mean,exp3,pa,ridge,adaptive")
    p.add_argument("--timestamp-col", default="timestamp")
    p.add_argument("--target-col", default="target")
    p.add_argument("--series-col", default=None)
    p.add_argument("--member-cols", default=None, help="comma list (default: all other columns)")
    p.add_argument("--lead-time", type=int, default=1)
    p.add_argument("--emit-weights", action="store_true",
                   help="write per-row test weights of the online and adaptive methods")
    _add_grid_flags(p)
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("campaign", help="seed-replicated synthetic experiments")
    common(p)
    _add_synth_flags(p)
    _add_grid_flags(p, synthetic=True)
    p.add_argument("--vary", choices=("drift", "m", "tau", "train_size", "p_drift", "none"))
    p.add_argument("--values", default=None, help="comma list of values for the varied setting")
    p.add_argument("--seed", type=int, default=None, help="single seed, or first seed with --seeds N")
    p.add_argument("--seeds", default=None, help="seed count N or comma list")
    p.add_argument("--methods", default="best,mean,exp3,pa,ridge,adaptive")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--timing", action="store_true", help="also run the fit-time probe")
    p.add_argument("--allow-partial", action="store_true",
                   help="exit 0 even when some runs failed")
    p.add_argument("--metric-report", default="rmse", help="metric shown in the summary")
    p.set_defaults(func=cmd_campaign)

    p = sub.add_parser("verify", help="check the worst-case / regularization identity")
    p.add_argument("--config")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--norms", default="l2,l2", help="RESIDUAL,REGULARIZER norms (induced set)")
    p.add_argument("--frobenius", default=None, help="use the Frobenius-p set instead")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--seeds", default=None, help="seed count N or comma list")
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--T-small", type=int, default=None, help="rows per instance (default random 1..6)")
    p.add_argument("--m-small", type=int, default=None, help="members per instance (default random 1..3)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", help="summarize a results CSV")
    p.add_argument("--config")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--results", help="campaign results.csv or backtest report.csv")
    p.add_argument("--metric-report", "--metric", dest="metric_report", default="rmse")
    p.add_argument("--svg", default=None, help="write a line chart to this SVG file")
    p.set_defaults(func=cmd_report)
    return parser


def _subparser_defaults(parser, command):
    for action in parser._subparsers._group_actions:
        sp = action.choices.get(command)
        if sp is not None:
            return {a.dest: a.default for a in sp._actions if a.dest != "help"}
    return {}


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            _merge_config(args, _subparser_defaults(parser, args.command), _load_config(args.config))
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PanelError, MapeGuardError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (VerificationError, LeakageError) as exc:
        print(f"verification error: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except (NumericalError, EnsembleError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
