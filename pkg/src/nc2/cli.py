"""Command-line entry point: ``nc2 {bench,calib-sweep,converge,track,synth}``.

Parameters come from built-in defaults, then an optional ``key=value``
configuration file (``--config``), then ``--set key=value`` pairs, then the
dedicated flags. Later sources win.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
from dataclasses import fields
from pathlib import Path

from . import __version__
from .bench import (
    SUMMARY_COLUMNS,
    TRIAL_COLUMNS,
    csv_text,
    run_suite,
    summary_rows,
    trial_rows,
)
from .errors import ConfigurationError, NC2Error
from .experiments import (
    CONVERGE_COLUMNS,
    SWEEP_BURN_IN,
    SWEEP_CELL_COLUMNS,
    SWEEP_SERIES_COLUMNS,
    calib_sweep,
    converge,
)
from .filters import FILTER_MODES, TRACE_COLUMNS, NC2Config, trace_row
from .synthesis import SynthesisConfig, SystemClass, generate_trial
from .tracking import TRACK_CONFIG, Tracker, kitti_lines, read_detections, run_tracker, tracks_csv
from .tracking.io import detections_csv
from .tracking.scenario import make_scenario

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_IO = 3

log = logging.getLogger("nc2")

_NC2_KEYS = {f.name: f for f in fields(NC2Config)}
_SYNTH_KEYS = {
    f.name: f for f in fields(SynthesisConfig)
    if f.name not in ("system_class", "l_trials", "seed", "pole_range", "unobservable_pole_range")
}
# Short names accepted in configuration files and --set.
_ALIASES = {"class": "system_class", "L": "l_trials", "T_m": "t_m", "T_G": "t_g", "tg": "t_g",
            "N_cal": "n_cal"}
VALID_KEYS = sorted(set(_NC2_KEYS) | set(_SYNTH_KEYS) | {"class", "L", "seed"})


class UsageError(Exception):
    pass


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _convert(key: str, text: str):
    if key == "system_class":
        try:
            return SystemClass(text.strip()).value
        except ValueError:
            raise ValueError(f"class must be one of {[c.value for c in SystemClass]}") from None
    if key in ("l_trials", "seed"):
        return int(text)
    f = _NC2_KEYS.get(key) or _SYNTH_KEYS.get(key)
    default = f.default
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float) or default is None:
        return int(text) if default is None else float(text)
    return text


def parse_overrides(pairs, source: str = "--set") -> dict:
    """Turn ``key=value`` strings into a typed dict; unknown keys are rejected."""
    out = {}
    for raw in pairs:
        if "=" not in raw:
            raise UsageError(f"{source}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in raw.split("=", 1))
        if key not in VALID_KEYS and key not in _ALIASES:
            raise UsageError(
                f"{source}: unknown key {key!r}; valid keys: {', '.join(VALID_KEYS)}"
            )
        key = _ALIASES.get(key, key)
        try:
            out[key] = _convert(key, value)
        except ValueError as exc:
            raise UsageError(f"{source}: bad value for {key}: {exc}") from None
    return out


def read_config_file(path) -> dict:
    """Parse a plain ``key=value`` file; ``#`` starts a comment."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read config file {path}: {exc.strerror}") from exc
    pairs = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            pairs.append(line)
    return parse_overrides(pairs, source=str(path))


def write_atomic(path, text: str) -> None:
    """Write ``text`` to a temporary file next to ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _resolve(args) -> dict:
    params = {}
    if args.config:
        params.update(read_config_file(args.config))
    params.update(parse_overrides(args.set or []))
    for flag, key in (("seed", "seed"), ("sigma", "sigma"), ("tg", "t_g"),
                      ("steps", "t_m"), ("trials", "l_trials"), ("system_class", "system_class")):
        value = getattr(args, flag, None)
        if value is not None:
            params[key] = value
    if getattr(args, "paper_generator", False):
        params["paper_generator"] = True
    return params


def _nc2_config(params: dict, base: dict | None = None) -> NC2Config:
    kw = dict(base or {})
    kw.update({k: v for k, v in params.items() if k in _NC2_KEYS})
    try:
        return NC2Config(**kw)
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from None


def _synth_config(params: dict, default_seed: int = 0) -> SynthesisConfig:
    kw = {k: v for k, v in params.items() if k in _SYNTH_KEYS}
    kw["seed"] = params.get("seed", default_seed)
    for k in ("system_class", "l_trials"):
        if k in params:
            kw[k] = params[k]
    try:
        return SynthesisConfig(**kw)
    except (ConfigurationError, TypeError) as exc:
        raise UsageError(str(exc)) from None


def _out_dir(args) -> Path:
    return Path(args.out_dir)


def cmd_bench(args) -> int:
    params = _resolve(args)
    cfg = _synth_config(params)
    config = _nc2_config(params)
    modes = tuple(m.strip() for m in args.modes.split(",") if m.strip())
    bad = [m for m in modes if m not in FILTER_MODES]
    if bad or not modes:
        raise UsageError(f"--modes: unknown {bad}; valid: {', '.join(FILTER_MODES)}")
    trace_rows = [] if args.trace else None

    def on_step(j, mode, out):
        if mode == "nc2":
            trace_rows.append([j] + trace_row(out))

    suite = run_suite(cfg, modes, config, on_step=on_step if args.trace else None)
    out = _out_dir(args)
    summaries = suite.summaries()
    write_atomic(out / "suite_summary.csv",
                 csv_text(SUMMARY_COLUMNS, summary_rows(summaries.values())))
    write_atomic(out / "trials.csv", csv_text(TRIAL_COLUMNS, trial_rows(suite)))
    if args.trace:
        write_atomic(out / "trace.csv", csv_text(("trial",) + TRACE_COLUMNS, trace_rows))
    for s in summaries.values():
        print(f"{s.system_class} {s.mode}: L={s.n_trials} log10 dQ={s.log_mean_q:.3f} "
              f"dR={s.log_mean_r:.3f} Pd={100 * s.divergence_q:.1f}%/{100 * s.divergence_r:.1f}% "
              f"Pl={100 * s.inability_q:.1f}%")
    if suite.skipped:
        print(f"skipped trials (no system accepted): {suite.skipped}")
    return EXIT_OK


def _parse_grid(text: str) -> tuple[float, ...]:
    try:
        grid = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"--grid must be comma-separated numbers, got {text!r}") from None
    if not grid or any(g <= 0 for g in grid):
        raise UsageError("--grid values must be positive")
    return grid


def cmd_calib_sweep(args) -> int:
    params = _resolve(args)
    cfg = _synth_config(params, default_seed=11)
    steps = params.get("t_m", 900)
    if steps <= args.burn_in:
        raise UsageError("--steps must exceed --burn-in")
    n_cal = params.get("n_cal", 60)
    warmup = params.get("warmup", 30)
    res = calib_sweep(args.systems, _parse_grid(args.grid), steps, args.burn_in, cfg.seed,
                      n_cal, warmup, cfg)
    out = _out_dir(args)
    write_atomic(out / "sweep_series.csv", csv_text(SWEEP_SERIES_COLUMNS, res.series_rows()))
    write_atomic(out / "sweep_cells.csv", csv_text(SWEEP_CELL_COLUMNS, res.cell_rows()))
    print(f"calib-sweep: {args.systems} systems, E_A sign match {res.e_a_accuracy():.3f}, "
          f"E_G sign match {res.e_g_accuracy():.3f}, balanced median |E_G| "
          f"{res.balanced_abs_e_g():.4f}")
    return EXIT_OK


def cmd_converge(args) -> int:
    params = _resolve(args)
    cfg = _synth_config(params)
    config = _nc2_config(params)
    traces, results = converge(cfg, config=config)
    rows = [row for t in traces for row in t.rows()]
    out = _out_dir(args)
    write_atomic(out / "converge.csv", csv_text(CONVERGE_COLUMNS, rows))
    summary = [
        [r["nc2"].trial, f"{r['nc2'].r_ratio_final:.6g}", f"{r['nc2'].delta_r:.6g}",
         f"{r['uncorrected'].delta_r:.6g}"]
        for r in results
    ]
    write_atomic(out / "converge_summary.csv",
                 csv_text(("trial", "r_ratio_final", "nc2_delta_r", "uncorrected_delta_r"),
                          summary))
    n = len(results)
    in_band = sum(0.5 <= r["nc2"].r_ratio_final <= 2.0 for r in results)
    better = sum(r["nc2"].delta_r < r["uncorrected"].delta_r for r in results)
    print(f"converge {cfg.system_class.value}: {n} trials, final R ratio in [0.5, 2] "
          f"for {in_band}, nc2 dR below uncorrected for {better}")
    return EXIT_OK


def cmd_track(args) -> int:
    params = _resolve(args)
    config = _nc2_config(params, TRACK_CONFIG)
    try:
        detections = read_detections(args.detections)
    except OSError as exc:
        raise OSError(f"cannot read detections {args.detections}: {exc.strerror}") from exc
    tracker, records = run_tracker(detections, Tracker(config))
    write_atomic(args.out, tracks_csv(records))
    if args.kitti:
        write_atomic(args.kitti, "".join(line + "\n" for line in kitti_lines(records)))
    print(f"track: {len(detections)} detections, {len({r.track_id for r in records})} "
          f"confirmed tracks, {len(records)} rows")
    return EXIT_OK


def cmd_synth(args) -> int:
    params = _resolve(args)
    out = _out_dir(args)
    if args.scenario:
        scn = make_scenario(params.get("seed", 0))
        write_atomic(out / "detections.csv", detections_csv(scn.detections))
        print(f"synth: scenario with {len(scn.detections)} detections")
        return EXIT_OK
    cfg = _synth_config(params)
    out.mkdir(parents=True, exist_ok=True)
    for j in range(cfg.l_trials):
        data = generate_trial(cfg, j)
        final = out / f"trial_{j:04d}.npz"
        fd, tmp = tempfile.mkstemp(dir=out, prefix=f".{final.name}.", suffix=".npz")
        os.close(fd)
        try:
            data.save(tmp)
            os.replace(tmp, final)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    print(f"synth: wrote {cfg.l_trials} {cfg.system_class.value} trials to {out}")
    return EXIT_OK


def _common(p: argparse.ArgumentParser, seed_default: int = 0) -> None:
    p.add_argument("--seed", type=int, default=None,
                   help=f"master seed; every random stream derives from it (default {seed_default})")
    p.add_argument("--out-dir", default=".", help="output directory (default: current)")
    p.add_argument("--config", help="plain-text key=value file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any parameter; repeatable")
    p.add_argument("--sigma", type=float, default=None,
                   help=f"correction gain (default {NC2Config.sigma})")
    p.add_argument("--tg", type=float, default=None,
                   help=f"Gaussian deadband (default {NC2Config.t_g})")


def _synthesis_flags(p: argparse.ArgumentParser, trials_default: int, steps_default: int) -> None:
    p.add_argument("--class", dest="system_class", choices=[c.value for c in SystemClass],
                   default=None, help="system class (default ob-equal)")
    p.add_argument("--trials", type=int, default=None,
                   help=f"number of Monte Carlo trials (default {trials_default})")
    p.add_argument("--steps", type=int, default=None,
                   help=f"time steps per trial (default {steps_default})")
    p.add_argument("--paper-generator", action="store_true",
                   help="draw phi and H with the literal rounded power-law entries")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nc2",
        description="Adaptive Kalman filtering with noise-intensity calibration.",
        epilog=f"Keys accepted by --set and --config: {', '.join(VALID_KEYS)}",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bench", help="Monte Carlo benchmark suite")
    _common(p)
    _synthesis_flags(p, SynthesisConfig.l_trials, SynthesisConfig.t_m)
    p.add_argument("--modes", default=",".join(FILTER_MODES),
                   help=f"comma-separated filter modes (default {','.join(FILTER_MODES)})")
    p.add_argument("--trace", action="store_true",
                   help="also write per-step nc2 diagnostics to trace.csv")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("calib-sweep", help="calibrator values on a grid of mis-scaled noise")
    _common(p, seed_default=11)
    _synthesis_flags(p, 20, 900)
    p.add_argument("--grid", default="0.1,1,10", help="noise scale factors (default 0.1,1,10)")
    p.add_argument("--systems", type=int, default=20, help="number of random systems (default 20)")
    p.add_argument("--burn-in", type=int, default=SWEEP_BURN_IN,
                   help=f"steps skipped before recording (default {SWEEP_BURN_IN})")
    p.set_defaults(func=cmd_calib_sweep)

    p = sub.add_parser("converge", help="per-step intensity traces of the adaptive filter")
    _common(p)
    _synthesis_flags(p, SynthesisConfig.l_trials, SynthesisConfig.t_m)
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("track", help="run the multi-object tracker on a detection CSV")
    _common(p)
    p.add_argument("--detections", required=True, help="input detection CSV")
    p.add_argument("--out", required=True, help="output track CSV")
    p.add_argument("--kitti", help="also write KITTI-style label lines to this file")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("synth", help="write benchmark trials (.npz) or a tracking scenario")
    _common(p)
    _synthesis_flags(p, SynthesisConfig.l_trials, SynthesisConfig.t_m)
    p.add_argument("--scenario", action="store_true",
                   help="write detections.csv of the synthetic tracking scene instead")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"nc2 {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigurationError as exc:
        # malformed input files (e.g. a bad detection CSV) are input errors
        print(f"nc2 {args.command}: input error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"nc2 {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NC2Error as exc:
        print(f"nc2 {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
