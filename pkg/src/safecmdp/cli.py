"""
Command line entry point.

    safecmdp run --env media --agent opsrl --episodes 5000 --seeds 5 --delta 0.1 \\
                 --baseline-frac 0.2 --out DIR [--emit-plots] [--k0 fixed:N|adaptive] [--dump-lp]
    safecmdp sweep --env media --fractions 0.1,0.2,0.5 --out DIR
    safecmdp dump-model --env inventory --out model.txt

Every flag can also come from an INI file (``--config run.ini``) with a
``[run]`` section using the flag names as keys and an optional ``[env]``
section of environment overrides. Flags given on the command line win.
"""
from __future__ import annotations

import argparse
import configparser
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .envs import build_env, dump_model
from .harness.experiment import RunConfig, aggregate, baseline_sweep, reference, run_experiment
from .harness.report import emit_outputs, preflight, write_csv

log = logging.getLogger("safecmdp")

DEFAULTS = {
    "env": "media",
    "agent": "opsrl",
    "episodes": "5000",
    "seeds": "5",
    "delta": "0.1",
    "baseline-frac": "0.2",
    "out": None,
    "emit-plots": "false",
    "k0": "adaptive",
    "dump-lp": "false",
    "bonus-scale": "1.0",
    "ucrl-solver": "evi",
    "workers": "1",
    "fractions": "0.1,0.2,0.5",
}
FLAG_KEYS = tuple(DEFAULTS)


def parse_seeds(text: str) -> tuple[int, ...]:
    """``"5"`` means seeds 0..4; ``"3,7,11"`` lists seeds explicitly."""
    text = str(text).strip()
    if "," in text:
        return tuple(int(s) for s in text.split(",") if s.strip())
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("need at least one seed")
    return tuple(range(n))


def parse_k0(text: str):
    text = str(text).strip().lower()
    if text == "adaptive":
        return "adaptive"
    if text.startswith("fixed:"):
        return int(text.split(":", 1)[1])
    raise argparse.ArgumentTypeError(f"--k0 must be 'adaptive' or 'fixed:N', got {text!r}")


def _bool(text) -> bool:
    return str(text).strip().lower() in ("1", "true", "yes", "on")


def _coerce(value: str):
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI file with a [run] section (and optional [env] overrides)")
    p.add_argument("--env", help="media | inventory | random")
    p.add_argument("--env-opt", action="append", default=[], metavar="KEY=VALUE",
                   help="environment parameter override, repeatable")
    p.add_argument("--episodes", help="planned episodes K (default 5000)")
    p.add_argument("--seeds", help="number of seeds, or comma-separated list")
    p.add_argument("--delta", help="confidence parameter (default 0.1)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--emit-plots", action="store_const", const="true", help="render SVG regret plots")
    p.add_argument("--k0", help="adaptive | fixed:N")
    p.add_argument("--dump-lp", action="store_const", const="true",
                   help="write planning LPs and the first extended LP per agent as text")
    p.add_argument("--bonus-scale", help="multiplier on confidence radii (1.0 = exact)")
    p.add_argument("--ucrl-solver", help="evi | lp")
    p.add_argument("--workers", help="parallel seed workers")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="safecmdp", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="learning runs with exact regret accounting")
    _add_common(run)
    run.add_argument("--agent", help="comma-separated: opsrl, optcmdp, ucrl, baseline")
    run.add_argument("--baseline-frac", help="baseline budget as a fraction of the budget (default 0.2)")
    sweep = sub.add_parser("sweep", help="OPSRL with several baseline budget fractions")
    _add_common(sweep)
    sweep.add_argument("--fractions", help="comma-separated fractions in (0, 1)")
    dump = sub.add_parser("dump-model", help="plain-text matrix dump of an environment")
    dump.add_argument("--env", default="media")
    dump.add_argument("--env-opt", action="append", default=[], metavar="KEY=VALUE")
    dump.add_argument("--out", help="file to write (stdout when omitted)")
    return parser


def resolve(args: argparse.Namespace) -> tuple[dict, dict]:
    """Merge defaults, config file and flags; returns (settings, env overrides)."""
    settings = dict(DEFAULTS)
    env_overrides: dict = {}
    if getattr(args, "config", None):
        ini = configparser.ConfigParser()
        if not ini.read(args.config):
            raise SystemExit(f"cannot read config file {args.config}")
        if ini.has_section("run"):
            for key, value in ini.items("run"):
                key = key.replace("_", "-")
                if key not in FLAG_KEYS:
                    raise SystemExit(f"unknown key {key!r} in [run] of {args.config}")
                settings[key] = value
        if ini.has_section("env"):
            env_overrides.update({k: _coerce(v) for k, v in ini.items("env")})
    for key in FLAG_KEYS:
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            settings[key] = value
    for item in getattr(args, "env_opt", []) or []:
        k, _, v = item.partition("=")
        env_overrides[k.strip()] = _coerce(v.strip())
    return settings, env_overrides


def make_config(settings: dict, env_overrides: dict) -> RunConfig:
    return RunConfig(
        env=settings["env"],
        env_overrides=env_overrides,
        agents=tuple(a.strip() for a in settings["agent"].split(",") if a.strip()),
        episodes=int(settings["episodes"]),
        seeds=parse_seeds(settings["seeds"]),
        delta=float(settings["delta"]),
        baseline_frac=float(settings["baseline-frac"]),
        out_dir=settings["out"],
        emit_plots=_bool(settings["emit-plots"]),
        k0=parse_k0(settings["k0"]),
        dump_lp=_bool(settings["dump-lp"]),
        bonus_scale=float(settings["bonus-scale"]),
        ucrl_solver=settings["ucrl-solver"],
        workers=int(settings["workers"]),
    )


def cmd_run(config: RunConfig) -> int:
    if not config.out_dir:
        raise SystemExit("--out is required")
    out = preflight(config.out_dir)
    model = config.build_model()
    ref = reference(model, config.baseline_frac, config.lp_method)
    if config.dump_lp:
        _dump_planning_lps(model, ref, out / "lp")
    log.info("%s: optimum %.6g, baseline constraint value %.6g", model.name, ref.optimum, ref.baseline_value)
    results = run_experiment(config, model, ref)
    paths = emit_outputs(results, config, ref)
    for agent, runs in results.items():
        switches = [r.switch_episode for r in runs]
        print(f"{agent}: final optimality regret {[round(float(r.cum_opt_regret[-1]), 4) for r in runs]}, "
              f"constraint regret {[round(float(r.cum_cons_regret[-1]), 4) for r in runs]}, "
              f"switch episodes {switches}")
    for p in paths:
        print(p)
    return 0


def _dump_planning_lps(model, ref, directory: Path) -> None:
    from .lp import build_cmdp_lp

    directory.mkdir(parents=True, exist_ok=True)
    for name, budget in (("plan_optimal", model.budget), ("plan_baseline", ref.baseline_target)):
        lp = build_cmdp_lp(model, model.objective_cost, model.constraint_cost, budget)
        with open(directory / f"{name}.lp", "w") as fh:
            lp.dump(fh)


def cmd_sweep(config: RunConfig, fractions: Sequence[float]) -> int:
    from .harness.plotting import plot_sweep

    if not config.out_dir:
        raise SystemExit("--out is required")
    out = preflight(config.out_dir)
    model = config.build_model()
    results = baseline_sweep(config, fractions, model)
    curves = {}
    for res in results:
        if res.runs is None:
            print(f"fraction {res.fraction:g}: skipped ({res.warning})")
            continue
        agg = aggregate(res.runs)
        curves[res.fraction] = agg
        path = write_csv(agg, out / f"opsrl_baseline_{res.fraction:g}.csv")
        print(f"fraction {res.fraction:g}: baseline constraint value {res.baseline_value:.6g}, "
              f"switch episodes {[r.switch_episode for r in res.runs]} -> {path}")
    if config.emit_plots and curves:
        print(plot_sweep(curves, out, title=model.name))
    return 0


def cmd_dump_model(args) -> int:
    _, overrides = resolve(args)
    model = build_env(args.env, **overrides)
    text = dump_model(model)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "dump-model":
        return cmd_dump_model(args)
    settings, env_overrides = resolve(args)
    if args.command == "sweep":
        settings["agent"] = "opsrl"
        config = make_config(settings, env_overrides)
        return cmd_sweep(config, [float(f) for f in settings["fractions"].split(",") if f.strip()])
    return cmd_run(make_config(settings, env_overrides))


if __name__ == "__main__":
    sys.exit(main())
