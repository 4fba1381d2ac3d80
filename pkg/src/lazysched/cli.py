"""Command-line front end: ``lazysched {lazy,general,sweep,oracle-check}``.

Exit status: 0 on success, 2 on configuration or usage errors, 1 on runtime
failures (including runs that finish with failed realizations).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from .core import ArrivalChain, FadingProcess, HarvestProcess, LazySchedError, SystemConfig
from .sim import GENERAL_POLICIES, LAZY_POLICIES, ExperimentSpec, run_experiment, run_sweep, worker_count

log = logging.getLogger("lazysched")

LAZY_COLUMNS = ("realization_index", "policy", "total_energy_J", "backlog_pct", "delivered_bits",
                "terminal_cost_J", "total_cost_J", "status")
GENERAL_COLUMNS = ("realization_index", "policy", "throughput_mbps", "energy_per_slot_nJ",
                   "total_energy_units", "delivered_bits", "backlog_pct", "status")
TRACE_COLUMNS = ("realization_index", "slot", "policy", "w", "rho", "rate", "gain", "arrival_bits", "harvest")
SWEEP_COLUMNS = ("horizon", "policy", "realizations", "mean_throughput_mbps", "mean_energy_per_slot_nJ",
                 "mean_total_energy_units", "mean_delivered_bits", "mean_backlog_pct")


class ConfigError(LazySchedError, ValueError):
    """Invalid or unreadable configuration."""


# ---------------------------------------------------------------------------
# configuration

def _number(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise TypeError("expected a number")
    return float(v)


def _integer(v):
    if isinstance(v, bool) or not isinstance(v, int):
        if isinstance(v, float) and v.is_integer():
            return int(v)
        raise TypeError("expected an integer")
    return v


def _string(v):
    if not isinstance(v, str):
        raise TypeError("expected a string")
    return v


def _list_of(conv):
    def parse(v):
        if not isinstance(v, (list, tuple)):
            raise TypeError("expected a list")
        return [conv(x) for x in v]
    return parse


def _optional(conv):
    def parse(v):
        return None if v is None else conv(v)
    return parse


SCHEMA: dict[str, dict[str, Any]] = {
    "system": {
        "horizon_slots": _integer, "slot_seconds": _number, "bandwidth_hz": _number,
        "noise_density": _number, "rate_set": _list_of(_integer), "tau": _number, "alpha": _number,
        "beta": _number, "power_unit": _number, "k_iters": _integer, "etls_variant": _string,
    },
    "arrivals": {
        "transition": _list_of(_list_of(_number)), "lengths": _list_of(_integer),
        "initial_state": _optional(_integer),
    },
    "harvest": {"kind": _string, "amount": _number, "p_event": _number, "p_stay": _number},
    "fading": {"gains": _list_of(_number), "probabilities": _list_of(_number)},
    "experiment": {
        "seed": _integer, "realizations": _integer, "horizons": _list_of(_integer),
        "initial_e": _number, "initial_b": _number,
    },
}


@dataclass(frozen=True)
class CliConfig:
    system: SystemConfig
    chain: ArrivalChain
    harvest: HarvestProcess
    fading: FadingProcess
    seed: int = 0
    realizations: int = 10
    horizons: tuple[int, ...] = ()
    initial_e: float = 0.0
    initial_b: float = 0.0
    source: str = field(default="<defaults>", compare=False)

    def spec(self, policies: Sequence[str], seed: int | None = None,
             realizations: int | None = None, horizons: Sequence[int] | None = None) -> ExperimentSpec:
        try:
            return ExperimentSpec(
                config=self.system, chain=self.chain, harvest=self.harvest, fading=self.fading,
                policies=tuple(policies), seed=self.seed if seed is None else seed,
                realizations=self.realizations if realizations is None else realizations,
                horizons=tuple(self.horizons if horizons is None else horizons),
                initial_e=self.initial_e, initial_b=self.initial_b)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


def _read_yaml(text: str, source: str) -> dict:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: not valid YAML ({exc})") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    return data


def default_config_text() -> str:
    return resources.files("lazysched").joinpath("default_config.yaml").read_text(encoding="utf-8")


def _merge(base: dict, user: dict, source: str) -> dict:
    merged = {k: dict(v) for k, v in base.items()}
    for section, body in user.items():
        if section not in SCHEMA:
            raise ConfigError(f"{source}: unknown key '{section}' (allowed: {', '.join(SCHEMA)})")
        if body is None:
            continue
        if not isinstance(body, dict):
            raise ConfigError(f"{source}: '{section}' must be a mapping")
        for key, val in body.items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"{source}: unknown key '{section}.{key}'")
            merged[section][key] = val
    return merged


def load_config(path: str | Path | None = None) -> CliConfig:
    """Defaults overlaid with the YAML file at ``path`` (if any)."""
    raw = _read_yaml(default_config_text(), "default config")
    source = "<defaults>"
    if path is not None:
        source = str(path)
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file '{path}': {exc.strerror or exc}") from None
        raw = _merge(raw, _read_yaml(text, source), source)
    vals: dict[str, dict[str, Any]] = {}
    for section, body in raw.items():
        vals[section] = {}
        for key, v in body.items():
            try:
                vals[section][key] = SCHEMA[section][key](v)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{source}: '{section}.{key}': {exc} (got {v!r})") from None
    return _build(vals, source)


def _build(vals: dict, source: str) -> CliConfig:
    def make(section, fn):
        try:
            return fn(**vals[section])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: invalid '{section}' section: {exc}") from None

    system = make("system", lambda **kw: SystemConfig(**{**kw, "rate_set": tuple(kw["rate_set"])}))
    chain = make("arrivals", lambda transition, lengths, initial_state: ArrivalChain(
        np.array(transition, dtype=float), np.array(lengths), initial_state=initial_state))
    harvest = make("harvest", HarvestProcess)
    fading = make("fading", lambda gains, probabilities: FadingProcess(tuple(gains), tuple(probabilities)))
    exp = vals["experiment"]
    if exp["realizations"] < 1:
        raise ConfigError(f"{source}: 'experiment.realizations' must be >= 1")
    if exp["seed"] < 0:
        raise ConfigError(f"{source}: 'experiment.seed' must be >= 0")
    if any(h < 1 for h in exp["horizons"]):
        raise ConfigError(f"{source}: 'experiment.horizons' entries must be >= 1")
    for key in ("initial_e", "initial_b"):
        if exp[key] < 0:
            raise ConfigError(f"{source}: 'experiment.{key}' must be >= 0")
    return CliConfig(system, chain, harvest, fading, exp["seed"], exp["realizations"],
                     tuple(exp["horizons"]), exp["initial_e"], exp["initial_b"], source)


# ---------------------------------------------------------------------------
# output

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".15g")
    return str(v)


def _jsonable(v):
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    return v


def render(rows: Sequence[dict], columns: Sequence[str], as_json: bool) -> str:
    if as_json:
        data = [{c: _jsonable(r.get(c)) for c in columns} for r in rows]
        return json.dumps(data, indent=1, sort_keys=False) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    Path(out).write_text(text, encoding="utf-8")


def trace_path(out: str, as_json: bool) -> str:
    p = Path(out)
    return str(p.with_name(p.stem + ".waterlevels" + (".json" if as_json else ".csv")))


def trace_rows(rows: Sequence[dict]) -> list[dict]:
    out = []
    for r in rows:
        t = r.get("_trace")
        if t is None:
            continue
        for n in range(len(t["w"])):
            out.append({
                "realization_index": r["realization_index"], "slot": n + 1, "policy": r["policy"],
                "w": t["w"][n], "rho": t["rho"][n], "rate": t["rate"][n], "gain": t["gain"][n],
                "arrival_bits": t["arrival_bits"][n], "harvest": t["harvest"][n],
            })
    return out


# ---------------------------------------------------------------------------
# subcommands

def _failed(rows: Sequence[dict]) -> int:
    bad = [r for r in rows if r.get("status", "ok") != "ok"]
    for r in bad[:5]:
        log.error("realization %s, policy %s: %s", r.get("realization_index"), r.get("policy"), r["status"])
    return len(bad)


def cmd_lazy(config_path=None, seed=None, realizations=None, out=None, as_json=False) -> int:
    cfg = load_config(config_path)
    rows = run_experiment(cfg.spec(LAZY_POLICIES, seed, realizations))
    _emit(render(rows, LAZY_COLUMNS, as_json), out)
    return 1 if _failed(rows) else 0


def cmd_general(config_path=None, seed=None, realizations=None, out=None, emit_waterlevels=False,
                as_json=False) -> int:
    cfg = load_config(config_path)
    if emit_waterlevels and out is None:
        raise ConfigError("--emit-waterlevels needs --out (traces go next to the summary file)")
    rows = run_experiment(cfg.spec(GENERAL_POLICIES, seed, realizations), keep_traces=emit_waterlevels)
    _emit(render(rows, GENERAL_COLUMNS, as_json), out)
    if emit_waterlevels:
        _emit(render(trace_rows(rows), TRACE_COLUMNS, as_json), trace_path(out, as_json))
    return 1 if _failed(rows) else 0


def cmd_sweep(config_path=None, horizons=None, seed=None, realizations=None, out=None, as_json=False) -> int:
    cfg = load_config(config_path)
    spec = cfg.spec(GENERAL_POLICIES, seed, realizations, horizons)
    if not spec.horizons:
        raise ConfigError("sweep needs at least one horizon (--horizons or experiment.horizons)")
    rows = run_sweep(spec)
    _emit(render(rows, SWEEP_COLUMNS, as_json), out)
    short = [r for r in rows if r["realizations"] < spec.realizations]
    for r in short:
        log.error("horizon %s, policy %s: only %s of %s realizations succeeded",
                  r["horizon"], r["policy"], r["realizations"], spec.realizations)
    return 1 if short else 0


def cmd_oracle_check(seed=None, instances=60, out=None, as_json=False) -> int:
    from .oracle_suite import run_all

    results = run_all(seed=0 if seed is None else seed, instances=instances)
    rows = [{"check": r.name, "result": "PASS" if r.passed else "FAIL", "instances": r.instances,
             "detail": r.detail} for r in results]
    if as_json or out is not None:
        _emit(render(rows, ("check", "result", "instances", "detail"), as_json), out)
    if out is None and not as_json:
        for r in rows:
            sys.stdout.write(f"{r['result']}  {r['check']} ({r['instances']} instances): {r['detail']}\n")
    return 0 if all(r.passed for r in results) else 1


# ---------------------------------------------------------------------------
# entry point

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def _horizon_list(text: str) -> list[int]:
    try:
        vals = [int(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid horizon list {text!r}") from None
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError("horizons must be positive integers")
    return vals


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lazysched", description="Energy-efficient transmission scheduling experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", metavar="PATH", help="YAML config overriding the built-in defaults")
        sp.add_argument("--seed", type=_u64, help="master seed (overrides experiment.seed)")
        sp.add_argument("--out", metavar="PATH", help="output file (default: stdout)")
        sp.add_argument("--json", action="store_true", help="write JSON instead of CSV")

    sp = sub.add_parser("lazy", help="per-realization costs of DP, ETLS, Hasty and Constant-rate")
    common(sp)
    sp.add_argument("--realizations", type=_positive, metavar="N")

    sp = sub.add_parser("general", help="offline water-fill vs online heuristic")
    common(sp)
    sp.add_argument("--realizations", type=_positive, metavar="N")
    sp.add_argument("--emit-waterlevels", action="store_true",
                    help="also write per-slot traces to <out>.waterlevels.csv")

    sp = sub.add_parser("sweep", help="mean throughput and energy per slot against the horizon")
    common(sp)
    sp.add_argument("--realizations", type=_positive, metavar="N")
    sp.add_argument("--horizons", type=_horizon_list, nargs="+", metavar="N",
                    help="horizon list, e.g. '25 50 100' or '25,50,100'")

    sp = sub.add_parser("oracle-check", help="run the tiny-instance oracle suites")
    common(sp, config=False)
    sp.add_argument("--instances", type=_positive, default=60, metavar="N")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="lazysched: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        try:
            log.debug("workers: %d", worker_count())
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if args.command == "lazy":
            return cmd_lazy(args.config, args.seed, args.realizations, args.out, args.json)
        if args.command == "general":
            return cmd_general(args.config, args.seed, args.realizations, args.out,
                               args.emit_waterlevels, args.json)
        if args.command == "sweep":
            horizons = None if args.horizons is None else [h for part in args.horizons for h in part]
            return cmd_sweep(args.config, horizons, args.seed, args.realizations, args.out, args.json)
        return cmd_oracle_check(args.seed, args.instances, args.out, args.json)
    except ConfigError as exc:
        log.error("%s", exc)
        return 2
    except (LazySchedError, OSError) as exc:
        log.error("%s", exc)
        return 1
