"""Command-line interface.

Every run is described by a flat config dict (the parsed arguments). The
dict is echoed into each output, and ``gibbsvoid replay OUTPUT.json``
re-runs from that echo. Exit codes: 0 ok, 2 bad config or input, 3
numerical failure, 4 resource guard.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .geometry import PatternFormatError, SimplicityError, Window, build_quadrature, read_pattern
from .inference import VoidProviderError, exact_log_likelihood, likelihood_metadata, mle_fit, ConjectureVoid
from .models import ModelError, model_from_dict
from .oracle import DiscreteSpace, EnumerationLimitError, conjecture_report
from .randomfield import (
    Lattice,
    field_conjecture_report,
    field_fit,
    gibbs_sample_field,
    read_field,
    write_field,
)
from .simulate import (
    MCMCConfig,
    continuum_conjecture_report,
    estimate_mean_intensity,
    sample_gibbs,
    write_samples_ndjson,
)

EXIT_CONFIG, EXIT_NUMERIC, EXIT_RESOURCE = 2, 3, 4


class ConfigError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    pass


# --- argument parsing ------------------------------------------------------


def _mcmc_args(p: argparse.ArgumentParser, steps=200_000, burn_in=20_000, thin=10) -> None:
    p.add_argument("--steps", type=int, default=steps)
    p.add_argument("--burn-in", type=int, default=burn_in)
    p.add_argument("--thin", type=int, default=thin)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--chains", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gibbsvoid", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gibbsvoid {__version__}")
    parser.add_argument("--threads", type=int, default=1, help="cap on worker threads")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="birth-death MCMC samples of a point process model")
    p.add_argument("--model", required=True, help="model JSON file or inline JSON")
    p.add_argument("--window", default=None, help="window JSON file or inline JSON (default unit square)")
    _mcmc_args(p)
    p.add_argument("--out", required=True, help="NDJSON output, one pattern per line")

    p = sub.add_parser("fit", help="maximum (pseudo)likelihood fit of a point pattern")
    p.add_argument("--model", required=True, help="model JSON (family plus start/fixed values)")
    p.add_argument("--pattern", required=True, help="pattern CSV")
    p.add_argument("--window", default=None)
    p.add_argument("--objective", choices=["exact", "pseudo"], default="exact")
    p.add_argument("--void", choices=["conjecture", "mc", "oracle"], default="conjecture")
    p.add_argument("--resolution", type=int, default=100)
    p.add_argument("--R", type=float, default=None, help="fix the interaction range instead of the min-gap rule")
    p.add_argument("--strict", action="store_true", help="exit 3 when the optimiser does not converge")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("verify-conjecture", help="exact or Monte Carlo comparison with the closed-form void")
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--discrete", action="store_true")
    mode.add_argument("--continuum", action="store_true")
    mode.add_argument("--field", action="store_true")
    p.add_argument("--model", default=None, help="model JSON (discrete and continuum modes)")
    p.add_argument("--sites", default=None, help="CSV of site coordinates (discrete mode)")
    p.add_argument("--lattice", default=None, help="WxH lattice (discrete and field modes)")
    p.add_argument("--torus", action="store_true")
    p.add_argument("--theta1", type=float, default=0.0)
    p.add_argument("--theta2", type=float, default=0.0)
    p.add_argument("--window", default=None)
    p.add_argument("--cells", type=int, default=2, help="partition cells per axis (continuum mode)")
    p.add_argument("--alpha", type=float, default=None)
    _mcmc_args(p)
    p.add_argument("--csv", default=None, help="retention table CSV (continuum mode)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("field-sim", help="heat-bath samples of an Ising field")
    p.add_argument("--lattice", required=True)
    p.add_argument("--torus", action="store_true")
    p.add_argument("--theta1", type=float, required=True)
    p.add_argument("--theta2", type=float, required=True)
    p.add_argument("--sweeps", type=int, default=1000)
    p.add_argument("--burn-in", type=int, default=0)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", default=None, help="NDJSON of every recorded field")
    p.add_argument("--out", required=True, help="CSV grid of the last recorded field")

    p = sub.add_parser("field-fit", help="fit Ising parameters to a field")
    p.add_argument("--field", required=True)
    p.add_argument("--torus", action="store_true")
    p.add_argument("--objective", choices=["exact", "conjectured", "pseudo"], default="pseudo")
    p.add_argument("--fix-theta2", type=float, default=None)
    p.add_argument("--strict", action="store_true")
    p.add_argument("--out", required=True)

    sub.add_parser("config-schema", help="print the JSON schema of run configs")
    p = sub.add_parser("replay", help="re-run from the config echoed in an output file")
    p.add_argument("source")
    p.add_argument("--out", default=None)
    return parser


def config_schema(parser: argparse.ArgumentParser | None = None) -> dict:
    """JSON schema of the flat run-config dicts, derived from the parser."""
    parser = parser or build_parser()
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    variants = []
    for name, sp in subparsers.choices.items():
        if name in ("config-schema", "replay"):
            continue
        props: dict = {"command": {"const": name}, "threads": {"type": "integer", "default": 1}}
        required = ["command"]
        for act in sp._actions:
            if act.dest == "help":
                continue
            if isinstance(act, (argparse._StoreTrueAction,)):
                props[act.dest] = {"type": "boolean", "default": False}
                continue
            typ = {int: "integer", float: "number"}.get(act.type, "string")
            entry: dict = {"type": [typ, "null"] if act.default is None and not act.required else typ}
            if act.choices:
                entry["enum"] = list(act.choices)
            if act.default is not None:
                entry["default"] = act.default
            if act.help:
                entry["description"] = act.help
            props[act.dest] = entry
            if act.required:
                required.append(act.dest)
        variants.append({"type": "object", "properties": props, "required": required,
                         "additionalProperties": False})
    return {"$schema": "https://json-schema.org/draft/2020-12/schema", "title": "gibbsvoid run config",
            "oneOf": variants}


def validate_config(config: dict) -> dict:
    schema = config_schema()
    cmd = config.get("command")
    variant = next((v for v in schema["oneOf"] if v["properties"]["command"]["const"] == cmd), None)
    if variant is None:
        raise ConfigError(f"config.command: unknown command {cmd!r}")
    out = {}
    for key, prop in variant["properties"].items():
        if key in config:
            out[key] = config[key]
        elif key in variant["required"]:
            raise ConfigError(f"config.{key}: required for {cmd}")
        else:
            out[key] = prop.get("default")
    for key in set(config) - set(variant["properties"]):
        raise ConfigError(f"config.{key}: not a {cmd} option")
    for key, prop in variant["properties"].items():
        val = out[key]
        types = prop.get("type", [])
        types = [types] if isinstance(types, str) else types
        if val is None and ("null" in types or key == "command"):
            continue
        ok = {
            "integer": isinstance(val, int) and not isinstance(val, bool),
            "number": isinstance(val, (int, float)) and not isinstance(val, bool),
            "string": isinstance(val, str),
            "boolean": isinstance(val, bool),
        }
        if types and not any(ok.get(t, False) for t in types):
            raise ConfigError(f"config.{key}: expected {'/'.join(types)}, got {val!r}")
        if "enum" in prop and val not in prop["enum"]:
            raise ConfigError(f"config.{key}: must be one of {prop['enum']}, got {val!r}")
    return out


# --- helpers ---------------------------------------------------------------


def _load_json_arg(value: str, what: str):
    text = value
    if not value.lstrip().startswith("{"):
        path = Path(value)
        if not path.exists():
            raise ConfigError(f"{what}: file not found: {value}")
        text = path.read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what}: invalid JSON ({exc.msg} at line {exc.lineno})") from None


def _model(cfg: dict):
    if not cfg.get("model"):
        raise ConfigError("config.model: required")
    return model_from_dict(_load_json_arg(cfg["model"], "model"))


def _window(cfg: dict) -> Window:
    if not cfg.get("window"):
        return Window.unit()
    data = _load_json_arg(cfg["window"], "window")
    try:
        return Window.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"window: {exc}") from None


def _mcmc(cfg: dict) -> MCMCConfig:
    try:
        return MCMCConfig(cfg["steps"], cfg["burn_in"], cfg["thin"], cfg["seed"], cfg["chains"])
    except ValueError as exc:
        raise ConfigError(f"config: {exc}") from None


def _stamp(cfg: dict, void_mode: str | None) -> dict:
    return {
        "config": cfg,
        "code_version": __version__,
        "seed": cfg.get("seed"),
        "energy_convention": "E(empty)=0",
        "void_mode": void_mode,
    }


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else ("nan" if v != v else ("inf" if v > 0 else "-inf"))
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def _write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(_clean(payload), indent=2, sort_keys=True) + "\n")


def _meta_path(out: str) -> str:
    return str(out) + ".meta.json"


# --- commands --------------------------------------------------------------


def _cmd_simulate(cfg: dict) -> int:
    m, w, mc = _model(cfg), _window(cfg), _mcmc(cfg)
    S = sample_gibbs(m, w, mc, threads=cfg["threads"])
    write_samples_ndjson(S, cfg["out"])
    rho, se = estimate_mean_intensity(S)
    _write_json(_meta_path(cfg["out"]), {
        **_stamp(cfg, None),
        "model": m.to_dict(),
        "window": w.to_dict(),
        "n_records": len(S),
        "acceptance_rate": S.acceptance_rate,
        "mean_intensity": {"value": rho, "se": se, "provenance": "monte-carlo±se"},
    })
    return 0


def _cmd_fit(cfg: dict) -> int:
    m, w = _model(cfg), _window(cfg)
    try:
        x = read_pattern(cfg["pattern"], w, strict=True)
    except FileNotFoundError:
        raise ConfigError(f"pattern: file not found: {cfg['pattern']}") from None
    q = build_quadrature(w, cfg["resolution"])
    void = {"conjecture": "conjecture", "mc": "monte_carlo", "oracle": "oracle"}[cfg["void"]]
    if void == "oracle":
        raise ConfigError("void: the oracle provider needs a finite site set; use verify-conjecture --discrete")
    mc_cfg = MCMCConfig(20_000, 2_000, 5, cfg["seed"]) if void == "monte_carlo" else None
    fit = mle_fit(m, x, q, cfg["objective"], R=cfg["R"], void=void, mc_config=mc_cfg)
    payload = {
        **_stamp(cfg, fit.metadata.get("void_mode")),
        "family": m.family,
        "n_points": len(x),
        "window": w.to_dict(),
        **fit.to_dict(),
        "provenance": "conjecture" if cfg["objective"] == "exact" else "pseudolikelihood",
    }
    if cfg["objective"] == "exact" and void == "conjecture" and len(x):
        fitted = m.with_params(**{**fit.theta_hat, **{p["name"]: p["value"] for p in fit.fixed_parameters}})
        payload["likelihood_metadata"] = likelihood_metadata(ConjectureVoid(q))
        payload["log_likelihood"] = exact_log_likelihood(fitted, x, q)
    _write_json(cfg["out"], payload)
    if cfg["strict"] and not fit.converged:
        raise NumericalFailure(f"optimiser did not converge: {fit.message}")
    return 0


def _cmd_verify(cfg: dict) -> int:
    if cfg["discrete"]:
        m = _model(cfg)
        if cfg["sites"]:
            space = DiscreteSpace.read_csv(cfg["sites"])
        elif cfg["lattice"]:
            lat = Lattice.parse(cfg["lattice"])
            space = DiscreteSpace(lat.sites[:, ::-1].astype(float))
        else:
            raise ConfigError("config.sites: discrete mode needs --sites or --lattice")
        report = conjecture_report(m, space, seed=cfg["seed"])
        mode = "exact_discrete"
    elif cfg["field"]:
        if not cfg["lattice"]:
            raise ConfigError("config.lattice: field mode needs --lattice")
        lat = Lattice.parse(cfg["lattice"], cfg["torus"])
        report = field_conjecture_report(lat, (cfg["theta1"], cfg["theta2"]), seed=cfg["seed"])
        mode = "exact_discrete"
    else:
        m, w = _model(cfg), _window(cfg)
        report = continuum_conjecture_report(m, w, _mcmc(cfg), cfg["cells"], cfg["alpha"], cfg["threads"])
        mode = "monte_carlo"
        if cfg["csv"]:
            rows = report["retention"]
            with open(cfg["csv"], "w", newline="") as fh:
                wr = csv.DictWriter(fh, fieldnames=list(rows[0]))
                wr.writeheader()
                for r in rows:
                    wr.writerow({k: json.dumps(v) if isinstance(v, list) else v for k, v in r.items()})
    _write_json(cfg["out"], {**_stamp(cfg, mode), "report": report})
    return 0


def _cmd_field_sim(cfg: dict) -> int:
    lat = Lattice.parse(cfg["lattice"], cfg["torus"])
    try:
        fields = gibbs_sample_field(lat, (cfg["theta1"], cfg["theta2"]), cfg["sweeps"], cfg["seed"],
                                    cfg["burn_in"], cfg["thin"])
    except ValueError as exc:
        raise ConfigError(f"config: {exc}") from None
    write_field(cfg["out"], fields[-1], lat)
    if cfg["trace"]:
        Path(cfg["trace"]).write_text("".join(json.dumps(f.tolist()) + "\n" for f in fields))
    _write_json(_meta_path(cfg["out"]), {
        **_stamp(cfg, None),
        "n_records": len(fields),
        "mean_occupancy": float(fields.mean()),
    })
    return 0


def _cmd_field_fit(cfg: dict) -> int:
    try:
        f, lat = read_field(cfg["field"])
    except FileNotFoundError:
        raise ConfigError(f"field: file not found: {cfg['field']}") from None
    if cfg["torus"]:
        lat = Lattice(lat.shape, True)
    fixed = {"theta2": cfg["fix_theta2"]} if cfg["fix_theta2"] is not None else None
    fit = field_fit(lat, f, cfg["objective"], fixed=fixed)
    mode = {"exact": "exact_discrete", "conjectured": "conjecture", "pseudo": None}[cfg["objective"]]
    _write_json(cfg["out"], {**_stamp(cfg, mode), **fit.to_dict(),
                             "provenance": {"exact": "exact-enumeration", "conjectured": "conjecture",
                                            "pseudo": "pseudolikelihood"}[cfg["objective"]]})
    if cfg["strict"] and not fit.converged:
        raise NumericalFailure(f"optimiser did not converge: {fit.message}")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "verify-conjecture": _cmd_verify,
    "field-sim": _cmd_field_sim,
    "field-fit": _cmd_field_fit,
}


def dispatch(config: dict) -> int:
    """Validate a run config and execute it; returns the exit code."""
    try:
        cfg = validate_config(config)
        return _COMMANDS[cfg["command"]](cfg)
    except EnumerationLimitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (NumericalFailure, VoidProviderError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ModelError, PatternFormatError, SimplicityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    if ns.command == "config-schema":
        print(json.dumps(config_schema(parser), indent=2))
        return 0
    if ns.command == "replay":
        try:
            echoed = json.loads(Path(ns.source).read_text())["config"]
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            print(f"error: cannot read config echo from {ns.source}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        if ns.out:
            echoed["out"] = ns.out
        return dispatch(echoed)
    return dispatch(vars(ns))


if __name__ == "__main__":
    sys.exit(main())
