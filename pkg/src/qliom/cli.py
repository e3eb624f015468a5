"""Command-line driver: build, verify, ensemble, transport, dynamics, schema.

Configuration is a JSON file checked against a strict schema; command-line
flags override individual keys. Exit codes: 0 all hard checks pass,
1 a hard check failed, 2 configuration error, 3 every realization of a
requested suite was excluded for capacity reasons.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable, Sequence

import jsonschema

from . import __version__
from .kam import run_scheme
from .lioms import assemble_and_dress
from .model import ChainParams, PerturbationSpec, sample_fields
from .opalg import CapacityError, matrix_norm
from .reports import dumps, write_csv, write_json
from .transport import NoAdmissibleCut, build_O, domain_wall_state, dynamics_check, random_product_state, select_x
from .verify import (
    CheckResult,
    all_passed,
    ensemble_statistics,
    hadamard_property,
    run_probability_suite,
    run_scaling_suite,
    run_theorem1_suite,
)

log = logging.getLogger("qliom")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_CAPACITY = 0, 1, 2, 3
OUTPUT_ENV = "QLIOM_OUTPUT_DIR"

_num = {"type": "number"}
_pos_int = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "qliom run configuration",
    "type": "object",
    "additionalProperties": False,
    "required": ["params"],
    "properties": {
        "params": {
            "type": "object",
            "additionalProperties": False,
            "required": ["N"],
            "properties": {
                "N": _pos_int,
                "R": _pos_int,
                "J": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "beta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "epsilon": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "perturbation": {
                    "oneOf": [
                        {"type": "string", "enum": ["default", "transverse", "xx_yy"]},
                        {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["pauli_terms"],
                            "properties": {
                                "pauli_terms": {
                                    "type": "array",
                                    "minItems": 1,
                                    "items": {
                                        "type": "array",
                                        "prefixItems": [_num, {"type": "string", "pattern": "^[IXYZ]+$"}],
                                        "minItems": 2,
                                        "maxItems": 2,
                                    },
                                }
                            },
                        },
                    ]
                },
                "n_star": {"type": ["integer", "null"], "minimum": 1},
                "delta": {"type": ["number", "null"], "minimum": 0},
                "max_support": _pos_int,
                "enum_cap": _pos_int,
            },
        },
        "seeds": {
            "oneOf": [
                {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["seed0", "count"],
                    "properties": {"seed0": {"type": "integer", "minimum": 0}, "count": _pos_int},
                },
            ]
        },
        "output_dir": {"type": "string"},
        "parallelism": _pos_int,
        "format": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"json": {"type": "boolean"}, "csv": {"type": "boolean"}},
        },
        "verify": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "locality_trials": {"type": "integer", "minimum": 0},
                "tails": {"type": "boolean"},
                "conservation": {"type": "boolean"},
                "negative_controls": {"type": "boolean"},
                "hadamard_trials": {"type": "integer", "minimum": 0},
                "scaling": {
                    "type": "array",
                    "items": {"type": "string", "enum": ["remainder", "commutator", "transport_residual"]},
                },
                "scaling_J_grid": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 4},
            },
        },
        "ensemble": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "num_samples": {"type": "integer", "minimum": 100},
                "deltas": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
            },
        },
        "transport": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"i_star": {"type": ["integer", "null"], "minimum": 1}},
        },
        "dynamics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "t_max": {"type": "number", "minimum": 0},
                "steps": {"type": "integer", "minimum": 2, "multipleOf": 2},
                "psi0": {"type": "string", "enum": ["domain_wall", "random_product"]},
                "psi0_seed": {"type": "integer", "minimum": 0},
            },
        },
    },
}

DEFAULTS: dict = {
    "seeds": {"seed0": 0, "count": 1},
    "parallelism": 1,
    "format": {"json": True, "csv": True},
    "verify": {
        "locality_trials": 50,
        "tails": False,
        "conservation": True,
        "negative_controls": False,
        "hadamard_trials": 0,
        "scaling": [],
    },
    "ensemble": {"num_samples": 10000, "deltas": []},
    "transport": {"i_star": None},
    "dynamics": {"t_max": 1000.0, "steps": 20000, "psi0": "domain_wall", "psi0_seed": 0},
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate_config(cfg: dict) -> dict:
    """Schema check plus defaults; raises :class:`ConfigError` with every violation."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in errors]
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(lines))
    full = _merge(DEFAULTS, cfg)
    try:
        params_from_config(full)
    except ValueError as exc:
        raise ConfigError(f"invalid parameters: {exc}") from exc
    return full


def params_from_config(cfg: dict) -> ChainParams:
    p = dict(cfg["params"])
    pert = p.pop("perturbation", "default")
    if isinstance(pert, dict):
        spec = PerturbationSpec(preset=None, pauli_terms=tuple((float(c), s) for c, s in pert["pauli_terms"]))
    else:
        spec = PerturbationSpec(preset=pert)
    kw = {k: p[k] for k in ("N", "R", "J", "beta", "epsilon", "max_support", "enum_cap") if k in p}
    params = ChainParams(perturbation=spec, n_star_override=p.get("n_star"), delta_override=p.get("delta"), **kw)
    params.perturbation.local_terms(params.N, params.R)  # norm validation
    return params


def seeds_from_config(cfg: dict) -> list[int]:
    s = cfg["seeds"]
    if isinstance(s, list):
        return [int(x) for x in s]
    return [s["seed0"] + k for k in range(s["count"])]


def output_dir(cfg: dict) -> Path:
    return Path(cfg.get("output_dir") or os.environ.get(OUTPUT_ENV) or "qliom-out")


# ------------------------------------------------------------------ workers
# top-level functions so that they pickle into worker processes


def _build_one(params: ChainParams, seed: int) -> dict:
    fields = sample_fields(params, seed)
    kam = run_scheme(params, fields)
    out = {"seed": seed, "kam": kam.summary()}
    lset = assemble_and_dress(kam, tails=params.N <= params.max_support)
    out["lioms"] = lset.summary()
    out["excluded"] = lset.oversized
    if not lset.oversized:
        out["remainder_norm"] = matrix_norm(kam.remainder)
    return out


def _verify_one(params: ChainParams, seed: int, vcfg: dict) -> dict:
    checks = run_theorem1_suite(
        params, seed, locality_trials=vcfg["locality_trials"], tails=vcfg["tails"], conservation=vcfg["conservation"]
    )
    out = {"seed": seed, "checks": [c.to_json() for c in checks], "passed": all_passed(checks)}
    out["excluded"] = any(c.check_id == "liom.dense_checks" and c.status == "skipped" for c in checks)
    if vcfg["negative_controls"]:
        ctrl = {}
        for mode in ("A_sign", "tau_shuffle"):
            try:
                bad = run_theorem1_suite(params, seed, locality_trials=0, conservation=False, corrupt=mode)
                ctrl[mode] = {"failed_as_expected": not all_passed(bad), "failing": [c.check_id for c in bad if c.failed]}
            except ValueError as exc:  # e.g. nothing to corrupt when A = 0
                ctrl[mode] = {"failed_as_expected": None, "failing": [], "note": str(exc)}
        out["negative_controls"] = ctrl
    return out


def _transport_one(params: ChainParams, seed: int, i_star: int) -> dict:
    kam = run_scheme(params, sample_fields(params, seed))
    lset = assemble_and_dress(kam, tails=False)
    if lset.oversized:
        return {"seed": seed, "excluded": "oversized"}
    try:
        cut = select_x(lset.resonant_set, params, i_star)
    except NoAdmissibleCut as exc:
        return {"seed": seed, "excluded": f"no admissible cut: {exc}"}
    rep = build_O(kam, lset, cut)
    body = rep.to_json(params)
    body.update(seed=seed, excluded=None)
    tol = 1e-9 * max(1.0, rep.residual)
    body["residual_consistent"] = abs(rep.residual - rep.residual_primed) <= tol
    return body


def _dynamics_one(params: ChainParams, seed: int, i_star: int, dcfg: dict) -> tuple[dict, list | None]:
    kam = run_scheme(params, sample_fields(params, seed))
    lset = assemble_and_dress(kam, tails=False)
    if lset.oversized:
        return {"seed": seed, "excluded": "oversized"}, None
    try:
        cut = select_x(lset.resonant_set, params, i_star)
    except NoAdmissibleCut as exc:
        return {"seed": seed, "excluded": f"no admissible cut: {exc}"}, None
    rep = build_O(kam, lset, cut)
    if dcfg["psi0"] == "domain_wall":
        psi0 = domain_wall_state(params.N, i_star)
    else:
        psi0 = random_product_state(params.N, dcfg["psi0_seed"])
    tr = dynamics_check(kam.H_dense, rep.J_E, rep.O, psi0, float(dcfg["t_max"]), int(dcfg["steps"]), rep.residual)
    max_i, bound = tr.boundedness()
    summary = {
        "seed": seed,
        "excluded": None,
        "x": cut.x,
        "ell": cut.ell,
        "residual": rep.residual,
        "norm_O": rep.norm_O,
        "defect_ok": bool(tr.defect_ok.all()),
        "max_defect_ratio": float(max((d / b) for d, b in zip(tr.defect, tr.t * tr.residual + tr.eps_quad))),
        "max_abs_integrated": max_i,
        "integrated_bound": bound,
        "bounded": max_i <= bound,
    }
    return summary, [list(r) for r in tr.rows()]


def _run_many(fn: Callable, args: Sequence[tuple], parallelism: int) -> list:
    if parallelism <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=parallelism) as pool:
        # map preserves submission order, so output never depends on scheduling
        return list(pool.map(fn, *zip(*args)))


# ------------------------------------------------------------------ commands


def _header(cfg: dict, params: ChainParams) -> dict:
    # where and how fast a run went must not change its report
    echo = {k: v for k, v in cfg.items() if k not in ("output_dir", "parallelism")}
    return {"params": params.to_json(), "config": echo}


def cmd_build(cfg: dict) -> int:
    params, seeds, out = params_from_config(cfg), seeds_from_config(cfg), output_dir(cfg)
    results = _run_many(_build_one, [(params, s) for s in seeds], cfg["parallelism"])
    rows = []
    for res in results:
        if cfg["format"]["json"]:
            write_json(out / "build" / f"seed_{res['seed']}.json", {**_header(cfg, params), **res})
        for site in res["lioms"]["sites"]:
            rows.append((res["seed"], site["i"], site["M_lo"], site["M_hi"], site["in_R"], res["excluded"]))
    if cfg["format"]["csv"]:
        write_csv(out / "build" / "sites.csv", ["seed", "site", "M_lo", "M_hi", "in_resonant_region", "oversized"], rows)
    if all(r["excluded"] for r in results):
        return EXIT_CAPACITY
    return EXIT_OK


def cmd_verify(cfg: dict) -> int:
    params, seeds, out = params_from_config(cfg), seeds_from_config(cfg), output_dir(cfg)
    vcfg = cfg["verify"]
    results = _run_many(_verify_one, [(params, s, vcfg) for s in seeds], cfg["parallelism"])
    extra: list[CheckResult] = []
    for q in vcfg["scaling"]:
        study = run_scaling_suite(params, q, J_grid=vcfg.get("scaling_J_grid"))
        extra.append(study.check())
    if vcfg["hadamard_trials"]:
        extra.append(hadamard_property(vcfg["hadamard_trials"]))
    ok = all(r["passed"] for r in results) and all_passed(extra)
    for r in results:
        for ctrl in r.get("negative_controls", {}).values():
            if ctrl["failed_as_expected"] is False:
                ok = False
    report = {**_header(cfg, params), "realizations": results, "suite_checks": [c.to_json() for c in extra], "passed": ok}
    if cfg["format"]["json"]:
        write_json(out / "verify.json", report)
    if cfg["format"]["csv"]:
        rows = [
            (r["seed"], c["check_id"], c["status"], _scalar(c["measured"]), _scalar(c["reference"]))
            for r in results
            for c in r["checks"]
        ]
        rows += [("", c.check_id, c.status, _scalar(c.measured), _scalar(c.reference)) for c in extra]
        write_csv(out / "verify_checks.csv", ["seed", "check_id", "status", "measured", "reference"], rows)
    if results and all(r["excluded"] for r in results) and not extra:
        return EXIT_CAPACITY
    return EXIT_OK if ok else EXIT_FAIL


def _scalar(v: Any):
    if isinstance(v, (int, float, bool)) or v is None:
        return v
    return json.dumps(v, sort_keys=True)


def cmd_ensemble(cfg: dict) -> int:
    params, out = params_from_config(cfg), output_dir(cfg)
    ecfg = cfg["ensemble"]
    seed0 = seeds_from_config(cfg)[0]
    deltas = [params.delta] + [d for d in ecfg["deltas"] if d != params.delta]
    st = ensemble_statistics(params, ecfg["num_samples"], seed0, deltas)
    checks = run_probability_suite(params, ecfg["num_samples"], seed0, stats_=st)
    ok = all_passed(checks)
    report = {
        **_header(cfg, params),
        "num_samples": st.num_samples,
        "deltas": list(st.deltas),
        "checks": [c.to_json() for c in checks],
        "in_region_rate": st.in_region,
        "M_survival": st.M_survival,
        "passed": ok,
    }
    if cfg["format"]["json"]:
        write_json(out / "ensemble.json", report)
    if cfg["format"]["csv"]:
        rows = []
        for k, d in enumerate(st.deltas):
            for m in range(1, st.n_star + 1):
                for i in range(1, st.N + 1):
                    bound = (3 ** st.interval_length(i, m) - 1) * 2 * d
                    rows.append((d, m, i, st.rates[k, m - 1, i - 1], bound))
        write_csv(out / "ensemble_rates.csv", ["delta", "scale", "site", "resonance_rate", "union_bound"], rows)
        write_csv(out / "ensemble_sites.csv", ["site", "in_resonant_region_rate", "single_eta_rate"],
                  [(i + 1, st.in_region[i], st.single_eta[0, i]) for i in range(st.N)])
        write_csv(out / "ensemble_cluster_tail.csv", ["ell", "survival", "count"],
                  [(l, st.M_survival[l], int(st.M_counts[l])) for l in range(1, st.N + 1)])
    return EXIT_OK if ok else EXIT_FAIL


def _i_star(cfg: dict, params: ChainParams) -> int:
    i = cfg["transport"]["i_star"]
    return params.N // 2 if i is None else int(i)


def cmd_transport(cfg: dict) -> int:
    params, seeds, out = params_from_config(cfg), seeds_from_config(cfg), output_dir(cfg)
    i_star = _i_star(cfg, params)
    results = _run_many(_transport_one, [(params, s, i_star) for s in seeds], cfg["parallelism"])
    kept = [r for r in results if r["excluded"] is None]
    ok = all(r["residual_consistent"] for r in kept)
    if cfg["format"]["json"]:
        write_json(out / "transport.json", {**_header(cfg, params), "realizations": results, "passed": ok})
    if cfg["format"]["csv"]:
        cols = ["seed", "x", "ell", "residual", "residual_primed", "norm_O", "norm_O_prime", "norm_O_double_prime", "a"]
        write_csv(out / "transport.csv", cols + ["excluded"],
                  [[r.get(c) for c in cols] + [r["excluded"]] for r in results])
    if not kept:
        return EXIT_CAPACITY
    return EXIT_OK if ok else EXIT_FAIL


def cmd_dynamics(cfg: dict) -> int:
    params, seeds, out = params_from_config(cfg), seeds_from_config(cfg), output_dir(cfg)
    i_star = _i_star(cfg, params)
    results = _run_many(_dynamics_one, [(params, s, i_star, cfg["dynamics"]) for s in seeds], cfg["parallelism"])
    summaries = [s for s, _ in results]
    kept = [s for s in summaries if s["excluded"] is None]
    ok = all(s["defect_ok"] and s["bounded"] for s in kept)
    if cfg["format"]["csv"]:
        for s, rows in results:
            if rows is not None:
                write_csv(out / "dynamics" / f"seed_{s['seed']}.csv",
                          ["t", "current", "integrated_current", "delta_O", "defect", "eps_quad"], rows)
    if cfg["format"]["json"]:
        write_json(out / "dynamics.json", {**_header(cfg, params), "realizations": summaries, "passed": ok})
    if not kept:
        return EXIT_CAPACITY
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {
    "build": cmd_build,
    "verify": cmd_verify,
    "ensemble": cmd_ensemble,
    "transport": cmd_transport,
    "dynamics": cmd_dynamics,
}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qliom", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"qliom {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("schema", help="print the configuration JSON schema")
    for name in COMMANDS:
        sp = sub.add_parser(name, help=f"run the {name} command")
        sp.add_argument("config", nargs="?", help="JSON configuration file")
        sp.add_argument("--N", type=int)
        sp.add_argument("--R", type=int)
        sp.add_argument("--J", type=float)
        sp.add_argument("--beta", type=float)
        sp.add_argument("--epsilon", type=float)
        sp.add_argument("--n-star", type=int, dest="n_star")
        sp.add_argument("--delta", type=float)
        sp.add_argument("--perturbation")
        sp.add_argument("--max-support", type=int, dest="max_support")
        sp.add_argument("--seed0", type=int)
        sp.add_argument("--count", type=int)
        sp.add_argument("--seeds", type=lambda s: [int(x) for x in s.split(",")], help="comma-separated seeds")
        sp.add_argument("--output-dir", dest="output_dir")
        sp.add_argument("--parallelism", "-j", type=int)
        sp.add_argument("--no-csv", action="store_true")
        sp.add_argument("--no-json", action="store_true")
        sp.add_argument("--num-samples", type=int, dest="num_samples")
        sp.add_argument("--i-star", type=int, dest="i_star")
        sp.add_argument("--t-max", type=float, dest="t_max")
        sp.add_argument("--steps", type=int)
        sp.add_argument("--negative-controls", action="store_true", dest="negative_controls")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def config_from_args(args: argparse.Namespace) -> dict:
    cfg: dict = {}
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read configuration: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError("configuration must be a JSON object")
    params = cfg.setdefault("params", {})
    for key in ("N", "R", "J", "beta", "epsilon", "n_star", "delta", "perturbation", "max_support"):
        v = getattr(args, key)
        if v is not None:
            params[key] = v
    if args.seeds is not None:
        cfg["seeds"] = args.seeds
    elif args.seed0 is not None or args.count is not None:
        old = cfg.get("seeds") if isinstance(cfg.get("seeds"), dict) else {"seed0": 0, "count": 1}
        cfg["seeds"] = {
            "seed0": args.seed0 if args.seed0 is not None else old["seed0"],
            "count": args.count if args.count is not None else old["count"],
        }
    if args.output_dir is not None:
        cfg["output_dir"] = args.output_dir
    if args.parallelism is not None:
        cfg["parallelism"] = args.parallelism
    if args.no_csv or args.no_json:
        fmt = cfg.setdefault("format", {})
        if args.no_csv:
            fmt["csv"] = False
        if args.no_json:
            fmt["json"] = False
    if args.num_samples is not None:
        cfg.setdefault("ensemble", {})["num_samples"] = args.num_samples
    if args.i_star is not None:
        cfg.setdefault("transport", {})["i_star"] = args.i_star
    if args.t_max is not None:
        cfg.setdefault("dynamics", {})["t_max"] = args.t_max
    if args.steps is not None:
        cfg.setdefault("dynamics", {})["steps"] = args.steps
    if args.negative_controls:
        cfg.setdefault("verify", {})["negative_controls"] = True
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "schema":
        sys.stdout.write(dumps(CONFIG_SCHEMA))
        return EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = validate_config(config_from_args(args))
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](cfg)
    except CapacityError as exc:
        print(f"capacity exclusion: {exc}", file=sys.stderr)
        return EXIT_CAPACITY


if __name__ == "__main__":
    sys.exit(main())
