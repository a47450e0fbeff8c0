"""Command-line front end.

Subcommands map onto the laboratory operations: list resonant energies,
dump eigenphase sweep tables, run the spectral-flow experiment across a
resonance, compare the two counting-function routes, list admissible
angles, and run the verification suite.  Exit code 0 means every requested
verdict passed, 1 flags a failed verdict (naming the check), 2 is a usage
error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import lab
from .assembly import OperatorPair, assemble, tables_to_csv
from .flow import mu_flow, mu_via_birman_schwinger

PAIRS = {p.value: p for p in OperatorPair}


def _build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help="TOML or JSON experiment configuration")
    common.add_argument("--out", type=Path, default=None,
                        help="directory for result files (default: stdout only)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--hbar", type=str, default=None,
                        help="comma-separated override of the hbar grid")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: RESOFLOW_THREADS or cores)")

    parser = argparse.ArgumentParser(
        prog="resoflow",
        parents=[common],
        description="Desk-scale spectral-flow experiments for shape-resonance "
                    "scattering matrices.")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("resonances", parents=[common],
                   help="list resonant energies per hbar")

    p_sweep = sub.add_parser("sweep", parents=[common],
                             help="eigenphase tables over the window")
    p_sweep.add_argument("--pair", choices=sorted(PAIRS), default="full-free")
    p_sweep.add_argument("--points", type=int, default=21)

    p_flow = sub.add_parser("flow", parents=[common],
                            help="spectral flow across one resonance")
    p_flow.add_argument("--eres", type=int, default=0,
                        help="index into the resonance list")
    p_flow.add_argument("--theta", type=float, default=None,
                        help="marked angle in (0, 2*pi); default: auto-pick")
    p_flow.add_argument("--companions", action="store_true",
                        help="also evaluate the counting identity at the "
                             "window endpoints")

    p_bs = sub.add_parser("bs-count", parents=[common],
                          help="counting function by flow and by weighted "
                               "resolvent, with equality verdict")
    p_bs.add_argument("--energy", type=float, required=True)
    p_bs.add_argument("--theta", type=float, default=math.pi)

    p_ver = sub.add_parser("verify", parents=[common],
                           help="run verification checks")
    p_ver.add_argument("--checks", type=str, default=None,
                       help="comma-separated check names (default: the "
                            "property suite); use 'all' for everything")

    p_ang = sub.add_parser("angles", parents=[common],
                           help="admissible marked angles at a resonance")
    p_ang.add_argument("--eres", type=int, default=0)
    p_ang.add_argument("--margin", type=float, default=1e-3)
    return parser


DEFAULT_VERIFY = (
    "product-perturbation-bounds",
    "tunnelling-decay-rates",
    "hoelder-envelope",
    "chain-rule-identity",
    "shift-function-jump",
)


def _emit(args, name, payload):
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        suffix = "csv" if (args.format == "csv" and isinstance(payload, str)) else "json"
        body = payload if isinstance(payload, str) else json.dumps(
            payload, indent=2, sort_keys=True, default=_jsonable)
        (args.out / f"{name}.{suffix}").write_text(body)
    else:
        if isinstance(payload, str):
            sys.stdout.write(payload)
        else:
            json.dump(payload, sys.stdout, indent=2, sort_keys=True,
                      default=_jsonable)
            sys.stdout.write("\n")


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if hasattr(obj, "to_json"):
        return json.loads(obj.to_json())
    if hasattr(obj, "__dict__"):
        return {k: v for k, v in vars(obj).items() if not k.startswith("_")}
    return str(obj)


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0,) else 0

    config = lab.load_config(args.config) if args.config else lab.default_config()
    if args.hbar:
        hbars = tuple(sorted((float(x) for x in args.hbar.split(",")), reverse=True))
        config.hbar = hbars
    if args.threads is not None:
        config.threads = args.threads

    try:
        return _dispatch(args, config)
    except (ValueError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args, config) -> int:
    meta = {"config_hash": lab.config_hash(config)}

    if args.command == "resonances":
        rows = []
        for hb in config.hbar:
            for r in lab.locate_resonances(config, hb):
                rows.append({"hbar": hb, "energy": r.energy,
                             "multiplicity": r.multiplicity,
                             "isolation": r.isolation,
                             "crossing": r.crossing, "width": r.width})
        if args.format == "csv":
            lines = ["hbar,E_res,multiplicity,isolation,crossing,width"]
            for r in rows:
                lines.append(
                    f"{r['hbar']:.6g},{r['energy']:.12g},{r['multiplicity']},"
                    f"{r['isolation']:.6g},"
                    f"{'' if r['crossing'] is None else format(r['crossing'], '.12g')},"
                    f"{'' if r['width'] is None else format(r['width'], '.6g')}")
            _emit(args, "resonances", "\n".join(lines) + "\n")
        else:
            _emit(args, "resonances", {"meta": meta, "rows": rows})
        return 0

    if args.command == "sweep":
        triple = config.build_triple()
        pair = PAIRS[args.pair]
        lo, hi = config.window
        tables = []
        for hb in config.hbar:
            for e in np.linspace(lo, hi, args.points):
                tables.append(assemble(triple, pair, float(e), hb,
                                       dimension=config.dimension,
                                       tol=config.ode_tol))
        if args.format == "csv":
            _emit(args, "sweep", tables_to_csv(tables))
        else:
            _emit(args, "sweep", {
                "meta": meta,
                "tables": [{"E": t.energy, "pair": str(t.pair),
                            "ells": t.ells.tolist(),
                            "weights": t.weights.tolist(),
                            "theta_branch": t.theta_branch.tolist()}
                           for t in tables]})
        return 0

    if args.command == "flow":
        hb = config.hbar[0]
        resos = lab.locate_resonances(config, hb)
        if not resos:
            print("error: no resonances in the window", file=sys.stderr)
            return 2
        if not (0 <= args.eres < len(resos)):
            print(f"error: --eres out of range (found {len(resos)})",
                  file=sys.stderr)
            return 2
        out = lab.breit_wigner_sweep(config, resos[args.eres], args.theta, hb,
                                     companions=args.companions)
        payload = {"meta": meta, **{k: v for k, v in out.items()
                                    if k != "certificate"}}
        if out.get("ok"):
            payload["certificate"] = json.loads(out["certificate"].to_json())
        _emit(args, "flow", payload)
        if not out.get("ok"):
            print(f"flow failed: {out.get('error')}", file=sys.stderr)
            return 1
        return 0 if out["verdict"] else 1

    if args.command == "bs-count":
        hb = config.hbar[0]
        triple = config.build_triple()
        ctx = lab.VerifyContext(config)
        seeds, _ = ctx.seeds(hb)
        cv = mu_flow(triple, OperatorPair.FULL_EXT, args.energy, args.theta, hb,
                     seeds=seeds, tol=config.family_tol)
        bs = mu_via_birman_schwinger(triple, args.energy, args.theta, hb,
                                     n_nodes=config.quadrature_nodes)
        verdict = cv.value == bs["count"]
        _emit(args, "bs-count", {"meta": meta, "energy": args.energy,
                                 "theta": args.theta, "hbar": hb,
                                 "mu_flow": cv.value, "mu_kernel": bs["count"],
                                 "verdict": verdict})
        return 0 if verdict else 1

    if args.command == "verify":
        if args.checks is None:
            names = DEFAULT_VERIFY
        elif args.checks.strip() == "all":
            names = tuple(lab.CHECKS)
        else:
            names = tuple(x.strip() for x in args.checks.split(","))
        results = lab.verify(config, names,
                             progress=lambda n: print(f"[verify] {n}...",
                                                      file=sys.stderr))
        payload = {"meta": meta}
        ok = True
        for name, res in results.items():
            payload[name] = res
            status = "pass" if res.get("passed") else "FAIL"
            print(f"{status}: {name}", file=sys.stderr)
            ok = ok and bool(res.get("passed"))
        _emit(args, "verify", payload)
        return 0 if ok else 1

    if args.command == "angles":
        hb = config.hbar[0]
        triple = config.build_triple()
        resos = lab.locate_resonances(config, hb, with_crossings=False)
        if not (0 <= args.eres < len(resos)):
            print(f"error: --eres out of range (found {len(resos)})",
                  file=sys.stderr)
            return 2
        out = lab.admissible_angles(config, triple, resos[args.eres].energy,
                                    hb, args.margin)
        if not out["arcs"]:
            print("no admissible angles at this margin; blocking phases "
                  f"{out['blocking'][:8]}...", file=sys.stderr)
            _emit(args, "angles", {"meta": meta, **out})
            return 1
        _emit(args, "angles", {"meta": meta, **out})
        return 0

    return 2


if __name__ == "__main__":
    sys.exit(main())
