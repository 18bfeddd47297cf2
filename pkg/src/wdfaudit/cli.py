"""``wdf-audit`` command line."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys

import numpy as np

from . import __version__
from .bounds import calibration_block
from .data import make_spec
from .distance import profile as distance_profile
from .drune import _clean, audit_profile, Certificate, UPWARD
from .errors import WdfError
from .experiments import ExperimentConfig, run_fragility, run_regularizer_sweep, run_triple
from .io import load_config, load_csv, write_dataset, write_distances, write_json, write_worst_case
from .models import load_model, train
from .synthetic import GENERATORS
from .transport import plan_for, worst_case_dataset

log = logging.getLogger("wdfaudit")


def _q(text: str) -> float:
    if str(text).lower() in ("inf", "infinity"):
        return float("inf")
    q = float(text)
    if q < 1:
        raise argparse.ArgumentTypeError("q must be at least 1")
    return q


def _load_data(args):
    cfg = load_config(args.config)
    if getattr(args, "sensitive", None):
        cfg["sensitive"] = args.sensitive
    if getattr(args, "label", None):
        cfg["label"] = args.label
    if args.data is None:
        raise WdfError("--data is required")
    cfg.setdefault("sensitive", "a")
    cfg.setdefault("label", "y")
    return load_csv(args.data, cfg), cfg


def _model(kind: str, data, seed: int):
    if kind.startswith("import:"):
        model = load_model(kind.split(":", 1)[1])
        if model.dim != data.d:
            raise WdfError(f"imported model expects {model.dim} features, data has {data.d}")
        return model
    return train(kind, data, seed=seed)


def cmd_certify(args) -> int:
    data, cfg = _load_data(args)
    values = tuple(sorted(set(data.sensitive.tolist())))
    spec = make_spec(args.metric, values, args.epsilon)
    model = _model(args.model, data, args.seed)
    if args.save_model:
        model.save(args.save_model)
    norm = 2.0 if np.isinf(args.q) else args.q
    prof = distance_profile(data, model, norm, method=args.method, seed=args.seed)
    audits = audit_profile(prof, data, spec, args.delta, args.q)
    calib = None
    if not args.no_calibration and not np.isinf(args.q) and args.delta > 0:
        calib = calibration_block(data, spec, model, prof, args.delta, args.q, args.lambda0, args.sigma,
                                  args.calib_samples, args.seed)
    cert = Certificate(audits, spec.epsilon, args.delta, args.q, spec.name, data.n, prof.method, calib,
                       data.standardization, {"model": {"kind": model.kind, "source": args.model}})
    if args.dump_distances:
        write_distances(args.dump_distances, prof)
    if args.emit_worst_case:
        worst = int(np.argmax([a.upper for a in audits]))
        plan = plan_for(prof, data, spec, args.delta, args.q, UPWARD, worst)
        ds, w, src = worst_case_dataset(plan, data, model)
        write_worst_case(args.emit_worst_case, ds, w, src, cfg["sensitive"], cfg["label"])
    text = cert.to_json() if args.format == "json" else cert.to_csv()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    return 0 if cert.passed or not args.strict else 2


def _experiment_data(args):
    if args.data is not None:
        return _load_data(args)[0]
    return GENERATORS["population"](args.population, seed=args.population_seed)


def _write_rows(path, header, rows):
    if not path:
        return
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def cmd_experiment(args) -> int:
    data = _experiment_data(args)
    base = dict(reps=args.reps, subsample=args.subsample, delta=args.delta, q=args.q, epsilon=args.epsilon,
                metric=args.metric, model=args.model, seed=args.seed, stratify=args.stratify,
                timings=args.timings)
    if args.kind == "fragility":
        scen = ["fragility-retrain", "fragility-fixed"] if args.scenario == "both" else [f"fragility-{args.scenario}"]
        out = {}
        for s in scen:
            cfg = ExperimentConfig(scenario=s, **base)
            rows = None if not args.rows else f"{args.rows}.{s}.csv" if len(scen) > 1 else args.rows
            out[s] = run_fragility(cfg, data, rows).to_dict(args.timings)
        payload = {"experiment": "fragility", "results": out}
    elif args.kind == "triple":
        cfg = ExperimentConfig(scenario="triple-comparison", **base)
        res = run_triple(cfg, data, args.rows)
        payload = {"experiment": "triple", **res.to_dict(args.timings)}
        _write_rows(args.long, ["rep", "constraint", "series", "value"], res.long_rows())
    else:
        deltas = tuple(float(x) for x in args.deltas.split(",")) if args.deltas else None
        cfg = ExperimentConfig(scenario="sweep", deltas=deltas, **base)
        res = run_regularizer_sweep(cfg, data)
        payload = {"experiment": "sweep", **res.to_dict()}
        _write_rows(args.long, ["constraint", "regularizer", "delta", "value"], res.long_rows())
    write_json(args.out, json.dumps(_clean(payload), indent=2, sort_keys=True))
    return 0


def cmd_synth(args) -> int:
    data = GENERATORS[args.kind](args.n, seed=args.seed)
    write_dataset(args.out, data)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wdf-audit", description="Wasserstein worst-case group-fairness audits")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def data_args(sp, required=True):
        sp.add_argument("--data", required=required, help="headed CSV file")
        sp.add_argument("--config", help="YAML/JSON ingestion config")
        sp.add_argument("--sensitive", help="sensitive column (overrides config)")
        sp.add_argument("--label", help="label column (overrides config)")

    c = sub.add_parser("certify", help="audit one classifier")
    data_args(c)
    c.add_argument("--delta", type=float, required=True)
    c.add_argument("--q", type=_q, default=2.0)
    c.add_argument("--epsilon", type=float, default=0.05)
    c.add_argument("--metric", default="dp", choices=["dp", "eo", "eodds"])
    c.add_argument("--model", default="linsvm", help="logreg|linsvm|rbfsvm|mlp|import:<path>")
    c.add_argument("--method", default="auto", choices=["auto", "closed", "newton", "sweep"])
    c.add_argument("--format", default="json", choices=["json", "csv"])
    c.add_argument("--out")
    c.add_argument("--dump-distances")
    c.add_argument("--emit-worst-case")
    c.add_argument("--save-model")
    c.add_argument("--sigma", type=float, default=0.05)
    c.add_argument("--lambda0", type=float, default=1.0)
    c.add_argument("--calib-samples", type=int, default=1000)
    c.add_argument("--no-calibration", action="store_true")
    c.add_argument("--strict", action="store_true", help="exit with status 2 when the audit fails")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_certify)

    e = sub.add_parser("experiment", help="resampling experiments")
    e.add_argument("kind", choices=["fragility", "triple", "sweep"])
    data_args(e, required=False)
    e.add_argument("--population", type=int, default=20000, help="synthetic size when --data is absent")
    e.add_argument("--population-seed", type=int, default=0)
    e.add_argument("--scenario", default="both", choices=["retrain", "fixed", "both"])
    e.add_argument("--reps", type=int, default=100)
    e.add_argument("--subsample", type=int, default=1000)
    e.add_argument("--delta", type=float, default=0.01)
    e.add_argument("--q", type=_q, default=2.0)
    e.add_argument("--epsilon", type=float, default=0.0)
    e.add_argument("--metric", default="dp", choices=["dp", "eo", "eodds"])
    e.add_argument("--model", default="linsvm")
    e.add_argument("--deltas", help="comma-separated ascending radius grid for sweep")
    e.add_argument("--stratify", action="store_true")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", help="JSON report path (stdout if omitted)")
    e.add_argument("--rows", help="per-rep CSV (appended as reps finish)")
    e.add_argument("--long", help="plot-ready long-format CSV")
    e.add_argument("--timings", action="store_true", help="include wall-clock runtimes in the report")
    e.set_defaults(func=cmd_experiment)

    s = sub.add_parser("synth", help="write a bundled synthetic dataset")
    s.add_argument("--kind", default="population", choices=sorted(GENERATORS))
    s.add_argument("--n", type=int, default=20000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except WdfError as exc:
        print(f"wdf-audit: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
