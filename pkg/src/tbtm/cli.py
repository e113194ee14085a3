"""Command-line front end.

Exit codes: 0 success, 1 validation failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from tbtm import config as cfgfile
from tbtm.cipher import KeySet, encrypt_field
from tbtm.control import dynamic_thresholds, recommend
from tbtm.datagen import (
    ALIASES,
    gen_onoff,
    gen_preset,
    gen_sensor_dataset,
    ingest_movielens,
    write_records,
)
from tbtm.errors import TBTMError
from tbtm.experiments import (
    GROUPS,
    analyze_global,
    bench,
    onoff_rows,
    pooled_kappa,
    run_experiment,
    run_movielens,
    run_onoff_suite,
    run_sensor_experiment,
)
from tbtm.pipeline import PipelineConfig, TrustPipeline, load_states
from tbtm.predictor import predict_satisfaction
from tbtm.registry import Registry, entity_key
from tbtm.tokenchain import Ledger, append_records, csv_s_max, read_record_csv, validate_chain
from tbtm.trust import TrustOffsetSplit, split_offset

log = logging.getLogger("tbtm")

EXIT_OK, EXIT_INVALID, EXIT_USAGE = 0, 1, 2
RUN_CONFIG = "config.txt"


class UsageError(TBTMError):
    pass


def _keys(args) -> KeySet:
    if args.keys:
        return KeySet.from_hex(args.keys)
    return KeySet.from_env()


def _settings(args):
    return cfgfile.load_config(args.config)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_csv(rows: list[dict], out) -> None:
    if not rows:
        return
    w = csv.DictWriter(out, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def _load_records(path: str, s_max: float | None):
    if s_max is None:
        s_max = csv_s_max(path)
    if s_max is None:
        raise UsageError(f"{path} has no '# s_max=' header; pass --s-max")
    return read_record_csv(path, s_max)


# -- gen / ingest -------------------------------------------------------------


def cmd_gen(args) -> int:
    meta = {"dataset": args.dataset}
    if args.dataset in ALIASES:
        records = gen_preset(args.dataset, args.n)
    elif args.dataset == "onoff":
        records = gen_onoff(args.pattern, args.period, args.n, seed=args.seed)
        meta.update(pattern=args.pattern, period=args.period, seed=args.seed)
    else:
        records = gen_sensor_dataset()
    if args.out:
        write_records(records, args.out, meta)
    else:
        write_records(records, sys.stdout, meta)
    return EXIT_OK


def cmd_ingest(args) -> int:
    result = ingest_movielens(args.ratings, args.movies, limit=args.limit)
    meta = {"source": "movielens", "skipped": result.skipped_missing_metadata}
    if args.out:
        write_records(result.records, args.out, meta)
    else:
        write_records(result.records, sys.stdout, meta)
    log.info("ingested %d records, skipped %d without metadata", len(result.records), result.skipped_missing_metadata)
    return EXIT_OK


# -- chain --------------------------------------------------------------------


def cmd_chain_build(args) -> int:
    records = _load_records(args.records, args.s_max)
    ledger = Ledger.load(args.ledger_out) if args.append and Path(args.ledger_out).exists() else Ledger(difficulty=args.difficulty)
    append_records(ledger, records, _keys(args), block_size=args.block_size)
    ledger.save(args.ledger_out)
    print(f"{len(ledger)} blocks, {ledger.record_count} records -> {args.ledger_out}")
    return EXIT_OK


def cmd_chain_validate(args) -> int:
    ledger = Ledger.load(args.ledger, difficulty=args.min_difficulty)
    report = validate_chain(ledger)
    print(report.summary())
    return EXIT_OK if report.valid else EXIT_INVALID


# -- run / experiments --------------------------------------------------------


def _pipeline(args, predict: bool = False) -> TrustPipeline:
    params, thresholds, ratio = _settings(args)
    config = PipelineConfig(
        params=params,
        ratio=ratio,
        thresholds=thresholds,
        replay_filter=not getattr(args, "no_replay_filter", False),
        predict=predict,
    )
    if getattr(args, "kappa", None) is not None:
        config.kappa = args.kappa
    return TrustPipeline(config, _keys(args))


def _feed(args, pipe: TrustPipeline) -> None:
    if args.ledger:
        ledger = Ledger.load(args.ledger)
        report = validate_chain(ledger)
        if not report.valid:
            raise LedgerInvalid(report.summary())
        pipe.run_ledger(ledger)
    elif args.records:
        pipe.run(_load_records(args.records, args.s_max))
    else:
        raise UsageError("pass --records or --ledger")


class LedgerInvalid(TBTMError):
    pass


def cmd_run(args) -> int:
    pipe = _pipeline(args, predict=args.predict)
    _feed(args, pipe)
    out = _out_dir(args)
    pipe.save(out)
    params, thresholds, ratio = _settings(args)
    (out / RUN_CONFIG).write_text(cfgfile.dump(params, thresholds, ratio), encoding="utf-8")
    print(
        f"processed {pipe.processed} records ({pipe.applied} applied, {pipe.replays} replays, "
        f"{pipe.blocked} blocked); {len(pipe.registry)} entities -> {out}"
    )
    return EXIT_OK


GNUPLOT = """set datafile separator ','
set key autotitle columnhead
set xlabel 'n'
set ylabel 'trust'
plot for [r in "s o e"] '{csv}' using (strcol(1) eq r ? $2 : 1/0):3 with lines title 'T_'.r, \\
     for [r in "s o e"] '{csv}' using (strcol(1) eq r ? $2 : 1/0):4 with lines dt 2 title "T'_".r
"""


def cmd_experiment(args) -> int:
    out = _out_dir(args)
    keys = _keys(args)
    which = args.id
    if which in GROUPS:
        result = run_experiment(which, n=args.n, keys=keys)
        result.write(out)
        _write_csv(result.summary_rows(), sys.stdout)
        if args.gnuplot:
            (out / f"{which}.gp").write_text(GNUPLOT.format(csv=f"{which}_trajectory.csv"), encoding="utf-8")
    elif which == "kappa":
        results = [run_experiment(g, n=args.n, keys=keys) for g in ("G1", "G7", "G8")]
        print(f"pooled kappa {pooled_kappa(results)!r}")
    elif which == "onoff":
        rows = onoff_rows(run_onoff_suite(n=args.n, period=args.period, seed=args.seed, keys=keys))
        with open(out / "onoff_summary.csv", "w", newline="", encoding="utf-8") as fh:
            _write_csv(rows, fh)
        _write_csv(rows, sys.stdout)
    elif which == "sensor":
        result = run_sensor_experiment(keys=keys)
        result.pipeline.save(out)
        rows = [
            {"entity": s, "actual_usage": result.actual_usage[s], "predicted_usage": result.predicted_usage[s]}
            for s in sorted(result.actual_usage)
        ]
        with open(out / "sensor_usage.csv", "w", newline="", encoding="utf-8") as fh:
            _write_csv(rows, fh)
        print(f"entities {result.entity_count}; top tag {result.top_tag()}; top-3 agreement {result.top3_agree()}")
    elif which == "movielens":
        if not (args.ratings and args.movies):
            raise UsageError("experiment movielens needs --ratings and --movies")
        result = run_movielens(args.ratings, args.movies, limit=args.limit, keys=keys, kappa=args.kappa)
        result.pipeline.save(out)
        summary = result.pipeline.prediction_summary()
        rows = analyze_global(result.pipeline, result.census)
        with open(out / "global_trust.csv", "w", newline="", encoding="utf-8") as fh:
            _write_csv(rows, fh)
        print(
            f"kappa {result.kappa!r}; defined {summary.defined}, undefined {summary.undefined}; "
            f"omega in [-2, 2]: {summary.fraction_within(-2, 2):.4f}"
        )
    else:
        raise UsageError(f"unknown experiment {which}")
    return EXIT_OK


# -- registry, prediction, control ---------------------------------------------


def _resolve_pk(args, pipe_keys: KeySet) -> str:
    if ":" in args.pk:
        return args.pk
    if args.role is None:
        raise UsageError("--pk without a role prefix needs --role")
    if args.plain:
        return entity_key(args.role, _token(args.pk, pipe_keys))
    return f"{args.role}:{args.pk}"


def _token(identity: str, keys: KeySet) -> bytes:
    return encrypt_field(identity, keys)


def cmd_registry_check(args) -> int:
    run_dir = Path(args.run)
    replay = None
    if args.ledger or args.records:
        if args.config is None and (run_dir / RUN_CONFIG).exists():
            args.config = str(run_dir / RUN_CONFIG)
        pipe = _pipeline(args)
        _feed(args, pipe)
        replay = pipe.registry.get_history
    registry = Registry.load(run_dir / "registry", replay=replay)
    pk = _resolve_pk(args, _keys(args))
    ok = registry.hash_check(pk)
    if ok:
        print(f"{pk}: ok")
        return EXIT_OK
    repaired = replay is not None and registry.hash_check(pk)
    if repaired:
        registry.save(run_dir / "registry")
    print(f"{pk}: TAMPERED" + ("; history reloaded from replay" if repaired else ""))
    return EXIT_INVALID


def cmd_registry_passwd(args) -> int:
    run_dir = Path(args.run)
    registry = Registry.load(run_dir / "registry")
    pk = _resolve_pk(args, _keys(args))
    registry.change_password(pk, args.old, args.new)
    registry.save(run_dir / "registry")
    print(f"{pk}: secret updated")
    return EXIT_OK


def cmd_predict(args) -> int:
    params, _, ratio = _settings(args)
    if args.records:
        pipe = _pipeline(args, predict=True)
        _feed(args, pipe)
        pipe.write_predictions(args.out or sys.stdout)
        summary = pipe.prediction_summary()
        log.info("defined %d, undefined %d", summary.defined, summary.undefined)
        return EXIT_OK
    if not (args.run and args.s and args.o and args.e):
        raise UsageError("predict needs --records, or --run with --s --o --e")
    payload, states, _, _ = load_states(Path(args.run) / "states.json")
    keys = _keys(args)
    pks = [entity_key(r, _token(ident, keys)) for r, ident in (("s", args.s), ("o", args.o), ("e", args.e))]
    missing = [pk for pk in pks if pk not in states]
    if missing:
        raise UsageError(f"unknown entities: {', '.join(missing)}")
    s_max = args.s_max or payload["s_max"]
    if args.score is not None:
        offsets = split_offset(args.score, s_max, ratio)
    else:
        offsets = TrustOffsetSplit(*(states[pk].mean_offset for pk in pks))
    kappa = args.kappa if args.kappa is not None else payload["kappa"]
    pred = predict_satisfaction(*(states[pk] for pk in pks), offsets, params, kappa, s_max)
    print("undefined" if pred.value is None else repr(pred.value))
    return EXIT_OK


def cmd_recommend(args) -> int:
    params, _, _ = _settings(args)
    payload, states, statuses, pairs = load_states(Path(args.run) / "states.json")
    keys = _keys(args)
    s_pk = entity_key("s", _token(args.s, keys))
    if s_pk not in states:
        raise UsageError(f"unknown requester {args.s}")
    kappa = args.kappa if args.kappa is not None else payload["kappa"]
    ranked = recommend(pairs, s_pk, states, args.k, params, kappa, payload["s_max"], statuses)
    pipe = TrustPipeline(keys=keys)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["rank", "o", "e", "P", "T_o"])
    for i, rec in enumerate(ranked, 1):
        w.writerow([i, pipe.label(rec.o), pipe.label(rec.e), "" if rec.predicted is None else repr(rec.predicted), repr(rec.provider_trust)])
    return EXIT_OK


def cmd_thresholds(args) -> int:
    _, thresholds, _ = _settings(args)
    if args.dynamic:
        if not args.run:
            raise UsageError("--dynamic needs --run")
        registry = Registry.load(Path(args.run) / "registry")
        thresholds = dynamic_thresholds([registry.latest(pk) for pk in registry.entities()], thresholds)
    print(f"mu={thresholds.mu!r} nu={thresholds.nu!r} epsilon={thresholds.epsilon!r} tau={thresholds.tau}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    run_dir = Path(args.run)
    _, states, statuses, _ = load_states(run_dir / "states.json")
    pipe = TrustPipeline(keys=_keys(args))
    rows = []
    for pk in sorted(states):
        rows.append({"role": pk[0], "entity": pipe.label(pk), "trust": states[pk].last, "status": statuses[pk].value})
    if args.output:
        with open(args.output, "w", newline="", encoding="utf-8") as fh:
            _write_csv(rows, fh)
    else:
        _write_csv(rows, sys.stdout)
    return EXIT_OK


def cmd_bench(args) -> int:
    counts = [int(c) for c in args.counts.split(",")]
    result = bench(counts, repeats=args.repeats, seed=args.seed, keys=_keys(args))
    rows = [{"records": c, "seconds": t} for c, t in result.rows]
    out = _out_dir(args)
    with open(out / "bench.csv", "w", newline="", encoding="utf-8") as fh:
        _write_csv(rows, fh)
    _write_csv(rows, sys.stdout)
    print(f"# slope={result.slope!r} intercept={result.intercept!r} r2={result.r2!r}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tbtm", description="TokenChain ledger and trust management")
    ap.add_argument("--config", help="key=value file (alpha, beta, gamma, delta, t0, mu, nu, epsilon, tau, ratio)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", dest="out_dir", default="out", help="output directory")
    ap.add_argument("--keys", help="k1hex,k2hex,k3hex (default: $TBTM_KEYS, then built-in demo keys)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a simulated dataset")
    p.add_argument("--dataset", required=True, choices=["d1", "d2_1", "d2_2", "onoff", "sensor"])
    p.add_argument("--pattern", type=int, default=1, choices=[1, 2, 3, 4])
    p.add_argument("--period", type=int, default=200)
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--out", help="records file (default stdout)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("ingest", help="convert an external corpus to records")
    p.add_argument("source", choices=["movielens"])
    p.add_argument("--ratings", required=True)
    p.add_argument("--movies", required=True)
    p.add_argument("--limit", type=int, default=100_000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ingest)

    chain = sub.add_parser("chain", help="build or validate a ledger").add_subparsers(dest="chain_cmd", required=True)
    p = chain.add_parser("build")
    p.add_argument("--records", required=True)
    p.add_argument("--s-max", type=float)
    p.add_argument("--block-size", type=int, default=100)
    p.add_argument("--difficulty", type=int, default=8)
    p.add_argument("--append", action="store_true", help="extend an existing ledger file")
    p.add_argument("--out", dest="ledger_out", required=True)
    p.set_defaults(func=cmd_chain_build)
    p = chain.add_parser("validate")
    p.add_argument("--ledger", required=True)
    p.add_argument("--min-difficulty", type=int)
    p.set_defaults(func=cmd_chain_validate)

    def add_input(p):
        p.add_argument("--records")
        p.add_argument("--ledger")
        p.add_argument("--s-max", type=float)
        p.add_argument("--no-replay-filter", action="store_true")
        p.add_argument("--kappa", type=float)

    p = sub.add_parser("run", help="evaluate trust over a record file or ledger")
    add_input(p)
    p.add_argument("--predict", action="store_true")
    p.add_argument("--out", dest="out_dir", default=argparse.SUPPRESS, help="output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("experiment", help="reproduce an experiment")
    p.add_argument("id", choices=[*GROUPS, "kappa", "onoff", "sensor", "movielens"])
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--period", type=int, default=200)
    p.add_argument("--ratings")
    p.add_argument("--movies")
    p.add_argument("--limit", type=int, default=100_000)
    p.add_argument("--kappa", type=float)
    p.add_argument("--gnuplot", action="store_true", help="also write a gnuplot script")
    p.add_argument("--out", dest="out_dir", default=argparse.SUPPRESS, help="output directory")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("predict", help="predict satisfaction")
    add_input(p)
    p.add_argument("--run", help="run directory holding states.json")
    p.add_argument("--s")
    p.add_argument("--o")
    p.add_argument("--e")
    p.add_argument("--score", type=float, help="score of the interaction (default: mean historical offsets)")
    p.add_argument("--out", help="batch output file (default stdout)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("recommend", help="rank (o, e) pairs for a requester")
    p.add_argument("--run", required=True)
    p.add_argument("--s", required=True)
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--kappa", type=float)
    p.set_defaults(func=cmd_recommend)

    reg = sub.add_parser("registry", help="hash check or password change").add_subparsers(dest="reg_cmd", required=True)
    for name, func in (("check", cmd_registry_check), ("passwd", cmd_registry_passwd)):
        p = reg.add_parser(name)
        p.add_argument("--run", required=True)
        p.add_argument("--pk", required=True, help="role:hex key, or hex/plain id with --role")
        p.add_argument("--role", choices=["s", "o", "e"])
        p.add_argument("--plain", action="store_true", help="--pk is a plaintext identity")
        p.set_defaults(func=func)
    reg.choices["check"].add_argument("--records")
    reg.choices["check"].add_argument("--ledger")
    reg.choices["check"].add_argument("--s-max", type=float)
    reg.choices["passwd"].add_argument("--old", default="sk")
    reg.choices["passwd"].add_argument("--new", required=True)

    ctl = sub.add_parser("control", help="control-layer views").add_subparsers(dest="ctl_cmd", required=True)
    p = ctl.add_parser("thresholds")
    p.add_argument("--dynamic", action="store_true")
    p.add_argument("--run")
    p.set_defaults(func=cmd_thresholds)

    p = sub.add_parser("analyze", help="latest trust per entity")
    p.add_argument("--run", required=True)
    p.add_argument("--output")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("bench", help="time the pipeline over growing record counts")
    p.add_argument("--counts", default="10000,20000,40000,80000")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", dest="out_dir", default=argparse.SUPPRESS, help="output directory")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except LedgerInvalid as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except UsageError as exc:
        print(f"tbtm: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TBTMError as exc:
        print(f"tbtm: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc, (cfgfile.ConfigError,)) else EXIT_INVALID
    except OSError as exc:
        print(f"tbtm: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
