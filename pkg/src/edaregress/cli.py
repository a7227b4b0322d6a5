"""Command-line entry point: ``edaregress <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime error.
Every command writes only inside its ``--out`` directory and leaves a
``manifest.json`` there that echoes the full run configuration.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import __version__
from .baselines import HeuristicBaseline, user_request_predict
from .config import PROFILES, RunConfig, load_run_config
from .datagen import generate_dataset, manifest as data_manifest, split_dataset
from .decoder import ParseFailure
from .errors import ConfigError, DataError, EdaRegressError
from .evaluation import ModelPredictor, evaluate, report_from_predictions, write_csv
from .experiments import attention_ablation, decode_benchmark, seq_len_ablation, temporal_ablation
from .serializer import JobRecord, read_jsonl, write_jsonl
from .trainer import train

log = logging.getLogger("edaregress")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _manifest(command: str, run: RunConfig, inputs: Sequence[Path] = (), **extra) -> dict:
    return {
        "command": command,
        "version": __version__,
        "run_config": run.to_dict(),
        "run_config_sha256": run.sha256(),
        "inputs": {p.name: _sha256(p) for p in inputs},
        **extra,
    }


def _run_config(args) -> RunConfig:
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides += [f"generator.seed={args.seed}", f"train.seed={args.seed}", f"split_seed={args.seed}"]
    if getattr(args, "n_jobs", None) is not None:
        overrides.append(f"generator.n_jobs={args.n_jobs}")
    return load_run_config(args.profile, args.config, overrides)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_records(path: str) -> list[JobRecord]:
    p = Path(path)
    if not p.exists():
        raise DataError(f"data file {p} does not exist")
    records = read_jsonl(p)
    if not records:
        raise DataError(f"data file {p} is empty")
    return records


def _test_records(run: RunConfig, records: list[JobRecord], splits: str | None) -> list[JobRecord]:
    if splits:
        ids = json.loads(Path(splits).read_text())["test"]
        by_id = {r.job_id: r for r in records}
        missing = [i for i in ids if i not in by_id]
        if missing:
            raise DataError(f"{len(missing)} test ids from {splits} are not in the data file")
        test = [by_id[i] for i in ids]
    else:
        test = split_dataset(records, run.split_ratios, run.split_seed)[2]
    return test if run.eval.n_test is None else test[: run.eval.n_test]


def cmd_gen_data(args) -> int:
    run = _run_config(args)
    out = _out_dir(args)
    records = generate_dataset(run.generator)
    data_path = out / "dataset.jsonl"
    write_jsonl(records, data_path)
    _write_json(_manifest("gen-data", run, outputs={"dataset.jsonl": _sha256(data_path)}, data=data_manifest(run.generator, records)), out / "manifest.json")
    log.info("wrote %d jobs to %s", len(records), data_path)
    return 0


def cmd_train(args) -> int:
    run = _run_config(args)
    out = _out_dir(args)
    data = Path(args.data)
    records = _load_records(args.data)
    train_set, val_set, test_set = split_dataset(records, run.split_ratios, run.split_seed)
    _write_json({"train": [r.job_id for r in train_set], "val": [r.job_id for r in val_set], "test": [r.job_id for r in test_set]}, out / "splits.json")
    final = train(
        train_set,
        val_set,
        replace(run.model),
        run.train,
        out,
        resume=args.resume,
        system_prompt=run.system_prompt,
        extra={"run_config_sha256": run.sha256()},
    )
    _write_json(_manifest("train", run, [data], final_checkpoint=final.name, n_train=len(train_set), n_val=len(val_set), n_test=len(test_set)), out / "manifest.json")
    log.info("final checkpoint %s", final)
    return 0


def cmd_predict(args) -> int:
    run = _run_config(args)
    out = _out_dir(args)
    records = _load_records(args.data)
    jobs = _test_records(run, records, args.splits) if not args.all else records
    if args.limit is not None:
        jobs = jobs[: args.limit]
    predictor = ModelPredictor.load(args.checkpoint, mode=args.mode)
    failures: dict[str, int] = {}
    with open(out / "predictions.jsonl", "w", newline="\n") as fh:
        for r in jobs:
            pred = predictor(r)
            if isinstance(pred, ParseFailure):
                failures[pred.category] = failures.get(pred.category, 0) + 1
            row = dict(predictor.outputs[-1])
            row["decode_stats"] = {k: v for k, v in row["decode_stats"].items() if k != "wall_time"}
            row["wall_time"] = predictor.outputs[-1]["decode_stats"]["wall_time"]
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    _write_json(_manifest("predict", run, [Path(args.checkpoint), Path(args.data)], mode=args.mode, n=len(jobs), parse_failures=failures), out / "manifest.json")
    log.info("%d predictions, parse failures: %s", len(jobs), failures or "none")
    return 0


def _load_predictions(path: str) -> dict[str, dict | ParseFailure]:
    preds = {}
    with open(path) as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                preds[row["job_id"]] = ParseFailure(row["failure"]) if row.get("failure") else row["predictions"]
    return preds


def cmd_eval(args) -> int:
    run = _run_config(args)
    out = _out_dir(args)
    records = _load_records(args.data)
    test = _test_records(run, records, args.splits)
    inputs = [Path(args.data)]
    reports = {}
    if args.baseline == "user":
        reports["user"] = evaluate(user_request_predict, test)
    elif args.baseline == "heuristic":
        reports["heuristic"] = evaluate(HeuristicBaseline(records, run.eval.heuristic_window_days), test)
    if args.predictions:
        preds = _load_predictions(args.predictions)
        missing = [r.job_id for r in test if r.job_id not in preds]
        if missing:
            test = [r for r in test if r.job_id in preds]
            log.warning("%d test jobs have no prediction and are skipped", len(missing))
        reports["model"] = report_from_predictions([preds[r.job_id] for r in test], [r.metrics for r in test])
        inputs.append(Path(args.predictions))
    elif args.checkpoint:
        reports["model"] = evaluate(ModelPredictor.load(args.checkpoint, mode=args.mode), test)
        inputs.append(Path(args.checkpoint))
    if not reports:
        raise ConfigError("nothing to evaluate: pass --predictions, --checkpoint or --baseline")
    _write_json({name: rep.to_dict() for name, rep in reports.items()}, out / "report.json")
    write_csv([{"method": name, **rep.csv_row()} for name, rep in reports.items()], out / "report.csv")
    _write_json(_manifest("eval", run, inputs, n_test=len(test)), out / "manifest.json")
    for name, rep in reports.items():
        log.info("%s: MAE %s pearson_avg %s", name, rep.mae, rep.pearson_avg)
    return 0


def cmd_ablate(args) -> int:
    run = _run_config(args)
    out = _out_dir(args)
    records = _load_records(args.data)
    inputs = [Path(args.data)]
    chosen = [x for x in (args.attention, args.max_seq_len, args.temporal, args.bench_decode or None) if x is not None]
    if len(chosen) != 1:
        raise ConfigError("choose exactly one of --attention, --max-seq-len, --temporal, --bench-decode")
    if args.attention is not None:
        spec = args.attention
        if spec == "full":
            window = None
            rows = attention_ablation(run, records, out, window)
        elif spec.startswith("sliding:"):
            w = spec.split(":", 1)[1]
            try:
                window = None if w == "auto" else int(w)
            except ValueError as exc:
                raise ConfigError(f"bad window in {spec!r}") from exc
            rows = attention_ablation(run, records, out, window)
        else:
            raise ConfigError(f"--attention must be full or sliding:W, got {spec!r}")
        result = {"attention": rows}
    elif args.max_seq_len is not None:
        try:
            lengths = [int(x) for x in args.max_seq_len.split(",")]
        except ValueError as exc:
            raise ConfigError(f"bad --max-seq-len {args.max_seq_len!r}") from exc
        result = {"seq_len": seq_len_ablation(run, records, out, lengths)}
    elif args.temporal is not None:
        result = {"temporal": temporal_ablation(run, records, out, args.temporal)}
    else:
        if not args.checkpoint:
            raise ConfigError("--bench-decode needs --checkpoint")
        test = _test_records(run, records, args.splits)
        result = {"bench_decode": decode_benchmark(args.checkpoint, test, out)}
        inputs.append(Path(args.checkpoint))
    _write_json(result, out / "ablation.json")
    _write_json(_manifest("ablate", run, inputs), out / "manifest.json")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edaregress", description="Text-to-text regression for EDA cloud job resources.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--profile", default="default", choices=sorted(PROFILES), help="named preset (default: %(default)s)")
        p.add_argument("--config", help="YAML/JSON file overlaid on the profile")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config value; repeatable")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("gen-data", help="generate a synthetic job dataset")
    common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-jobs", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="generate predictions with a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--splits", help="splits.json from train; predicts its test ids")
    p.add_argument("--all", action="store_true", help="predict every job in --data")
    p.add_argument("--limit", type=int)
    p.add_argument("--mode", choices=("constrained", "vanilla"), default="constrained")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions, a checkpoint or a baseline")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--splits")
    p.add_argument("--predictions")
    p.add_argument("--checkpoint")
    p.add_argument("--mode", choices=("constrained", "vanilla"), default="constrained")
    p.add_argument("--baseline", choices=("user", "heuristic", "none"), default="none")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run one ablation study")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--attention", metavar="full|sliding:W|sliding:auto")
    p.add_argument("--max-seq-len", metavar="N,N,...")
    p.add_argument("--temporal", type=int, metavar="WINDOW_DAYS")
    p.add_argument("--bench-decode", action="store_true")
    p.add_argument("--checkpoint")
    p.add_argument("--splits")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except EdaRegressError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, KeyError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return DataError.exit_code if isinstance(exc, (OSError, KeyError)) else 4


if __name__ == "__main__":
    sys.exit(main())
