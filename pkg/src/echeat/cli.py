"""Command line entry point: ``echeat <command> [options]``."""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import encoding, harness, ipagent, records, synth
from .models import ARCHITECTURES, Network, build
from .nn.checkpoint import CheckpointError

log = logging.getLogger("echeat")


class ConfigError(ValueError):
    pass


def load_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    unknown = set(cfg) - {"speed_model", "train", "service", "synth", "benchmark", "exam"}
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    return cfg


def _spec(cfg) -> records.ExamSpec:
    return records.ExamSpec.from_dict(cfg["exam"]) if "exam" in cfg else records.ExamSpec.default()


def _speed(cfg) -> encoding.SpeedModel:
    return encoding.SpeedModel.from_dict(cfg["speed_model"]) if "speed_model" in cfg else encoding.SpeedModel()


def _seed(args, section: dict, default: int = 0) -> int:
    if args.seed is not None:
        return args.seed
    return int(section.get("seed", default))


def _cohort(args, cfg, student_count=None) -> synth.CohortConfig:
    section = dict(cfg.get("synth", {}))
    section["seed"] = _seed(args, section, 42)
    if student_count is not None:
        section["student_count"] = student_count
    return synth.CohortConfig(spec=_spec(cfg), speed_model=_speed(cfg), **section)


def cmd_synth(args, cfg) -> int:
    base = _cohort(args, cfg, args.students)
    overrides = {}
    if args.cheater_fraction is not None:
        overrides["cheater_fraction"] = args.cheater_fraction
    if args.collusion_pairs is not None:
        overrides["collusion_pair_count"] = args.collusion_pairs
    if overrides:
        base = replace(base, **overrides)
    recs, labels = synth.generate(base)
    out = Path(args.out)
    out.write_bytes(records.write_csv(recs))
    truth = Path(args.truth) if args.truth else out.with_suffix(".truth.csv")
    with open(truth, "w", newline="") as fh:
        synth.write_truth(fh, recs, labels)
    n_abn = sum(1 for lab in labels if lab == encoding.BehaviorLabel.ABNORMAL)
    print(f"wrote {len(recs)} records ({n_abn} abnormal) to {out}; truth in {truth}")
    return 0


def _dataset(args, cfg):
    spec, speed = _spec(cfg), _speed(cfg)
    if getattr(args, "data", None):
        recs = records.read_csv_file(args.data, spec)
    else:
        recs, _ = synth.generate(_cohort(args, cfg))
    return encoding.encode_dataset(recs, spec, speed)


def cmd_encode(args, cfg) -> int:
    X, y = _dataset(args, cfg)
    if args.out == "-":
        encoding.write_features(sys.stdout, X, y)
    else:
        with open(args.out, "w") as fh:
            encoding.write_features(fh, X, y)
        print(f"encoded {len(X)} rows to {args.out}")
    return 0


def _train_config(args, cfg) -> harness.TrainConfig:
    section = dict(cfg.get("train", {}))
    section["seed"] = _seed(args, section)
    if args.epochs is not None:
        section["epochs"] = args.epochs
    if args.lr is not None:
        section["learning_rate"] = args.lr
    return harness.TrainConfig.from_dict(section)


def cmd_train(args, cfg) -> int:
    tc = _train_config(args, cfg)
    X, y = _dataset(args, cfg)
    if tc.augment_count and (y == encoding.BehaviorLabel.ABNORMAL).any():
        X, y = synth.augment(X, y, tc.augment_count, seed=tc.seed)
    (Xtr, ytr), (Xva, yva) = harness.split(X, y, tc.split_ratio, seed=tc.seed)
    model = build(args.arch, dtype=np.dtype(args.dtype), seed=tc.seed)

    def progress(epoch, loss):
        log.info("epoch %d loss %.5f", epoch + 1, loss)

    result = harness.train(model, Xtr, ytr, tc, on_epoch=progress)
    model.save(args.out)
    report = harness.evaluate(model, Xva, yva)
    print(
        f"{args.arch}: {result.steps} steps, loss {result.loss_history[0]:.4f} -> {result.loss_history[-1]:.4f}; "
        f"validation accuracy {report.accuracy:.2f}% on {len(yva)} rows; saved {args.out}"
        if result.loss_history
        else f"{args.arch}: 0 epochs; saved {args.out}"
    )
    return 0


def cmd_eval(args, cfg) -> int:
    model = Network.load(args.model)
    X, y = _dataset(args, cfg)
    report = harness.evaluate(model, X, y)
    print(
        f"accuracy {report.accuracy:.2f}%  TP {report.tp}  FP {report.fp}  TN {report.tn}  FN {report.fn}  "
        f"AUC {report.auc:.4f}"
    )
    if args.roc:
        report.write_roc_csv(args.roc)
    if args.json:
        Path(args.json).write_text(json.dumps(report.to_dict(), indent=2))
    return 0


def cmd_benchmark(args, cfg) -> int:
    bc = harness.BenchmarkConfig.from_config(cfg)
    if args.seed is not None:
        bc.train_seeds = [args.seed]
    if args.epochs is not None:
        bc.train.epochs = args.epochs
    result = harness.benchmark(bc, _spec(cfg), _speed(cfg), out_dir=args.out)
    print(harness.format_table(result.table()))
    if args.out:
        print(f"report and ROC data written to {args.out}")
    return 0


def cmd_serve(args, cfg) -> int:
    from .service import ProctorServer, ProctorService, ServiceConfig, model_detector

    sc = ServiceConfig.from_dict(cfg.get("service", {}))
    sc.seed = _seed(args, {"seed": sc.seed})
    host = args.host or sc.host
    port = args.port if args.port is not None else sc.port
    model = Network.load(args.model)
    alert_fh = open(sc.alert_log, "a") if sc.alert_log else None
    event_fh = open(sc.event_log, "a") if sc.event_log else None
    service = ProctorService(
        model_detector(model), _spec(cfg), _speed(cfg), sc.set_pool, sc.seed,
        alert_log=alert_fh, event_log=event_fh,
    )
    server = ProctorServer(service, host, port, sc.max_line_bytes)
    try:
        asyncio.run(server.serve_forever())
    except KeyboardInterrupt:
        pass
    finally:
        for fh in (alert_fh, event_fh):
            if fh:
                fh.close()
    return 0


def cmd_ip_log(args, cfg) -> int:
    """Run every record's IP through a fresh registry, in file order."""
    spec = _spec(cfg)
    recs = records.read_csv_file(args.data, spec)
    pool = cfg.get("service", {}).get("set_pool", list(spec.set_pool))
    out = open(args.out, "w") if args.out and args.out != "-" else sys.stdout
    try:
        registry = ipagent.IpRegistry(pool, audit=ipagent.DecisionLog(out, clock=lambda: 0.0))
        rng = np.random.default_rng(_seed(args, {}))
        for r in recs:
            registry.register(r.ip, rng, session_id=r.id)
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="RNG seed (overrides config)")
    common.add_argument("--config", default=None, help="JSON config with speed_model/train/service/synth sections")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="echeat", description="Online exam cheating detection toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic cohort CSV")
    s.add_argument("--students", type=int, default=None)
    s.add_argument("--cheater-fraction", type=float, default=None)
    s.add_argument("--collusion-pairs", type=int, default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--truth", default=None, help="ground-truth sidecar (default: <out>.truth.csv)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("encode", parents=[common], help="CSV records to 23-bit feature lines")
    s.add_argument("--data", required=True)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("train", parents=[common], help="train one architecture and save a checkpoint")
    s.add_argument("--arch", choices=ARCHITECTURES, default="denselstm")
    s.add_argument("--data", default=None, help="CSV records (default: synthetic cohort)")
    s.add_argument("--epochs", type=int, default=None)
    s.add_argument("--lr", type=float, default=None)
    s.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    s.add_argument("--out", default="model.echk")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on labelled records")
    s.add_argument("--model", required=True)
    s.add_argument("--data", default=None)
    s.add_argument("--roc", default=None, help="write threshold,fpr,tpr CSV")
    s.add_argument("--json", default=None)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("benchmark", parents=[common], help="compare architectures on two synthetic terms")
    s.add_argument("--epochs", type=int, default=None)
    s.add_argument("--out", default=None, help="directory for report.json and ROC CSVs")
    s.set_defaults(func=cmd_benchmark)

    s = sub.add_parser("serve", parents=[common], help="run the proctoring service")
    s.add_argument("--model", required=True)
    s.add_argument("--host", default=None)
    s.add_argument("--port", type=int, default=None)
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("ip-log", parents=[common], help="replay a CSV's IPs through the registry")
    s.add_argument("--data", required=True)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_ip_log)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except (
        OSError,
        json.JSONDecodeError,
        ConfigError,
        CheckpointError,
        records.RecordError,
        ValueError,
        TypeError,
        ArithmeticError,
    ) as exc:
        print(f"echeat {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
