"""Command-line harness: ``msfin train | eval | ablate | infer``.

Every command is reproducible from (config JSON, seed, dataset file).  The
effective configuration — defaults resolved, seed override applied — is
echoed to the output directory together with its hash, and ``MSFIN_SEED``
overrides the config seed without editing the file.

Exit codes: 0 success, 2 config error, 3 data/checkpoint error, 4 numerical
abort, 1 any other failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .dataio import load_dataset, read_record
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    MsfinError,
    NumericalAbortError,
)
from .metrics import EVAL_REPORT_SCHEMA, evaluate
from .model import forward, load_checkpoint, save_checkpoint
from .plots import write_probability_curve_svg
from .train import RunConfig, predictions, run_ablation, train_run, write_ablation_csv

WARN_THRESHOLD_DEFAULT = 0.5


# ------------------------------------------------------------- config loading


def load_run_config(path) -> RunConfig:
    """Parse a run config JSON, applying the ``MSFIN_SEED`` override."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except ValueError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from err
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    cfg = RunConfig.from_json_dict(raw)
    seed_env = os.environ.get("MSFIN_SEED")
    if seed_env is not None:
        try:
            seed = int(seed_env)
        except ValueError:
            raise ConfigError(f"MSFIN_SEED must be an integer, got {seed_env!r}") from None
        cfg = replace(cfg, seed=seed)
        cfg.validate()
    return cfg


def _prepare_output(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    echoed = cfg.to_json_dict()
    echoed["config_hash"] = cfg.config_hash()
    with open(out / "effective_config.json", "w") as fh:
        json.dump(echoed, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def _load_records(path, what: str):
    if path is None:
        raise ConfigError(f"no {what} dataset given (set it in the config or via --data)")
    return load_dataset(path)


# ----------------------------------------------------------------- subcommands


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    records = _load_records(cfg.train_data, "training")
    out = _prepare_output(cfg)

    def on_epoch(row, params):
        save_checkpoint(out / f"epoch_{row.epoch:03d}.msfn", params, cfg.effective_model())
        mtta_txt = "n/a" if row.val_mtta is None else f"{row.val_mtta:.3f}s"
        print(
            f"epoch {row.epoch:3d}  loss {row.train_loss:.4f}"
            f"  val_ap {row.val_ap:.4f}  val_mtta {mtta_txt}"
        )

    result = train_run(cfg, records, on_epoch=on_epoch)
    save_checkpoint(out / "best.msfn", result.best_params, result.model_cfg)
    with open(out / "log.json", "w") as fh:
        json.dump(result.log.to_json_dict(), fh, indent=2)
        fh.write("\n")
    print(
        f"done: best val_ap {result.best_ap:.4f} at epoch {result.best_epoch}"
        f" -> {out / 'best.msfn'}"
    )
    return 0


def cmd_eval(args) -> int:
    cfg = load_run_config(args.config)
    data_path = args.data or cfg.eval_data
    records = _load_records(data_path, "evaluation")
    params, model_cfg = load_checkpoint(args.ckpt, expected_cfg=cfg.effective_model())
    out = _prepare_output(cfg)

    preds = predictions(params, model_cfg, records)
    report = evaluate(preds)
    payload = report.to_json_dict()
    try:
        import jsonschema

        jsonschema.validate(payload, EVAL_REPORT_SCHEMA)
    except ImportError:  # validation is a safety net, not a dependency
        pass

    with open(out / "report.json", "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    report.write_curve_csv(out / "curve.csv")
    with open(out / "probabilities.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["video_id", "frame", "probability", "warning"])
        for pred in preds:
            for t, p in enumerate(pred.probs, start=1):
                writer.writerow(
                    [pred.video_id, t, f"{p:.6f}", int(p >= cfg.warn_threshold)]
                )
    mtta_txt = "n/a" if report.mtta_seconds is None else f"{report.mtta_seconds:.3f}s"
    print(f"ap {report.ap:.4f}  mtta {mtta_txt}  ({report.num_videos} videos) -> {out}")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_run_config(args.config)
    switches = [s.strip() for s in args.switches.split(",") if s.strip()]
    if not switches:
        raise ConfigError("--switches needs at least one switch name")
    records = _load_records(cfg.train_data, "training")
    out = _prepare_output(cfg)
    rows = run_ablation(cfg, switches, records)
    write_ablation_csv(rows, out / "ablation.csv")
    for row in rows:
        mtta_txt = "n/a" if row.mtta_seconds is None else f"{row.mtta_seconds:.3f}s"
        print(f"{row.experiment:<12} ap {row.ap:.4f}  mtta {mtta_txt}")
    print(f"-> {out / 'ablation.csv'}")
    return 0


def cmd_infer(args) -> int:
    params, model_cfg = load_checkpoint(args.ckpt)
    rec = read_record(args.data, args.record)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)

    series = forward(rec, params, model_cfg)
    with open(out / "risk.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "probability"])
        for t, p in enumerate(series.probs, start=1):
            writer.writerow([t, f"{float(p):.6f}"])

    for scale, weights in series.attention.items():
        averaged = weights.mean(axis=0)  # heads x T x N -> T x N
        with open(out / f"attention_{scale}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            n_objects = averaged.shape[1]
            writer.writerow(["frame"] + [f"object_{j + 1}" for j in range(n_objects)])
            for t in range(averaged.shape[0]):
                # 8 decimals keep each row's sum within 1e-6 of one
                writer.writerow([t + 1] + [f"{w:.8f}" for w in averaged[t]])

    write_probability_curve_svg(
        out / "curve.svg",
        {"risk": series.probs},
        threshold=WARN_THRESHOLD_DEFAULT,
        t_ao=rec.t_ao if rec.label == 1 else None,
    )
    peak = float(np.max(series.probs))
    crossed = np.flatnonzero(series.probs >= WARN_THRESHOLD_DEFAULT)
    when = f"first warning at frame {crossed[0] + 1}" if crossed.size else "no warning"
    print(f"{rec.record_id}: peak {peak:.4f}, {when} -> {out}")
    return 0


# ------------------------------------------------------------------ entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="msfin",
        description="Train, evaluate, ablate, and run accident-anticipation models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a model from a run config")
    train.add_argument("-c", "--config", required=True, help="run config JSON")
    train.set_defaults(handler=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    ev.add_argument("-c", "--config", required=True, help="run config JSON")
    ev.add_argument("--ckpt", required=True, help="model checkpoint")
    ev.add_argument("--data", help="dataset file (defaults to the config's eval_data)")
    ev.set_defaults(handler=cmd_eval)

    ab = sub.add_parser("ablate", help="baseline plus one run per disabled switch")
    ab.add_argument("-c", "--config", required=True, help="run config JSON")
    ab.add_argument(
        "--switches",
        required=True,
        help="comma-separated switches: S,M,L,sam,cam_pre,cam_post",
    )
    ab.set_defaults(handler=cmd_ablate)

    inf = sub.add_parser("infer", help="score one record and export its attention")
    inf.add_argument("--ckpt", required=True, help="model checkpoint")
    inf.add_argument("--record", required=True, help="record id inside --data")
    inf.add_argument("--data", required=True, help="dataset file holding the record")
    inf.add_argument("-o", "--output", default="runs/infer", help="output directory")
    inf.set_defaults(handler=cmd_infer)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (DataError, CheckpointError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return 3
    except OSError as err:
        print(f"data error: {err}", file=sys.stderr)
        return 3
    except NumericalAbortError as err:
        print(f"numerical abort: {err}", file=sys.stderr)
        return 4
    except MsfinError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
