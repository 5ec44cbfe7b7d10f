"""Training loop, run configuration, and the ablation driver.

A run is fully determined by (RunConfig, dataset): parameter init, the
train/validation split, and per-epoch batch order all derive from the config
seed through fixed SeedSequence keys, and reductions happen in a fixed order,
so the same config and data reproduce the same loss trajectory bit-for-bit.

The reported train loss is the mean over batches of the batch loss, where a
batch loss is the mean of per-video sequence losses.  Validation AP/mTTA are
computed every epoch; the best-AP epoch is tracked for checkpointing.  A
non-finite loss or gradient aborts immediately with (epoch, batch, grad norm)
diagnostics rather than skipping the batch.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError, MetricUndefinedError, NumericalAbortError
from .losses import LossConfig, SequenceTarget, sequence_loss
from .metrics import VideoPrediction, average_precision, mtta
from .model import MsFINConfig, MsFINParams, forward_probs, init_msfin_params
from .optim import AdamW, OptimizerConfig

# Ablation switch names, CLI short forms included.
SWITCHES = ("short", "mid", "long", "sam", "cam_pre", "cam_post")
SCALE_BY_SWITCH = {"short": "s", "mid": "m", "long": "l"}
SWITCH_ALIASES = {"S": "short", "M": "mid", "L": "long"}


def canonical_switch(name: str) -> str:
    name = SWITCH_ALIASES.get(name, name)
    if name not in SWITCHES:
        raise ConfigError(f"unknown ablation switch {name!r}; known: {SWITCHES}")
    return name


@dataclass(frozen=True)
class RunConfig:
    """Everything a training run needs, JSON round-trippable."""

    model: MsFINConfig
    loss: LossConfig
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    batch_size: int = 10
    epochs: int = 60
    seed: int = 0
    train_data: str | None = None
    eval_data: str | None = None
    output_dir: str = "runs/out"
    disable: tuple[str, ...] = ()
    temporal: str = "ctm"
    val_fraction: float = 0.2
    warn_threshold: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "disable", tuple(self.disable))

    def validate(self) -> None:
        self.model.validate()
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must lie in (0, 1), got {self.val_fraction}")
        if not 0.0 < self.warn_threshold < 1.0:
            raise ConfigError(f"warn_threshold must lie in (0, 1), got {self.warn_threshold}")
        if self.temporal != "ctm":
            raise ConfigError(
                f"temporal layer {self.temporal!r} is not available; only 'ctm' is"
            )
        for switch in self.disable:
            canonical_switch(switch)
        if len(set(self.disable)) != len(self.disable):
            raise ConfigError(f"duplicate ablation switches in {self.disable}")
        if self.loss.fps != self.model.fps:
            raise ConfigError(
                f"loss fps {self.loss.fps} disagrees with model fps {self.model.fps}"
            )
        self.effective_model()

    def effective_model(self) -> MsFINConfig:
        """Model config with the disable switches applied."""
        scales = tuple(
            s
            for s in self.model.scales
            if s not in {SCALE_BY_SWITCH[sw] for sw in self.disable if sw in SCALE_BY_SWITCH}
        )
        if not scales:
            raise ConfigError("cannot disable every pooling scale; no scene branch remains")
        cfg = replace(
            self.model,
            scales=scales,
            use_sam=self.model.use_sam and "sam" not in self.disable,
            use_cam_pre=self.model.use_cam_pre and "cam_pre" not in self.disable,
            use_cam_post=self.model.use_cam_post and "cam_post" not in self.disable,
        )
        cfg.validate()
        return cfg

    def to_json_dict(self) -> dict:
        return {
            "model": self.model.to_json_dict(),
            "loss": {
                "fps": self.loss.fps,
                "variant": self.loss.variant,
                "alpha": self.loss.alpha,
                "gamma": self.loss.gamma,
            },
            "optimizer": self.optimizer.to_json_dict(),
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "seed": self.seed,
            "train_data": self.train_data,
            "eval_data": self.eval_data,
            "output_dir": self.output_dir,
            "disable": list(self.disable),
            "temporal": self.temporal,
            "val_fraction": self.val_fraction,
            "warn_threshold": self.warn_threshold,
        }

    @staticmethod
    def from_json_dict(raw: dict) -> "RunConfig":
        # config_hash is harness metadata; accepting it lets an echoed
        # effective_config.json be rerun as-is.
        raw = {k: v for k, v in raw.items() if k != "config_hash"}
        known = set(RunConfig.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown run config keys: {sorted(unknown)}")
        if "model" not in raw or "loss" not in raw:
            raise ConfigError("run config needs 'model' and 'loss' sections")
        payload = dict(raw)
        payload["model"] = MsFINConfig.from_json_dict(payload["model"])
        payload["loss"] = _loss_from_dict(payload["loss"])
        if "optimizer" in payload:
            payload["optimizer"] = _optimizer_from_dict(payload["optimizer"])
        cfg = RunConfig(**payload)
        cfg.validate()
        return cfg

    def config_hash(self) -> str:
        blob = json.dumps(self.to_json_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _loss_from_dict(raw: dict) -> LossConfig:
    known = {"fps", "variant", "alpha", "gamma"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown loss config keys: {sorted(unknown)}")
    return LossConfig(**raw)


def _optimizer_from_dict(raw: dict) -> OptimizerConfig:
    known = set(OptimizerConfig.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown optimizer config keys: {sorted(unknown)}")
    return OptimizerConfig(**raw)


# ---------------------------------------------------------------- training log


@dataclass(frozen=True)
class EpochRow:
    epoch: int
    train_loss: float
    val_ap: float
    val_mtta: float | None
    wall_clock_s: float


@dataclass(frozen=True)
class TrainingLog:
    rows: list[EpochRow]
    seed: int
    config_hash: str

    def trajectory(self) -> list[tuple[int, float, float, float | None]]:
        """Loss/metric path without wall-clock, for reproducibility checks."""
        return [(r.epoch, r.train_loss, r.val_ap, r.val_mtta) for r in self.rows]

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "config_hash": self.config_hash,
            "rows": [
                {
                    "epoch": r.epoch,
                    "train_loss": r.train_loss,
                    "val_ap": r.val_ap,
                    "val_mtta": r.val_mtta,
                    "wall_clock_s": r.wall_clock_s,
                }
                for r in self.rows
            ],
        }


# ------------------------------------------------------------------ data prep


def stratified_split(records, val_fraction: float, seed: int):
    """Seeded 80/20-style split keeping the label ratio in both halves.

    Groups with a single record stay in the training half; otherwise each
    label contributes round(val_fraction * n) validation records, at least one
    and never all of them.
    """
    if not 0.0 < val_fraction < 1.0:
        raise ConfigError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    records = list(records)
    by_label: dict[int, list] = {}
    for rec in records:
        by_label.setdefault(rec.label, []).append(rec)
    train, val = [], []
    for label in sorted(by_label):
        group = by_label[label]
        rng = np.random.default_rng(np.random.SeedSequence((seed, 3, label)))
        order = rng.permutation(len(group))
        if len(group) == 1:
            n_val = 0
        else:
            n_val = min(max(1, round(val_fraction * len(group))), len(group) - 1)
        for pos, i in enumerate(order):
            (val if pos < n_val else train).append(group[i])
    return train, val


def predictions(params: MsFINParams, cfg: MsFINConfig, records) -> list[VideoPrediction]:
    """Forward every record and wrap the probability series for the metrics."""
    out = []
    for rec in records:
        probs = forward_probs(rec, params, cfg).data.astype(np.float64)
        out.append(
            VideoPrediction(
                rec.record_id,
                np.clip(probs, 0.0, 1.0),
                rec.label,
                t_ao=rec.t_ao,
                fps=rec.fps,
            )
        )
    return out


# -------------------------------------------------------------- training loop


@dataclass
class TrainResult:
    params: MsFINParams
    log: TrainingLog
    best_epoch: int
    best_ap: float
    best_params: MsFINParams
    model_cfg: MsFINConfig
    train_records: list
    val_records: list


def _snapshot(params: MsFINParams) -> dict[str, np.ndarray]:
    return {name: t.data.copy() for name, t in params.named_tensors()}


def _restore(params: MsFINParams, snap: dict[str, np.ndarray]) -> MsFINParams:
    import copy

    clone = copy.deepcopy(params)
    for name, t in clone.named_tensors():
        t.data[...] = snap[name]
    return clone


def train_run(cfg: RunConfig, records, on_epoch=None) -> TrainResult:
    """Run the configured training; pure in-memory, no files touched."""
    cfg.validate()
    records = list(records)
    if not records:
        raise DataError("training needs at least one record")
    labels = {rec.label for rec in records}
    if labels != {0, 1}:
        raise DataError("training pool must contain both positive and negative videos")
    model_cfg = cfg.effective_model()

    train_recs, val_recs = stratified_split(records, cfg.val_fraction, cfg.seed)
    if not train_recs or not val_recs:
        raise DataError(
            f"dataset of {len(records)} records is too small for a"
            f" {1 - cfg.val_fraction:.0%}/{cfg.val_fraction:.0%} split"
        )

    params = init_msfin_params(
        model_cfg, np.random.default_rng(np.random.SeedSequence((cfg.seed, 10)))
    )
    opt = AdamW(params.named_tensors(), cfg.optimizer)

    rows: list[EpochRow] = []
    best_ap = -1.0
    best_epoch = 0
    best_snap = _snapshot(params)
    for epoch in range(1, cfg.epochs + 1):
        started = time.monotonic()
        order_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 2, epoch)))
        order = order_rng.permutation(len(train_recs))
        batch_losses: list[float] = []
        for batch_idx in range(0, len(order), cfg.batch_size):
            batch = [train_recs[i] for i in order[batch_idx : batch_idx + cfg.batch_size]]
            opt.zero_grad()
            total = None
            for rec in batch:
                probs = forward_probs(rec, params, model_cfg)
                target = SequenceTarget(rec.label, t_ao=rec.t_ao)
                term = sequence_loss(probs, target, cfg.loss) * (1.0 / len(batch))
                total = term if total is None else total + term
            loss_value = float(total.item())
            if not np.isfinite(loss_value):
                raise NumericalAbortError(
                    epoch, batch_idx // cfg.batch_size, float("nan"),
                    f"non-finite loss {loss_value} at epoch {epoch}",
                )
            total.backward()
            grad_norm = opt.grad_norm()
            if not np.isfinite(grad_norm):
                raise NumericalAbortError(
                    epoch, batch_idx // cfg.batch_size, grad_norm,
                    f"non-finite gradient norm at epoch {epoch}",
                )
            opt.step()
            batch_losses.append(loss_value)

        train_loss = float(np.mean(batch_losses)) if batch_losses else 0.0
        val_preds = predictions(params, model_cfg, val_recs)
        val_ap = average_precision(val_preds)
        try:
            val_mtta = mtta(val_preds)
        except MetricUndefinedError:
            val_mtta = None
        rows.append(
            EpochRow(epoch, train_loss, val_ap, val_mtta, time.monotonic() - started)
        )
        if val_ap > best_ap:
            best_ap = val_ap
            best_epoch = epoch
            best_snap = _snapshot(params)
        if on_epoch is not None:
            on_epoch(rows[-1], params)

    log = TrainingLog(rows=rows, seed=cfg.seed, config_hash=cfg.config_hash())
    return TrainResult(
        params=params,
        log=log,
        best_epoch=best_epoch,
        best_ap=max(best_ap, 0.0) if rows else 0.0,
        best_params=_restore(params, best_snap),
        model_cfg=model_cfg,
        train_records=train_recs,
        val_records=val_recs,
    )


# ------------------------------------------------------------------- ablation


@dataclass(frozen=True)
class AblationRow:
    experiment: str
    ap: float
    mtta_seconds: float | None


def run_ablation(cfg: RunConfig, switches, records) -> list[AblationRow]:
    """Baseline plus one run per switch, sharing seed, data, and split."""
    names = []
    for raw in switches:
        name = canonical_switch(raw)
        if name in names:
            raise ConfigError(f"duplicate ablation switch {name!r}")
        names.append(name)
    variants = [("baseline", cfg)]
    for name in names:
        variant = replace(cfg, disable=cfg.disable + (name,))
        variant.validate()  # all-scales-off and friends rejected up front
        variants.append((f"no_{name}", variant))

    rows = []
    for label, variant in variants:
        result = train_run(variant, records)
        preds = predictions(result.best_params, result.model_cfg, result.val_records)
        ap = average_precision(preds)
        try:
            mtta_value = mtta(preds)
        except MetricUndefinedError:
            mtta_value = None
        rows.append(AblationRow(label, ap, mtta_value))
    return rows


def write_ablation_csv(rows, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["experiment", "ap", "mtta_seconds"])
        for row in rows:
            mtta_value = "nan" if row.mtta_seconds is None else f"{row.mtta_seconds:.6f}"
            writer.writerow([row.experiment, f"{row.ap:.6f}", mtta_value])
