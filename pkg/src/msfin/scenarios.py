"""Seeded synthetic sequences with risk signatures planted at three horizons.

Four archetypes control where the evidence for an impending accident lives in
time.  Signatures are planted on a small block of channels, either of one
designated "risk" object, of the frame-level features, or both; everything
else is Gaussian noise:

* ``sudden``    — step of the full amplitude on the risk object starting at
  t_ao - round(fps/3), echoed by a weaker step on the frame channels: a
  short-window maximum sees the edge immediately, longer means need a few
  frames of accumulation.
* ``gradual``   — linear ramp on the risk object from 0 to A over
  [t_ao - 2*fps, t_ao]; evidence accumulates over a couple of seconds.
* ``early_cue`` — strong pulse on the risk object and the frame channels at
  t_ao - 3*fps.  One second after the pulse the risk object leaves the scene
  (its mask slot goes invalid) and, from that moment until t_ao, the frame
  channels carry a faint sustained elevation: the aftermath.  Between pulse
  and aftermath lies a silent gap longer than any sliding window, so no
  windowed statistic ever holds both; bridging them takes a memory of the
  pulse that survives to the decision frame.
* ``benign``    — noise only, label 0.  With probability ``false_cue_rate`` a
  benign sequence carries one of two decoys, chosen by a fair coin: a
  pulse-then-vanish event with no aftermath (a scare that passed, resolving
  at least two seconds before the end), or an aftermath-like elevation with
  no pulse behind it.  Each decoy makes one half of the early-cue evidence
  worthless on its own, so only the conjunction — a pulse in the past *and*
  elevation now — predicts an accident.

Amplitude A defaults to 4 * noise_sigma and to 1.0 when ``noise_sigma`` is 0
(otherwise zero-noise sequences would carry no signal at all); the sudden
step and the early-cue follow-through scale from A so the σ = 0 case keeps
every archetype solvable.  Frame-level features are the mean of the valid
objects plus independent noise.

Randomness uses numpy's PCG64 generator.  Record ``i`` of a dataset draws its
seed from ``SeedSequence((seed, i))`` — see :func:`record_seed` — so any record
can be regenerated alone, in any order, bit-for-bit.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .dataio import SequenceRecord, validate_record
from .errors import ConfigError
from .metrics import VideoPrediction

ARCHETYPES = ("sudden", "gradual", "early_cue", "benign")
POSITIVE_ARCHETYPES = ("sudden", "gradual", "early_cue")
RISK_BLOCK_WIDTH = 4
# Fractions of the base amplitude A (A = 4 sigma, so e.g. 0.375 A = 1.5 sigma).
STEP_FRACTION = 0.375
FOLLOW_FRACTION = 0.0875


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def risk_block(d_in: int) -> range:
    """Channel indices that carry the signature (objects and frames alike)."""
    return range(min(RISK_BLOCK_WIDTH, d_in))


@dataclass(frozen=True)
class ScenarioSpec:
    """Full recipe for one sequence; two equal specs generate identical bytes."""

    archetype: str
    t_len: int = 50
    n_objects: int = 6
    d_in: int = 64
    fps: int = 10
    t_ao: int | None = None
    risk_object_index: int = 0
    noise_sigma: float = 0.5
    false_cue_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.archetype not in ARCHETYPES:
            raise ConfigError(f"archetype must be one of {ARCHETYPES}, got {self.archetype!r}")
        if self.t_len < 1 or self.n_objects < 1 or self.d_in < 1 or self.fps < 1:
            raise ConfigError(
                f"t_len, n_objects, d_in, fps must be positive, got"
                f" {(self.t_len, self.n_objects, self.d_in, self.fps)}"
            )
        if not 0 <= self.risk_object_index < self.n_objects:
            raise ConfigError(
                f"risk_object_index must lie in 0..{self.n_objects - 1},"
                f" got {self.risk_object_index}"
            )
        if self.noise_sigma < 0.0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not 0.0 <= self.false_cue_rate <= 1.0:
            raise ConfigError(
                f"false_cue_rate must lie in [0, 1], got {self.false_cue_rate}"
            )
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.archetype == "benign":
            if self.t_ao is not None:
                raise ConfigError("benign scenarios carry no accident frame")
        else:
            if self.t_ao is None:
                raise ConfigError(f"{self.archetype} scenarios need an accident frame")
            if not (self.fps <= self.t_ao <= self.t_len):
                raise ConfigError(
                    f"accident frame must satisfy fps <= t_ao <= t_len,"
                    f" got t_ao={self.t_ao} with fps={self.fps}, t_len={self.t_len}"
                )
            if self.t_ao < self.earliest_accident_frame():
                raise ConfigError(
                    f"{self.archetype} needs t_ao >= {self.earliest_accident_frame()}"
                    f" at fps={self.fps}, got {self.t_ao}"
                )

    def earliest_accident_frame(self) -> int:
        """Smallest t_ao whose signature fits entirely inside the sequence."""
        if self.archetype == "sudden":
            return max(self.fps, _round_half_up(self.fps / 3) + 1)
        if self.archetype == "gradual":
            return self.fps  # ramp start clamps to frame 1 when 2s do not fit
        if self.archetype == "early_cue":
            return 3 * self.fps + 1
        return 1

    @property
    def amplitude(self) -> float:
        return 4.0 * self.noise_sigma if self.noise_sigma > 0.0 else 1.0

    @property
    def pulse_width(self) -> int:
        return max(1, _round_half_up(self.fps / 6))

    @property
    def label(self) -> int:
        return 0 if self.archetype == "benign" else 1

    def to_json_dict(self) -> dict:
        return {
            "archetype": self.archetype,
            "t_len": self.t_len,
            "n_objects": self.n_objects,
            "d_in": self.d_in,
            "fps": self.fps,
            "t_ao": self.t_ao,
            "risk_object_index": self.risk_object_index,
            "noise_sigma": self.noise_sigma,
            "false_cue_rate": self.false_cue_rate,
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "ScenarioSpec":
        return cls(**payload)


def _pulse_span(spec: ScenarioSpec, t_pulse: int) -> tuple[int, int]:
    """Frame span [start, end) of a cue pulse starting at 1-based ``t_pulse``."""
    return t_pulse - 1, min(spec.t_len, t_pulse - 1 + spec.pulse_width)


def vanish_frame(spec: ScenarioSpec, t_pulse: int) -> int:
    """First 0-based frame index at which the pulsing object has left the scene."""
    return t_pulse - 1 + spec.pulse_width + spec.fps


def follow_span(spec: ScenarioSpec) -> tuple[int, int]:
    """0-based [start, end) of the early-cue aftermath: vanish up to t_ao."""
    return vanish_frame(spec, spec.t_ao - 3 * spec.fps), spec.t_ao


def follow_length(spec: ScenarioSpec) -> int:
    """Aftermath length in frames; decoy elevations reuse it."""
    return 2 * spec.fps - spec.pulse_width + 1


def object_signature_series(spec: ScenarioSpec) -> np.ndarray:
    """Deterministic [T] signal added to the risk object's channels (float64)."""
    sig = np.zeros(spec.t_len, dtype=np.float64)
    if spec.archetype == "sudden":
        t = np.arange(1, spec.t_len + 1)
        sig[t >= spec.t_ao - _round_half_up(spec.fps / 3)] = spec.amplitude
    elif spec.archetype == "gradual":
        amp, t_ao, fps = spec.amplitude, spec.t_ao, spec.fps
        t = np.arange(1, spec.t_len + 1, dtype=np.float64)
        start = max(1, t_ao - 2 * fps)
        span = max(1, t_ao - start)
        sig = amp * np.clip((t - start) / span, 0.0, 1.0)
    elif spec.archetype == "early_cue":
        lo, hi = _pulse_span(spec, spec.t_ao - 3 * spec.fps)
        sig[lo:hi] = spec.amplitude
    return sig


def frame_signature_series(spec: ScenarioSpec) -> np.ndarray:
    """Deterministic [T] signal added to the frame-level channels (float64)."""
    sig = np.zeros(spec.t_len, dtype=np.float64)
    amp = spec.amplitude
    if spec.archetype == "sudden":
        t = np.arange(1, spec.t_len + 1)
        sig[t >= spec.t_ao - _round_half_up(spec.fps / 3)] = STEP_FRACTION * amp
    elif spec.archetype == "early_cue":
        lo, hi = _pulse_span(spec, spec.t_ao - 3 * spec.fps)
        f_lo, f_hi = follow_span(spec)
        sig[lo:hi] = amp
        sig[f_lo:f_hi] = FOLLOW_FRACTION * amp
    return sig


def signature_series(spec: ScenarioSpec) -> np.ndarray:
    """Combined planted signal: object plus frame contributions (float64)."""
    return object_signature_series(spec) + frame_signature_series(spec)


def generate_scenario(spec: ScenarioSpec) -> SequenceRecord:
    """Materialise one record.

    Draw order: object noise, mask size, frame noise, then (benign only, when
    ``false_cue_rate`` > 0) the false-cue coin, the flavor coin, and the cue
    position.  Appending the cue draws keeps every rate-0 record bit-identical
    to its rate-free counterpart.
    """
    rng = np.random.default_rng(spec.seed)
    t_len, n, d = spec.t_len, spec.n_objects, spec.d_in
    objects = rng.normal(0.0, spec.noise_sigma, size=(t_len, n, d))
    n_valid = int(rng.integers(spec.risk_object_index + 1, n + 1))
    frame_noise = rng.normal(0.0, spec.noise_sigma, size=(t_len, d))

    obj_sig = object_signature_series(spec)
    frame_sig = frame_signature_series(spec)

    mask = np.zeros((t_len, n), dtype=bool)
    mask[:, :n_valid] = True
    ridx = spec.risk_object_index

    if spec.archetype == "early_cue":
        mask[vanish_frame(spec, spec.t_ao - 3 * spec.fps) :, ridx] = False
    elif spec.archetype == "benign" and spec.false_cue_rate > 0.0:
        if rng.random() < spec.false_cue_rate:
            frame_sig = frame_sig.copy()
            if rng.random() < 0.5:
                # Pulse decoy: a scare that resolves >= 2 s before the end,
                # with no aftermath behind it.
                latest = t_len - 2 * spec.fps - spec.pulse_width + 1
                if latest >= 1:
                    t_cue = int(rng.integers(1, latest + 1))
                    lo, hi = _pulse_span(spec, t_cue)
                    obj_sig = obj_sig.copy()
                    obj_sig[lo:hi] = spec.amplitude
                    frame_sig[lo:hi] = spec.amplitude
                    mask[vanish_frame(spec, t_cue) :, ridx] = False
            else:
                # Aftermath decoy: the faint elevation with no pulse before
                # it; the scene stays fully populated throughout.
                span = follow_length(spec)
                if t_len >= span:
                    start = int(rng.integers(0, t_len - span + 1))
                    frame_sig[start : start + span] = FOLLOW_FRACTION * spec.amplitude

    for c in risk_block(d):
        objects[:, ridx, c] += obj_sig

    # Frame features summarise whichever objects are visible at each frame.
    counts = mask.sum(axis=1)
    summed = np.where(mask[:, :, None], objects, 0.0).sum(axis=1)
    frames = np.divide(
        summed, np.maximum(counts, 1)[:, None], where=counts[:, None] > 0
    )
    frames[counts == 0] = 0.0
    frames += frame_noise
    for c in risk_block(d):
        frames[:, c] += frame_sig

    rec = SequenceRecord(
        record_id=f"{spec.archetype}-{spec.seed:016x}",
        frame_features=frames.astype(np.float32),
        object_features=objects.astype(np.float32),
        object_mask=mask,
        label=spec.label,
        t_ao=spec.t_ao,
        fps=spec.fps,
    )
    validate_record(rec)
    return rec


def record_seed(master_seed: int, index: int) -> int:
    """Counter scheme: record ``index`` seeds from SeedSequence((master, index))."""
    ss = np.random.SeedSequence((master_seed, index))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class GeneratedDataset:
    """Records plus the manifest that regenerates them bit-for-bit."""

    records: list[SequenceRecord]
    manifest: dict = field(default_factory=dict)

    def manifest_json(self) -> str:
        return json.dumps(self.manifest, indent=2, sort_keys=True)


def generate_dataset(n_per_archetype: int, base_spec: ScenarioSpec, seed: int) -> GeneratedDataset:
    """Balanced dataset: n records per positive archetype plus 3n benigns.

    Record order (and the seed counter) is fixed: sudden, gradual, early_cue,
    then benign, each block in index order.  Positive accident frames come
    from ``base_spec.t_ao`` when set, otherwise are drawn uniformly from the
    archetype's feasible range by a dedicated layout stream.
    """
    if n_per_archetype < 1:
        raise ConfigError(f"n_per_archetype must be >= 1, got {n_per_archetype}")
    if base_spec.archetype != "benign" and base_spec.t_ao is None:
        raise ConfigError("base_spec must be benign or carry an explicit t_ao")
    layout_rng = np.random.default_rng(np.random.SeedSequence((seed, 0, 0)))

    specs: list[ScenarioSpec] = []
    counter = 0
    for archetype in POSITIVE_ARCHETYPES:
        for _ in range(n_per_archetype):
            probe = replace(base_spec, archetype=archetype, t_ao=base_spec.t_len, seed=0)
            lo = probe.earliest_accident_frame()
            if lo > base_spec.t_len:
                raise ConfigError(
                    f"{archetype} does not fit: needs t_ao >= {lo}, t_len={base_spec.t_len}"
                )
            if base_spec.archetype != "benign" and base_spec.t_ao is not None:
                t_ao = base_spec.t_ao
                if t_ao < lo:
                    raise ConfigError(
                        f"base t_ao={t_ao} too early for {archetype} (needs >= {lo})"
                    )
            else:
                t_ao = int(layout_rng.integers(lo, base_spec.t_len + 1))
            specs.append(
                replace(
                    base_spec,
                    archetype=archetype,
                    t_ao=t_ao,
                    seed=record_seed(seed, counter),
                )
            )
            counter += 1
    for _ in range(n_per_archetype * len(POSITIVE_ARCHETYPES)):
        specs.append(
            replace(base_spec, archetype="benign", t_ao=None, seed=record_seed(seed, counter))
        )
        counter += 1

    records = [generate_scenario(s) for s in specs]
    manifest = {
        "master_seed": seed,
        "n_per_archetype": n_per_archetype,
        "records": [
            {"record_id": rec.record_id, "spec": spec.to_json_dict()}
            for rec, spec in zip(records, specs)
        ],
    }
    return GeneratedDataset(records=records, manifest=manifest)


def seeded_shuffle(records, seed: int) -> list:
    """Reproducible permutation (PCG64); the input list is left untouched."""
    records = list(records)
    order = np.random.default_rng(np.random.SeedSequence((seed, 1, 0))).permutation(len(records))
    return [records[i] for i in order]


def regenerate_from_manifest(manifest: dict) -> list[SequenceRecord]:
    """Rebuild every record from its manifest spec echo (bit-identical)."""
    return [
        generate_scenario(ScenarioSpec.from_json_dict(entry["spec"]))
        for entry in manifest["records"]
    ]


# --------------------------------------------------------------- hand detectors


def risk_series(rec: SequenceRecord, risk_object_index: int = 0) -> np.ndarray:
    """Frame-plus-object mean over the risk block, one value per frame.

    The object contribution only counts while the object is marked valid, so
    a vanished object stops feeding the series the moment it leaves.
    """
    block = list(risk_block(rec.d_in))
    frame_part = rec.frame_features[:, block].astype(np.float64).mean(axis=1)
    obj_part = rec.object_features[:, risk_object_index, block].astype(np.float64).mean(axis=1)
    valid = rec.object_mask[:, risk_object_index].astype(np.float64)
    return frame_part + obj_part * valid


def window_detector(
    records, window: int | None, risk_object_index: int = 0
) -> list[VideoPrediction]:
    """Score each record by a windowed max of its risk series, no learning.

    The raw score is the maximum of the risk series over the last ``window``
    frames ending at the decision frame (t_ao for positives, T for negatives);
    ``window=None`` takes the whole prefix.  Scores are min-max normalised
    across the set (a monotone map, so rankings and AP are unchanged) and
    wrapped as single-frame predictions: the detector commits exactly one
    score per video, at the decision frame.
    """
    if window is not None and window < 1:
        raise ConfigError(f"window must be >= 1 or None, got {window}")
    raw = []
    for rec in records:
        series = risk_series(rec, risk_object_index)
        t_dec = rec.t_ao if rec.label == 1 else rec.t_len
        lo = 0 if window is None else max(0, t_dec - window)
        raw.append(float(series[lo:t_dec].max()))
    raw = np.asarray(raw, dtype=np.float64)
    span = raw.max() - raw.min()
    probs = (raw - raw.min()) / span if span > 0 else np.full_like(raw, 0.5)
    return [
        VideoPrediction(
            rec.record_id,
            np.array([p]),
            rec.label,
            t_ao=1 if rec.label == 1 else None,
            fps=rec.fps,
        )
        for rec, p in zip(records, probs)
    ]


def matched_filter_detector(records, risk_object_index: int = 0) -> list[VideoPrediction]:
    """Full-prefix max of the risk series — the oracle that the task is solvable."""
    return window_detector(records, window=None, risk_object_index=risk_object_index)
