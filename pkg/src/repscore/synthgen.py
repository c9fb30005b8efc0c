"""Seeded generator of synthetic multi-IMU repetitions with simulated raters.

The signals are verification fixtures, not biomechanical simulations: each
(exercise, side) gets fixed per-channel motion templates (a low-frequency
sinusoid plus a Gaussian bump over the movement phase), and the rating classes
deform the template in controllable ways:

- rating 3: the full template;
- rating 2: the whole motion attenuated (compensation-style damping);
- rating 1: the movement phase truncated -- the motion stops partway through
  and holds (incomplete execution).

Per-subject random channel offsets scaled by ``subject_confound`` make the
class-conditional signal distributions subject-specific, and Gaussian noise is
added on top.  Everything is a pure function of (spec, seed).
"""

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .labels import RatingRecord
from .pipeline import Dataset, Repetition, SensorLayout, save_dataset

EXERCISE_SIDES = {"DS": ("none",), "TSP": ("none",), "HS": ("left", "right"),
                  "IL": ("left", "right")}
GYR_UNIT_SCALE = 30.0  # gyrometer channels live on a deg/s-like scale

#: Skewed per-(exercise, side) label priors mimicking a strongly imbalanced
#: clinical distribution; HS-left has rating 2 about 14x more frequent than 1.
SKEWED_PRIORS = {
    ("HS", "left"): (1 / 18, 14 / 18, 3 / 18),
    ("HS", "right"): (2 / 12, 7 / 12, 3 / 12),
    ("IL", "left"): (2 / 10, 3 / 10, 5 / 10),
    ("IL", "right"): (2 / 10, 3 / 10, 5 / 10),
    ("DS", "none"): (3 / 12, 4 / 12, 5 / 12),
    ("TSP", "none"): (3 / 6.5, 1 / 6.5, 2.5 / 6.5),
}


@dataclass
class GeneratorSpec:
    """Controls for one synthetic dataset.

    ``class_effect`` scales how strongly the rating deforms the motion (0
    makes all classes identical); ``subject_confound`` scales per-subject
    channel offsets; ``label_priors`` is None for exactly balanced labels,
    the string "skewed" for the imbalanced preset, or an explicit
    ``{(exercise, side): (p1, p2, p3)}`` mapping.
    """

    subjects: int = 12
    reps_per_subject: int = 30
    exercises: Tuple[str, ...] = ("DS",)
    duration_range: Tuple[int, int] = (240, 720)
    class_effect: float = 1.0
    subject_confound: float = 0.0
    noise_sigma: float = 0.05
    rater_adjacent: float = 0.05
    rater_two_step: float = 0.01
    imus: int = 17
    windows: int = 10
    label_priors: Optional[object] = None
    seed: int = 0

    def __post_init__(self):
        self.exercises = tuple(self.exercises)
        self.duration_range = tuple(self.duration_range)
        self.validate()

    def validate(self):
        lo, hi = self.duration_range
        if lo < 1 or hi < lo:
            raise ValueError(f"invalid duration range {self.duration_range}")
        if self.subjects < 1 or self.reps_per_subject < 1 or self.imus < 1:
            raise ValueError("subjects, reps_per_subject and imus must be >= 1")
        for ex in self.exercises:
            if ex not in EXERCISE_SIDES:
                raise ValueError(f"unknown exercise {ex!r}")
        if min(self.class_effect, self.subject_confound, self.noise_sigma) < 0:
            raise ValueError("strength parameters must be >= 0")
        if self.rater_adjacent < 0 or self.rater_two_step < 0 \
                or self.rater_adjacent + self.rater_two_step > 1:
            raise ValueError("rater error probabilities must be >= 0 and sum to <= 1")

    def to_dict(self):
        d = asdict(self)
        d["exercises"] = list(self.exercises)
        d["duration_range"] = list(self.duration_range)
        if isinstance(self.label_priors, dict):
            d["label_priors"] = {f"{ex}-{side}": list(p)
                                 for (ex, side), p in self.label_priors.items()}
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if isinstance(d.get("label_priors"), dict):
            d["label_priors"] = {
                tuple(key.rsplit("-", 1)): tuple(p)
                for key, p in d["label_priors"].items()
            }
        return cls(**d)

    @classmethod
    def from_json_file(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class ChannelTemplates:
    """Per-channel motion template parameters for one (exercise, side)."""

    amp: np.ndarray
    freq: np.ndarray
    phase: np.ndarray
    bump_amp: np.ndarray
    bump_mu: np.ndarray
    bump_sigma: np.ndarray

    @classmethod
    def draw(cls, rng, n_channels):
        return cls(
            amp=rng.uniform(0.5, 1.5, n_channels),
            freq=rng.uniform(1.0, 3.0, n_channels),
            phase=rng.uniform(0.0, 2 * math.pi, n_channels),
            bump_amp=rng.uniform(0.5, 1.5, n_channels) * rng.choice([-1.0, 1.0], n_channels),
            bump_mu=rng.uniform(0.3, 0.7, n_channels),
            bump_sigma=rng.uniform(0.08, 0.2, n_channels),
        )

    def motion(self, phases):
        """(channels, len(phases)) motion values for phase points in [0, 1]."""
        p = phases[None, :]
        wave = self.amp[:, None] * np.sin(
            2 * math.pi * self.freq[:, None] * p + self.phase[:, None]
        )
        bump = self.bump_amp[:, None] * np.exp(
            -((p - self.bump_mu[:, None]) ** 2) / (2 * self.bump_sigma[:, None] ** 2)
        )
        return wave + bump


def class_phase_and_gain(label, class_effect):
    """(phase cap, amplitude gain) implementing the per-rating deformation."""
    if label == 3:
        return 1.0, 1.0
    if label == 2:
        return 1.0, 1.0 / (1.0 + 0.75 * class_effect)
    if label == 1:
        return max(0.25, 1.0 / (1.0 + class_effect)), 1.0
    raise ValueError(f"label must be 1, 2 or 3, got {label}")


def _draw_labels(rng, n, priors):
    if priors is None:
        base = np.tile(np.array([1, 2, 3]), math.ceil(n / 3))[:n]
        return rng.permuted(base)
    return rng.choice(np.array([1, 2, 3]), size=n, p=np.asarray(priors))


def rater_outcome_distribution(true_label, adjacent, two_step):
    """P(assigned score | true score) for one simulated rater.

    Errors move to an adjacent score with probability ``adjacent`` (split
    evenly both ways from the middle score) and two steps away with
    probability ``two_step``.  A two-step error is impossible from score 2;
    that probability mass stays on the true score.
    """
    if true_label == 1:
        return {1: 1.0 - adjacent - two_step, 2: adjacent, 3: two_step}
    if true_label == 3:
        return {3: 1.0 - adjacent - two_step, 2: adjacent, 1: two_step}
    return {1: adjacent / 2.0, 2: 1.0 - adjacent, 3: adjacent / 2.0}


def simulate_raters(true_labels, adjacent, two_step, seed, n_raters=3):
    """Independent per-rater scores for ``{rep_id: true_label}``.

    Returns :class:`RatingRecord` rows for raters R1..Rn, iterating rep ids in
    sorted order so the output is a pure function of (labels, rates, seed).
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 913]))
    records = []
    for rep_id in sorted(true_labels):
        y = true_labels[rep_id]
        dist = rater_outcome_distribution(y, adjacent, two_step)
        scores = rng.choice(np.array(list(dist.keys())), size=n_raters,
                            p=np.array(list(dist.values())))
        for r, score in enumerate(scores, start=1):
            records.append(RatingRecord(rep_id, f"R{r}", int(score)))
    return records


def generate(spec, out_dir=None):
    """Generate a dataset per ``spec``; optionally write it as a dataset directory.

    Returns the in-memory :class:`Dataset` with ground-truth labels and
    simulated ratings attached.  The same spec (same seed) is bitwise
    reproducible.
    """
    spec.validate()
    layout = SensorLayout(tuple(range(1, spec.imus + 1)))
    n_channels = layout.rows
    unit_scale = np.array(
        [1.0 if r % 6 < 3 else GYR_UNIT_SCALE for r in range(n_channels)]
    )[:, None]

    combos = [(ex, side) for ex in spec.exercises for side in EXERCISE_SIDES[ex]]
    templates = {}
    for ci, combo in enumerate(combos):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 11, ci]))
        templates[combo] = ChannelTemplates.draw(rng, n_channels)

    offset_rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 23]))
    subject_ids = [f"S{k + 1:02d}" for k in range(spec.subjects)]
    offsets = {
        sid: offset_rng.normal(0.0, 1.0, n_channels)[:, None] * spec.subject_confound
        for sid in subject_ids
    }

    repetitions = []
    ground_truth = {}
    lo, hi = spec.duration_range
    for si, sid in enumerate(subject_ids):
        for ci, (ex, side) in enumerate(combos):
            rep_rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 37, si, ci]))
            priors = spec.label_priors
            if priors == "skewed":
                priors = SKEWED_PRIORS[(ex, side)]
            elif isinstance(priors, dict):
                priors = priors[(ex, side)]
            y = _draw_labels(rep_rng, spec.reps_per_subject, priors)
            for k in range(spec.reps_per_subject):
                length = int(rep_rng.integers(lo, hi + 1))
                cap, gain = class_phase_and_gain(int(y[k]), spec.class_effect)
                phases = np.minimum(np.linspace(0.0, 1.0, length), cap)
                motion = gain * templates[(ex, side)].motion(phases)
                noise = rep_rng.normal(0.0, spec.noise_sigma, (n_channels, length))
                matrix = unit_scale * (motion + offsets[sid] + noise)
                rep_id = f"{sid}-{ex}-{side}-{k:03d}"
                streams = {
                    imu: matrix[6 * b:6 * (b + 1)].T.copy()
                    for b, imu in enumerate(layout.imu_ids)
                }
                repetitions.append(Repetition(
                    rep_id=rep_id, subject_id=sid, exercise=ex, side=side,
                    streams=streams, true_length=length,
                ))
                ground_truth[rep_id] = int(y[k])

    ratings = simulate_raters(ground_truth, spec.rater_adjacent, spec.rater_two_step,
                              spec.seed)
    longest = max(rep.true_length for rep in repetitions)
    max_length = int(math.ceil(longest / spec.windows) * spec.windows)
    dataset = Dataset(
        layout=layout, repetitions=repetitions, ratings=ratings,
        windows=spec.windows, max_length=max_length, ground_truth=ground_truth,
    )
    dataset.attach_ratings()
    if out_dir is not None:
        save_dataset(dataset, out_dir)
        spec_path = f"{out_dir}/synthgen.json"
        with open(spec_path, "w") as fh:
            json.dump(spec.to_dict(), fh, indent=2)
    return dataset
