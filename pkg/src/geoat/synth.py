"""Synthetic geo-audio world with an acoustically confounded class pair.

Every class gets an audio prototype (sinusoids plus band-limited noise) and a
geospatial context (a descriptor multiset).  Two classes share one prototype
exactly but live in disjoint contexts, so only the GSC can tell them apart.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.stats import mannwhitneyu

from .data import ClipRecord, read_manifest, write_manifest
from .signal import CLIP_SAMPLES, SAMPLE_RATE, load_wav, logmel, write_wav


@dataclass
class ClassSpec:
    name: str
    freqs: tuple = ()
    noise_band: tuple = (200.0, 4000.0)
    snr_db: float = 6.0
    descriptors: tuple = ()

    def audio_signature(self) -> tuple:
        return (tuple(self.freqs), tuple(self.noise_band), float(self.snr_db))


def default_classes() -> list:
    heli = dict(freqs=(90.0, 180.0, 270.0, 1100.0), noise_band=(200.0, 2500.0), snr_db=4.0)
    return [
        ClassSpec("birdsong", (2800.0, 3500.0, 4200.0), (2000.0, 6000.0), 8.0,
                  ("natural: wood", "leisure: park", "landuse: forest", "natural: tree row")),
        ClassSpec("flowing water", (), (500.0, 7000.0), -5.0,
                  ("waterway: river", "natural: water", "waterway: stream", "leisure: marina")),
        ClassSpec("traffic", (80.0, 160.0), (50.0, 1500.0), 0.0,
                  ("highway: primary", "highway: traffic signals", "amenity: fuel", "highway: bus stop")),
        ClassSpec("speech", (220.0, 440.0, 660.0), (300.0, 3000.0), 3.0,
                  ("amenity: restaurant", "shop: supermarket", "tourism: attraction", "amenity: cafe")),
        ClassSpec("church bells", (523.0, 784.0, 1046.0), (400.0, 5000.0), 12.0,
                  ("amenity: place of worship", "building: church", "landuse: cemetery", "tourism: museum")),
        ClassSpec("train", (120.0, 240.0, 360.0), (100.0, 4000.0), 2.0,
                  ("railway: rail", "railway: station", "landuse: railway", "amenity: parking")),
        ClassSpec("helicopter", descriptors=("aeroway: helipad", "amenity: hospital", "aeroway: aerodrome",
                                             "landuse: military"), **heli),
        ClassSpec("generator", descriptors=("landuse: industrial", "building: warehouse",
                                            "landuse: construction", "shop: hardware"), **heli),
    ]


DEFAULT_SHARED = ("building: yes", "highway: residential", "highway: footway", "landuse: residential")


@dataclass
class WorldSpec:
    classes: list = field(default_factory=default_classes)
    confounded: tuple = (6, 7)
    clips_per_class: int = 60
    polyphony: float = 0.15
    tags_per_clip: int = 6
    shared_descriptors: tuple = DEFAULT_SHARED
    shared_per_clip: int = 2
    seed: int = 0

    def __post_init__(self):
        self.classes = [c if isinstance(c, ClassSpec) else ClassSpec(**c) for c in self.classes]
        for c in self.classes:
            c.freqs, c.noise_band, c.descriptors = tuple(c.freqs), tuple(c.noise_band), tuple(c.descriptors)
        self.confounded = tuple(self.confounded)
        a, b = self.confounded
        if not (0 <= a < len(self.classes) and 0 <= b < len(self.classes)) or a == b:
            raise ValueError(f"confounded pair {self.confounded} invalid for {len(self.classes)} classes")
        ca, cb = self.classes[a], self.classes[b]
        if ca.audio_signature() != cb.audio_signature():
            raise ValueError("confounded classes must share one audio prototype")
        if set(ca.descriptors) & set(cb.descriptors):
            raise ValueError("confounded classes must have disjoint descriptor multisets")
        if self.clips_per_class < 3:
            raise ValueError("need at least 3 clips per class to populate every split")
        if not 0.0 <= self.polyphony <= 1.0:
            raise ValueError("polyphony is a probability")

    @property
    def class_names(self) -> list:
        return [c.name for c in self.classes]

    def to_json(self) -> dict:
        d = asdict(self)
        d["class_names"] = self.class_names
        return d

    @classmethod
    def from_json(cls, d: dict) -> "WorldSpec":
        d = {k: v for k, v in d.items() if k != "class_names"}
        return cls(**d)


def _band_noise(rng: np.random.Generator, lo: float, hi: float, n: int) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / SAMPLE_RATE)
    spec[(f < lo) | (f > hi)] = 0.0
    x = np.fft.irfft(spec, n)
    return x / (np.std(x) + 1e-12)


def _render_class(rng: np.random.Generator, c: ClassSpec, n: int) -> np.ndarray:
    t = np.arange(n) / SAMPLE_RATE
    tone = np.zeros(n)
    for f in c.freqs:
        amp = rng.uniform(0.8, 1.2)
        tone += amp * np.sin(2 * np.pi * f * rng.uniform(0.99, 1.01) * t + rng.uniform(0, 2 * np.pi))
    noise = _band_noise(rng, *c.noise_band, n)
    if c.freqs:
        tone /= np.std(tone) + 1e-12
        x = tone + noise * 10 ** (-c.snr_db / 20.0)
    else:
        x = noise
    # slow random amplitude envelope so clips are not perfectly stationary
    env = 1.0 + 0.3 * np.sin(2 * np.pi * rng.uniform(0.05, 0.5) * t + rng.uniform(0, 2 * np.pi))
    return x * env


def _atomic_wav(path: Path, samples: np.ndarray):
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".wav.tmp")
    os.close(fd)
    try:
        write_wav(tmp, samples)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def generate_world(spec: WorldSpec, out_dir) -> Path:
    """Write WAV clips, ``manifest.jsonl`` and ``world.json``; return the manifest path."""
    out = Path(out_dir)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    C = len(spec.classes)
    records = []
    for k, cls in enumerate(spec.classes):
        for j in range(spec.clips_per_class):
            present = [k]
            if rng.random() < spec.polyphony:
                present.append(int(rng.choice([i for i in range(C) if i != k])))
            x = np.zeros(CLIP_SAMPLES)
            for i in present:
                x += _render_class(rng, spec.classes[i], CLIP_SAMPLES) * (1.0 if i == k else 0.6)
            x += 0.05 * rng.standard_normal(CLIP_SAMPLES)
            x *= 0.5 / (np.max(np.abs(x)) + 1e-12)
            clip_id = f"c{k:02d}_{j:04d}"
            rel = f"audio/{clip_id}.wav"
            _atomic_wav(out / rel, x)
            tags = list(rng.choice(cls.descriptors, size=spec.tags_per_clip, replace=True)) if cls.descriptors else []
            if spec.shared_descriptors and spec.shared_per_clip:
                tags += list(rng.choice(spec.shared_descriptors, size=spec.shared_per_clip, replace=True))
            labels = [0] * C
            for i in present:
                labels[i] = 1
            records.append(ClipRecord(clip_id, rel, labels, gsc_tags=[str(t) for t in tags]))
    manifest = out / "manifest.jsonl"
    write_manifest(manifest, records)
    (out / "world.json").write_text(json.dumps(spec.to_json(), indent=1) + "\n")
    return manifest


def load_world(out_dir) -> tuple:
    out = Path(out_dir)
    spec = WorldSpec.from_json(json.loads((out / "world.json").read_text()))
    return spec, read_manifest(out / "manifest.jsonl")


@dataclass
class ConfoundCheck:
    within: np.ndarray
    between: np.ndarray
    p_value: float
    descriptor_overlap: set


def confound_check(out_dir, max_clips: Optional[int] = 20) -> ConfoundCheck:
    """Compare Mel distances across the confounded pair with distances within one class.

    Only single-label clips are used.  A two-sided Mann-Whitney test on the
    two distance samples should not reject (p > 0.05) when the pair is
    acoustically indistinguishable.
    """
    out = Path(out_dir)
    spec, records = load_world(out)
    a, b = spec.confounded

    def mels(k):
        recs = [r for r in records if r.labels[k] == 1 and sum(r.labels) == 1][:max_clips]
        return [logmel(load_wav(out / r.audio_path)).frames for r in recs]

    ma, mb = mels(a), mels(b)
    half = len(ma) // 2
    # within: pairs inside the first half of class a; between: that half vs class b
    ref = ma[:half]
    within = [np.linalg.norm(x - y) for i, x in enumerate(ref) for y in ref[i + 1:]]
    within += [np.linalg.norm(x - y) for i, x in enumerate(ma[half:]) for y in ma[half:][i + 1:]]
    between = [np.linalg.norm(x - y) for x in ref for y in mb[: len(ma) - half]]
    p = float(mannwhitneyu(within, between, alternative="two-sided").pvalue)
    overlap = set(spec.classes[a].descriptors) & set(spec.classes[b].descriptors)
    return ConfoundCheck(np.array(within), np.array(between), p, overlap)
