"""Seeded synthetic corpus generator.

Each gloss is a parameterized template: a per-hand handshape (21 landmark
offsets), a movement path the dominant hand traces, and a target region
near the face or chest.  Sentences concatenate gloss trajectories with
short linear blends in between (coarticulation) and add Gaussian jitter,
so word boundaries are genuinely ambiguous while the whole corpus stays a
pure function of its spec.
"""

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import cues
from .vocab import GlossVocabulary

# stationary upper-body pose shared by every synthetic signer
BASE_POSE = {
    "left_eye": (0.44, 0.18),
    "right_eye": (0.56, 0.18),
    "mouth_left": (0.47, 0.28),
    "mouth_right": (0.53, 0.28),
    "left_shoulder": (0.30, 0.46),
    "right_shoulder": (0.70, 0.46),
}

REGION_ANCHORS = {
    "eyes": (0.50, 0.18),
    "mouth": (0.50, 0.28),
    "chest": (0.50, 0.46),
}

RIGHT_REST = np.array([0.66, 0.74])


@dataclass
class GlossTemplate:
    gloss_id: int
    right_shape: np.ndarray  # (21, 2) offsets around the hand anchor
    left_shape: np.ndarray
    path: np.ndarray         # (P, 2) anchor points for the dominant hand
    target_region: str
    duration: int


@dataclass
class CorpusSpec:
    vocab_size: int = 12
    sentence_min: int = 2
    sentence_max: int = 4
    train_sentences: int = 600
    dev_sentences: int = 60
    test_sentences: int = 60
    noise_sigma: float = 0.01
    blend_frames: int = 3
    seed: int = 7
    frame_side: int = cues.DEFAULT_FRAME_SIDE

    def __post_init__(self):
        if self.sentence_min < 1 or self.sentence_max < self.sentence_min:
            raise ValueError("sentence length range must satisfy 1 <= min <= max")
        if min(self.train_sentences, self.dev_sentences, self.test_sentences) < 1:
            raise ValueError("every split needs at least one sentence")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be nonnegative")

    @classmethod
    def from_dict(cls, obj):
        return cls(**obj)

    def to_dict(self):
        return asdict(self)


def gloss_name(index, vocab_size):
    width = max(2, len(str(vocab_size - 1)))
    return f"G{index:0{width}d}"


def default_vocabulary(vocab_size):
    return GlossVocabulary([gloss_name(i, vocab_size) for i in range(vocab_size)])


def _random_handshape(rng):
    """Five jointed finger chains radiating from the wrist, scaled into a
    small offset box so the anchor can carry the hand around the scene."""
    pts = np.zeros((21, 2))
    spread = rng.uniform(1.6, 2.4)
    base_angle = rng.uniform(-2.2, -0.9)
    for finger in range(5):
        angle = base_angle + spread * (finger / 4.0 - 0.5) + rng.normal(0, 0.15)
        curl = rng.uniform(-0.25, 0.25)
        joint = np.zeros(2)
        for seg in range(4):
            step = rng.uniform(0.018, 0.034)
            angle += curl * rng.uniform(0.5, 1.5)
            joint = joint + step * np.array([np.cos(angle), np.sin(angle)])
            pts[1 + finger * 4 + seg] = joint
    return pts - pts.mean(axis=0)


def _template_distance(a: GlossTemplate, b: GlossTemplate):
    d = float(np.abs(a.right_shape - b.right_shape).mean())
    d += float(np.abs(a.path - b.path).mean())
    if a.target_region != b.target_region:
        d += 0.1
    return d


def build_gloss_library(vocab_size, seed):
    """Deterministic, pairwise-distinct templates for ids 0..vocab_size-1."""
    rng = np.random.default_rng([seed, 0x517],)
    regions = list(REGION_ANCHORS)
    library = []
    for gloss_id in range(vocab_size):
        for attempt in range(1000):
            region = regions[int(rng.integers(len(regions)))]
            anchor = np.asarray(REGION_ANCHORS[region])
            right_shape = _random_handshape(rng)
            mid = anchor + rng.normal(0, 0.05, size=2)
            start = RIGHT_REST + rng.normal(0, 0.03, size=2)
            end = RIGHT_REST + rng.normal(0, 0.03, size=2)
            sweep = rng.normal(0, 0.08, size=2)
            path = np.stack([start, mid + sweep, mid - sweep, end])
            template = GlossTemplate(
                gloss_id=gloss_id,
                right_shape=right_shape,
                left_shape=right_shape * np.array([-1.0, 1.0]),
                path=np.clip(path, 0.05, 0.95),
                target_region=region,
                duration=int(rng.integers(8, 14)),
            )
            if all(_template_distance(template, other) > 0.02 for other in library):
                library.append(template)
                break
        else:
            raise RuntimeError("could not draw a distinct gloss template")
    return library


def _path_point(path, u):
    """Piecewise-linear interpolation along the anchor chain, u in [0,1]."""
    segments = len(path) - 1
    x = min(max(u, 0.0), 1.0) * segments
    i = min(int(x), segments - 1)
    w = x - i
    return (1.0 - w) * path[i] + w * path[i + 1]


def _gloss_frames(template: GlossTemplate):
    """Noise-free landmark tuples (left, right, pose) for one gloss."""
    frames = []
    pose = {k: np.asarray(v, dtype=np.float64) for k, v in BASE_POSE.items()}
    for j in range(template.duration):
        u = j / (template.duration - 1)
        anchor = _path_point(template.path, u)
        right = anchor + template.right_shape
        mirrored = np.array([1.0, 0.0]) + anchor * np.array([-1.0, 1.0])
        left = mirrored + template.left_shape
        frames.append((left, right, pose))
    return frames


def synthesize_sentence(gloss_ids, library, spec: CorpusSpec, seed):
    """Landmark stream plus its reference labeling for one sentence.

    Coarticulation: blend_frames linearly interpolated frames between the
    last frame of each gloss and the first of the next.  Gaussian jitter
    of spec.noise_sigma lands on every coordinate, pose included.
    """
    by_id = {t.gloss_id: t for t in library}
    for gid in gloss_ids:
        if gid not in by_id:
            raise ValueError(f"gloss id {gid} not in library")
    clean = []
    for k, gid in enumerate(gloss_ids):
        segment = _gloss_frames(by_id[gid])
        if k > 0 and spec.blend_frames > 0:
            prev_left, prev_right, pose = clean[-1]
            next_left, next_right, _ = segment[0]
            for j in range(1, spec.blend_frames + 1):
                w = j / (spec.blend_frames + 1)
                clean.append((
                    (1 - w) * prev_left + w * next_left,
                    (1 - w) * prev_right + w * next_right,
                    pose,
                ))
        clean.extend(segment)
    rng = np.random.default_rng(seed)
    sigma = spec.noise_sigma
    frames = []
    for t, (left, right, pose) in enumerate(clean):
        jitter = (lambda a: a + rng.normal(0.0, sigma, size=a.shape)) if sigma > 0 else (lambda a: a)
        frames.append(cues.LandmarkFrame(
            index=t,
            left=np.clip(jitter(np.asarray(left)), 0.0, 1.0),
            right=np.clip(jitter(np.asarray(right)), 0.0, 1.0),
            pose={k: np.clip(jitter(np.asarray(v)), 0.0, 1.0) for k, v in pose.items()},
        ))
    return frames, tuple(gloss_ids)


def _sentence_plan(spec: CorpusSpec, split_index, count):
    """Deterministic gloss-id sequences for one split."""
    rng = np.random.default_rng([spec.seed, split_index])
    plans = []
    for _ in range(count):
        length = int(rng.integers(spec.sentence_min, spec.sentence_max + 1))
        plans.append(tuple(int(g) for g in rng.integers(0, spec.vocab_size, size=length)))
    return plans


SPLITS = ("train", "dev", "test")


def generate_dataset(spec: CorpusSpec, out_dir):
    """Materialize the corpus: landmark JSONL and PGM frames per sentence,
    one manifest per split, the vocabulary file, and an echo of the spec.

    Returns {split: manifest path}.  Fully reproducible from spec.seed.
    """
    out = Path(out_dir)
    (out / "landmarks").mkdir(parents=True, exist_ok=True)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    vocab = default_vocabulary(spec.vocab_size)
    vocab.to_file(out / "vocab.txt")
    (out / "spec.json").write_text(
        json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    library = build_gloss_library(spec.vocab_size, spec.seed)
    counts = {
        "train": spec.train_sentences,
        "dev": spec.dev_sentences,
        "test": spec.test_sentences,
    }
    manifests = {}
    for split_index, split in enumerate(SPLITS):
        records = []
        for i, gloss_ids in enumerate(_sentence_plan(spec, split_index, counts[split])):
            sid = f"{split}_{i:05d}"
            frames, reference = synthesize_sentence(
                gloss_ids, library, spec, seed=[spec.seed, split_index, i, 0xF0]
            )
            lm_rel = f"landmarks/{sid}.jsonl"
            with open(out / lm_rel, "w", encoding="utf-8") as fp:
                for frame in frames:
                    fp.write(cues.frame_to_json(frame) + "\n")
            frames_rel = f"frames/{sid}"
            frame_dir = out / frames_rel
            frame_dir.mkdir(exist_ok=True)
            for t, frame in enumerate(frames):
                cues.write_pgm(
                    cues.render_scene_frame(frame, spec.frame_side),
                    frame_dir / f"{t:05d}.pgm",
                )
            records.append({
                "id": sid,
                "landmarks": lm_rel,
                "frames": frames_rel,
                "gloss": vocab.decode(reference),
            })
        manifest_path = out / f"{split}.jsonl"
        with open(manifest_path, "w", encoding="utf-8") as fp:
            for record in records:
                fp.write(json.dumps(record, separators=(",", ":")) + "\n")
        manifests[split] = manifest_path
    return manifests
