"""Manifest loading, target encoding, and variable-length batching.

Batches are padded to the longest sample they contain; true lengths ride
along so padded rows never reach the loss.  Feature arrays are cached in
RAM bit-packed (they are binary images plus a few small float rows), and
cue tensors can additionally be cached on disk by the extract step.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import cues
from .errors import ManifestError, UnknownGlossError
from .vocab import GlossVocabulary

CUE_STREAMS = ("img_l", "img_r", "disp_l", "disp_r", "loc_l", "loc_r")


@dataclass
class SentenceRecord:
    sid: str
    landmarks_path: Path
    frames_dir: Path
    gloss_ids: tuple


@dataclass
class Batch:
    ids: list
    inputs: dict            # stream name -> padded float32 array, leading (B, T, ...)
    input_lengths: np.ndarray
    targets: np.ndarray     # (B, U_max) int64, padded with -1
    target_lengths: np.ndarray


class Dataset:
    """Lazily-loading view over one manifest split."""

    def __init__(self, records, vocabulary: GlossVocabulary, split_name,
                 image_side=cues.DEFAULT_IMAGE_SIDE, cache_dir=None):
        self.records = records
        self.vocabulary = vocabulary
        self.split_name = split_name
        self.image_side = image_side
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self._cue_cache = {}
        self._frame_cache = {}

    def __len__(self):
        return len(self.records)

    def _load_cues(self, record: SentenceRecord):
        if self.cache_dir is not None:
            path = self.cache_dir / f"{record.sid}.npz"
            if path.exists():
                with np.load(path) as data:
                    return {k: data[k] for k in CUE_STREAMS}
        seq = cues.build_cue_sequences(
            cues.load_landmarks(record.landmarks_path), self.image_side
        )
        return cue_arrays(seq)

    def get_cues(self, index):
        """Six streams for one sentence, images packed in the RAM cache."""
        if index not in self._cue_cache:
            arrays = self._load_cues(self.records[index])
            packed = dict(arrays)
            for key in ("img_l", "img_r"):
                packed[key] = (np.packbits(arrays[key], axis=-1), arrays[key].shape)
            self._cue_cache[index] = packed
        packed = self._cue_cache[index]
        out = {}
        for key, value in packed.items():
            if key in ("img_l", "img_r"):
                bits, shape = value
                out[key] = np.unpackbits(bits, axis=-1, count=shape[-1]).astype(np.float32)
            else:
                out[key] = value.astype(np.float32)
        return out

    def get_frames(self, index):
        """(T, 1, S, S) float32 scene frames for one sentence."""
        if index not in self._frame_cache:
            record = self.records[index]
            paths = sorted(record.frames_dir.glob("*.pgm"))
            if not paths:
                raise ManifestError(f"no PGM frames under {record.frames_dir}")
            stack = np.stack([cues.read_pgm(p) for p in paths])[:, None, :, :]
            self._frame_cache[index] = (np.packbits(stack, axis=-1), stack.shape)
        bits, shape = self._frame_cache[index]
        return np.unpackbits(bits, axis=-1, count=shape[-1]).astype(np.float32)

    def features(self, index, kind):
        if kind == "cues":
            return self.get_cues(index)
        if kind == "frames":
            return {"frames": self.get_frames(index)}
        raise ValueError(f"unknown feature kind {kind!r}")


def cue_arrays(seq: cues.CueSequences):
    return {
        "img_l": seq.left_images,
        "img_r": seq.right_images,
        "disp_l": seq.left_disp,
        "disp_r": seq.right_disp,
        "loc_l": seq.left_loc,
        "loc_r": seq.right_loc,
    }


def encode_targets(glosses, vocabulary: GlossVocabulary):
    """Gloss strings -> blank-free id tuple, order preserved."""
    return vocabulary.encode(glosses)


def load_manifest(path, vocabulary: GlossVocabulary, image_side=cues.DEFAULT_IMAGE_SIDE,
                  cache_dir=None):
    """Parse a JSONL manifest into a Dataset.

    Relative landmark/frame paths resolve against the manifest location.
    Unknown glosses, duplicate ids, and dangling paths all fail loudly.
    """
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    root = path.parent
    records = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fp:
        for line_number, line in enumerate(fp, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path} line {line_number}: {exc.msg}") from None
            sid = obj.get("id")
            if sid in seen:
                raise ManifestError(f"duplicate sentence id {sid!r}")
            seen.add(sid)
            lm = root / obj["landmarks"]
            if not lm.exists():
                raise ManifestError(f"missing landmark file {lm}")
            try:
                gloss_ids = encode_targets(obj["gloss"], vocabulary)
            except UnknownGlossError:
                raise
            records.append(SentenceRecord(
                sid=sid,
                landmarks_path=lm,
                frames_dir=root / obj["frames"],
                gloss_ids=gloss_ids,
            ))
    return Dataset(records, vocabulary, split_name=path.stem,
                   image_side=image_side, cache_dir=cache_dir)


def assemble_batch(dataset: Dataset, indices, kind, extra_pad=0):
    """Pad the chosen samples to a common length (plus extra_pad rows,
    which must never change any loss or decode)."""
    ids = [dataset.records[i].sid for i in indices]
    features = [dataset.features(i, kind) for i in indices]
    lengths = np.array([next(iter(f.values())).shape[0] for f in features], dtype=np.int64)
    t_max = int(lengths.max()) + extra_pad
    inputs = {}
    for key in features[0]:
        tail_shape = features[0][key].shape[1:]
        stacked = np.zeros((len(indices), t_max) + tail_shape, dtype=np.float32)
        for b, f in enumerate(features):
            stacked[b, : lengths[b]] = f[key]
        inputs[key] = stacked
    targets_list = [dataset.records[i].gloss_ids for i in indices]
    u_max = max((len(t) for t in targets_list), default=0)
    targets = np.full((len(indices), max(u_max, 1)), -1, dtype=np.int64)
    for b, t in enumerate(targets_list):
        targets[b, : len(t)] = t
    return Batch(
        ids=ids,
        inputs=inputs,
        input_lengths=lengths,
        targets=targets,
        target_lengths=np.array([len(t) for t in targets_list], dtype=np.int64),
    )


def batch_iter(dataset: Dataset, batch_size, shuffle_seed=None, kind="cues"):
    """Yield padded batches covering the dataset exactly once.

    shuffle_seed None keeps manifest order; the trainer passes
    base_seed + epoch for a fresh deterministic permutation per epoch.
    The final partial batch is emitted.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(dataset))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(dataset))
    for start in range(0, len(dataset), batch_size):
        chunk = order[start:start + batch_size]
        yield assemble_batch(dataset, chunk, kind)


def extract_cues(dataset: Dataset, out_dir, image_side=None, workers=1):
    """Precompute and store cue tensors on disk, one npz per sentence."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    side = image_side or dataset.image_side

    def one(record):
        seq = cues.build_cue_sequences(cues.load_landmarks(record.landmarks_path), side)
        np.savez(out / f"{record.sid}.npz", **cue_arrays(seq))
        return record.sid

    if workers <= 1:
        for record in dataset.records:
            one(record)
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(one, dataset.records))
    return len(dataset.records)
