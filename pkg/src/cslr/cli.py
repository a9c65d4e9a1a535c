"""Single command-line entry point for the whole pipeline.

Subcommands: generate, extract, train, evaluate, decode, diagnose.
Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import cues, dataio, evalkit, models, synthgen
from .ctc import LogitSequence, beam_decode, diagnose as ctc_diagnose
from .errors import DataError
from .nn import TrainConfig
from .vocab import GlossVocabulary


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser():
    parser = _Parser(prog="cslr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="materialize a synthetic corpus")
    gen.add_argument("--spec", help="corpus spec JSON (defaults per field)")
    gen.add_argument("--out", required=True, help="output corpus directory")
    gen.add_argument("--seed", type=int, help="override the spec seed")

    ext = sub.add_parser("extract", help="precompute cue tensors to disk")
    ext.add_argument("--manifest", required=True)
    ext.add_argument("--out", required=True, help="cue cache directory")
    ext.add_argument("--side", type=int, default=cues.DEFAULT_IMAGE_SIDE)
    ext.add_argument("--workers", type=int, default=1)

    tr = sub.add_parser("train", help="train a model from a config file")
    tr.add_argument("--config", required=True, help="JSON with model/train/data sections")
    tr.add_argument("--manifest", help="override the train manifest path")
    tr.add_argument("--out", required=True, help="checkpoint output path")
    tr.add_argument("--seed", type=int, help="override the training seed")

    ev = sub.add_parser("evaluate", help="WER report for a checkpoint on a split")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--manifest", required=True)
    ev.add_argument("--beam", type=int, default=8)
    ev.add_argument("--format", choices=("text", "json"), default="text")
    ev.add_argument("--out", help="write the report here instead of stdout")
    ev.add_argument("--workers", type=int, default=1)

    de = sub.add_parser("decode", help="gloss strings for one landmark file")
    de.add_argument("--checkpoint", required=True)
    de.add_argument("landmarks", help="landmark JSONL file")
    de.add_argument("--beam", type=int, default=8)
    de.add_argument("--format", choices=("text", "json"), default="text")

    di = sub.add_parser("diagnose", help="beam-vs-network fault tallies on a split")
    di.add_argument("--checkpoint", required=True)
    di.add_argument("--manifest", required=True)
    di.add_argument("--beam", type=int, default=8)
    di.add_argument("--format", choices=("text", "json"), default="text")
    return parser


def _load_vocab_for(manifest_path):
    vocab_file = Path(manifest_path).parent / "vocab.txt"
    if not vocab_file.exists():
        raise DataError(f"vocabulary file not found next to manifest: {vocab_file}")
    return GlossVocabulary.from_file(vocab_file)


def _cmd_generate(args):
    spec_dict = {}
    if args.spec:
        spec_path = Path(args.spec)
        if not spec_path.exists():
            raise DataError(f"spec file not found: {spec_path}")
        spec_dict = json.loads(spec_path.read_text(encoding="utf-8"))
    if args.seed is not None:
        spec_dict["seed"] = args.seed
    spec = synthgen.CorpusSpec.from_dict(spec_dict)
    manifests = synthgen.generate_dataset(spec, args.out)
    for split, path in manifests.items():
        print(f"{split}: {path}")
    return 0


def _cmd_extract(args):
    vocab = _load_vocab_for(args.manifest)
    dataset = dataio.load_manifest(args.manifest, vocab, image_side=args.side)
    count = dataio.extract_cues(dataset, args.out, image_side=args.side, workers=args.workers)
    print(f"extracted cues for {count} sentences to {args.out}")
    return 0


def _cmd_train(args):
    config_path = Path(args.config)
    if not config_path.exists():
        raise DataError(f"config file not found: {config_path}")
    raw = json.loads(config_path.read_text(encoding="utf-8"))
    data_cfg = raw.get("data", {})
    train_manifest = args.manifest or data_cfg.get("train_manifest")
    dev_manifest = data_cfg.get("dev_manifest")
    if not train_manifest or not dev_manifest:
        raise UsageError("train needs data.train_manifest and data.dev_manifest")
    vocab = _load_vocab_for(train_manifest)

    model_cfg = dict(raw.get("model", {}))
    model_cfg.setdefault("vocab_size", len(vocab))
    arch = model_cfg.get("architecture", models.ARCH_MCSIGN)
    if arch == models.ARCH_RSIGN:
        config = models.rsign_mini_config(**{**model_cfg, "architecture": arch})
    else:
        config = models.mcsign_mini_config(**{**model_cfg, "architecture": arch})

    train_cfg = TrainConfig(**raw.get("train", {}))
    if args.seed is not None:
        train_cfg.seed = args.seed

    cache_dir = data_cfg.get("cache_dir")
    train_ds = dataio.load_manifest(train_manifest, vocab,
                                    image_side=config.image_side, cache_dir=cache_dir)
    dev_ds = dataio.load_manifest(dev_manifest, vocab,
                                  image_side=config.image_side, cache_dir=cache_dir)
    model = models.build_model(config)
    history = models.fit(model, train_ds, dev_ds, train_cfg, checkpoint_path=args.out)
    log_path = Path(args.out).with_suffix(Path(args.out).suffix + ".log.json")
    log_path.write_text(json.dumps({"history": history}, indent=2) + "\n", encoding="utf-8")
    best = min(h["dev_wer"] for h in history)
    print(f"trained {config.architecture} for {len(history)} epochs, "
          f"best dev WER {best:.1f}; checkpoint at {args.out}")
    return 0


def _load_model_and_dataset(args):
    model, vocab = models.load_checkpoint(args.checkpoint)
    dataset_vocab = _load_vocab_for(args.manifest)
    if dataset_vocab.glosses != vocab.glosses:
        raise DataError("checkpoint vocabulary disagrees with the corpus vocabulary")
    dataset = dataio.load_manifest(args.manifest, vocab, image_side=model.config.image_side)
    return model, dataset


def _cmd_evaluate(args):
    model, dataset = _load_model_and_dataset(args)
    report = evalkit.evaluate_model(model, dataset, beam_size=args.beam)
    payload = evalkit.render_report(report, fmt=args.format)
    if args.out:
        Path(args.out).write_bytes(payload)
    else:
        sys.stdout.buffer.write(payload)
    return 0


def _cmd_decode(args):
    model, vocab = models.load_checkpoint(args.checkpoint)
    landmarks_path = Path(args.landmarks)
    if not landmarks_path.exists():
        raise DataError(f"landmark file not found: {landmarks_path}")
    frames = cues.load_landmarks(landmarks_path)
    if not frames:
        raise DataError(f"no frames in {landmarks_path}")
    if model.config.input_kind == "frames":
        stack = np.stack([
            cues.render_scene_frame(f, model.config.frame_side) for f in frames
        ])[:, None, :, :].astype(np.float32)
        inputs = {"frames": stack[None]}
    else:
        seq = cues.build_cue_sequences(frames, model.config.image_side)
        arrays = {k: v.astype(np.float32) for k, v in dataio.cue_arrays(seq).items()}
        inputs = {k: v[None] for k, v in arrays.items()}
    lengths = np.array([len(frames)])
    logits = model.forward(inputs, lengths, train=False)
    ranked = beam_decode(LogitSequence(logits[0], len(frames)), args.beam)
    glosses = vocab.decode(ranked[0][0])
    if args.format == "json":
        print(json.dumps({"gloss": glosses, "log_prob": ranked[0][1]}))
    else:
        print(" ".join(glosses))
    return 0


def _cmd_diagnose(args):
    model, dataset = _load_model_and_dataset(args)
    tallies = {"correct": 0, "network_at_fault": 0, "search_at_fault": 0}
    per_sentence = []
    for batch in dataio.batch_iter(dataset, 16, shuffle_seed=None,
                                   kind=model.config.input_kind):
        for b, seq in enumerate(models.model_forward(model, batch, mode="infer")):
            ref = tuple(batch.targets[b, : batch.target_lengths[b]])
            result = ctc_diagnose(seq, ref, args.beam)
            tallies[result.verdict.value] += 1
            per_sentence.append({"id": batch.ids[b], "verdict": result.verdict.value})
    if args.format == "json":
        print(json.dumps({"beam_size": args.beam, "tallies": tallies,
                          "sentences": per_sentence}, indent=2, sort_keys=True))
    else:
        print(f"beam {args.beam}: correct={tallies['correct']} "
              f"network_at_fault={tallies['network_at_fault']} "
              f"search_at_fault={tallies['search_at_fault']}")
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "extract": _cmd_extract,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "decode": _cmd_decode,
    "diagnose": _cmd_diagnose,
}


def run(argv):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
