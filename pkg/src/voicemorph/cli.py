"""Command-line entry point.

Subcommands: make-toy-corpus, pretrain-voice, train, infer, eval.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.  Every run logs its resolved configuration and seed.
"""

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import audio, data, evaluation, voice_encoder
from .errors import ConfigError, DataError, NumericError
from .training import (TrainConfig, Trainer, build_models_from_checkpoint,
                       parse_config_file)

log = logging.getLogger("voicemorph")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def build_parser():
    parser = argparse.ArgumentParser(
        prog="voicemorph",
        description="Voice-conditioned face morphing: train and run a "
                    "gated U-net face autoencoder.")
    parser.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--seed", dest="global_seed", type=int, default=None,
                        help="default seed for any subcommand that takes one")
    parser.add_argument("--config", dest="global_config", type=Path, default=None,
                        help="default settings file for `train`")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-toy-corpus",
                       help="generate the synthetic desk-scale corpus")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--identities", type=int, default=4)
    p.add_argument("--faces-per-identity", type=int, default=10)
    p.add_argument("--clips-per-identity", type=int, default=10)
    p.add_argument("--eval-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("pretrain-voice",
                       help="pre-train the speaker embedding network")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--width", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--sample-rate", type=int, default=audio.CANONICAL_RATE,
                   help="ingest rate; voices are resampled to this")

    p = sub.add_parser("train", help="adversarially train the generator")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--voice-ckpt", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--config", type=Path, help="key = value settings file")
    p.add_argument("--resume", type=Path, help="trainer checkpoint to continue")
    p.add_argument("--max-steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--width", type=float)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--checkpoint-interval", type=int)
    p.add_argument("--d-to-g-ratio", type=int)
    p.add_argument("--early-stop", dest="early_stop", action="store_true",
                   default=None)
    p.add_argument("--no-early-stop", dest="early_stop", action="store_false")

    p = sub.add_parser("infer", help="morph proposal face(s) by target voice(s)")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--face", type=Path, action="append", required=True,
                   help="proposal face image; repeat for a grid")
    p.add_argument("--voice", type=Path, action="append", required=True,
                   help="target voice WAV; repeat for a grid")
    p.add_argument("--out", type=Path, help="output image (single pair)")
    p.add_argument("--out-dir", type=Path, help="output directory (grid mode)")

    p = sub.add_parser("eval", help="similarity and retrieval metrics")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--report", type=Path, required=True)
    p.add_argument("--split", default="eval", choices=["train", "eval"])
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--n-triples", type=int, default=100)
    p.add_argument("--n-random-pairs", type=int, default=1000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--target", default="B", choices=["A", "B", "both"])
    return parser


def _resolved_seed(args, fallback=0):
    if args.seed is not None:
        return args.seed
    if args.global_seed is not None:
        return args.global_seed
    return fallback


def cmd_make_toy_corpus(args):
    seed = _resolved_seed(args)
    manifest = data.make_toy_corpus(
        args.out_dir, n_identities=args.identities,
        faces_per_identity=args.faces_per_identity,
        clips_per_identity=args.clips_per_identity,
        seed=seed, eval_fraction=args.eval_fraction)
    log.info("seed %d -> %d identities, %d faces, %d clips under %s",
             seed, manifest.n_identities, len(manifest.faces()),
             len(manifest.voices()), args.out_dir)
    print(args.out_dir / "manifest.tsv")
    return EXIT_OK


def cmd_pretrain_voice(args):
    seed = _resolved_seed(args)
    log.info("pretraining embedder: width=%s epochs=%d lr=%g seed=%d rate=%d",
             args.width, args.epochs, args.lr, seed, args.sample_rate)
    manifest = data.read_manifest(args.manifest)
    encoder, stats = voice_encoder.pretrain_embedder(
        manifest, width=args.width, epochs=args.epochs, lr=args.lr,
        seed=seed, sample_rate=args.sample_rate)
    voice_encoder.save_embedder(args.out, encoder, stats)
    log.info("training accuracy %.3f on %d recordings of %d speakers",
             stats["train_accuracy"], stats["n_recordings"], stats["n_speakers"])
    print(args.out)
    return EXIT_OK


def cmd_train(args):
    config_path = args.config or args.global_config
    values = parse_config_file(config_path) if config_path else {}
    overrides = {
        "max_steps": args.max_steps,
        "seed": args.seed if args.seed is not None else args.global_seed,
        "width": args.width,
        "learning_rate": args.learning_rate,
        "checkpoint_interval": args.checkpoint_interval,
        "d_to_g_ratio": args.d_to_g_ratio,
        "early_stop": args.early_stop,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    config = TrainConfig.from_dict(values)
    manifest = data.read_manifest(args.manifest)
    encoder = voice_encoder.load_embedder(args.voice_ckpt)
    trainer = Trainer(manifest, encoder, config, out_dir=args.out_dir)
    if args.resume:
        trainer.load(args.resume)
        log.info("resumed from %s at step %d", args.resume, trainer.step)
    trainer.train()
    final = trainer.out_dir / "ckpt_final.npz"
    log.info("finished at step %d; final checkpoint %s", trainer.step, final)
    print(final)
    return EXIT_OK


def cmd_infer(args):
    generator, _, encoder, _, meta = build_models_from_checkpoint(args.ckpt)
    faces = [(path, data.load_face(path)) for path in args.face]
    embeddings = []
    for path in args.voice:
        wav = audio.load_voice(path, encoder.sample_rate)
        embeddings.append((path, encoder.embed(audio.extract_features(wav))))
    single = len(faces) == 1 and len(embeddings) == 1
    if single and args.out is not None:
        out = generator.synthesize(faces[0][1], embeddings[0][1])
        data.save_face(args.out, out)
        print(args.out)
        return EXIT_OK
    if args.out_dir is None:
        raise ConfigError("grid mode needs --out-dir "
                          "(or pass exactly one --face/--voice with --out)")
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for i, (face_path, face) in enumerate(faces):
        for j, (voice_path, emb) in enumerate(embeddings):
            out_path = args.out_dir / f"gen_f{i:02d}_v{j:02d}.png"
            data.save_face(out_path, generator.synthesize(face, emb))
            log.info("%s x %s -> %s", face_path.name, voice_path.name, out_path)
            print(out_path)
    return EXIT_OK


def cmd_eval(args):
    generator, critics, encoder, labels, meta = build_models_from_checkpoint(args.ckpt)
    manifest = data.read_manifest(args.manifest)
    if manifest.identities != labels:
        raise DataError(
            f"manifest identities {manifest.identities} do not match the "
            f"checkpoint's classifier labels {labels}")
    seed = _resolved_seed(args)
    log.info("eval: split=%s top_k=%d n_triples=%d seed=%d",
             args.split, args.top_k, args.n_triples, seed)
    similarity = evaluation.eval_similarity(
        manifest, generator, critics, encoder, split=args.split,
        n_triples=args.n_triples, n_random_pairs=args.n_random_pairs,
        seed=seed)
    targets = ["A", "B"] if args.target == "both" else [args.target]
    retrievals = {
        t: evaluation.eval_retrieval(
            manifest, generator, critics, encoder, k=args.top_k,
            split=args.split, n_queries=args.n_triples, seed=seed, target=t)
        for t in targets}
    payload = {
        "similarity": asdict(similarity),
        "retrieval": {t: asdict(r) for t, r in retrievals.items()},
        "checkpoint": str(args.ckpt),
        "identities": labels,
        "split": args.split,
    }
    with open(args.report, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    log.info("cos(g,A)=%.4f cos(g,B)=%.4f random=%.4f",
             similarity.cos_generated_proposal, similarity.cos_generated_target,
             similarity.cos_random_pairs)
    for t, r in retrievals.items():
        log.info("top-%d retrieval of %s: %.3f", r.top_k, t, r.success_rate)
    print(args.report)
    return EXIT_OK


COMMANDS = {
    "make-toy-corpus": cmd_make_toy_corpus,
    "pretrain-voice": cmd_pretrain_voice,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except DataError as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
