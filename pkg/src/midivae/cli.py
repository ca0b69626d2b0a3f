"""Command-line entry point: ``midivae <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError, MidiVAEError

log = logging.getLogger("midivae")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_CHECK_FAILED = 4
EXIT_INTERRUPTED = 130

EXIT_CODES_HELP = """\
exit codes:
  0    success
  1    unexpected internal error
  2    usage error (unknown subcommand or flag, bad flag value)
  3    input file or directory not found
  4    gradcheck ran but exceeded its tolerance
  10   MidiParseError        malformed MIDI / note-list input
  11   UnsupportedFormatError SMF format 2, SMPTE timing, too many instruments
  12   EncodingError         note outside the vocabulary
  13   DecodingError         token index outside the vocabulary
  14   CapacityError         piece does not fit the track/bar grid
  15   MappingError          more instruments than track slots
  16   ContractError         shape or argument contract violated
  17   ConfigError           config validation failure (names the key)
  18   CheckpointError       unreadable or mismatched checkpoint
  19   TrainingError         non-finite loss or empty training split
  130  interrupted (a checkpoint is written first when training)

errors are printed to stderr as one line: "error: <ErrorClass>: <message>"
"""


# configuration ------------------------------------------------------------------


def _schema():
    from .data.corpus import Limits
    from .model.config import ModelConfig
    from .train import TrainingConfig

    model_keys = {f.name for f in fields(ModelConfig)} - {
        "vocab_sizes", "n_tracks", "n_bars", "track_capacity", "bar_capacity"}
    return {
        "seed": None,
        "model": model_keys,
        "training": {f.name for f in fields(TrainingConfig)} - {"seed"},
        "data": {f.name for f in fields(Limits)} | {"ratios", "workers"},
        "synth": {"count", "bars", "tracks", "density"},
        "generate": {"count", "temperature", "batch_size"},
    }


DEFAULT_CONFIG = {
    "seed": 0,
    "model": {},
    "training": {},
    "data": {"ratios": [0.8, 0.1, 0.1], "workers": 1},
    "synth": {},
    "generate": {"count": 16, "temperature": 0.0, "batch_size": 16},
}


def validate_config(cfg: dict) -> dict:
    """Reject unknown sections or keys, naming the first offender."""
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a mapping")
    schema = _schema()
    for section, value in cfg.items():
        if section not in schema:
            raise ConfigError(f"unknown config key {section!r}")
        keys = schema[section]
        if keys is None:
            continue
        if not isinstance(value, dict):
            raise ConfigError(f"config section {section!r} must be a mapping")
        for key in value:
            if key not in keys:
                raise ConfigError(f"unknown config key '{section}.{key}'")
    return cfg


def _merge(base: dict, extra: dict) -> dict:
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in base.items()}
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def apply_override(cfg: dict, assignment: str) -> dict:
    """Apply one ``section.key=value`` override; the value is parsed as YAML."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    if not all(parts):
        raise ConfigError(f"bad override key {key!r}")
    value = yaml.safe_load(raw) if raw.strip() else None
    patch = value
    for part in reversed(parts):
        patch = {part: patch}
    return _merge(cfg, patch)


def load_run_config(path=None, overrides=(), seed=None) -> dict:
    cfg = DEFAULT_CONFIG
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file {path} not found")
        try:
            loaded = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        cfg = _merge(cfg, validate_config(loaded))
    for assignment in overrides:
        cfg = apply_override(cfg, assignment)
    if seed is not None:
        cfg = _merge(cfg, {"seed": seed})
    validate_config(cfg)
    if not isinstance(cfg["seed"], int):
        raise ConfigError("seed must be an integer")
    return cfg


def _require(path, what="input"):
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} {path} not found")
    return p


# output -------------------------------------------------------------------------


def _emit(args, payload, text=None):
    """Machine-readable JSON with --json, otherwise the human-readable text."""
    if args.json or text is None:
        print(json.dumps(payload, indent=None if args.json else 1))
    else:
        print(text)


def _events_from_tokens(seq, vocab):
    from .octuple import decode_sequence

    return decode_sequence(seq, vocab)


# subcommands ----------------------------------------------------------------------


def cmd_tokenize(args, cfg):
    from .octuple import ATTRIBUTES, OctupleVocabulary, encode_score, load_score

    vocab = OctupleVocabulary.load(args.vocab) if args.vocab else OctupleVocabulary()
    seq = encode_score(load_score(_require(args.input)), vocab, provenance=str(args.input))
    payload = {"source": str(args.input), "vocab_fingerprint": vocab.fingerprint(),
               "attributes": list(ATTRIBUTES), "tokens": seq.to_array().tolist()}
    if args.output:
        Path(args.output).write_text(json.dumps(payload))
    lines = ["\t".join(ATTRIBUTES)] + ["\t".join(map(str, t)) for t in seq]
    _emit(args, payload, "\n".join(lines))
    return EXIT_OK


def cmd_synth_corpus(args, cfg):
    from .data.synth import SyntheticCorpusSpec, synth_chorale_corpus
    from .octuple import OctupleVocabulary

    synth = dict(cfg["synth"])
    if args.count is not None:
        synth["count"] = args.count
    spec = SyntheticCorpusSpec(seed=cfg["seed"], **synth)
    manifest = synth_chorale_corpus(spec, args.out, OctupleVocabulary(), _limits(cfg),
                                    ingest=not args.no_ingest)
    payload = {"out": str(args.out), "pieces": spec.count}
    if manifest is not None:
        payload.update(_manifest_summary(manifest))
    _emit(args, payload, _summary_text(payload))
    return EXIT_OK


def _limits(cfg):
    from .data.corpus import Limits

    data = {k: v for k, v in cfg["data"].items() if k not in ("ratios", "workers")}
    return Limits(**data)


def _manifest_summary(manifest):
    counts = {s: len(manifest.split(s)) for s in ("train", "valid", "test")}
    return {"splits": counts, "rejects": len(manifest.rejects), "limits": manifest.limits}


def _summary_text(payload):
    return "\n".join(f"{k}: {json.dumps(v)}" for k, v in payload.items())


def cmd_ingest(args, cfg):
    from .data.corpus import ingest_corpus
    from .octuple import OctupleVocabulary

    root = _require(args.root, "corpus directory")
    vocab = OctupleVocabulary.load(args.vocab) if args.vocab else OctupleVocabulary()
    data = cfg["data"]
    manifest = ingest_corpus(root, vocab, out=args.out, limits=_limits(cfg),
                             ratios=tuple(data.get("ratios", (0.8, 0.1, 0.1))),
                             workers=int(data.get("workers", 1)))
    payload = {"out": manifest.root, **_manifest_summary(manifest)}
    _emit(args, payload, _summary_text(payload))
    return EXIT_OK


def model_config_for(manifest, cfg):
    from .model.config import ModelConfig

    lim = manifest.limits
    return ModelConfig.for_vocab(
        manifest.vocab(), n_tracks=lim["n_tracks"], n_bars=lim["n_bars"],
        track_capacity=lim["track_capacity"], bar_capacity=lim["bar_capacity"], **cfg["model"])


def cmd_train(args, cfg):
    from .data.corpus import CorpusManifest
    from .train import TrainingConfig, read_metrics, train

    manifest = CorpusManifest.load(_require(args.corpus, "corpus"))
    tcfg = dict(cfg["training"])
    if args.max_steps is not None:
        tcfg["max_steps"] = args.max_steps
    train_cfg = TrainingConfig(seed=cfg["seed"], **tcfg)
    model_cfg = model_config_for(manifest, cfg)
    resume = _require(args.resume, "checkpoint") if args.resume else None
    ckpt, metrics = train(manifest, model_cfg, train_cfg, args.out, resume=resume)
    records = read_metrics(metrics)
    payload = {"checkpoint": str(ckpt), "metrics": str(metrics),
               "steps": records[-1]["step"] if records else 0,
               "final_loss": records[-1]["l_total"] if records else None}
    _emit(args, payload, _summary_text(payload))
    return EXIT_OK


def cmd_reconstruct(args, cfg):
    from .evaluate import forward_reconstruct
    from .octuple import ATTRIBUTES, encode_score, load_score, save_smf
    from .train import load_checkpoint

    model, vocab, _ = load_checkpoint(_require(args.checkpoint, "checkpoint"))
    seq = encode_score(load_score(_require(args.input)), vocab)
    recon, losses, _ = forward_reconstruct(model, seq, vocab, deterministic=True, seed=cfg["seed"])
    save_smf(_events_from_tokens(recon, vocab), args.output)
    orig, pred = seq.to_array(), recon.to_array()
    hits = (orig == pred) if len(orig) else np.zeros((0, len(ATTRIBUTES)), bool)
    per_attr = {a: float(hits[:, i].mean()) if len(orig) else 0.0 for i, a in enumerate(ATTRIBUTES)}
    payload = {
        "input": str(args.input), "output": str(args.output), "tokens": len(orig),
        "overall_accuracy": float(hits.mean()) if len(orig) else 0.0,
        "exact_tokens": int(hits.all(axis=1).sum()),
        "attributes": per_attr,
        "loss": losses.as_dict(),
    }
    lines = [f"tokens: {payload['tokens']}  exact: {payload['exact_tokens']}  "
             f"overall accuracy: {payload['overall_accuracy']:.4f}"]
    lines += [f"  {a:<10} {v:.4f}" for a, v in per_attr.items()]
    _emit(args, payload, "\n".join(lines))
    return EXIT_OK


def cmd_generate(args, cfg):
    from .evaluate import sample_prior_generate
    from .octuple import save_smf
    from .train import load_checkpoint

    gen = dict(cfg["generate"])
    count = args.count if args.count is not None else int(gen.get("count", 16))
    temperature = args.temperature if args.temperature is not None else float(gen.get("temperature", 0.0))
    if count < 0:
        raise ConfigError("count must be >= 0")
    model, vocab, _ = load_checkpoint(_require(args.checkpoint, "checkpoint"))
    files = []
    degenerate = 0
    if count:
        result = sample_prior_generate(model, count, cfg["seed"], temperature, int(gen.get("batch_size", 16)))
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        width = max(4, len(str(count - 1)))
        for i, seq in enumerate(result.pieces):
            path = out / f"sample_{i:0{width}d}.mid"
            save_smf(_events_from_tokens(seq, vocab), path)
            files.append(str(path))
        degenerate = result.degenerate
    payload = {"count": count, "files": files, "degenerate": degenerate,
               "degeneracy_rate": degenerate / count if count else 0.0}
    _emit(args, payload, f"wrote {len(files)} files; degeneracy rate {payload['degeneracy_rate']:.3f}")
    return EXIT_OK


def cmd_evaluate(args, cfg):
    from .data.corpus import CorpusManifest
    from .evaluate import evaluate_reconstruction

    manifest = CorpusManifest.load(_require(args.corpus, "corpus"))
    report = evaluate_reconstruction(_require(args.checkpoint, "checkpoint"), manifest, args.split)
    text = report.to_json(indent=1)
    if args.output:
        Path(args.output).write_text(text)
    print(report.to_json() if args.json else text)
    return EXIT_OK


def cmd_gradcheck(args, cfg):
    from .gradcheck import gradient_check

    report = gradient_check(seed=cfg["seed"], coordinates=args.coordinates)
    payload = report.to_dict()
    text = (f"{'PASS' if report.passed else 'FAIL'}: max relative error {report.max_rel_error:.3e} "
            f"over {report.coordinates} coordinates (tolerance {report.tolerance:g})")
    _emit(args, payload, text)
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def length_statistics(sources, vocab) -> dict:
    """Octuple vs REMI+ token counts over source files; unreadable files are skipped."""
    from .octuple import encode_score, load_score, remi_plus_token_count

    rows = []
    for path in sources:
        try:
            events = load_score(path)
            octuple = len(encode_score(events, vocab))
        except MidiVAEError as exc:
            log.warning("skipping %s: %s", path, exc)
            continue
        remi = remi_plus_token_count(events, vocab)
        if remi:
            rows.append((octuple, remi, octuple / remi))
    if not rows:
        return {"pieces": 0}
    arr = np.asarray(rows, dtype=float)
    return {
        "pieces": len(rows),
        "octuple_mean": float(arr[:, 0].mean()),
        "remi_plus_mean": float(arr[:, 1].mean()),
        "ratio_mean": float(arr[:, 2].mean()),
        "ratio_min": float(arr[:, 2].min()),
        "ratio_max": float(arr[:, 2].max()),
        "ratio_of_means": float(arr[:, 0].sum() / arr[:, 1].sum()),
    }


def cmd_compare_length(args, cfg):
    from .data.corpus import CorpusManifest, list_sources
    from .octuple import OctupleVocabulary

    root = _require(args.corpus, "corpus")
    if (root / "manifest.json").exists():
        manifest = CorpusManifest.load(root)
        sources, vocab = [e.source for e in manifest.entries], manifest.vocab()
    else:
        sources = list_sources(root) if root.is_dir() else [root]
        sources = [p for p in sources if p.name not in ("rejects.json", "vocab.json")]
        vocab = OctupleVocabulary()
    stats = length_statistics(sources, vocab)
    lines = [f"{'statistic':<16}{'value':>12}"]
    for k, v in stats.items():
        lines.append(f"{k:<16}{v:>12.4f}" if isinstance(v, float) else f"{k:<16}{v:>12}")
    _emit(args, stats, "\n".join(lines))
    return EXIT_OK


# parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="YAML run configuration")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted config override, e.g. training.lr=0.001 (repeatable)")
    common.add_argument("--seed", type=int, help="seed; overrides the config value")
    common.add_argument("--json", action="store_true", help="print a single JSON payload on stdout")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")

    parser = argparse.ArgumentParser(
        prog="midivae", description="Multi-view MIDI VAE: tokenize, train, evaluate and generate.",
        epilog=EXIT_CODES_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    def add(name, func, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text,
                           epilog=EXIT_CODES_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
        p.set_defaults(func=func)
        return p

    p = add("tokenize", cmd_tokenize, "encode an SMF or JSON note list as octuple tokens")
    p.add_argument("input", help="input .mid/.midi or .json note list")
    p.add_argument("--output", metavar="FILE", help="also save the token JSON here")
    p.add_argument("--vocab", metavar="FILE", help="vocab.json to encode with (default vocabulary)")

    p = add("synth-corpus", cmd_synth_corpus, "write and ingest a synthetic four-part chorale corpus")
    p.add_argument("out", help="output directory")
    p.add_argument("--count", type=int, help="number of pieces (overrides synth.count)")
    p.add_argument("--no-ingest", action="store_true", help="only write the SMF files")

    p = add("ingest", cmd_ingest, "encode a directory of SMF / note-list files into a corpus")
    p.add_argument("root", help="directory scanned recursively for .mid/.midi/.json")
    p.add_argument("--out", metavar="DIR", help="corpus output directory (default: root)")
    p.add_argument("--vocab", metavar="FILE", help="vocab.json to encode with (default vocabulary)")

    p = add("train", cmd_train, "train a model on a corpus's train split")
    p.add_argument("corpus", help="corpus directory or manifest.json")
    p.add_argument("--out", required=True, metavar="DIR", help="run directory for checkpoint and metrics")
    p.add_argument("--resume", metavar="CKPT", help="continue from this checkpoint")
    p.add_argument("--max-steps", type=int, help="overrides training.max_steps")

    p = add("reconstruct", cmd_reconstruct, "reconstruct one piece through a checkpoint")
    p.add_argument("input", help="input .mid/.midi or .json note list")
    p.add_argument("--checkpoint", required=True, metavar="CKPT", help="model checkpoint")
    p.add_argument("--output", required=True, metavar="FILE", help="reconstructed SMF path")

    p = add("generate", cmd_generate, "sample pieces from the prior and write SMF files")
    p.add_argument("--checkpoint", required=True, metavar="CKPT", help="model checkpoint")
    p.add_argument("--count", type=int, help="number of samples (overrides generate.count)")
    p.add_argument("--temperature", type=float, help="0 = greedy argmax (overrides generate.temperature)")
    p.add_argument("--out", default="samples", metavar="DIR", help="output directory (default: samples)")

    p = add("evaluate", cmd_evaluate, "teacher-forced reconstruction accuracy as an EvalReport")
    p.add_argument("corpus", help="corpus directory or manifest.json")
    p.add_argument("--checkpoint", required=True, metavar="CKPT", help="model checkpoint")
    p.add_argument("--split", default="test", choices=("train", "valid", "test"), help="split (default: test)")
    p.add_argument("--output", metavar="FILE", help="also write the report here")

    p = add("gradcheck", cmd_gradcheck, "finite-difference gradient check on a miniature model")
    p.add_argument("--coordinates", type=int, default=240, help="sampled parameter coordinates (default: 240)")

    p = add("compare-length", cmd_compare_length, "octuple vs REMI+ sequence-length statistics")
    p.add_argument("corpus", help="corpus directory, source directory, or single file")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_run_config(args.config, args.overrides, args.seed)
        return args.func(args, cfg)
    except MidiVAEError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"error: FileNotFoundError: {exc}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except KeyboardInterrupt:
        print("error: KeyboardInterrupt: interrupted", file=sys.stderr)
        return EXIT_INTERRUPTED
    except TypeError as exc:
        # dataclass constructors reject bad config shapes this way
        print(f"error: ConfigError: {exc}", file=sys.stderr)
        return ConfigError.code
    except Exception as exc:  # noqa: BLE001 - last-resort one-line report
        log.debug("unexpected failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
