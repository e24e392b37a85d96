"""Command-line entry point.

Staged commands share a features directory holding ``<utt>.audio.feat`` and
``<utt>.visual.feat`` files, so a pipeline can be run step by step::

    avphon synth configs/synth_av.ini corpus/
    avphon fit-pca --corpus corpus/ --out work/eigenmouths.basis
    avphon extract-audio --corpus corpus/ --split train --out work/feat
    avphon extract-video --corpus corpus/ --split train --basis work/eigenmouths.basis --out work/feat
    avphon train --corpus corpus/ --features work/feat --modality AV --out work/av.model
    avphon eval-abx --corpus corpus/ --features work/feat --model work/av.model --test-modality A --out r.json

or in one go with ``avphon run --config experiment.ini``.
"""

import argparse
import dataclasses
import logging
import math
import sys
from pathlib import Path

import numpy as np

from avphon import __version__, abx, experiment, io, synth
from avphon.corpus import Corpus
from avphon.dpgmm import DpgmmConfig, DpgmmModel, NiwPrior, fit
from avphon.errors import AvphonError, ConfigError, DataError
from avphon.features import FeatureSequence, WindowGrid
from avphon.fusion import observed_dims
from avphon.visual import EigenmouthBasis

logger = logging.getLogger("avphon")


def _global_options():
    # SUPPRESS lets the flags appear before or after the subcommand
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--config", type=Path, default=argparse.SUPPRESS,
                   help="experiment INI file ([experiment] and [dpgmm] sections)")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    g.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    g.add_argument("--sequential", action="store_true", default=argparse.SUPPRESS,
                   help="deterministic single-process execution")
    g.add_argument("--snr-db", type=float, default=argparse.SUPPRESS,
                   help="SNR of added test noise in dB")
    g.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)
    return p


def build_parser():
    common = _global_options()
    parser = argparse.ArgumentParser(prog="avphon", parents=[common],
                                     description="Audiovisual phonetic category learning.")
    parser.add_argument("--version", action="version", version=f"avphon {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    p.add_argument("spec", type=Path)
    p.add_argument("out", type=Path)

    p = sub.add_parser("fit-pca", parents=[common], help="fit eigenmouths on the pretrain split")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--components", type=int)
    p.add_argument("--out", type=Path, required=True)

    for name, what in (("extract-audio", "MFCC"), ("extract-video", "eigenmouth")):
        p = sub.add_parser(name, parents=[common], help=f"write {what} feature files")
        p.add_argument("--corpus", type=Path, required=True)
        p.add_argument("--split", default="train", choices=("pretrain", "train", "test"))
        p.add_argument("--out", type=Path, required=True)
        if name == "extract-video":
            p.add_argument("--basis", type=Path)

    p = sub.add_parser("train", parents=[common], help="fit one DPGMM on the train split")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--modality", required=True, choices=sorted(experiment.TRAIN_MODALITIES))
    p.add_argument("--iterations", type=int)
    p.add_argument("--trace", type=Path, help="write the per-sweep trace CSV here")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval-abx", parents=[common], help="score a model on the ABX battery")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--test-modality", required=True, choices=("A", "V", "AV"))
    p.add_argument("--weighting", choices=("contrast", "triple"))
    p.add_argument("--triples", type=Path, help="write per-triple scores here")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("run", parents=[common], help="run the full train/test modality matrix")
    p.add_argument("--manifest", type=Path, help="re-execute a previous run from its manifest")
    p.add_argument("--output", type=Path, help="output directory (overrides the config)")
    p.add_argument("--corpus", type=Path, help="corpus directory (overrides the config)")
    p.add_argument("--replicates", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--conditions", help="comma-separated list such as A-A,AV-A")

    p = sub.add_parser("compare", parents=[common], help="compare two sets of replicate reports")
    p.add_argument("set1", type=Path, help="directory of replicate_NN.json reports")
    p.add_argument("set2", type=Path)
    p.add_argument("--out", type=Path, help="write the comparison JSON here")
    return parser


def _config_values(args):
    """Experiment settings from --config (if any), without path requirements."""
    if "config" not in args:
        return {}
    cfg = experiment.load_config(args.config, corpus=".", output=".")
    return cfg.to_dict()


def _stage_config(args):
    d = _config_values(args)
    d.update(corpus=str(getattr(args, "corpus", ".")), output=".")
    for key in ("seed", "snr_db", "iterations", "weighting"):
        value = getattr(args, key, None)
        if value is not None:
            d[key] = value
    return experiment.ExperimentConfig.from_dict(d)


def cmd_synth(args):
    spec = synth.load_spec(args.spec)
    if "seed" in args:
        spec = dataclasses.replace(spec, seed=args.seed)
    ids = synth.generate(spec, args.out)
    for split, utts in ids.items():
        print(f"{split}: {len(utts)} utterances")


def cmd_fit_pca(args):
    cfg = _stage_config(args)
    basis = experiment.fit_eigenmouths(Corpus(args.corpus), args.components or cfg.pca_components)
    basis.save(args.out)
    total = float(np.sum(basis.explained_variance))
    print(f"{basis.k} components, explained variance {total:.4g}")


def cmd_extract_audio(args):
    cfg = _stage_config(args)
    corpus = Corpus(args.corpus)
    snr = args.snr_db if "snr_db" in args else math.inf
    for utt in corpus.utterances(args.split):
        seq = experiment.audio_features(corpus, utt, snr, cfg.seed)
        seq.save(args.out / f"{utt}.audio.feat")
    print(f"wrote {len(corpus.utterances(args.split))} audio feature files to {args.out}")


def cmd_extract_video(args):
    corpus = Corpus(args.corpus)
    basis = EigenmouthBasis.load(args.basis) if args.basis else None
    if basis is None and corpus.mode == "waveform":
        raise ConfigError("extract-video needs --basis for a waveform corpus")
    for utt in corpus.utterances(args.split):
        audio = args.out / f"{utt}.audio.feat"
        if audio.is_file():
            grid = FeatureSequence.load(audio).grid
        else:
            grid = WindowGrid.for_duration(experiment._duration(corpus, utt))
        seq = experiment.visual_features(corpus, utt, basis, grid)
        seq.save(args.out / f"{utt}.visual.feat")
    print(f"wrote {len(corpus.utterances(args.split))} visual feature files to {args.out}")


def _load_sequences(features, utts, modality_code, table):
    out = {}
    for utt in utts:
        parts = {}
        for m in table[modality_code]:
            path = features / f"{utt}.{m}.feat"
            if not path.is_file():
                raise DataError(f"missing feature file {path}")
            parts[m] = FeatureSequence.load(path)
        out[utt] = experiment.combine(table[modality_code], parts.get("audio"),
                                      parts.get("visual"))
    return out


def cmd_train(args):
    cfg = _stage_config(args)
    corpus = Corpus(args.corpus)
    utts = corpus.utterances("train")
    seqs = _load_sequences(args.features, utts, args.modality, experiment.TRAIN_MODALITIES)
    seqs = [seqs[u] for u in sorted(seqs)]
    X = np.vstack([s.vectors for s in seqs])
    prior = NiwPrior.from_data(X, cfg.kappa0, cfg.nu_offset, cfg.psi_scale)
    model = fit(seqs, prior, DpgmmConfig(cfg.alpha, cfg.iterations, cfg.init_clusters, cfg.seed))
    model.save(args.out)
    if args.trace:
        io.atomic_write_text(args.trace, model.trace_csv())
    print(f"{model.n_clusters} clusters after {cfg.iterations} sweeps")


def cmd_eval_abx(args):
    cfg = _stage_config(args)
    corpus = Corpus(args.corpus)
    model = DpgmmModel.load(args.model)
    utts = corpus.utterances("test")
    seqs = _load_sequences(args.features, utts, args.test_modality, experiment.TEST_MODALITIES)
    tokens = []
    for utt in utts:
        tokens += [t for t in corpus.load_alignment(utt)
                   if len(abx.token_windows(seqs[utt].grid, t))]
    battery = abx.build_battery(tokens, corpus.class_map, cfg.cross_speaker)
    if len(battery) == 0:
        raise DataError("the test split yields an empty ABX battery")
    observed = observed_dims(model.layout, experiment.TEST_MODALITIES[args.test_modality])
    post = experiment.token_posteriors(model, battery, seqs, observed)
    report, scores = abx.evaluate(battery, post, corpus.class_map, cfg.weighting)
    io.atomic_write_text(args.out, io.dump_json(report.to_dict()))
    if args.triples:
        io.atomic_write_text(args.triples, abx.triple_scores_csv(battery, scores))
    print(f"overall ABX {report.overall:.4f} over {len(battery)} triples")


def cmd_run(args):
    if args.manifest:
        cfg = experiment.config_from_manifest(args.manifest, args.output)
        if "threads" in args:
            cfg = experiment.ExperimentConfig.from_dict({**cfg.to_dict(), "threads": args.threads})
    else:
        if "config" not in args:
            raise ConfigError("run needs --config or --manifest")
        overrides = {
            "seed": getattr(args, "seed", None),
            "threads": getattr(args, "threads", None),
            "snr_db": getattr(args, "snr_db", None),
            "replicates": args.replicates,
            "iterations": args.iterations,
            "corpus": str(args.corpus.resolve()) if args.corpus else None,
            "output": str(args.output.resolve()) if args.output else None,
        }
        if args.conditions:
            overrides["conditions"] = tuple(c.strip() for c in args.conditions.split(",") if c.strip())
        cfg = experiment.load_config(args.config, **overrides)
    summary = experiment.run_experiment(cfg, sequential="sequential" in args)
    for c in summary["conditions"]:
        print(f"{c['condition']:6s} {c['mean']:.4f}  [{c['ci95_low']:.4f}, {c['ci95_high']:.4f}]")
    for c in summary["comparisons"]:
        print(f"{c['better']} vs {c['baseline']}: {c['absolute']:+.4f}  U={c['U']:g}  p={c['p']:.3g}")


def cmd_compare(args):
    rec = experiment.compare_runs(experiment.load_reports(args.set1),
                                  experiment.load_reports(args.set2),
                                  args.set1.name, args.set2.name)
    if args.out:
        io.atomic_write_text(args.out, io.dump_json(rec))
    rel = "n/a" if rec["relative"] is None else f"{rec['relative']:.4f}"
    print(f"absolute {rec['absolute']:+.4f}  relative {rel}  U={rec['U']:g}  p={rec['p']:.3g}"
          + ("  (battery mismatch)" if rec["battery_mismatch"] else ""))


COMMANDS = {
    "synth": cmd_synth, "fit-pca": cmd_fit_pca, "extract-audio": cmd_extract_audio,
    "extract-video": cmd_extract_video, "train": cmd_train, "eval-abx": cmd_eval_abx,
    "run": cmd_run, "compare": cmd_compare,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, which is also our config-error code
        return exc.code if isinstance(exc.code, int) else 2
    level = logging.DEBUG if getattr(args, "verbose", 0) > 1 else (
        logging.INFO if getattr(args, "verbose", 0) else logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except AvphonError as exc:
        print(f"avphon: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"avphon: error: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
