"""Train/test modality experiments: feature extraction, replicate fits, ABX, reports."""

import configparser
import hashlib
import json
import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from avphon import __version__, abx, io
from avphon.audio import NoiseConfig, extract_audio_features
from avphon.corpus import Corpus
from avphon.dpgmm import DpgmmConfig, NiwPrior, fit
from avphon.errors import AvphonError, ConfigError, DataError, StageError
from avphon.features import WindowGrid
from avphon.fusion import Standardizer, concat_modalities, observed_dims
from avphon.stats import confidence_interval, mann_whitney_u
from avphon.visual import (DEFAULT_COMPONENTS, extract_visual_features, fit_pca,
                           pretraining_frames)

logger = logging.getLogger(__name__)

SUMMARY_SCHEMA = 1
MANIFEST_SCHEMA = 1
TRAIN_MODALITIES = {"A": ("audio",), "V": ("visual",), "AV": ("audio", "visual")}
TEST_MODALITIES = {"A": ("audio",), "V": ("visual",), "AV": ("audio", "visual"),
                   "N": ("audio",), "NV": ("audio", "visual")}
# (better, baseline) pairs in the order of the standard comparison table
STANDARD_COMPARISONS = (("AV-AV", "A-A"), ("AV-A", "A-A"), ("AV-V", "V-V"), ("AV-NV", "A-N"),
                        ("A-A", "V-V"), ("AV-AV", "AV-NV"), ("A-A", "A-N"))
DEFAULT_CONDITIONS = ("A-A", "V-V", "AV-AV", "AV-A", "AV-V", "A-N", "AV-NV")


@dataclass(frozen=True)
class Condition:
    train: str
    test: str

    @classmethod
    def parse(cls, text):
        try:
            train, test = text.strip().split("-")
        except ValueError:
            raise ConfigError(f"condition {text!r} must look like TRAIN-TEST, e.g. AV-A") from None
        if train not in TRAIN_MODALITIES:
            raise ConfigError(f"condition {text}: training modality must be one of A, V, AV")
        if test not in TEST_MODALITIES:
            raise ConfigError(f"condition {text}: test modality must be one of A, V, AV, N, NV")
        missing = set(TEST_MODALITIES[test]) - set(TRAIN_MODALITIES[train])
        if missing:
            raise ConfigError(f"condition {text}: cannot test on {'/'.join(sorted(missing))} "
                              "dimensions that were never trained")
        return cls(train, test)

    @property
    def name(self):
        return f"{self.train}-{self.test}"

    @property
    def noisy(self):
        return self.test in ("N", "NV")


@dataclass(frozen=True)
class ExperimentConfig:
    corpus: str
    output: str
    conditions: tuple = DEFAULT_CONDITIONS
    replicates: int = 10
    seed: int = 0
    snr_db: float = 5.0
    pca_components: int = DEFAULT_COMPONENTS
    standardize: bool = False
    weighting: str = "contrast"
    cross_speaker: bool = False
    alpha: float = 1.0
    iterations: int = 1500
    init_clusters: int = 10
    kappa0: float = 0.001
    nu_offset: float = 3.0
    psi_scale: float = 1.0
    threads: int = 1
    write_triples: bool = False
    save_models: bool = False

    def __post_init__(self):
        for c in self.conditions:
            Condition.parse(c)
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if self.weighting not in ("contrast", "triple"):
            raise ConfigError("weighting must be contrast or triple")
        if self.pca_components < 1:
            raise ConfigError("pca_components must be >= 1")
        if not self.kappa0 > 0 or not self.nu_offset > 1 or not self.psi_scale > 0:
            raise ConfigError("kappa0 and psi_scale must be positive and nu_offset above 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        DpgmmConfig(self.alpha, self.iterations, self.init_clusters)

    @property
    def parsed_conditions(self):
        return [Condition.parse(c) for c in self.conditions]

    def to_dict(self):
        d = asdict(self)
        d["conditions"] = list(self.conditions)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["conditions"] = tuple(d.get("conditions", DEFAULT_CONDITIONS))
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad experiment config: {exc}") from None

    def result_dict(self):
        """Settings that affect results (thread count does not)."""
        d = self.to_dict()
        d.pop("threads")
        d.pop("output")
        return d

    def config_hash(self):
        return hashlib.sha256(io.dump_json(self.result_dict()).encode()).hexdigest()


_INT_KEYS = ("replicates", "seed", "pca_components", "iterations", "init_clusters", "threads")
_FLOAT_KEYS = ("snr_db", "alpha", "kappa0", "nu_offset", "psi_scale")
_BOOL_KEYS = ("standardize", "cross_speaker", "write_triples", "save_models")


def load_config(path, **overrides):
    """Read an ``[experiment]``/``[dpgmm]`` INI file; relative paths resolve against it."""
    path = Path(path)
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if not cp.read(path, encoding="utf-8"):
        raise ConfigError(f"cannot read config {path}")
    if "experiment" not in cp:
        raise ConfigError(f"{path}: missing [experiment] section")
    raw = dict(cp["experiment"])
    if "dpgmm" in cp:
        raw.update(cp["dpgmm"])
    values = {}
    try:
        for key, text in raw.items():
            if key in _INT_KEYS:
                values[key] = int(text)
            elif key in _FLOAT_KEYS:
                values[key] = float(text)
            elif key in _BOOL_KEYS:
                values[key] = cp.BOOLEAN_STATES[text.strip().lower()]
            elif key == "conditions":
                values[key] = tuple(c.strip() for c in text.replace(",", " ").split())
            elif key in ("corpus", "output", "weighting"):
                values[key] = text.strip()
            else:
                raise ConfigError(f"{path}: unknown key {key!r}")
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for key in ("corpus", "output"):
        if key in values and not Path(values[key]).is_absolute():
            values[key] = str((path.parent / values[key]).resolve())
    values.update({k: v for k, v in overrides.items() if v is not None})
    if "corpus" not in values or "output" not in values:
        raise ConfigError(f"{path}: corpus and output are required")
    return ExperimentConfig(**values)


def replicate_seeds(seed, n):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def noise_seed(seed, utterance):
    return int(np.random.SeedSequence([seed, zlib.crc32(utterance.encode())]).generate_state(1)[0])


# --- feature stages ----------------------------------------------------------

def fit_eigenmouths(corpus, k=DEFAULT_COMPONENTS):
    frames = []
    for utt in corpus.utterances("pretrain"):
        try:
            clip = corpus.load_clip(utt)
            grid = WindowGrid.for_duration(_duration(corpus, utt))
            frames.append(pretraining_frames(clip, grid))
        except AvphonError as exc:
            raise StageError("fit-pca", utt, exc) from exc
    if not frames:
        raise DataError("pretraining split is empty")
    try:
        return fit_pca(np.concatenate(frames), k)
    except AvphonError as exc:
        raise StageError("fit-pca", None, exc) from exc


def _duration(corpus, utt):
    if corpus.mode == "waveform":
        sig = corpus.load_audio(utt)
        return len(sig.samples) / sig.sample_rate
    seq = corpus.load_features(utt, "audio")
    return (seq.grid.n_windows - 1) * seq.grid.hop + seq.grid.window_len


def audio_features(corpus, utt, snr_db=math.inf, seed=0):
    try:
        if corpus.mode == "feature":
            seq = corpus.load_features(utt, "audio")
            if math.isfinite(snr_db):
                # feature-mode stand-in for additive noise: matched Gaussian corruption
                power = float(np.mean(seq.vectors ** 2))
                sd = math.sqrt(power / 10 ** (snr_db / 10))
                rng = np.random.default_rng(noise_seed(seed, utt))
                seq = replace(seq, vectors=seq.vectors + sd * rng.standard_normal(seq.vectors.shape))
            return seq
        noise = NoiseConfig(snr_db, noise_seed(seed, utt)) if math.isfinite(snr_db) else None
        return extract_audio_features(corpus.load_audio(utt), noise=noise, utterance=utt)
    except AvphonError as exc:
        raise StageError("extract-audio", utt, exc) from exc


def visual_features(corpus, utt, basis, grid):
    try:
        if corpus.mode == "feature":
            return corpus.load_features(utt, "visual")
        return extract_visual_features(corpus.load_clip(utt), grid, basis, utt)
    except AvphonError as exc:
        raise StageError("extract-video", utt, exc) from exc


def combine(modalities, audio=None, visual=None):
    if modalities == ("audio",):
        return audio
    if modalities == ("visual",):
        return visual
    return concat_modalities(audio, visual)


# --- the run -----------------------------------------------------------------

@dataclass
class _Data:
    train: dict = field(default_factory=dict)       # modality -> {utt: seq}
    test: dict = field(default_factory=dict)        # "clean"/"noisy"/"visual" -> {utt: seq}
    tokens: list = field(default_factory=list)
    excluded: int = 0


def prepare_data(cfg, corpus):
    conds = cfg.parsed_conditions
    need_visual = any("visual" in TRAIN_MODALITIES[c.train] for c in conds)
    need_noisy = any(c.noisy for c in conds)
    need_clean = any(c.test in ("A", "AV") for c in conds)
    train_mods = {c.train for c in conds}
    basis = None
    if need_visual and corpus.mode == "waveform":
        basis = fit_eigenmouths(corpus, cfg.pca_components)
    data = _Data()
    audio, visual = {}, {}
    for utt in corpus.utterances("train"):
        if any("audio" in TRAIN_MODALITIES[m] for m in train_mods):
            audio[utt] = audio_features(corpus, utt)
        if need_visual:
            grid = audio[utt].grid if utt in audio else WindowGrid.for_duration(_duration(corpus, utt))
            visual[utt] = visual_features(corpus, utt, basis, grid)
    for m in sorted(train_mods):
        mods = TRAIN_MODALITIES[m]
        data.train[m] = {u: combine(mods, audio.get(u), visual.get(u))
                         for u in corpus.utterances("train")}
    clean, noisy, vis = {}, {}, {}
    for utt in corpus.utterances("test"):
        a = audio_features(corpus, utt)
        if need_clean:
            clean[utt] = a
        if need_noisy:
            noisy[utt] = audio_features(corpus, utt, cfg.snr_db, cfg.seed)
        if need_visual:
            vis[utt] = visual_features(corpus, utt, basis, a.grid)
        for tok in corpus.load_alignment(utt):
            if len(abx.token_windows(a.grid, tok)):
                data.tokens.append(tok)
            else:
                data.excluded += 1
    data.test = {"clean": clean, "noisy": noisy, "visual": vis}
    if data.excluded:
        logger.info("excluded %d test tokens that cover no window center", data.excluded)
    return data, basis


def test_sequences(data, cond):
    audio = data.test["noisy" if cond.noisy else "clean"]
    mods = TEST_MODALITIES[cond.test]
    utts = sorted(data.test["visual"] or audio)
    return {u: combine(mods, audio.get(u), data.test["visual"].get(u)) for u in utts}


def token_posteriors(model, battery, test_seqs, observed, standardizer=None):
    used = np.unique(battery.triples) if len(battery) else []
    by_utt = {}
    for i in used:
        by_utt.setdefault(battery.tokens[i].utterance, []).append(i)
    out = {}
    for utt, idx in by_utt.items():
        seq = test_seqs[utt]
        if standardizer is not None:
            seq = standardizer.apply(seq, observed)
        post = model.posterior_marginal(seq.vectors, observed)
        for i in idx:
            out[i] = post[abx.token_windows(seq.grid, battery.tokens[i])]
    return out


def _fit_replicate(args):
    cfg, train_mod, seqs, rep, seed = args
    try:
        X = np.vstack([s.vectors for s in seqs])
        prior = NiwPrior.from_data(X, cfg.kappa0, cfg.nu_offset, cfg.psi_scale)
        dcfg = DpgmmConfig(cfg.alpha, cfg.iterations, cfg.init_clusters, seed)
        return fit(seqs, prior, dcfg)
    except AvphonError as exc:
        raise StageError(f"train {train_mod} replicate {rep}", None, exc) from exc


def run_experiment(cfg, sequential=None):
    """Run every condition for every replicate and write all outputs.

    Returns the summary dictionary that is also written to summary.json.
    """
    started = datetime.now(timezone.utc).isoformat()
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    corpus = Corpus(cfg.corpus)
    data, basis = prepare_data(cfg, corpus)
    battery = abx.build_battery(data.tokens, corpus.class_map, cfg.cross_speaker)
    if len(battery) == 0:
        raise DataError("the test split yields an empty ABX battery")
    io.atomic_write_text(out / "battery.csv", battery.to_csv())
    if basis is not None:
        basis.save(out / "eigenmouths.basis")

    seeds = replicate_seeds(cfg.seed, cfg.replicates)
    conds = cfg.parsed_conditions
    train_mods = sorted({c.train for c in conds})
    models = {}
    standardizers = {}
    jobs = []
    for m in train_mods:
        seqs = [data.train[m][u] for u in sorted(data.train[m])]
        if cfg.standardize:
            standardizers[m] = Standardizer.fit(seqs)
            seqs = [standardizers[m].apply(s) for s in seqs]
        for r, s in enumerate(seeds):
            jobs.append((cfg, m, seqs, r, s))
    parallel = cfg.threads > 1 and not sequential
    if parallel:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            fitted = list(pool.map(_fit_replicate, jobs))
    else:
        fitted = [_fit_replicate(j) for j in jobs]
    for (_, m, _, r, _), model in zip(jobs, fitted):
        models[m, r] = model
        io.atomic_write_text(out / "traces" / m / f"replicate_{r:02d}.csv", model.trace_csv())
        if cfg.save_models:
            model.save(out / "models" / m / f"replicate_{r:02d}.model")

    reports = {}
    for cond in conds:
        seqs = test_sequences(data, cond)
        layout = models[cond.train, 0].layout
        observed = observed_dims(layout, TEST_MODALITIES[cond.test])
        reports[cond.name] = []
        for r in range(cfg.replicates):
            try:
                post = token_posteriors(models[cond.train, r], battery, seqs, observed,
                                        standardizers.get(cond.train))
                report, scores = abx.evaluate(battery, post, corpus.class_map, cfg.weighting)
            except AvphonError as exc:
                raise StageError(f"eval-abx {cond.name} replicate {r}", None, exc) from exc
            report.extra = {"condition": cond.name, "replicate": r, "seed": seeds[r],
                            "n_clusters": models[cond.train, r].n_clusters}
            reports[cond.name].append(report)
            io.atomic_write_text(out / "reports" / cond.name / f"replicate_{r:02d}.json",
                                 io.dump_json(report.to_dict()))
            if cfg.write_triples:
                io.atomic_write_text(out / "reports" / cond.name / f"replicate_{r:02d}.triples.csv",
                                     abx.triple_scores_csv(battery, scores))

    summary = summarize(reports, battery, data.excluded)
    comparisons = [compare_runs(reports[a], reports[b], a, b)
                   for a, b in STANDARD_COMPARISONS if a in reports and b in reports]
    summary["comparisons"] = comparisons
    io.atomic_write_text(out / "summary.json", io.dump_json(summary))
    io.atomic_write_text(out / "summary.csv", summary_csv(summary))
    io.atomic_write_text(out / "comparisons.csv", comparisons_csv(comparisons))
    manifest = {
        "schema_version": MANIFEST_SCHEMA,
        "software": {"package": "avphon", "version": __version__},
        "config": cfg.result_dict(),
        "config_hash": cfg.config_hash(),
        "replicate_seeds": seeds,
        "noise_seed_base": cfg.seed,
        "battery": battery.fingerprint(),
        "timestamps": {"started": started, "finished": datetime.now(timezone.utc).isoformat()},
        "execution": {"threads": cfg.threads, "sequential": not parallel},
    }
    io.atomic_write_text(out / "manifest.json", io.dump_json(manifest))
    return summary


def config_from_manifest(path, output=None):
    m = io_load_json(path)
    if m.get("schema_version") != MANIFEST_SCHEMA:
        raise ConfigError(f"{path}: unsupported manifest schema {m.get('schema_version')}")
    d = dict(m["config"])
    d["output"] = str(output) if output else str(Path(path).parent)
    cfg = ExperimentConfig.from_dict(d)
    if cfg.config_hash() != m["config_hash"]:
        raise ConfigError(f"{path}: config hash mismatch (manifest edited?)")
    return cfg


def io_load_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from None


# --- reporting ---------------------------------------------------------------

def summarize(reports, battery, excluded=0):
    conditions = []
    for name, reps in reports.items():
        scores = [r.overall for r in reps]
        mean, lo, hi = confidence_interval(scores)
        contrasts = {}
        for r in reps:
            for k, (s, n) in r.contrasts.items():
                contrasts.setdefault(k, []).append(s)
        conditions.append({
            "condition": name,
            "replicate_scores": scores,
            "mean": mean, "ci95_low": lo, "ci95_high": hi,
            "n_clusters": [r.extra.get("n_clusters") for r in reps],
            "contrasts": [{"phonemes": list(k), "mean": float(np.mean(v))}
                          for k, v in sorted(contrasts.items())],
        })
    return {
        "schema_version": SUMMARY_SCHEMA,
        "ci_method": "normal approximation: mean +/- 1.96 * sd / sqrt(replicates)",
        "battery": battery.fingerprint(),
        "n_triples": len(battery),
        "excluded_tokens": excluded,
        "conditions": conditions,
    }


def summary_csv(summary):
    rows = [{"condition": c["condition"], "replicates": len(c["replicate_scores"]),
             "mean": repr(c["mean"]), "ci95_low": repr(c["ci95_low"]),
             "ci95_high": repr(c["ci95_high"])} for c in summary["conditions"]]
    return io.csv_text(["condition", "replicates", "mean", "ci95_low", "ci95_high"], rows)


def compare_runs(reports1, reports2, name1="set1", name2="set2"):
    """Absolute and relative improvement of set 1 over set 2 plus a Mann-Whitney test."""
    if not reports1 or not reports2:
        raise DataError("comparison needs two non-empty report sets")
    s1 = [r.overall for r in reports1]
    s2 = [r.overall for r in reports2]
    batteries = {r.battery for r in reports1} | {r.battery for r in reports2}
    mismatch = len(batteries) > 1
    if mismatch:
        logger.warning("comparing %s with %s across different ABX batteries", name1, name2)
    m1, m2 = float(np.mean(s1)), float(np.mean(s2))
    u, p = mann_whitney_u(s1, s2)
    try:
        rel = abx.relative_improvement(m1, m2)
    except DataError:
        rel = None
    return {"better": name1, "baseline": name2, "mean_better": m1, "mean_baseline": m2,
            "absolute": m1 - m2, "relative": rel, "U": u, "p": p,
            "n": [len(s1), len(s2)], "battery_mismatch": mismatch}


def comparisons_csv(comparisons):
    fields = ["better", "baseline", "mean_better", "mean_baseline", "absolute", "relative",
              "U", "p", "battery_mismatch"]
    rows = [{k: (repr(c[k]) if isinstance(c[k], float) else c[k]) for k in fields}
            for c in comparisons]
    return io.csv_text(fields, rows)


def load_reports(directory):
    paths = sorted(Path(directory).glob("replicate_*.json"))
    if not paths:
        raise DataError(f"no replicate reports under {directory}")
    return [abx.ScoreReport.from_dict(io_load_json(p)) for p in paths]
