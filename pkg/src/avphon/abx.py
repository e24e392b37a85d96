"""ABX phoneme discrimination over cluster-posterior sequences.

A token is the run of analysis windows whose centers fall inside its phone
interval. Two tokens are compared by dynamic time warping over the
symmetrized KL divergence between per-window posteriors; a triple (A, B, X)
scores 1 when X is closer to A than to B.
"""

import hashlib
import logging
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from avphon import io
from avphon.errors import DataError

logger = logging.getLogger(__name__)

EDGE = "#"
PROB_FLOOR = 1e-10
REPORT_SCHEMA = 1
CLASSES = ("vowel", "consonant")


@dataclass(frozen=True)
class PhoneToken:
    utterance: str
    position: int
    label: str
    start: float
    end: float
    prev: str
    next: str
    speaker: str = ""

    def __post_init__(self):
        if not self.start < self.end:
            raise DataError(f"token {self.id}: start {self.start} is not before end {self.end}")

    @property
    def id(self):
        return f"{self.utterance}:{self.position:05d}"

    @property
    def context(self):
        return (self.prev, self.next)


@dataclass
class AbxBattery:
    """Tokens plus ``triples``, an (n, 3) array of token indices (a, b, x)."""

    tokens: list
    triples: np.ndarray

    def __len__(self):
        return len(self.triples)

    def to_csv(self):
        rows = []
        for a, b, x in self.triples:
            ta, tb, tx = self.tokens[a], self.tokens[b], self.tokens[x]
            rows.append({"a": ta.id, "b": tb.id, "x": tx.id, "label_a": ta.label,
                         "label_b": tb.label, "prev": tx.prev, "next": tx.next})
        return io.csv_text(["a", "b", "x", "label_a", "label_b", "prev", "next"], rows)

    def fingerprint(self):
        """Stable identity of the battery, used to flag mismatched comparisons."""
        h = hashlib.sha256()
        for t in self.tokens:
            h.update(f"{t.id}|{t.label}|{t.start!r}|{t.end!r}\n".encode())
        h.update(np.ascontiguousarray(self.triples, dtype="<i8").tobytes())
        return h.hexdigest()[:16]


def tokens_from_alignment(rows, utterance):
    """Phone tokens of one utterance from alignment rows (start_s, end_s, phoneme_label, speaker).

    Context labels come from the neighbouring phones, regardless of word
    boundaries; the first and last phones get the edge label ``#``.
    """
    rows = sorted(rows, key=lambda r: float(r["start_s"]))
    labels = [r["phoneme_label"] for r in rows]
    out = []
    for i, r in enumerate(rows):
        out.append(PhoneToken(
            utterance, i, labels[i], float(r["start_s"]), float(r["end_s"]),
            labels[i - 1] if i > 0 else EDGE,
            labels[i + 1] if i + 1 < len(rows) else EDGE,
            r.get("speaker", "") or ""))
    return out


def read_class_map(path):
    out = {}
    for row in io.read_tsv(path, required=("phoneme_label", "class")):
        cls = row["class"].strip()
        if cls not in CLASSES:
            raise DataError(f"{path}: class for {row['phoneme_label']!r} must be vowel or consonant")
        out[row["phoneme_label"]] = cls
    return out


def token_windows(grid, token):
    """Indices of windows whose centers lie in ``[start, end)``."""
    c = grid.centers
    return np.flatnonzero((c >= token.start - 1e-9) & (c < token.end - 1e-9))


def build_battery(tokens, class_map, cross_speaker=False):
    """Every (A, B, X) with label(A) = label(X) != label(B) in one shared context.

    Only vowel-vowel and consonant-consonant contrasts are kept. Triples are
    within-speaker unless ``cross_speaker``.
    """
    for t in tokens:
        if t.label not in class_map:
            raise DataError(f"phoneme label {t.label!r} is missing from the class map")
    tokens = sorted(tokens, key=lambda t: t.id)
    groups = defaultdict(lambda: defaultdict(list))
    for i, t in enumerate(tokens):
        key = (t.context, "" if cross_speaker else t.speaker)
        groups[key][t.label].append(i)
    triples = []
    for by_label in groups.values():
        labels = sorted(by_label)
        for la in labels:
            same = by_label[la]
            if len(same) < 2:
                continue
            others = [i for lb in labels if lb != la and class_map[lb] == class_map[la]
                      for i in by_label[lb]]
            for a in same:
                for x in same:
                    if a == x:
                        continue
                    for b in others:
                        triples.append((a, b, x))
    triples.sort()
    if not triples:
        logger.warning("ABX battery is empty: no context-matched pairs of distinct labels")
    return AbxBattery(tokens, np.array(triples, dtype=np.int64).reshape(-1, 3))


def floor_probs(p, eps=PROB_FLOOR):
    p = np.maximum(np.asarray(p, dtype=np.float64), eps)
    return p / p.sum(axis=-1, keepdims=True)


def js_divergence(p, q, eps=PROB_FLOOR):
    """Symmetrized KL: 0.5 * sum p ln(p/q) + 0.5 * sum q ln(q/p), on floored inputs."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise DataError(f"support mismatch: {p.shape} vs {q.shape}")
    p, q = floor_probs(p, eps), floor_probs(q, eps)
    return float(0.5 * np.sum((p - q) * (np.log(p) - np.log(q))))


@njit(cache=True)
def _dtw(P, logP, Q, logQ):
    n, K = P.shape
    m = Q.shape[0]
    cost = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for c in range(K):
                acc += (P[i, c] - Q[j, c]) * (logP[i, c] - logQ[j, c])
            cost[i, j] = 0.5 * acc
    total = np.empty((n, m))
    length = np.empty((n, m), dtype=np.int64)
    for i in range(n):
        for j in range(m):
            if i == 0 and j == 0:
                total[i, j] = cost[i, j]
                length[i, j] = 1
                continue
            best = np.inf
            best_len = 0
            # predecessors: diagonal, up, left; ties in total go to the shorter path
            if i > 0 and j > 0:
                best = total[i - 1, j - 1]
                best_len = length[i - 1, j - 1]
            if i > 0:
                t = total[i - 1, j]
                if t < best or (t == best and length[i - 1, j] < best_len):
                    best = t
                    best_len = length[i - 1, j]
            if j > 0:
                t = total[i, j - 1]
                if t < best or (t == best and length[i, j - 1] < best_len):
                    best = t
                    best_len = length[i, j - 1]
            total[i, j] = best + cost[i, j]
            length[i, j] = best_len + 1
    return total[n - 1, m - 1] / length[n - 1, m - 1]


def _prepared(seq, eps=PROB_FLOOR):
    p = floor_probs(np.atleast_2d(seq), eps)
    return p, np.log(p)


def dtw_dissimilarity(s1, s2, eps=PROB_FLOOR):
    """Average divergence along the minimum-total-cost monotone alignment.

    Steps are (1,0), (0,1), (1,1) and the path is anchored at both ends. The
    path minimizing the summed divergence is found by dynamic programming
    (ties broken toward fewer matched pairs) and its sum is divided by its
    number of matched pairs.
    """
    s1, s2 = np.atleast_2d(s1), np.atleast_2d(s2)
    if s1.shape[0] == 0 or s2.shape[0] == 0:
        raise DataError("cannot align an empty token")
    if s1.shape[1] != s2.shape[1]:
        raise DataError(f"support mismatch: {s1.shape[1]} vs {s2.shape[1]}")
    return float(_dtw(*_prepared(s1, eps), *_prepared(s2, eps)))


def score_from_distances(d_ax, d_bx):
    if d_ax < d_bx:
        return 1.0
    if d_bx < d_ax:
        return 0.0
    return 0.5


def score_triple(a, b, x):
    return score_from_distances(dtw_dissimilarity(a, x), dtw_dissimilarity(b, x))


@dataclass
class ScoreReport:
    contrasts: dict            # (label1, label2) sorted -> (mean score, n triples)
    overall: float
    classes: dict              # label -> vowel|consonant
    weighting: str = "contrast"
    battery: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def n_triples(self):
        return sum(n for _, n in self.contrasts.values())

    def to_dict(self):
        return {
            "schema_version": REPORT_SCHEMA,
            "overall": self.overall,
            "weighting": self.weighting,
            "battery": self.battery,
            "n_triples": self.n_triples,
            "contrasts": [
                {"phonemes": list(k), "class": self.classes.get(k[0], ""), "score": s, "n_triples": n}
                for k, (s, n) in sorted(self.contrasts.items())
            ],
            "classes": dict(sorted(self.classes.items())),
            **({"extra": self.extra} if self.extra else {}),
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != REPORT_SCHEMA:
            raise DataError(f"unsupported score report schema {d.get('schema_version')}")
        contrasts = {tuple(c["phonemes"]): (c["score"], c["n_triples"]) for c in d["contrasts"]}
        return cls(contrasts, d["overall"], d.get("classes", {}), d.get("weighting", "contrast"),
                   d.get("battery", ""), d.get("extra", {}))


def aggregate(contrast_keys, scores, classes=None, weighting="contrast", battery=""):
    """Per-contrast means and the overall score.

    ``contrast_keys`` gives each triple's (label_a, label_b); pairs are pooled
    regardless of order. With ``weighting="contrast"`` every contrast counts
    once in the overall score; ``"triple"`` weights by triple count.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if len(scores) == 0:
        raise DataError("cannot aggregate an empty battery")
    if weighting not in ("contrast", "triple"):
        raise DataError(f"unknown weighting {weighting!r}")
    sums = defaultdict(float)
    counts = defaultdict(int)
    for (la, lb), s in zip(contrast_keys, scores):
        key = tuple(sorted((la, lb)))
        sums[key] += s
        counts[key] += 1
    contrasts = {k: (sums[k] / counts[k], counts[k]) for k in sorted(sums)}
    if weighting == "contrast":
        overall = float(np.mean([s for s, _ in contrasts.values()]))
    else:
        overall = float(scores.mean())
    return ScoreReport(contrasts, overall, dict(classes or {}), weighting, battery)


def relative_improvement(test_score, baseline_score):
    """Gain over the baseline relative to the baseline's margin above chance (0.5)."""
    if baseline_score == 0.5:
        raise DataError("baseline at chance")
    return (test_score - baseline_score) / (baseline_score - 0.5)


def score_battery(battery, posteriors):
    """Score every triple.

    ``posteriors`` maps token index -> (n_windows, K) posterior array. Pair
    dissimilarities are computed once and shared across triples.
    """
    prepared = {i: _prepared(p) for i, p in posteriors.items()}
    cache = {}

    def dist(i, j):
        key = (i, j) if i < j else (j, i)
        if key not in cache:
            cache[key] = float(_dtw(*prepared[key[0]], *prepared[key[1]]))
        return cache[key]

    scores = np.empty(len(battery))
    for t, (a, b, x) in enumerate(battery.triples):
        scores[t] = score_from_distances(dist(a, x), dist(b, x))
    return scores


def evaluate(battery, posteriors, classes, weighting="contrast"):
    scores = score_battery(battery, posteriors)
    keys = [(battery.tokens[a].label, battery.tokens[b].label) for a, b, _ in battery.triples]
    used = {battery.tokens[i].label for i in np.unique(battery.triples)} if len(battery) else set()
    return aggregate(keys, scores, {k: v for k, v in classes.items() if k in used}, weighting,
                     battery.fingerprint()), scores


def triple_scores_csv(battery, scores):
    rows = []
    for (a, b, x), s in zip(battery.triples, scores):
        rows.append({"a": battery.tokens[a].id, "b": battery.tokens[b].id,
                     "x": battery.tokens[x].id, "score": repr(float(s))})
    return io.csv_text(["a", "b", "x", "score"], rows)

