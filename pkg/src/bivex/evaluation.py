"""Evaluation protocol: alphanumeric-length filtering, lexicon-free and
lexicon-constrained recognition accuracy, and attention-map dumps."""

from __future__ import annotations

import csv
import io
import os
import re
from dataclasses import dataclass, field

import numpy as np

from bivex import model as M
from bivex import pgm
from bivex.datagen import Manifest, Sample, load_manifest
from bivex.model import ModelParams
from bivex.routing import Direction, route

_PROTOCOL_RE = re.compile(r"^[a-zA-Z0-9]{3,}$")


def protocol_filter(label: str) -> bool:
    """Keep only alphanumeric words of length >= 3; everything else is
    excluded from accuracy denominators."""
    return bool(_PROTOCOL_RE.match(label))


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance with unit insert/delete/substitute costs."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def constrain(decoded: str, lexicon: list[str]) -> str:
    """Nearest lexicon word by edit distance; ties break lexicographically."""
    if not lexicon:
        raise ValueError("constrained recognition needs a nonempty lexicon")
    best = None
    best_d = None
    for word in lexicon:
        d = edit_distance(decoded, word)
        if best_d is None or d < best_d or (d == best_d and word < best):
            best, best_d = word, d
    return best


def build_lexicon50(ground_truth: str, pool: list[str], rng: np.random.Generator) -> list[str]:
    """Standard 50-word lexicon: the ground truth plus 49 distinct others
    sampled from the corpus label pool."""
    gt = ground_truth.lower()
    others = sorted({w.lower() for w in pool} - {gt})
    k = min(49, len(others))
    picked = list(rng.choice(len(others), size=k, replace=False)) if k else []
    return [gt] + [others[i] for i in picked]


def recognize(params: ModelParams, sample: Sample, lexicon: list[str] | None = None, root: str = ".") -> str:
    """Decode one manifest sample; optionally snap to a lexicon."""
    img = pgm.read_pgm(os.path.join(root, sample.path))
    routed = route(img, target=(params.config.h_net, params.config.w_net))
    decoded = M.predict_routed(params, routed).text.lower()
    if lexicon:
        return constrain(decoded, [w.lower() for w in lexicon])
    return decoded


@dataclass
class EvalRow:
    path: str
    label: str
    prediction: str
    direction: Direction
    correct: bool


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)

    @property
    def accuracy(self) -> float:
        return sum(r.correct for r in self.rows) / len(self.rows) if self.rows else 0.0

    def direction_accuracy(self, direction: Direction) -> float:
        rows = [r for r in self.rows if r.direction is direction]
        return sum(r.correct for r in rows) / len(rows) if rows else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["path", "label", "prediction", "direction", "correct"])
        for r in self.rows:
            w.writerow([r.path, r.label, r.prediction, r.direction.value, int(r.correct)])
        return buf.getvalue()

    def summary(self) -> str:
        n_h = sum(r.direction is Direction.HORIZONTAL for r in self.rows)
        n_v = len(self.rows) - n_h
        return (
            f"samples {len(self.rows)} accuracy {self.accuracy:.4f} | "
            f"horizontal {n_h} acc {self.direction_accuracy(Direction.HORIZONTAL):.4f} | "
            f"vertical {n_v} acc {self.direction_accuracy(Direction.VERTICAL):.4f}"
        )


def evaluate(
    params: ModelParams,
    manifest: Manifest | str,
    lexicon: list[str] | str | None = None,
    lexicon_seed: int = 0,
) -> EvalReport:
    """Score a manifest: protocol-filter, route, greedy-decode, compare
    case-insensitively.

    ``lexicon`` may be None (lexicon-free), an explicit word list applied to
    every sample, or the string "50" for per-sample 50-word lexicons drawn
    from the corpus label set (always containing the ground truth).
    """
    if isinstance(manifest, str):
        manifest = load_manifest(manifest)
    kept = [s for s in manifest.samples if protocol_filter(s.label)]
    pool = [s.label for s in kept]

    # batched decode (identical math to recognize(), which goes one by one)
    inputs = []
    horiz = []
    for s in kept:
        img = pgm.read_pgm(manifest.resolve(s))
        routed = route(img, target=(params.config.h_net, params.config.w_net))
        inputs.append(M.model_input(routed, params.config))
        horiz.append(routed.direction is Direction.HORIZONTAL)
    preds = (
        M.predict_texts(params, np.stack(inputs).astype(params.config.np_dtype), np.asarray(horiz, dtype=bool))
        if kept
        else []
    )

    report = EvalReport()
    for i, (s, decoded) in enumerate(zip(kept, preds)):
        decoded = decoded.lower()
        if lexicon == "50":
            rng = np.random.default_rng([lexicon_seed, i])
            words = build_lexicon50(s.label, pool, rng)
            prediction = constrain(decoded, words)
        elif lexicon:
            prediction = constrain(decoded, [w.lower() for w in lexicon])
        else:
            prediction = decoded
        report.rows.append(
            EvalRow(
                path=s.path,
                label=s.label,
                prediction=prediction,
                direction=s.direction,
                correct=prediction == s.label.lower(),
            )
        )
    return report


def dump_attention(params: ModelParams, sample: Sample, out_dir: str, root: str = ".") -> list[str]:
    """Write one PGM per decoding step: the step's attention map, nearest-
    upsampled to the network input size and max-normalized to 255."""
    img = pgm.read_pgm(os.path.join(root, sample.path))
    routed = route(img, target=(params.config.h_net, params.config.w_net))
    result = M.predict_routed(params, routed)
    os.makedirs(out_dir, exist_ok=True)
    h_net, w_net = params.config.h_net, params.config.w_net
    emitted = list(result.text) + ["eos"] * (len(result.attention) - len(result.text))
    paths = []
    for t, rec in enumerate(result.attention):
        alpha = rec.alpha
        hf, wf = alpha.shape
        ys = np.minimum(((np.arange(h_net) + 0.5) * hf / h_net).astype(int), hf - 1)
        xs = np.minimum(((np.arange(w_net) + 0.5) * wf / w_net).astype(int), wf - 1)
        big = alpha[ys][:, xs]
        img8 = np.rint(big * (255.0 / big.max())).astype(np.uint8)
        char = emitted[t] if t < len(emitted) else "pad"
        path = os.path.join(out_dir, f"t{t}_{char}.pgm")
        pgm.write_pgm(path, img8)
        paths.append(path)
    return paths
