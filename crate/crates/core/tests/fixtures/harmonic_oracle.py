"""Standalone evaluation of the harmonic fixtures.

Reads harmonic_fixtures.json, computes CTnCTR, PCS and MCTD for each case
with numpy and prints the values. The expected numbers stored in the JSON
file were produced by this script and then checked by hand.
"""
import json
import math
import sys
from fractions import Fraction

import numpy as np

TEMPLATES = {"maj": (0, 4, 7), "min": (0, 3, 7), "aug": (0, 4, 8), "dim": (0, 3, 6)}
NAMES = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"]

TRANSFORM = np.array(
    [[f(l * a) * r for l in range(12)]
     for a, r in ((7 * math.pi / 6, 1.0), (3 * math.pi / 2, 1.0), (2 * math.pi / 3, 0.5))
     for f in (math.sin, math.cos)]
)


def tones(label):
    root, qual = label.split(":")
    if qual == "other":
        return set()
    r = NAMES.index(root)
    return {(r + i) % 12 for i in TEMPLATES[qual]}


def centroid(weights):
    w = np.asarray(weights, dtype=float)
    return TRANSFORM @ (w / w.sum())


def evaluate(melody, chords):
    onsets = [s for s, p in enumerate(melody) if p is not None and (s == 0 or melody[s - 1] != p)]
    nc = nn = np_ = 0
    for i, s in enumerate(onsets):
        t = tones(chords[s])
        if not t:
            continue
        if melody[s] % 12 in t:
            nc += 1
        else:
            nn += 1
            if i + 1 < len(onsets) and abs(melody[onsets[i + 1]] - melody[s]) <= 2:
                np_ += 1
    ctnctr = Fraction(nc + np_, nc + nn) if nc + nn else None
    scores, dists = [], []
    for p, c in zip(melody, chords):
        t = tones(c)
        if p is None or not t:
            continue
        for q in sorted(t):
            d = (p - q) % 12
            scores.append(1 if d in (0, 3, 4, 7, 8, 9) else 0 if d == 5 else -1)
        one = np.zeros(12)
        one[p % 12] = 1
        chord = np.zeros(12)
        chord[sorted(t)] = 1
        dists.append(float(np.linalg.norm(centroid(one) - centroid(chord))))
    pcs = Fraction(sum(scores), len(scores)) if scores else None
    mctd = sum(dists) / len(dists) if dists else None
    return (nc, nn, np_), ctnctr, pcs, mctd


def main(path):
    for case in json.load(open(path))["cases"]:
        counts, ctnctr, pcs, mctd = evaluate(case["melody"], case["chords"])
        print(case["name"], counts, ctnctr, pcs, repr(mctd))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "harmonic_fixtures.json")
