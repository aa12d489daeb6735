#!/usr/bin/env python3
"""Write tests/fixtures/music_cases.tsv: melody text, note events and the two
interval metrics as exact fractions, computed with plain Python.

Usage: make_music_fixture.py [REPO_ROOT]
"""
import os
import sys

ALPHABET = "0123456789abcdefghijklmnopqrstuvwxyzAB"
ROOT = sys.argv[1] if len(sys.argv) > 1 else os.path.join(os.path.dirname(__file__), "..", "..")


def tokens_of_pitches(pitches, hold=0):
    out = []
    for p in pitches:
        out.append(p - 46)
        out.extend([1] * hold)
    return out


CASES = [
    [2, 1, 1, 1],
    [0, 0, 0],
    [37],
    tokens_of_pitches([48, 55]),
    tokens_of_pitches([60, 60, 60, 60], hold=2),
    tokens_of_pitches([48, 55, 55]),
    tokens_of_pitches([48, 49, 50]),
    tokens_of_pitches([48, 50, 55]),
    [0, 0] + tokens_of_pitches([52, 59, 57, 55], hold=1) + [0, 0, 0],
    tokens_of_pitches([83, 76, 74, 72, 71, 64], hold=3),
    tokens_of_pitches([50, 57, 64, 71, 78]),
    None,  # first corpus melody
]


def fraction(hits, intervals):
    return f"{hits}/{intervals}" if intervals else "0/1"


def main():
    corpus = [l.strip() for l in open(os.path.join(ROOT, "data", "melodies.txt")) if l.strip()]
    rows = []
    for case in CASES:
        text = corpus[0] if case is None else "".join(ALPHABET[t] for t in case)
        tokens = [ALPHABET.index(c) for c in text]
        events = [t + 46 for t in tokens if t >= 2]
        diffs = [abs(b - a) for a, b in zip(events, events[1:])]
        fifths = sum(1 for d in diffs if d == 7)
        steps = sum(1 for d in diffs if d in (1, 2))
        rows.append((text, ",".join(map(str, events)), fraction(fifths, len(diffs)), fraction(steps, len(diffs))))
    path = os.path.join(ROOT, "tests", "fixtures", "music_cases.tsv")
    with open(path, "w", newline="\n") as f:
        f.write("# melody\tevents\ttonality\tratio_of_steps\n")
        for r in rows:
            f.write("\t".join(r) + "\n")


if __name__ == "__main__":
    main()
