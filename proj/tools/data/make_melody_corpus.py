#!/usr/bin/env python3
"""Generate a synthetic corpus of folk-style monophonic melodies.

Each melody is 36 sixteenth-note tokens: 0 = silence, 1 = hold (no event),
2..37 = note onsets for MIDI pitches 48..83. Melodies walk a random major or
minor scale with mostly stepwise motion, occasional leaps (including fifths)
and a few rests. Tokens are written one character per token using the fixed
38-symbol alphabet below, one melody per line.

Usage: make_melody_corpus.py OUT COUNT [SEED]
"""
import random
import sys

ALPHABET = "0123456789abcdefghijklmnopqrstuvwxyzAB"
LENGTH = 36
LOW, HIGH = 48, 83
MAJOR = [0, 2, 4, 5, 7, 9, 11]
MINOR = [0, 2, 3, 5, 7, 8, 10]


def scale_pitches(tonic, steps):
    out = []
    for octave in range(-1, 5):
        for s in steps:
            p = tonic + 12 * octave + s
            if LOW <= p <= HIGH:
                out.append(p)
    return sorted(out)


def melody(rng):
    tonic = rng.randrange(48, 60)
    pitches = scale_pitches(tonic, MAJOR if rng.random() < 0.7 else MINOR)
    idx = rng.randrange(len(pitches) // 3, 2 * len(pitches) // 3)
    tokens = []
    while len(tokens) < LENGTH:
        duration = rng.choices([1, 2, 3, 4, 6, 8], weights=[1, 6, 1, 4, 1, 1])[0]
        if rng.random() < 0.06:
            event = 0
        else:
            move = rng.choices([0, 1, -1, 2, -2, 3, -3, 4, -4, 7, -7],
                               weights=[10, 22, 22, 12, 12, 5, 5, 6, 6, 1, 1])[0]
            idx = min(max(idx + move, 0), len(pitches) - 1)
            event = pitches[idx] - 46
        tokens.append(event)
        tokens.extend([1] * (duration - 1))
    return "".join(ALPHABET[t] for t in tokens[:LENGTH])


def main():
    out, count = sys.argv[1], int(sys.argv[2])
    seed = int(sys.argv[3]) if len(sys.argv) > 3 else 1802
    rng = random.Random(seed)
    with open(out, "w", newline="\n") as f:
        for _ in range(count):
            f.write(melody(rng) + "\n")


if __name__ == "__main__":
    main()
