"""Regenerate golden.txt and golden.expected (run from this directory).

golden.txt holds 50 sentences of ``token gold predicted`` in BIOES, with
predictions corrupted both validly (wrong type, shifted boundary) and
invalidly (orphan I/E, S followed by I, type switch inside a chunk).
golden.expected is the conlleval report of the IOB-converted file as
computed by ``oracles.conlleval_report``.
"""

import random
import sys

sys.path.insert(0, "..")
from oracles import bioes_line_to_iob, conlleval_report  # noqa: E402

TYPES = ["LOC", "MISC", "ORG", "PER"]
FIXED = [
    # gold, predicted
    (["S-PER", "O", "B-LOC", "E-LOC"], ["S-PER", "O", "B-LOC", "E-LOC"]),
    (["B-ORG", "E-ORG", "O"], ["I-ORG", "E-ORG", "O"]),
    (["O", "B-ORG", "I-ORG", "E-ORG"], ["O", "E-ORG", "I-ORG", "E-ORG"]),
    (["S-PER", "S-PER", "O"], ["S-PER", "I-PER", "O"]),
    (["B-LOC", "I-LOC", "E-LOC"], ["B-LOC", "I-ORG", "E-LOC"]),
    (["B-MISC", "E-MISC", "S-ORG"], ["B-MISC", "E-MISC", "E-ORG"]),
    (["O", "O", "O"], ["I-PER", "O", "S-LOC"]),
    (["S-LOC", "O", "S-LOC"], ["O", "O", "O"]),
    (["B-PER", "E-PER", "B-PER", "E-PER"], ["B-PER", "E-PER", "I-PER", "E-PER"]),
    (["B-ORG", "I-ORG", "I-ORG", "E-ORG"], ["B-ORG", "E-ORG", "B-ORG", "E-ORG"]),
]
LABELS = ["O"] + [f"{p}-{t}" for t in TYPES for p in "BIES"]


def gold_sentence(rng):
    n = rng.randint(3, 14)
    out = []
    while len(out) < n:
        if rng.random() < 0.5 or (out and out[-1] != "O" and rng.random() < 0.5):
            out.append("O")
            continue
        t = rng.choice(TYPES)
        k = rng.randint(1, 3)
        out.extend(["S-" + t] if k == 1 else ["B-" + t] + ["I-" + t] * (k - 2) + ["E-" + t])
    return out


def corrupt(gold, rng):
    pred = list(gold)
    for i in range(len(pred)):
        u = rng.random()
        if u < 0.08:
            pred[i] = rng.choice(LABELS)                 # anything, often invalid
        elif u < 0.14 and pred[i] != "O":
            pred[i] = pred[i][:2] + rng.choice(TYPES)    # type swap
        elif u < 0.18:
            pred[i] = "O"
    return pred


def main():
    rng = random.Random(20240517)
    pairs = list(FIXED)
    while len(pairs) < 50:
        g = gold_sentence(rng)
        pairs.append((g, corrupt(g, rng) if rng.random() < 0.8 else list(g)))
    lines, iob = [], []
    for si, (g, p) in enumerate(pairs):
        for ti, (a, b) in enumerate(zip(g, p)):
            tok = f"w{si}_{ti}"
            lines.append(f"{tok} {a} {b}")
            iob.append(f"{tok} {bioes_line_to_iob(a)} {bioes_line_to_iob(b)}")
        lines.append("")
        iob.append("")
    with open("golden.txt", "w") as fh:
        fh.write("\n".join(lines) + "\n")
    with open("golden.expected", "w") as fh:
        fh.write(conlleval_report(iob))


if __name__ == "__main__":
    main()
