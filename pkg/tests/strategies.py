"""Hypothesis strategies shared by several test modules."""

from hypothesis import strategies as st

TYPES = ("PER", "LOC", "ORG", "MISC")


@st.composite
def bio2_sequences(draw, max_len=30, types=TYPES):
    """Valid IOB2 label sequences built from a random chunk layout."""
    n = draw(st.integers(1, max_len))
    out = []
    while len(out) < n:
        if draw(st.booleans()):
            out.append("O")
            continue
        kind = draw(st.sampled_from(types))
        span = draw(st.integers(1, max(1, n - len(out))))
        out.extend(["B-" + kind] + ["I-" + kind] * (span - 1))
    return out[:n]


@st.composite
def bioes_sequences(draw, max_len=30, types=TYPES):
    """Valid BIOES sequences (arbitrary labels, including invalid ones, use st.lists)."""
    bio = draw(bio2_sequences(max_len, types))
    out = []
    for i, lab in enumerate(bio):
        nxt = bio[i + 1] if i + 1 < len(bio) else "O"
        cont = nxt.startswith("I-") and nxt[2:] == lab[2:]
        if lab.startswith("B-"):
            out.append(("B-" if cont else "S-") + lab[2:])
        elif lab.startswith("I-"):
            out.append(("I-" if cont else "E-") + lab[2:])
        else:
            out.append("O")
    return out


ANY_LABEL = st.sampled_from(["O"] + [f"{p}-{t}" for t in TYPES[:3] for p in "BIES"])
