import numpy as np

from midivae.octuple import NoteEvent, OctupleToken, OctupleVocabulary, TokenSequence


def random_sequence(rng, vocab, n, max_bar=None, n_instruments=None, programs=None):
    """A canonical TokenSequence of ``n`` distinct tokens with in-range indices."""
    sizes = vocab.sizes
    max_bar = sizes[5] if max_bar is None else max_bar
    inst_choices = np.arange(sizes[3])
    if n_instruments is not None:
        inst_choices = rng.choice(sizes[3], size=n_instruments, replace=False)
    seen = set()
    tokens = []
    # one tempo / time signature per piece, as in a real score
    timesig = int(rng.integers(sizes[6]))
    tempo = int(rng.integers(sizes[7]))
    while len(tokens) < n:
        tok = OctupleToken(
            pitch=int(rng.integers(sizes[0])),
            velocity=int(rng.integers(sizes[1])),
            duration=int(rng.integers(sizes[2])),
            instrument=int(rng.choice(inst_choices)),
            position=int(rng.integers(sizes[4])),
            bar=int(rng.integers(max_bar)),
            timesig=timesig,
            tempo=tempo,
        )
        if tok not in seen:
            seen.add(tok)
            tokens.append(tok)
    return TokenSequence(sorted(tokens, key=OctupleToken.sort_key))


def random_events(rng, n, programs=(0, 40, 41, 42), max_onset=480 * 32):
    """Random valid note events with a piece-wide tempo and no same-pitch overlaps."""
    mpqn = int(rng.integers(250_000, 1_500_000))
    tempo = 60_000_000 / mpqn
    events = []
    busy = {}
    while len(events) < n:
        prog = int(rng.choice(programs))
        pitch = int(rng.integers(128))
        onset = int(rng.integers(max_onset))
        dur = int(rng.integers(1, 2000))
        spans = busy.setdefault((prog, pitch), [])
        if any(onset < e and s < onset + dur for s, e in spans):
            continue
        spans.append((onset, onset + dur))
        events.append(NoteEvent(onset, pitch, int(rng.integers(1, 128)), dur, prog, tempo, (4, 4)))
    return sorted(events)
