"""Greedy and beam-search inference over a generator view."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import log_softmax
from .data import BOS, EOS, PAD, UNK
from .lnlstm import CellState, _step
from .model import GeneratorView

BANNED = (PAD, BOS, UNK)


class Stepper:
    """Precomputed matrices for repeatedly advancing one view."""

    def __init__(self, view: GeneratorView):
        self.Wie, self.Wih = view.weights.stacked()
        self.G, self.B = view.ln.stacked()
        self.emb = view.embed_matrix()
        self.out = view.output_matrix()
        self.eps = view.eps
        self.hidden = self.Wih.shape[1]
        self.dtype = self.Wie.dtype

    def _advance(self, e, state):
        new, _ = _step(e, state, self.Wie, self.Wih, self.G, self.B, self.eps)
        logits = new.h @ self.out
        logits[:, list(BANNED)] = -np.inf
        return new, log_softmax(logits)

    def start(self, z):
        """Consume the latent code then BOS; returns (state, log-probs of token 1)."""
        z = np.atleast_2d(np.asarray(z, dtype=self.dtype))
        st = CellState.zeros(z.shape[0], self.hidden, self.dtype)
        st, _ = _step(z, st, self.Wie, self.Wih, self.G, self.B, self.eps)
        return self._advance(self.emb[np.full(z.shape[0], BOS)], st)

    def advance(self, state, tokens):
        return self._advance(self.emb[np.asarray(tokens)], state)


def greedy_decode(z, view: GeneratorView, max_len: int) -> list[int]:
    """Argmax at every step (lowest id on ties); the EOS id is not returned."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    st = Stepper(view)
    state, logp = st.start(z)
    out: list[int] = []
    for _ in range(max_len):
        tok = int(np.argmax(logp[0]))  # argmax returns the first maximum
        if tok == EOS:
            break
        out.append(tok)
        state, logp = st.advance(state, [tok])
    return out


@dataclass
class BeamHypothesis:
    tokens: tuple
    logprob: float
    state: object = None
    finished: bool = False


def _rank_key(h: BeamHypothesis):
    # finished beats unfinished; then score; then token ids
    return (not h.finished, -h.logprob, h.tokens)


def beam_search(z, view: GeneratorView, width: int, max_len: int, return_hypothesis: bool = False):
    """Beam search over summed log-probabilities, no length normalisation.

    A hypothesis that emits EOS is retired to the finished pool; the search
    stops once no live hypothesis can beat the best finished one (scores only
    decrease) or ``max_len`` tokens have been emitted. The best finished
    hypothesis wins, else the best unfinished one. Plain beam search is not
    monotone in the width, so every narrower beam is run too and the best
    result kept; a wider beam therefore never does worse than a narrower
    one (a finished hypothesis always outranks one cut off at ``max_len``).
    """
    if width < 1:
        raise ValueError("beam width must be >= 1")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    best = min((_beam(z, view, w, max_len) for w in range(1, width + 1)), key=_rank_key)
    if return_hypothesis:
        return best
    return [t for t in best.tokens if t != EOS]


def _beam(z, view, width, max_len) -> BeamHypothesis:
    st = Stepper(view)
    state, logp = st.start(z)
    alive = [BeamHypothesis((), 0.0, None)]
    finished: list[BeamHypothesis] = []
    states = state
    for step in range(max_len):
        cands = []
        for b, hyp in enumerate(alive):
            row = logp[b]
            for tok in np.nonzero(np.isfinite(row))[0]:
                cands.append((hyp.logprob + float(row[tok]), hyp.tokens + (int(tok),), b))
        cands.sort(key=lambda c: (-c[0], c[1]))
        cands = cands[:width]
        nxt, parents = [], []
        for score, toks, b in cands:
            if toks[-1] == EOS:
                finished.append(BeamHypothesis(toks, score, None, True))
            else:
                nxt.append(BeamHypothesis(toks, score))
                parents.append(b)
        if not nxt:
            break
        if finished:
            top = min(finished, key=_rank_key)
            if all(top.logprob >= h.logprob for h in nxt):
                break
        if step == max_len - 1:
            alive = nxt
            break
        sel = np.asarray(parents)
        states = CellState(states.h[sel], states.c[sel])
        states, logp = st.advance(states, [h.tokens[-1] for h in nxt])
        alive = nxt
    if finished:
        return min(finished, key=_rank_key)
    return min(alive, key=_rank_key)


def sequence_logprob(z, view: GeneratorView, tokens) -> float:
    """Summed log-probability of ``tokens`` under the decode-time distribution."""
    st = Stepper(view)
    state, logp = st.start(z)
    total = 0.0
    for i, tok in enumerate(tokens):
        total += float(logp[0, tok])
        if i + 1 < len(tokens):
            state, logp = st.advance(state, [tok])
    return total
