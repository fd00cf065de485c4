import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dln.core import log_softmax
from dln.data import BOS, EOS, PAD, SPECIALS, UNK, Vocabulary
from dln.decoding import BANNED, beam_search, greedy_decode, sequence_logprob
from dln.lnlstm import CellState, lnlstm_step
from dln.model import SOURCE, DLNModel


def toy(words=("a", "b", "c"), seed=0, scale=1.0, H=6, E=4):
    m = DLNModel.create(Vocabulary(list(SPECIALS) + list(words)), ["t"], H, E, 5, 8, seed=seed, dtype=np.float64)
    r = np.random.default_rng([seed, 1])
    for _, t in m.store.items():
        t.value += r.normal(0, scale, t.shape)
    return m


def oracle_logp(view, z, prefix):
    """Decode-time log-probs after ``prefix`` with a straight-line decoder."""
    H = view.weights.ih["i"].shape[0]
    s = lnlstm_step(z, CellState(np.zeros(H), np.zeros(H)), view.weights, view.ln)
    emb, out = view.embed_matrix(), view.output_matrix()
    for tok in (BOS,) + tuple(prefix):
        s = lnlstm_step(emb[tok], s, view.weights, view.ln)
    logits = s.h @ out
    logits[list(BANNED)] = -np.inf
    return log_softmax(logits)


def oracle_score(view, z, seq):
    return sum(float(oracle_logp(view, z, seq[:i])[t]) for i, t in enumerate(seq))


def exhaustive(view, z, max_len):
    """Best finished sequence (ending in EOS, <= max_len tokens), else best unfinished one."""
    words = [i for i in range(len(view.vocab)) if i not in BANNED and i != EOS]
    finished = []
    for n in range(max_len):
        for body in itertools.product(words, repeat=n):
            seq = body + (EOS,)
            finished.append((-oracle_score(view, z, seq), seq))
    if finished:
        return min(finished)[1]
    return min((-oracle_score(view, z, s), s) for s in itertools.product(words, repeat=max_len))[1]


def z_for(m, seed):
    return m.encode_image(np.random.default_rng([seed, 2]).normal(0, 2, 5))


# -- greedy -------------------------------------------------------------------------

def test_forced_eos_gives_empty_sequence():
    m = toy()
    m.store["output.base"].value[:] = 0.0
    m.store["output.base"].value[:, EOS] = 50.0
    m.store["ln.t.o.b"].value[:] = 10.0  # output gate open so h carries the bias
    m.store["ln.t.u.b"].value[:] = 3.0
    m.store["ln.t.i.b"].value[:] = 10.0
    view = m.view("t")
    z = z_for(m, 0)
    assert oracle_logp(view, z, ())[EOS] > -1e-6
    assert greedy_decode(z, view, 10) == []
    assert beam_search(z, view, 5, 10) == []


def test_greedy_matches_stepwise_argmax_oracle():
    m = toy(seed=3)
    view = m.view("t")
    z = z_for(m, 3)
    seq = []
    for _ in range(8):
        tok = int(np.argmax(oracle_logp(view, z, seq)))
        if tok == EOS:
            break
        seq.append(tok)
    assert greedy_decode(z, view, 8) == seq


def test_greedy_ties_break_to_lowest_id():
    m = toy(words=("a", "b"))
    out = m.store["output.base"].value
    out[:] = 0.0  # every allowed token ties
    view = m.view("t")
    # EOS (2) is the lowest allowed id, so decoding stops at once
    assert greedy_decode(z_for(m, 0), view, 5) == []
    out[:, EOS] = -100.0
    assert greedy_decode(z_for(m, 0), view, 3) == [4, 4, 4]


def test_greedy_deterministic_and_does_not_mutate():
    m = toy(seed=2)
    before = m.store.snapshot()
    z = z_for(m, 2)
    assert greedy_decode(z, m.view("t"), 10) == greedy_decode(z, m.view("t"), 10)
    beam_search(z, m.view("t"), 4, 10)
    after = m.store.snapshot()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_greedy_rejects_zero_length():
    m = toy()
    with pytest.raises(ValueError):
        greedy_decode(z_for(m, 0), m.view("t"), 0)


# -- beam -----------------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(50))
def test_beam_one_is_greedy(seed):
    m = toy(seed=seed, words=tuple("abcdef"))
    z = z_for(m, seed)
    for d in (SOURCE, "t"):
        assert beam_search(z, m.view(d), 1, 12) == greedy_decode(z, m.view(d), 12)


@pytest.mark.parametrize("seed", range(25))
def test_beam_five_never_below_greedy(seed):
    m = toy(seed=seed, words=tuple("abcdef"))
    z = z_for(m, seed)
    view = m.view("t")
    g = beam_search(z, view, 1, 12, return_hypothesis=True)
    h = beam_search(z, view, 5, 12, return_hypothesis=True)
    assert g.logprob == pytest.approx(oracle_score(view, z, g.tokens), abs=1e-9)
    # a finished hypothesis outranks one truncated at max_len
    assert h.finished >= g.finished
    if h.finished == g.finished:
        assert h.logprob >= g.logprob - 1e-12


@given(st.integers(0, 10_000), st.integers(1, 5), st.integers(1, 5))
def test_beam_dominance_across_widths(seed, w1, w2):
    if w1 > w2:
        w1, w2 = w2, w1
    m = toy(seed=seed % 97, words=tuple("abcde"))
    z = z_for(m, seed)
    view = m.view("t")
    a = beam_search(z, view, w1, 8, return_hypothesis=True)
    b = beam_search(z, view, w2, 8, return_hypothesis=True)
    assert b.finished >= a.finished
    if a.finished == b.finished:
        assert b.logprob >= a.logprob - 1e-12


@pytest.mark.parametrize("seed", range(12))
def test_beam_five_matches_exhaustive_on_four_token_model(seed):
    # emittable tokens: a, b, c and EOS
    m = toy(seed=seed)
    view = m.view("t")
    z = z_for(m, seed)
    best = exhaustive(view, z, 3)
    hyp = beam_search(z, view, 5, 3, return_hypothesis=True)
    assert hyp.tokens == best
    assert hyp.logprob == pytest.approx(oracle_score(view, z, best), abs=1e-9)


def test_hypothesis_score_is_sum_of_step_logprobs():
    m = toy(seed=7, words=tuple("abcde"))
    view = m.view("t")
    z = z_for(m, 7)
    h = beam_search(z, view, 3, 10, return_hypothesis=True)
    assert h.logprob <= 0
    assert h.logprob == pytest.approx(oracle_score(view, z, h.tokens), abs=1e-9)
    assert h.logprob == pytest.approx(sequence_logprob(z, view, h.tokens), abs=1e-9)
    if h.finished:
        assert h.tokens[-1] == EOS


@given(st.integers(0, 10_000))
def test_never_emits_specials(seed):
    m = toy(seed=seed % 50, words=tuple("abcde"))
    m.store["output.base"].value[:, UNK] += 100.0  # UNK would win if it were allowed
    z = z_for(m, seed)
    for seq in (greedy_decode(z, m.view("t"), 8), beam_search(z, m.view("t"), 3, 8)):
        assert all(t not in (PAD, BOS, UNK, EOS) and 0 <= t < len(m.vocab) for t in seq)


def test_beam_width_zero_rejected():
    m = toy()
    with pytest.raises(ValueError):
        beam_search(z_for(m, 0), m.view("t"), 0, 5)


def test_beam_uses_style_extension_vocab():
    from dln.model import extend_to_new_style
    m = toy()
    extend_to_new_style(m, "n", [["zz"]])
    for gate, b in (("i", 10.0), ("o", 10.0), ("u", 3.0)):
        m.store[f"ln.n.{gate}.g"].value[:] = 0.0  # gates pinned by their shifts, so h > 0
        m.store[f"ln.n.{gate}.b"].value[:] = b
    m.store["output.ext.n"].value[:] = 100.0
    m.store["output.base"].value[:, EOS] = -100.0
    seq = greedy_decode(z_for(m, 0), m.view("n"), 3)
    assert m.styles["n"].vocab.decode(seq) == ["zz"] * 3
