import numpy as np
import pytest

from kgrank import tensor as tt
from kgrank.data import MrsSample
from kgrank.encoder import (
    CLS_ID, SEP_ID, UNK_ID, EncoderConfig, EncoderModel, TokenSequence,
    Vocabulary, split_text, tokenize, trans_a,
)

from test_tensor import assert_grad_close, fd_gradient


def small_model(vocab_words=("i", "like", "dogs", "cats", "a", "b", "c", "d", "r"),
                dim=16, layers=1, heads=2, max_seq_len=64, seed=0):
    vocab = Vocabulary(vocab_words)
    cfg = EncoderConfig(dim=dim, layers=layers, heads=heads, max_seq_len=max_seq_len)
    return EncoderModel(cfg, vocab, rng=np.random.default_rng(seed))


def sample_of(persona, context, candidates, pos=0):
    labels = [1 if i == pos else 0 for i in range(len(candidates))]
    return MrsSample(persona=persona, context=context, candidates=candidates, labels=labels)


# ---------------------------------------------------------------------------
# tokenization

def test_split_keeps_punctuation():
    assert split_text("I like dogs.") == ["i", "like", "dogs", "."]


def test_unknown_token_maps_to_unk():
    vocab = Vocabulary(["i", "like"])
    seq = tokenize(vocab, "i like zyzzyva")
    assert seq.ids[-1] == UNK_ID


def test_empty_text():
    vocab = Vocabulary([])
    seq = tokenize(vocab, "")
    assert seq.ids == [] and seq.mask == []


def test_vocab_roundtrip():
    vocab = Vocabulary(["b", "a", "c"])
    again = Vocabulary.from_jsonable(vocab.to_jsonable())
    assert all(again.id_of(t) == vocab.id_of(t) for t in ("a", "b", "c", "missing"))


# ---------------------------------------------------------------------------
# trans_a

def test_trans_a_layout():
    m = small_model()
    s = sample_of(["a"], ["b", "c"], ["d"])
    seq = trans_a(m.vocab, s, 0, max_seq_len=64)
    v = m.vocab
    assert seq.ids == [CLS_ID, v.id_of("a"), SEP_ID, v.id_of("b"), SEP_ID,
                       v.id_of("c"), SEP_ID, v.id_of("d"), SEP_ID]


def test_trans_a_empty_persona():
    m = small_model()
    s = sample_of([], ["b"], ["d"])
    seq = trans_a(m.vocab, s, 0, max_seq_len=64)
    v = m.vocab
    assert seq.ids == [CLS_ID, v.id_of("b"), SEP_ID, v.id_of("d"), SEP_ID]


def test_trans_a_truncates_context_front_to_exact_length():
    vocab = Vocabulary([f"w{i}" for i in range(700)])
    persona = ["w0 w1 w2"]
    context = [" ".join(f"w{i}" for i in range(3 + 60 * j, 3 + 60 * (j + 1))) for j in range(9)]
    cand = "w600 w601"
    s = sample_of(persona, context, [cand])
    full = trans_a(vocab, s, 0, max_seq_len=1024)
    assert len(full) == 557  # CLS + persona 4 + context 9*61 + candidate 3
    seq = trans_a(vocab, s, 0, max_seq_len=512)
    assert len(seq) == 512
    # persona and candidate intact
    assert seq.ids[0] == CLS_ID
    assert seq.ids[1:4] == vocab.encode(["w0", "w1", "w2"])
    assert seq.ids[-3:-1] == vocab.encode(["w600", "w601"])
    assert seq.ids[-1] == SEP_ID
    # dropped tokens come from the oldest context
    assert vocab.id_of("w3") not in seq.ids
    # the remaining context is the newest suffix of the full sequence
    assert seq.ids[5:] == full.ids[len(full) - 507:]


def test_trans_a_never_drops_candidate():
    vocab = Vocabulary([f"w{i}" for i in range(40)])
    s = sample_of(["w0 w1 w2 w3 w4 w5"], ["w6 w7 w8"], [" ".join(f"w{i}" for i in range(9, 19))])
    seq = trans_a(vocab, s, 0, max_seq_len=13)
    assert len(seq) == 13
    assert seq.ids[0] == CLS_ID
    # candidate segment survives verbatim at the end
    assert seq.ids[-11:] == vocab.encode([f"w{i}" for i in range(9, 19)]) + [SEP_ID]


# ---------------------------------------------------------------------------
# encode / predict

def test_encode_output_shape_and_determinism():
    m = small_model()
    seq = trans_a(m.vocab, sample_of(["a"], ["b"], ["c"]), 0, 64)
    h1 = m.encode(seq)
    h2 = m.encode(seq)
    assert h1.shape == (m.config.dim,)
    assert np.array_equal(h1.data, h2.data)


def test_encode_empty_sequence_rejected():
    m = small_model()
    with pytest.raises(ValueError):
        m.encode(TokenSequence([], []))


def test_padding_leaves_cls_state_unchanged():
    m = small_model(dim=32, layers=2)
    seq = trans_a(m.vocab, sample_of(["a b"], ["c d", "i like"], ["dogs"]), 0, 64)
    h = m.encode(seq).data
    for extra in (1, 5, 17):
        hp = m.encode(seq.padded(len(seq) + extra)).data
        assert np.abs(h - hp).max() < 1e-10


def test_predict_zero_head_gives_half():
    m = small_model()
    m.params["head_w"].data[:] = 0.0
    m.params["head_b"].data[()] = 0.0
    h = m.encode(trans_a(m.vocab, sample_of(["a"], ["b"], ["c"]), 0, 64))
    assert m.predict(h).item() == 0.5


def test_predict_matches_scalar_recomputation_and_is_monotone():
    rng = np.random.default_rng(3)
    m = small_model(dim=8, layers=0)
    prev = None
    logits = []
    for _ in range(10):
        h = tt.Tensor(rng.uniform(-2, 2, 8))
        y = m.predict(h).item()
        z = float(np.dot(h.data, m.params["head_w"].data) + m.params["head_b"].data)
        assert abs(y - 1.0 / (1.0 + np.exp(-z))) < 1e-12
        assert 0.0 < y < 1.0
        logits.append((z, y))
    logits.sort()
    ys = [y for _, y in logits]
    assert all(a < b for a, b in zip(ys, ys[1:]))


def test_predict_length_mismatch():
    m = small_model()
    with pytest.raises(tt.ShapeError):
        m.predict(tt.Tensor(np.zeros(m.config.dim + 1)))


def test_encoder_gradients_match_finite_differences():
    """d(predict)/d(every encoder parameter) via central differences."""
    vocab = Vocabulary(["a", "b", "c"])
    cfg = EncoderConfig(dim=8, layers=1, heads=2, max_seq_len=8)
    rng = np.random.default_rng(5)
    model = EncoderModel(cfg, vocab, rng=rng)
    # non-degenerate weights
    for p in model.params.values():
        p.data[...] = rng.uniform(-0.5, 0.5, p.data.shape)
    seq = trans_a(vocab, sample_of(["a b"], ["c"], ["b a"]), 0, 8)

    y = model.predict(model.encode(seq))
    y.backward()

    for name, p in model.params.items():
        flat = p.data.ravel().copy()

        def f(v, name=name, shape=p.data.shape):
            saved = model.params[name].data.copy()
            model.params[name].data[...] = v.reshape(shape)
            out = float(model.predict(model.encode(seq)).data)
            model.params[name].data[...] = saved
            return out

        numeric = fd_gradient(f, flat)
        analytic = (p.grad if p.grad is not None else np.zeros_like(p.data)).ravel()
        assert_grad_close(analytic, numeric)


# ---------------------------------------------------------------------------
# snapshot

def test_snapshot_is_frozen_and_cached():
    m = small_model(dim=16, layers=1)
    snap = m.snapshot()
    e1 = snap.encode_concept("dogs")
    e2 = snap.encode_concept("dogs")
    assert np.array_equal(e1, e2)
    # on-the-fly encoding equals the cached value
    ids = [CLS_ID] + m.vocab.encode(split_text("dogs")) + [SEP_ID]
    direct = snap.encode_sequence(TokenSequence(ids, [1] * len(ids)))
    assert np.array_equal(e1, direct)

    before = snap.encode_concept("cats").copy()
    for p in m.params.values():  # simulate 100 training steps
        p.data += 0.01
    snap._concept_cache.clear()
    assert np.array_equal(before, snap.encode_concept("cats"))


def test_checkpoint_roundtrip_bit_identical(tmp_path):
    m = small_model(dim=16, layers=2, seed=9)
    path = tmp_path / "enc.json"
    m.save(path)
    again = EncoderModel.load(path)
    seq = trans_a(m.vocab, sample_of(["a"], ["b", "c"], ["d"]), 0, 64)
    assert np.array_equal(m.encode(seq).data, again.encode(seq).data)
    for k in m.params:
        assert np.array_equal(m.params[k].data, again.params[k].data)
