import itertools
import logging
import math
import random

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import TINY, finite_difference_check, tiny_corpus
from dmrsgen.corpus import BOS_ID, EOS_ID, NB_ID, PAD_ID, ParallelExample, build_vocabulary, collate
from dmrsgen.linearize import LinearSequence
from dmrsgen.model import (CheckpointError, Generator, Hyperparams, TrainingDiverged, beam_search,
                           generate, greedy_decode, load_checkpoint, perplexity, save_checkpoint,
                           train)
from dmrsgen.pipeline import prepare
from dmrsgen.preprocess import CorpusExample
from dmrsgen.penman import parse_penman
from graphgen import SEE_PENMAN, SEE_SENTENCE


def test_hyperparams_validation_and_profiles():
    hp = Hyperparams()
    assert (hp.hidden, hp.symbol_dim, hp.bundle_dim, hp.batch_size) == (64, 64, 8, 16)
    assert (hp.lr, hp.beta1, hp.beta2, hp.dropout, hp.beam) == (1e-3, 0.9, 0.999, 0.3, 5)
    big = Hyperparams.large()
    assert (big.symbol_dim, big.hidden, big.encoder_layers, big.decoder_layers) == (500, 800, 2, 2)
    assert 22 <= big.bundle_dim <= 25
    for bad in (dict(hidden=0), dict(dropout=1.0), dict(beam=0), dict(lr=-1)):
        with pytest.raises(ValueError):
            Hyperparams(**bad)


def test_embedding_and_encoder_shapes(tiny):
    model, vocab, corpus = tiny
    model.eval()
    seqs = [ex.source for ex in corpus[:5]]
    src, bundles, lengths = model.tensorize(seqs)
    emb = model.embed_source(src, bundles)
    assert emb.shape == (5, src.size(1), TINY["symbol_dim"] + TINY["bundle_dim"])
    # "(" carries the sentinel bundle: its slice equals the sentinel embedding
    assert torch.equal(emb[0, 0, TINY["symbol_dim"]:], model.bundle_embed.weight[NB_ID])
    enc = model.encode(src, bundles, lengths)
    assert enc.memory.shape == (5, src.size(1), 2 * TINY["hidden"])
    assert enc.mask.sum(1).tolist() == [len(s) for s in seqs]
    one = model.encode_sequences([LinearSequence(["x"], ["<nb>"])])
    assert one.memory.shape[1] == 1


def test_inference_is_deterministic(tiny):
    model, _, corpus = tiny
    model.eval()
    a = model.encode_sequences([ex.source for ex in corpus[:4]]).memory
    b = model.encode_sequences([ex.source for ex in corpus[:4]]).memory
    assert torch.equal(a, b)


def test_decode_step_distributions(tiny):
    model, _, corpus = tiny
    model.eval()
    seqs = [ex.source for ex in corpus[:6]]
    enc = model.encode_sequences(seqs)
    state = enc.state
    prev = torch.full((6,), BOS_ID)
    for _ in range(5):
        step = model.decode_step(prev, state, enc)
        assert torch.allclose(step.gen_logp.exp().sum(-1), torch.ones(6, dtype=torch.float64), atol=1e-6)
        assert torch.allclose(step.attention.sum(-1), torch.ones(6, dtype=torch.float64), atol=1e-6)
        assert torch.all(step.attention[~enc.mask] == 0)
        assert torch.equal(step.pointer, step.attention)
        assert torch.all((step.gate >= 0) & (step.gate <= 1))
        prev, state = step.gen_logp.argmax(-1), step.state


def test_single_position_attention_is_one(tiny):
    model, _, _ = tiny
    enc = model.encode_sequences([LinearSequence(["_a_q"], ["<nb>"])])
    step = model.decode_step(torch.tensor([BOS_ID]), enc.state, enc)
    assert step.attention.item() == 1.0


def test_uniform_generation_loss_is_log_v(tiny):
    model, vocab, corpus = tiny
    with torch.no_grad():
        model.out.weight.zero_()
        model.out.bias.zero_()
        model.gate.weight.zero_()
        model.gate.bias.fill_(-60.0)  # gate ~ 0: everything generated
    batch = collate([ex for ex in corpus if not any(w in ("zib", "quux") for w in ex.target)], vocab)
    loss = model.loss(batch)
    assert loss.item() == pytest.approx(math.log(len(vocab.target)), abs=1e-9)
    model.hp.copy = False
    assert model.loss(batch).item() == pytest.approx(math.log(len(vocab.target)), abs=1e-12)


def test_copy_positions_use_pointer_mass(tiny):
    model, vocab, corpus = tiny
    assert "zib" not in vocab.target
    batch = collate([corpus[-2]], vocab)
    assert batch.copy_mask[0, 1].nonzero()[0].tolist() == [1]
    model.eval()
    gen_logp, log_attn, gate_logit = model.teacher_forced(batch)
    nll, n = model.loss(batch, reduction="sum")
    g = torch.sigmoid(gate_logit[0])
    by_hand = -(torch.log(1 - g[0]) + gen_logp[0, 0, batch.tgt[0, 1]])
    by_hand -= torch.log(g[1]) + log_attn[0, 1, 1]
    for t in (2, 3):
        by_hand -= torch.log(1 - g[t]) + gen_logp[0, t, batch.tgt[0, t + 1]]
    assert n == 4 and nll.item() == pytest.approx(by_hand.item(), rel=1e-12)


def test_gradient_matches_finite_differences(tiny):
    model, vocab, corpus = tiny
    assert len(vocab.target) == 12
    batch = collate([corpus[0], corpus[-2]], vocab)
    assert batch.copy_mask.any()
    rel, checked = finite_difference_check(model, batch)
    assert checked > 500 and rel < 1e-4


def _copy_task(n=40, seed=0):
    rng = random.Random(seed)
    words = ["red", "blue", "green", "black", "white"]
    out = []
    for i in range(n):
        ws = [rng.choice(words) for _ in range(rng.randint(1, 3))]
        src = "( " + " ".join(f"_{w}_a_1" for w in ws) + " )" if len(ws) == 1 else \
            "( _" + ws[0] + "_a_1 " + " ".join(f"ARG1 ( _{w}_a_1 )" for w in ws[1:]) + " )"
        out.append(ParallelExample(LinearSequence.from_text(src), ws, index=i))
    return out


def test_training_reduces_dev_perplexity_in_five_epochs():
    data = _copy_task()
    vocab = build_vocabulary(data)
    hp = Hyperparams(hidden=32, symbol_dim=32, epochs=5, batch_size=8, dropout=0.0)
    res = train(data[:30], vocab, hp, dev_data=data[30:])
    assert [e["epoch"] for e in res.log] == list(range(6))
    assert min(e["dev_ppl"] for e in res.log[1:]) < res.log[0]["dev_ppl"]
    assert res.best_epoch >= 1


def test_zero_learning_rate_keeps_parameters():
    data = _copy_task(16)
    vocab = build_vocabulary(data)
    hp = Hyperparams(hidden=8, symbol_dim=8, epochs=1, lr=0.0)
    torch.manual_seed(hp.seed)
    before = {k: v.clone() for k, v in Generator(vocab, hp).state_dict().items()}
    seen = {}

    def snapshot(epoch, model):
        # taken before train() restores its best weights
        seen.update({k: v.clone() for k, v in model.state_dict().items()})

    train(data, vocab, hp, callback=snapshot)
    assert seen and all(torch.equal(before[k], seen[k]) for k in before)


def test_training_is_deterministic(tmp_path):
    data = _copy_task(16)
    vocab = build_vocabulary(data)
    hp = Hyperparams(hidden=8, symbol_dim=8, epochs=2)
    a = train(data, vocab, hp, log_path=tmp_path / "a.jsonl")
    b = train(data, vocab, hp)
    assert a.log[-1]["train_loss"] == b.log[-1]["train_loss"]
    lines = (tmp_path / "a.jsonl").read_text().splitlines()
    assert len(lines) == 3 and '"dev_ppl"' in lines[0] and '"wall_time"' in lines[0]


def test_divergence_aborts():
    data = _copy_task(8)
    vocab = build_vocabulary(data)
    hp = Hyperparams(hidden=8, symbol_dim=8, epochs=1)

    class Broken(Generator):
        def loss(self, batch, reduction="mean"):
            out = super().loss(batch, reduction)
            if self.training:
                return out * float("nan")
            return out

    with pytest.raises(TrainingDiverged, match="epoch 1"):
        train(data, vocab, hp, model=Broken(vocab, hp))


def test_checkpoint_round_trip_and_hash_check(tmp_path, tiny):
    model, vocab, corpus = tiny
    path = tmp_path / "m.pt"
    save_checkpoint(model, path)
    back = load_checkpoint(path, vocab)
    batch = collate(corpus[:3], vocab)
    model.eval()
    assert back.loss(batch).item() == model.loss(batch).item()
    other = build_vocabulary(corpus, min_count=1)
    with pytest.raises(CheckpointError, match="hash"):
        load_checkpoint(path, other)
    torch.save({"format": "something-else"}, tmp_path / "bad.pt")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.pt", vocab)


# ---------------------------------------------------------------------------
# search


def _random_model(seed, copy=True):
    torch.manual_seed(seed)
    corpus = tiny_corpus(seed=seed)
    vocab = build_vocabulary(corpus)
    hp = Hyperparams(**dict(TINY, copy=copy))
    model = Generator(vocab, hp)
    if copy:
        with torch.no_grad():
            model.gate.bias.fill_(float(torch.randn(())))  # some models copy, some generate
    return model.eval(), corpus


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.booleans())
def test_beam_one_equals_greedy(seed, copy):
    model, corpus = _random_model(seed, copy)
    seqs = [ex.source for ex in corpus[:4]]
    greedy = greedy_decode(model, seqs, max_len=8)
    for seq, g in zip(seqs, greedy):
        (b,) = beam_search(model, seq, width=1, max_len=8)
        assert b.tokens == g.tokens and b.copies == g.copies
        assert b.logprob == pytest.approx(g.logprob, abs=1e-9)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_beam_ranking_and_monotone_logprob(seed):
    model, corpus = _random_model(seed)
    hyps = beam_search(model, corpus[0].source, width=4, max_len=6)
    scores = [h.score for h in hyps]
    assert scores == sorted(scores, reverse=True)
    for h in hyps:
        assert h.logprob <= 0


def _sequence_logprob(model, seq, tokens):
    enc = model.encode_sequences([seq])
    state, prev, total = enc.state, torch.tensor([BOS_ID]), 0.0
    for tok in tokens:
        step = model.decode_step(prev, state, enc)
        total += step.gen_logp[0, tok].item()
        state, prev = step.state, torch.tensor([tok])
    return total


@torch.no_grad()
def test_exhaustive_beam_recovers_argmax():
    model, corpus = _random_model(3, copy=False)
    seq = corpus[1].source
    allowed = [i for i in range(len(model.vocab.target)) if i not in (PAD_ID, BOS_ID, NB_ID, EOS_ID)]
    best, best_score = None, -math.inf
    for k in range(3):  # up to two words, then the end token
        for words in itertools.product(allowed, repeat=k):
            lp = _sequence_logprob(model, seq, list(words) + [EOS_ID])
            score = lp / (k + 1)
            if score > best_score:
                best, best_score = [model.vocab.target.token(w) for w in words], score
    width = (len(allowed) + 1) ** 3
    top = beam_search(model, seq, width=width, max_len=3)[0]
    assert top.finished and top.tokens == best
    assert top.score == pytest.approx(best_score, abs=1e-9)
    # a wider search never loses the exhaustive optimum, whatever smaller widths find
    for w in (1, 2, 5):
        for hyp in beam_search(model, seq, width=w, max_len=3):
            if hyp.finished:
                assert hyp.score <= top.score + 1e-12


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_copy_reachability(seed):
    model, corpus = _random_model(seed)
    for ex in corpus[-2:] + corpus[:3]:
        for hyp in (greedy_decode(model, [ex.source], max_len=6)[0], beam_search(model, ex.source, 3, 6)[0]):
            for tok, pos in zip(hyp.tokens, hyp.copies):
                if tok not in model.vocab.target:
                    assert tok in ex.source.symbols and pos is not None
                if pos is not None:
                    assert ex.source.symbols[pos] == tok
    model_nc, _ = _random_model(seed, copy=False)
    for ex in corpus[-2:]:
        hyp = greedy_decode(model_nc, [ex.source], max_len=6)[0]
        assert all(t in model_nc.vocab.target for t in hyp.tokens)


def test_generate_counts_and_empty(tiny):
    model, _, corpus = tiny
    assert generate(model, []) == []
    seqs = [ex.source for ex in corpus[:5]]
    assert len(generate(model, seqs, max_len=5, width=2)) == 5
    assert len(generate(model, seqs, max_len=5, greedy=True)) == 5


def test_memorized_example_generates_sentence(caplog):
    caplog.set_level(logging.WARNING)
    split = prepare([CorpusExample(parse_penman(SEE_PENMAN), SEE_SENTENCE)])
    pair = split.pairs[0]
    assert pair.target == ["named0", "sees", "a", "boy", "."]
    vocab = build_vocabulary([pair], min_count=1)
    hp = Hyperparams(hidden=16, symbol_dim=16, epochs=60, dropout=0.0, lr=0.01)
    res = train([pair] * 4, vocab, hp)
    assert generate(res.model, [pair.source], split.maps) == [SEE_SENTENCE]
    assert generate(res.model, [pair.source], greedy=True) == ["named0 sees a boy."]
    assert "placeholders pass through" in caplog.text


def test_perplexity_of_trained_model_is_low():
    data = _copy_task(24)
    vocab = build_vocabulary(data)
    hp = Hyperparams(hidden=32, symbol_dim=32, epochs=40, dropout=0.0, lr=0.01, batch_size=8)
    res = train(data, vocab, hp)
    assert perplexity(res.model, data) < 1.2
    hyps = greedy_decode(res.model, [ex.source for ex in data])
    assert sum(h.tokens == ex.target for h, ex in zip(hyps, data)) >= 20
