"""Attentional encoder-decoder with a pointer-copy switch.

Source positions embed a symbol and an attribute bundle separately and
concatenate them; a bidirectional LSTM encodes the sequence.  The decoder is a
unidirectional LSTM with bilinear global attention.  At every step a sigmoid
gate chooses between generating from the target vocabulary and copying a
source symbol through the attention distribution.
"""

import copy as _copy
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .corpus import (BOS_ID, EOS_ID, NB_ID, PAD_ID, UNK_ID, Batch, ParallelExample, Vocabulary,
                     collate, make_batches)
from .linearize import LinearSequence

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "dmrsgen-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class Hyperparams:
    symbol_dim: int = 64
    bundle_dim: int = 8
    hidden: int = 64          # per direction in the encoder; the decoder uses 2 * hidden
    encoder_layers: int = 2
    decoder_layers: int = 2
    dropout: float = 0.3
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    clip_norm: float = 5.0
    batch_size: int = 16
    epochs: int = 30
    beam: int = 5
    max_len: int = 100
    copy: bool = True
    dtype: str = "float64"
    seed: int = 0

    def __post_init__(self):
        for name in ("symbol_dim", "bundle_dim", "hidden", "encoder_layers", "decoder_layers",
                     "batch_size", "beam", "max_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if self.epochs < 0 or self.lr < 0:
            raise ValueError("epochs and lr must be non-negative")

    @classmethod
    def large(cls, **overrides) -> "Hyperparams":
        base = dict(symbol_dim=500, bundle_dim=24, hidden=800, batch_size=64, epochs=30)
        base.update(overrides)
        return cls(**base)

    @property
    def torch_dtype(self):
        return getattr(torch, self.dtype)


@dataclass
class EncoderOutput:
    memory: torch.Tensor   # [B, S, 2H]
    state: tuple           # decoder initial (h, c), each [L, B, 2H]
    mask: torch.Tensor     # [B, S] true at real positions

    def select(self, index: torch.Tensor) -> "EncoderOutput":
        return EncoderOutput(self.memory[index], tuple(s[:, index] for s in self.state), self.mask[index])


@dataclass
class DecoderStep:
    gen_logp: torch.Tensor   # [B, V] log generation distribution
    attention: torch.Tensor  # [B, S]
    gate: torch.Tensor       # [B] probability of copying
    state: tuple

    @property
    def pointer(self) -> torch.Tensor:
        # the pointer distribution is the attention distribution
        return self.attention


@dataclass
class Hypothesis:
    tokens: list
    logprob: float
    copies: list = field(default_factory=list)  # per token: source position or None
    finished: bool = True

    @property
    def score(self) -> float:
        # normalized over emitted steps, the end token included
        steps = len(self.tokens) + int(self.finished)
        return self.logprob / steps if steps else 0.0


class TrainingDiverged(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


class Generator(nn.Module):
    def __init__(self, vocab: Vocabulary, hp: Hyperparams):
        super().__init__()
        self.vocab = vocab
        self.hp = hp
        H = hp.hidden
        self.src_embed = nn.Embedding(len(vocab.source), hp.symbol_dim, padding_idx=PAD_ID)
        self.bundle_embed = nn.Embedding(len(vocab.bundles), hp.bundle_dim, padding_idx=PAD_ID)
        self.encoder = nn.LSTM(hp.symbol_dim + hp.bundle_dim, H, hp.encoder_layers, batch_first=True,
                               bidirectional=True, dropout=hp.dropout if hp.encoder_layers > 1 else 0.0)
        self.tgt_embed = nn.Embedding(len(vocab.target), hp.symbol_dim, padding_idx=PAD_ID)
        self.decoder = nn.LSTM(hp.symbol_dim, 2 * H, hp.decoder_layers, batch_first=True,
                               dropout=hp.dropout if hp.decoder_layers > 1 else 0.0)
        self.attn = nn.Linear(2 * H, 2 * H, bias=False)
        self.combine = nn.Linear(4 * H, 2 * H, bias=False)
        self.out = nn.Linear(2 * H, len(vocab.target))
        self.gate = nn.Linear(2 * H, 1)
        self.drop = nn.Dropout(hp.dropout)
        self.to(hp.torch_dtype)

    # -- encoder ---------------------------------------------------------

    def embed_source(self, src: torch.Tensor, bundles: torch.Tensor) -> torch.Tensor:
        return torch.cat([self.src_embed(src), self.bundle_embed(bundles)], dim=-1)

    def encode(self, src, bundles, lengths) -> EncoderOutput:
        lengths = torch.as_tensor(lengths, dtype=torch.long)
        emb = self.drop(self.embed_source(src, bundles))
        packed = nn.utils.rnn.pack_padded_sequence(emb, lengths.cpu(), batch_first=True, enforce_sorted=False)
        out, (h, c) = self.encoder(packed)
        memory, _ = nn.utils.rnn.pad_packed_sequence(out, batch_first=True, total_length=src.size(1))
        mask = torch.arange(src.size(1))[None, :] < lengths[:, None]
        return EncoderOutput(memory, (self._bridge(h), self._bridge(c)), mask)

    def _bridge(self, s):
        L, B, H = self.hp.encoder_layers, s.size(1), s.size(2)
        s = s.view(L, 2, B, H)
        s = torch.cat([s[:, 0], s[:, 1]], dim=-1)
        want = self.hp.decoder_layers
        if want <= L:
            return s[L - want:].contiguous()
        return torch.cat([s, s[-1:].expand(want - L, B, 2 * H)], dim=0).contiguous()

    # -- decoder ---------------------------------------------------------

    def _attend(self, query, enc: EncoderOutput):
        scores = torch.bmm(query, self.attn(enc.memory).transpose(1, 2))
        scores = scores.masked_fill(~enc.mask[:, None, :], float("-inf"))
        log_attn = torch.log_softmax(scores, dim=-1)
        context = torch.bmm(log_attn.exp(), enc.memory)
        h = self.drop(torch.tanh(self.combine(torch.cat([context, query], dim=-1))))
        gen_logp = torch.log_softmax(self.out(h), dim=-1)
        gate_logit = self.gate(h).squeeze(-1)
        return gen_logp, log_attn, gate_logit

    def decode_step(self, prev: torch.Tensor, state: tuple, enc: EncoderOutput) -> DecoderStep:
        emb = self.drop(self.tgt_embed(prev[:, None]))
        out, state = self.decoder(emb, state)
        gen_logp, log_attn, gate_logit = self._attend(out, enc)
        return DecoderStep(gen_logp[:, 0], log_attn[:, 0].exp(), torch.sigmoid(gate_logit[:, 0]), state)

    def teacher_forced(self, batch: Batch):
        src = torch.from_numpy(batch.src)
        enc = self.encode(src, torch.from_numpy(batch.src_bundles), torch.from_numpy(batch.src_lengths))
        tgt = torch.from_numpy(batch.tgt)
        out, _ = self.decoder(self.drop(self.tgt_embed(tgt[:, :-1])), enc.state)
        return self._attend(out, enc)

    def loss(self, batch: Batch, reduction: str = "mean"):
        """Negative log likelihood per target token.

        A position whose word is copy-supervised costs -log(g * pointer mass on
        the matching source positions); any other costs -log((1 - g) * p_gen).
        """
        gen_logp, log_attn, gate_logit = self.teacher_forced(batch)
        gold = torch.from_numpy(batch.tgt[:, 1:])
        mask = gold != PAD_ID
        gen = gen_logp.gather(-1, gold[..., None]).squeeze(-1)
        if self.hp.copy:
            copy_mask = torch.from_numpy(batch.copy_mask)
            is_copy = copy_mask.any(-1)
            picked = log_attn.masked_fill(~copy_mask, float("-inf"))
            # rows without a copy target get a dummy value so logsumexp stays finite
            picked = torch.where(is_copy[..., None], picked, torch.zeros_like(picked))
            copy_lp = F.logsigmoid(gate_logit) + torch.logsumexp(picked, dim=-1)
            gen_lp = F.logsigmoid(-gate_logit) + gen
            token_lp = torch.where(is_copy, copy_lp, gen_lp)
        else:
            token_lp = gen
        nll = -(token_lp * mask)
        if reduction == "sum":
            return nll.sum(), int(mask.sum())
        return nll.sum() / mask.sum()

    # -- inference helpers ---------------------------------------------

    def tensorize(self, seqs: Sequence[LinearSequence]):
        n = len(seqs)
        lengths = np.array([len(s) for s in seqs], dtype=np.int64)
        S = int(lengths.max())
        src = np.full((n, S), PAD_ID, dtype=np.int64)
        bundles = np.full((n, S), PAD_ID, dtype=np.int64)
        for i, s in enumerate(seqs):
            src[i, : len(s)] = self.vocab.source.lookup(s.symbols)
            bundles[i, : len(s)] = self.vocab.bundles.lookup(s.attributes)
        return torch.from_numpy(src), torch.from_numpy(bundles), torch.from_numpy(lengths)

    def encode_sequences(self, seqs: Sequence[LinearSequence]) -> EncoderOutput:
        return self.encode(*self.tensorize(seqs))


# ---------------------------------------------------------------------------
# search

_BLOCKED = (PAD_ID, BOS_ID, NB_ID)


def step_candidates(model: Generator, step: DecoderStep, row: int, symbols: Sequence[str],
                    use_copy: bool):
    """Scored continuations for one decoder row.

    Returns ``(logp, token, target_id, source_position)`` tuples.  With copying
    enabled a gate above 0.5 restricts the step to copies, scored per distinct
    source symbol by its summed pointer mass; otherwise the step generates.
    """
    out = []
    if use_copy and step.gate[row] > 0.5:
        log_gate = math.log(float(step.gate[row]))
        attn = step.attention[row].tolist()
        mass, best = {}, {}
        for i, sym in enumerate(symbols):
            mass[sym] = mass.get(sym, 0.0) + attn[i]
            if sym not in best or attn[i] > attn[best[sym]]:
                best[sym] = i
        for sym, m in mass.items():
            if m > 0:
                out.append((log_gate + math.log(m), sym, model.vocab.target[sym], best[sym]))
        return out
    shift = math.log1p(-float(step.gate[row])) if use_copy else 0.0
    logp = step.gen_logp[row].tolist()
    for tid, lp in enumerate(logp):
        if tid in _BLOCKED or lp == float("-inf"):
            continue
        out.append((shift + lp, model.vocab.target.token(tid), tid, None))
    return out


@torch.no_grad()
def greedy_decode(model: Generator, seqs: Sequence[LinearSequence], max_len: Optional[int] = None,
                  use_copy: Optional[bool] = None) -> list:
    """Batched argmax decoding under the same gate rule as :func:`beam_search`."""
    model.eval()
    max_len = model.hp.max_len if max_len is None else max_len
    use_copy = model.hp.copy if use_copy is None else use_copy
    if not seqs:
        return []
    enc = model.encode_sequences(seqs)
    n = len(seqs)
    prev = torch.full((n,), BOS_ID, dtype=torch.long)
    state = enc.state
    hyps = [Hypothesis([], 0.0, [], finished=False) for _ in range(n)]
    blocked = torch.tensor(_BLOCKED)
    for _ in range(max_len):
        step = model.decode_step(prev, state, enc)
        state = step.state
        gen = step.gen_logp.clone()
        gen[:, blocked] = float("-inf")
        gen_lp, gen_id = gen.max(-1)
        nxt = prev.clone()
        for b, hyp in enumerate(hyps):
            if hyp.finished:
                continue
            syms = seqs[b].symbols
            if use_copy and step.gate[b] > 0.5:
                attn = step.attention[b, : len(syms)].tolist()
                mass = {}
                for i, sym in enumerate(syms):
                    mass[sym] = mass.get(sym, 0.0) + attn[i]
                sym = max(mass, key=mass.get)
                pos = max((i for i, s in enumerate(syms) if s == sym), key=lambda i: attn[i])
                hyp.logprob += math.log(float(step.gate[b])) + math.log(mass[sym])
                hyp.tokens.append(sym)
                hyp.copies.append(pos)
                nxt[b] = model.vocab.target[sym]
                continue
            shift = math.log1p(-float(step.gate[b])) if use_copy else 0.0
            hyp.logprob += shift + float(gen_lp[b])
            tid = int(gen_id[b])
            if tid == EOS_ID:
                hyp.finished = True
            else:
                hyp.tokens.append(model.vocab.target.token(tid))
                hyp.copies.append(None)
            nxt[b] = tid
        prev = nxt
        if all(h.finished for h in hyps):
            break
    return hyps


@torch.no_grad()
def beam_search(model: Generator, seq: LinearSequence, width: Optional[int] = None,
                max_len: Optional[int] = None, use_copy: Optional[bool] = None) -> list:
    """Length-bounded beam search; returns hypotheses best first.

    Finished hypotheses are ranked by log-probability divided by the number of
    steps (end token included).  If nothing finishes within ``max_len`` the
    live beam is returned, marked unfinished.
    """
    model.eval()
    width = model.hp.beam if width is None else width
    max_len = model.hp.max_len if max_len is None else max_len
    use_copy = model.hp.copy if use_copy is None else use_copy
    if width < 1:
        raise ValueError("beam width must be >= 1")
    enc1 = model.encode_sequences([seq])
    live = [Hypothesis([], 0.0, [], finished=False)]
    last = [BOS_ID]
    state = enc1.state
    finished = []
    for _ in range(max_len):
        k = len(live)
        enc = enc1.select(torch.zeros(k, dtype=torch.long))
        step = model.decode_step(torch.tensor(last), state, enc)
        cands = []
        for b, hyp in enumerate(live):
            options = step_candidates(model, step, b, seq.symbols, use_copy)
            options.sort(key=lambda o: -o[0])
            for lp, tok, tid, pos in options[:width]:
                cands.append((hyp.logprob + lp, b, tok, tid, pos))
        cands.sort(key=lambda c: -c[0])
        new_live, new_last, rows = [], [], []
        for total, b, tok, tid, pos in cands[:width]:
            parent = live[b]
            if tid == EOS_ID and pos is None:
                finished.append(Hypothesis(list(parent.tokens), total, list(parent.copies), True))
            else:
                new_live.append(Hypothesis(parent.tokens + [tok], total, parent.copies + [pos], False))
                new_last.append(tid)
                rows.append(b)
        if not new_live or len(finished) >= width:
            live = []
            break
        index = torch.tensor(rows)
        state = tuple(s[:, index].contiguous() for s in step.state)
        live, last = new_live, new_last
    pool = finished or live
    return sorted(pool, key=lambda h: -h.score)


# ---------------------------------------------------------------------------
# training


def perplexity(model: Generator, data: Sequence[ParallelExample], batch_size: int = 64) -> float:
    model.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for i in range(0, len(data), batch_size):
            nll, n = model.loss(collate(data[i:i + batch_size], model.vocab), reduction="sum")
            total += float(nll)
            count += n
    return math.exp(total / max(count, 1))


@dataclass
class TrainingResult:
    model: Generator
    log: list
    best_epoch: int
    best_state: dict


def train(train_data: Sequence[ParallelExample], vocab: Vocabulary, hp: Hyperparams,
          dev_data: Optional[Sequence[ParallelExample]] = None, log_path=None,
          checkpoint_path=None, callback=None, model: Optional[Generator] = None) -> TrainingResult:
    """Adam on token NLL with gradient clipping; keeps the best-dev weights.

    ``callback(epoch, model)`` runs after each epoch and may return True to
    stop early.  Without dev data the training pairs double as dev data.
    """
    if not train_data:
        raise ValueError("empty training corpus")
    torch.manual_seed(hp.seed)
    model = Generator(vocab, hp) if model is None else model
    opt = torch.optim.Adam(model.parameters(), lr=hp.lr, betas=(hp.beta1, hp.beta2))
    dev = list(dev_data) if dev_data else list(train_data)
    history = []
    sink = open(log_path, "w", encoding="utf-8") if log_path else None
    start = time.time()

    def record(entry):
        history.append(entry)
        if sink:
            sink.write(json.dumps(entry) + "\n")
            sink.flush()

    best_ppl = perplexity(model, dev)
    best_epoch = 0
    best_state = _copy.deepcopy(model.state_dict())
    record({"epoch": 0, "train_loss": None, "dev_ppl": best_ppl, "wall_time": time.time() - start})
    try:
        for epoch in range(1, hp.epochs + 1):
            model.train()
            total, count = 0.0, 0
            for batch in make_batches(train_data, hp.batch_size, seed=hp.seed * 1000003 + epoch, vocab=vocab):
                loss = model.loss(batch)
                if not torch.isfinite(loss):
                    raise TrainingDiverged(f"non-finite loss {loss.item()} at epoch {epoch}, "
                                           f"batch of {len(batch)} examples")
                opt.zero_grad()
                loss.backward()
                if hp.clip_norm > 0:
                    nn.utils.clip_grad_norm_(model.parameters(), hp.clip_norm)
                opt.step()
                total += loss.item() * len(batch)
                count += len(batch)
            ppl = perplexity(model, dev)
            record({"epoch": epoch, "train_loss": total / count, "dev_ppl": ppl,
                    "wall_time": time.time() - start})
            if ppl < best_ppl:
                best_ppl, best_epoch = ppl, epoch
                best_state = _copy.deepcopy(model.state_dict())
                if checkpoint_path:
                    save_checkpoint(model, checkpoint_path)
            if callback is not None and callback(epoch, model):
                break
    finally:
        if sink:
            sink.close()
    model.load_state_dict(best_state)
    if checkpoint_path and best_epoch == 0:
        save_checkpoint(model, checkpoint_path)
    return TrainingResult(model, history, best_epoch, best_state)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: Generator, path) -> None:
    torch.save({
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "hyperparams": asdict(model.hp),
        "vocab_hash": model.vocab.content_hash(),
        "state_dict": model.state_dict(),
    }, path)


def load_checkpoint(path, vocab: Vocabulary) -> Generator:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {blob.get('version')}")
    if blob["vocab_hash"] != vocab.content_hash():
        raise CheckpointError(f"{path}: vocabulary hash mismatch")
    model = Generator(vocab, Hyperparams(**blob["hyperparams"]))
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model


# ---------------------------------------------------------------------------
# generation


def generate(model: Generator, seqs: Sequence[LinearSequence], maps: Optional[Sequence] = None,
             width: Optional[int] = None, max_len: Optional[int] = None,
             use_copy: Optional[bool] = None, greedy: bool = False) -> list:
    """Decode, then de-anonymize and de-tokenize each output."""
    from .preprocess import deanonymize, detokenize

    if maps is None:
        if seqs:
            log.warning("no anonymization maps given: placeholders pass through")
        maps = [None] * len(seqs)
    if greedy:
        hyps = greedy_decode(model, seqs, max_len=max_len, use_copy=use_copy)
    else:
        hyps = [beam_search(model, s, width, max_len, use_copy)[0] for s in seqs]
    out = []
    for hyp, amap in zip(hyps, maps):
        text = deanonymize(" ".join(hyp.tokens), amap)
        out.append(detokenize(text.split()))
    return out
