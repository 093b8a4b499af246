import random

import numpy as np
import pytest
import torch

from dmrsgen.corpus import ParallelExample, build_vocabulary, collate
from dmrsgen.linearize import LinearSequence
from dmrsgen.model import Generator, Hyperparams

TINY = dict(symbol_dim=6, bundle_dim=4, hidden=8, dropout=0.0, batch_size=4)


def tiny_corpus(n=20, seed=0):
    """Short source/target pairs; ``zib``/``quux`` appear once so they are copied, not generated."""
    rng = random.Random(seed)
    preds = ["_a_q", "_b_n_1", "_c_v_1", "_d_a_1"]
    words = ["a", "b", "c", "d", "e", "f", "."]
    out = []
    for i in range(n):
        k = rng.randint(1, 3)
        body = " ".join(f"ARG{j + 1}-NEQ ( {rng.choice(preds)} num=SG )" for j in range(k - 1))
        src = f"( {rng.choice(preds)} tense=PRES {body} )"
        tgt = [rng.choice(words) for _ in range(rng.randint(1, 4))]
        out.append(ParallelExample(LinearSequence.from_text(src), tgt, index=i))
    out.append(ParallelExample(LinearSequence.from_text("( zib ARG1-NEQ ( _a_q ) )"), ["a", "zib", "."], index=n))
    out.append(ParallelExample(LinearSequence.from_text("( quux )"), ["quux", "b"], index=n + 1))
    return out


@pytest.fixture
def tiny():
    torch.manual_seed(0)
    corpus = tiny_corpus()
    vocab = build_vocabulary(corpus, min_count=2)
    model = Generator(vocab, Hyperparams(**TINY))
    return model, vocab, corpus


def finite_difference_check(model, batch, per_tensor=40, eps=1e-4, seed=0):
    """Relative error between backprop and central differences on sampled coordinates."""
    model.zero_grad()
    model.loss(batch).backward()
    rng = random.Random(seed)
    analytic, numeric = [], []
    with torch.no_grad():
        for name, p in model.named_parameters():
            flat = p.view(-1)
            grad = p.grad.view(-1)
            for i in rng.sample(range(flat.numel()), min(per_tensor, flat.numel())):
                old = flat[i].item()
                flat[i] = old + eps
                up = model.loss(batch).item()
                flat[i] = old - eps
                down = model.loss(batch).item()
                flat[i] = old
                analytic.append(grad[i].item())
                numeric.append((up - down) / (2 * eps))
    a, n = torch.tensor(analytic), torch.tensor(numeric)
    return ((a - n).norm() / max(a.norm(), n.norm())).item(), len(analytic)


def batch_of(examples, vocab):
    return collate(examples, vocab)


@pytest.fixture(autouse=True)
def _seed():
    random.seed(0)
    np.random.seed(0)


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line[1])
