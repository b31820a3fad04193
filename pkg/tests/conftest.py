import itertools
import random

import pytest
import torch

from lccn import diffcore
from lccn.lattice import Span, Token, build_lattice
from lccn.marginal import forward_marginal, forward_table
from lccn.model import LCCN, ModelConfig
from lccn.vocab import CharVocab


def span_oracle(a, b, c, d, r):
    """Relative-position category computed from position sets rather than endpoints."""
    A, B = set(range(a, b + 1)), set(range(c, d + 1))
    if max(B) < min(A):
        return max(0, r - (min(A) - max(B)))
    if A == B:
        return r
    if max(A) < min(B):
        return min(2 * r, r + (min(B) - max(A)))
    if A < B:
        return 2 * r + 1
    if B < A:
        return 2 * r + 2
    return 2 * r + 3


def spans_upto(n):
    return [Span(a, b) for a in range(1, n + 1) for b in range(a, n + 1)]


def tiny_model(alphabet="abcd", d_model=16, layers=1, heads=2, r=2, seed=0, **kw) -> LCCN:
    diffcore.set_seed(seed)
    cfg = ModelConfig(d_model=d_model, heads=heads, enc_layers=layers, dec_layers=layers,
                      d_ff=2 * d_model, r=r, **kw)
    return LCCN(CharVocab(list(alphabet)), cfg).eval()


def random_lattice(rng: random.Random, alphabet="abcd", min_len=3, max_len=8, max_words=4, r=2):
    text = "".join(rng.choice(alphabet) for _ in range(rng.randint(min_len, max_len)))
    spans = set()
    for _ in range(rng.randint(0, max_words)):
        a = rng.randint(1, len(text) - 1)
        spans.add((a, rng.randint(a + 1, min(len(text), a + 3))))
    return build_lattice(text, [Token.from_text(text, a, b) for a, b in sorted(spans)], r=r)


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


def exhaustive_best(model, lat, L):
    """Best output by per-character average of the exact per-prefix marginal."""
    alphabet = sorted(set(model.vocab.chars) | set(lat.chars))
    scored = []
    for n in range(L + 1):
        for tup in itertools.product(alphabet, repeat=n):
            y = "".join(tup)
            with torch.no_grad():
                dists = model.distributions(lat, y)
                if n < L:
                    lp = forward_marginal(y, dists, lat).item()
                    scored.append((-(lp / (n + 1)), y, False, lp))
                else:
                    lp = forward_table(y, dists, lat)[-1].item()
                    scored.append((-(lp / n), y, True, lp))
    scored.sort()
    return scored[0]


def toy_instance(seed):
    rng = random.Random(seed)
    text = "".join(rng.choice("abcd") for _ in range(rng.randint(3, 5)))
    a = rng.randint(1, len(text) - 1)
    lat = build_lattice(text, [Token.from_text(text, a, a + 1)], r=2)
    return tiny_model(alphabet="abcd", seed=seed), lat


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
