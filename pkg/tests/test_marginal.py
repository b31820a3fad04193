import math
import random

import pytest
import torch

from conftest import random_lattice, tiny_model
from lccn import diffcore
from lccn.decoder import EOS
from lccn.lattice import Token, build_lattice
from lccn.marginal import (
    brute_force_marginal, forward_marginal, forward_table, log_marginals, nll_loss, segmentation_log_prob,
    segmentations,
)


class TableScorer:
    """Conditional with fixed probabilities; unseen outputs get a small default."""

    def __init__(self, probs, default=1e-3):
        self.probs = probs
        self.default = default

    def log_prob(self, o):
        return torch.tensor(math.log(self.probs.get(o, self.default)), dtype=torch.float64)


def beijing():
    text = "在北京"
    return build_lattice(text, [Token.from_text(text, 2, 3)], r=2)


def test_worked_example():
    dists = [TableScorer({"北": 0.3, "北京": 0.5}), TableScorer({"京": 0.6}), TableScorer({EOS: 0.4})]
    lp = forward_marginal("北京", dists, beijing())
    assert math.exp(lp.item()) == pytest.approx(0.272, abs=1e-12)
    assert brute_force_marginal("北京", dists, beijing()).item() == pytest.approx(lp.item(), abs=1e-12)


def test_no_word_match_single_path():
    lat = build_lattice("xyz", [Token.from_text("xyz", 1, 2)], r=2)
    dists = [TableScorer({"a": 0.2}), TableScorer({"b": 0.5}), TableScorer({EOS: 0.1})]
    assert segmentations("ab", lat) == [["a", "b"]]
    assert forward_marginal("ab", dists, lat).item() == pytest.approx(math.log(0.2 * 0.5 * 0.1))


def test_abab_has_four_paths():
    lat = build_lattice("abab", [Token.from_text("abab", 1, 2), Token.from_text("abab", 3, 4)], r=2)
    assert len(segmentations("abab", lat)) == 4


def test_monotone_in_word_set(rng):
    probs = {c: 0.1 for c in "abc"} | {"ab": 0.2, "bc": 0.15, "abc": 0.05, EOS: 0.3}
    dists = [TableScorer(probs)] * 8
    for _ in range(30):
        y = "".join(rng.choice("abc") for _ in range(rng.randint(1, 7)))
        src = "abcabc"
        fewer = build_lattice(src, [Token.from_text(src, 1, 2)], r=2)
        more = build_lattice(src, [Token.from_text(src, 1, 2), Token.from_text(src, 2, 3),
                                   Token.from_text(src, 4, 6)], r=2)
        assert forward_marginal(y, dists, more).item() >= forward_marginal(y, dists, fewer).item() - 1e-12


def test_dp_matches_brute_force_with_model(rng):
    model = tiny_model(alphabet="abcdefghij")
    for _ in range(40):
        lat = random_lattice(rng, alphabet="abcd")
        y = "".join(rng.choice("abcdk") for _ in range(rng.randint(1, 8)))
        with torch.no_grad():
            dists = model.distributions(lat, y)
        f = forward_marginal(y, dists, lat).item()
        assert abs(f - brute_force_marginal(y, dists, lat).item()) < 1e-9
        for seg in segmentations(y, lat):
            assert segmentation_log_prob(seg, dists).item() <= f + 1e-12


def test_forward_table_starts_at_zero():
    model = tiny_model()
    lat = random_lattice(random.Random(0))
    with torch.no_grad():
        alpha = forward_table("abc", model.distributions(lat, "abc"), lat)
    assert alpha[0].item() == 0 and len(alpha) == 4
    assert all(a.item() <= 1e-12 for a in alpha)


def test_too_few_conditionals():
    with pytest.raises(ValueError):
        forward_table("abc", [TableScorer({})] * 2, beijing())


class TestBatched:
    def test_matches_reference_recursion(self, rng):
        model = tiny_model(alphabet="abcdefg")
        lats = [random_lattice(rng, alphabet="abcd") for _ in range(6)]
        ys = ["".join(rng.choice("abcdz") for _ in range(rng.randint(1, 8))) for _ in lats]
        with torch.no_grad():
            batched = log_marginals(model, lats, ys)
            for b, (lat, y) in enumerate(zip(lats, ys)):
                ref = forward_marginal(y, model.distributions(lat, y), lat)
                assert batched[b].item() == pytest.approx(ref.item(), abs=1e-9)

    def test_single_item_loss(self):
        model = tiny_model()
        lat = random_lattice(random.Random(5))
        with torch.no_grad():
            ref = forward_marginal("abca", model.distributions(lat, "abca"), lat)
            assert nll_loss(model, [lat], ["abca"]).item() == pytest.approx(-ref.item(), abs=1e-12)

    def test_duplicated_batch_same_mean(self, rng):
        model = tiny_model()
        lats = [random_lattice(rng) for _ in range(3)]
        ys = ["abc", "dd", "abcdab"]
        with torch.no_grad():
            one = nll_loss(model, lats, ys).item()
            two = nll_loss(model, lats * 2, ys * 2).item()
        assert one >= 0 and two == pytest.approx(one, abs=1e-12)

    def test_oov_summary_characters(self):
        model = tiny_model(alphabet="ab")
        lat = build_lattice("abq", [Token.from_text("abq", 1, 2)], r=2)
        with torch.no_grad():
            # 'q' is copyable but out of vocabulary, 'z' is neither
            ref = forward_marginal("aqz", model.distributions(lat, "aqz"), lat)
            assert log_marginals(model, [lat], ["aqz"])[0].item() == pytest.approx(ref.item(), abs=1e-9)

    def test_gradient(self):
        model = tiny_model()
        rng = random.Random(2)
        lats = [random_lattice(rng) for _ in range(2)]
        results = diffcore.finite_difference_check(
            lambda: nll_loss(model, lats, ["abcd", "bad"]), dict(model.named_parameters()), 30
        )
        assert max(r[-1] for r in results) < 1e-4
