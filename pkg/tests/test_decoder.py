import math

import pytest
import torch

from conftest import random_lattice, tiny_model
from lccn import diffcore
from lccn.decoder import EOS, UNK, ExtendedDistribution, MaskMode, StepOutputs
from lccn.lattice import Token, build_lattice
from lccn.vocab import BOS_ID, EOS_ID, UNK_ID


def lattice(text="abcab", spans=((1, 2), (4, 5), (2, 4))):
    return build_lattice(text, [Token.from_text(text, a, b) for a, b in spans], r=2)


class TestDecoderStack:
    def test_causality(self):
        model = tiny_model(layers=2)
        mem = model.encode(lattice())
        with torch.no_grad():
            s1 = model.decode_states(["abcd"], mem)
            s2 = model.decode_states(["abdd"], mem)  # perturb y_3
        assert torch.equal(s1[0, :3], s2[0, :3])
        assert not torch.allclose(s1[0, 3], s2[0, 3])

    def test_incremental_equals_full(self):
        model = tiny_model(layers=2)
        mem = model.encode(lattice())
        y = "acbda"
        with torch.no_grad():
            full = model.decode_states([y], mem)[0]
            cache = None
            ids = [BOS_ID] + model.vocab.encode(y)
            for t, i in enumerate(ids):
                state, cache = model.decoder.step(cache, torch.tensor([i]), mem)
                assert (state[0] - full[t]).abs().max() < 1e-9

    def test_empty_prefix(self):
        model = tiny_model()
        with torch.no_grad():
            s = model.decode_states([""], model.encode(lattice()))
        assert s.shape == (1, 1, 16)

    def test_batched_prefixes_match_single(self):
        model = tiny_model()
        mem = model.encode(lattice())
        with torch.no_grad():
            both = model.decode_states(["ab", "cdab"], mem.expand(2))
            alone = model.decode_states(["ab"], mem)
        assert torch.allclose(both[0, :3], alone[0], atol=1e-12)


class TestCopyModule:
    def outputs(self, model, lat, y="ab", keep=None, mode=MaskMode.HARD):
        mem = model.encode(lat)
        return model.outputs(model.decode_states([y], mem), mem, keep, mode)

    def test_attention_normalized(self):
        out = self.outputs(tiny_model(), lattice())
        assert torch.allclose(out.log_attn.exp().sum(-1), torch.ones(1, 3, dtype=torch.float64), atol=1e-9)

    def test_hard_mask_drops_words(self):
        lat = lattice()
        keep = torch.tensor([[not t.is_word for t in lat.tokens]])
        out = self.outputs(tiny_model(), lat, keep=keep)
        a = out.log_attn.exp()[0]
        words = [i for i, t in enumerate(lat.tokens) if t.is_word]
        assert a[:, words].abs().max() == 0
        assert torch.allclose(a.sum(-1), torch.ones(3, dtype=torch.float64), atol=1e-9)

    def test_zero_mode_keeps_some_mass(self):
        lat = lattice()
        keep = torch.tensor([[not t.is_word for t in lat.tokens]])
        a = self.outputs(tiny_model(), lat, keep=keep, mode=MaskMode.ZERO).log_attn.exp()[0]
        assert a[:, [i for i, t in enumerate(lat.tokens) if t.is_word]].min() > 0

    def test_zero_mode_sets_logit_to_zero(self):
        model = tiny_model()
        lat = lattice()
        keep = torch.tensor([[not t.is_word for t in lat.tokens]])
        mem = model.encode(lat)
        states = model.decode_states(["a"], mem)
        cm = model.copy
        logits = cm.w_q(states) @ cm.w_k(mem.H).transpose(-1, -2) / math.sqrt(cm.d_model)
        logits[..., ~keep[0]] = 0.0
        expect = torch.log_softmax(logits, -1)
        got, _ = cm.attention(states, mem, keep, MaskMode.ZERO)
        assert torch.allclose(got, expect, atol=1e-12)

    def test_single_token_memory(self):
        model = tiny_model()
        lat = build_lattice("a", r=2)
        mem = model.encode(lat)
        states = model.decode_states(["b"], mem)
        log_a, ctx = model.copy.attention(states, mem)
        assert torch.all(log_a == 0)
        assert torch.allclose(ctx[0, 0], model.copy.w_v(mem.H)[0, 0], atol=1e-12)

    def test_zero_gate_is_half(self):
        model = tiny_model()
        with torch.no_grad():
            model.copy.gate.weight.zero_()
            model.copy.gate.bias.zero_()
        out = self.outputs(model, lattice())
        assert torch.allclose(out.log_pgen.exp(), torch.full((1, 3), 0.5, dtype=torch.float64))
        assert torch.allclose(out.log_pgen.exp() + out.log_pcopy.exp(), torch.ones(1, 3, dtype=torch.float64))

    def test_gate_gradient(self):
        model = tiny_model()
        mem = model.encode(lattice())
        states = model.decode_states(["abc"], mem).detach()
        ctx = model.copy.attention(states, mem)[1].detach()
        results = diffcore.finite_difference_check(
            lambda: model.copy.gates(states, ctx)[0].exp().sum(), dict(model.copy.gate.named_parameters()), 20
        )
        assert max(r[-1] for r in results) < 1e-4

    def test_generation_distribution(self):
        model = tiny_model()
        out = self.outputs(model, lattice())
        g = out.log_gen.exp()
        assert torch.allclose(g.sum(-1), torch.ones(1, 3, dtype=torch.float64), atol=1e-9)
        assert torch.all(g[..., BOS_ID] == 0)

    def test_zero_logits_uniform_over_emittable(self):
        model = tiny_model()
        with torch.no_grad():
            model.copy.gen_out.weight.zero_()
            model.copy.gen_out.bias.zero_()
        g = self.outputs(model, lattice()).log_gen.exp()[0, 0]
        n = len(model.vocab) - 1  # begin-of-sequence is never emitted
        expect = torch.full((len(model.vocab),), 1 / n, dtype=torch.float64)
        expect[BOS_ID] = 0
        assert torch.allclose(g, expect, atol=1e-12)

    def test_shift_invariance(self):
        model = tiny_model()
        base = self.outputs(model, lattice()).log_gen
        with torch.no_grad():
            model.copy.gen_out.bias += 3.7
        shifted = self.outputs(model, lattice()).log_gen
        assert torch.equal(base.argmax(-1), shifted.argmax(-1))
        assert torch.allclose(base, shifted, atol=1e-12)


def distribution(model, lat, y="", keep=None):
    with torch.no_grad():
        return model.distributions(lat, y, keep)[-1]


class TestExtendedDistribution:
    def test_normalized_random(self, rng):
        for seed in range(10):
            model = tiny_model(seed=seed)
            lat = random_lattice(rng, alphabet="abcdxy")
            y = "".join(rng.choice("abcdz") for _ in range(rng.randint(0, 5)))
            assert distribution(model, lat, y).total() == pytest.approx(1.0, abs=1e-9)

    def test_normalized_with_mask(self):
        lat = lattice()
        keep = torch.tensor([[not t.is_word or t.span.start == 1 for t in lat.tokens]])
        assert distribution(tiny_model(), lat, "a", keep).total() == pytest.approx(1.0, abs=1e-9)

    def test_word_probability_is_copy_only(self):
        text = "在北京住"
        lat = build_lattice(text, [Token.from_text(text, 2, 3)], r=2)
        model = tiny_model(alphabet="在北京住")
        d = distribution(model, lat)
        i = lat.indices_of("北京")[0]
        expect = d.log_pcopy.exp() * d.log_attn.exp()[i]
        assert d.prob("北京") == pytest.approx(expect.item(), rel=1e-12)

    def test_repeated_word_sums_spans(self):
        lat = lattice()
        d = distribution(tiny_model(), lat)
        idx = lat.indices_of("ab")
        assert len(idx) == 2
        manual = d.log_pcopy.exp() * sum(d.log_attn.exp()[i] for i in idx)
        assert d.prob("ab") == pytest.approx(manual.item(), rel=1e-12)

    def test_char_mixes_gen_and_copy(self):
        lat = lattice()
        model = tiny_model()
        d = distribution(model, lat)
        gen = d.log_pgen.exp() * d.log_gen.exp()[model.vocab.id("c")]
        copy = d.log_pcopy.exp() * d.log_attn.exp()[list(lat.indices_of("c"))].sum()
        assert d.prob("c") == pytest.approx((gen + copy).item(), rel=1e-12)
        # vocab char absent from the source: generation only
        assert d.prob("d") == pytest.approx((d.log_pgen.exp() * d.log_gen.exp()[model.vocab.id("d")]).item())

    def test_unknown_strings_fall_back_to_unk(self):
        d = distribution(tiny_model(), lattice())
        unk = (d.log_pgen + d.log_gen[UNK_ID]).exp().item()
        assert d.prob("zz") == pytest.approx(unk) and d.prob("z") == pytest.approx(unk)
        assert d.prob(UNK) == pytest.approx(unk)
        assert d.prob(EOS) == pytest.approx((d.log_pgen + d.log_gen[EOS_ID]).exp().item())

    def test_no_copy_reduces_to_generation(self):
        lat = lattice()
        model = tiny_model()
        d = distribution(model, lat)
        gen = d.log_gen.exp()
        d0 = ExtendedDistribution(torch.tensor(0.0, dtype=torch.float64), torch.tensor(-math.inf, dtype=torch.float64),
                                  d.log_gen, d.log_attn, lat, model.vocab)
        probs = {k: math.exp(v) for k, v in d0.log_probs().items()}
        assert probs["ab"] == 0
        for c in model.vocab.chars:
            assert probs[c] == pytest.approx(gen[model.vocab.id(c)].item(), rel=1e-12)
        assert d0.total() == pytest.approx(1.0, abs=1e-12)

    def test_log_probs_agree_with_log_prob(self):
        model = tiny_model()
        d = distribution(model, lattice(), "ca")
        for k, v in d.log_probs().items():
            assert v == pytest.approx(d.log_prob(k).item(), abs=1e-12)

    def test_support_keys(self):
        model = tiny_model(alphabet="ab")
        lat = lattice()
        keys = distribution(model, lat).support()
        assert keys[-2:] == [EOS, UNK]
        assert set(keys[:-2]) == {"a", "b", "c", "ab", "bca"}

    def test_end_to_end_gradient(self):
        model = tiny_model()
        lat = lattice()
        results = diffcore.finite_difference_check(
            lambda: -model.distributions(lat, "ab")[-1].log_prob("ab"), dict(model.named_parameters()), 40
        )
        assert max(r[-1] for r in results) < 1e-4


def test_step_outputs_shapes():
    model = tiny_model()
    lat = lattice()
    mem = model.encode(lat)
    out = model.outputs(model.decode_states(["abc"], mem), mem)
    assert isinstance(out, StepOutputs)
    assert out.log_attn.shape == (1, 4, len(lat)) and out.log_gen.shape == (1, 4, len(model.vocab))
