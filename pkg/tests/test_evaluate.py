import json

import pytest

from lccn.evaluate import corpus_scores, duplicate_rate, lcs_length, rouge_l, rouge_n, write_report


def test_rouge1_hand_example():
    s = rouge_n("abc", "abd", 1)
    assert s.precision == s.recall == s.f1 == pytest.approx(2 / 3, abs=0)


def test_rougel_hand_example():
    s = rouge_l("abcd", "acd")
    assert (s.recall, s.precision) == (1.0, 0.75)
    assert s.f1 == pytest.approx(6 / 7, abs=1e-15)


def test_duplicate_rate_hand_example():
    assert duplicate_rate("abab", 2) == pytest.approx(2 / 3, abs=0)


def test_identical_and_disjoint():
    assert rouge_n("北京大学", "北京大学", 2).f1 == 1.0
    assert rouge_n("abc", "xyz", 1).f1 == 0.0


def test_empty_reference():
    assert rouge_l("abc", "").f1 == 0.0 and rouge_n("abc", "", 2).f1 == 0.0


def test_reversed_distinct():
    assert lcs_length("abcde", "edcba") == 1


def test_clipped_counts():
    assert rouge_n("aaaa", "a", 1).precision == 0.25


def test_recall_monotone_under_truncation():
    ref = "abcabd"
    cand = "abdcab"
    recalls = [rouge_n(cand[:i], ref, 1).recall for i in range(len(cand) + 1)]
    assert recalls == sorted(recalls)


def test_duplicate_conventions():
    assert duplicate_rate("abcd", 2) == 0.0
    assert duplicate_rate("a", 2) == 0.0
    assert duplicate_rate("abab", 2, distinct=True) == pytest.approx(1 / 3)


def test_corpus_scores_and_report(tmp_path):
    scores = corpus_scores(["abc", "abab"], ["abc", "ab"])
    assert scores["rouge-1"] == pytest.approx((1 + 2 / 3) / 2)
    assert set(scores) == {"rouge-1", "rouge-2", "rouge-l", "dup-1", "dup-2", "dup-3", "dup-4"}
    write_report(tmp_path / "r.tsv", scores)
    lines = (tmp_path / "r.tsv").read_text().splitlines()
    assert lines[0].startswith("rouge-1\t")
    assert json.loads((tmp_path / "r.json").read_text())["dup-2"] == scores["dup-2"]
    with pytest.raises(ValueError):
        corpus_scores(["a"], [])
