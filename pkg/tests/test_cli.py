import subprocess
import sys

import pytest
import torch

from conftest import tiny_model
from lccn.cli import EXIT_CHECK, EXIT_DATA, EXIT_OK, EXIT_USAGE, RunConfig, UsageError, main
from lccn.lattice import build_lattice


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_gradcheck_passes(capsys):
    code, out, err = run(capsys, "gradcheck", "--seed", 7)
    assert code == EXIT_OK and out.startswith("PASS max_rel_err=")
    assert "seed=7" in err


def test_gradcheck_failure_exit_code(capsys):
    code, out, _ = run(capsys, "gradcheck", "--samples", 5, "--tol", 0)
    assert code == EXIT_CHECK and out.startswith("FAIL")


def test_evaluate_identical(tmp_path, capsys):
    (tmp_path / "c.txt").write_text("abc\nxyz\n", encoding="utf-8")
    code, out, _ = run(capsys, "evaluate", "--cand", tmp_path / "c.txt", "--ref", tmp_path / "c.txt",
                       "--out", tmp_path / "r.tsv")
    assert code == EXIT_OK and "rouge-1\t1.000000" in out
    assert (tmp_path / "r.json").exists()


def test_evaluate_length_mismatch(tmp_path, capsys):
    (tmp_path / "a.txt").write_text("abc\n", encoding="utf-8")
    (tmp_path / "b.txt").write_text("abc\nd\n", encoding="utf-8")
    assert run(capsys, "evaluate", "--cand", tmp_path / "a.txt", "--ref", tmp_path / "b.txt")[0] == EXIT_DATA


def test_summarize_greedy_characters(tmp_path, capsys):
    model = tiny_model(alphabet="abcd", r=8)
    model.save(tmp_path / "m")
    (tmp_path / "src.txt").write_text("abcab\ndca\n", encoding="utf-8")
    code, out, _ = run(capsys, "summarize", "--model", tmp_path / "m", "--data", tmp_path / "src.txt",
                       "--beam", 1, "--no-words", "--set", "max_len=6")
    assert code == EXIT_OK
    for src, got in zip(["abcab", "dca"], out.splitlines()):
        lat = build_lattice(src, r=8)
        chars = ""
        with torch.no_grad():
            for _ in range(6):
                lps = model.distributions(lat, chars)[-1].log_probs(include_unk=False)
                o = max(lps, key=lambda k: lps[k])
                if not isinstance(o, str):
                    break
                chars += o
        assert got == chars


def test_synth_is_seeded(tmp_path, capsys):
    for d in ("a", "b"):
        assert run(capsys, "synth", "--out", tmp_path / d, "--seed", 4, "--set", "n_pairs=30", "--n-test", 5)[0] == 0
    for name in ("train.tsv", "test.tsv", "train.keywords.tsv", "dict0.txt", "dict1.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    run(capsys, "synth", "--out", tmp_path / "c", "--seed", 5, "--set", "n_pairs=30")
    assert (tmp_path / "a" / "train.tsv").read_bytes() != (tmp_path / "c" / "train.tsv").read_bytes()


def test_train_and_select_pipeline(tmp_path, capsys):
    run(capsys, "synth", "--out", tmp_path, "--set", "n_pairs=24", "--n-test", 4)
    dicts = ["--dict", tmp_path / "dict0.txt", "--dict", tmp_path / "dict1.txt"]
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# tiny run\nepochs=1\nbatch_size=8\nwarmup=10\n", encoding="utf-8")
    code, out, err = run(capsys, "train", "--data", tmp_path / "train.tsv", "--dev", tmp_path / "test.tsv",
                         *dicts, "--out", tmp_path / "model", "--config", cfg)
    assert code == EXIT_OK and "dev_nll=" in out and "epochs=1" in err
    assert (tmp_path / "model" / "params.ckpt").exists() and (tmp_path / "model" / "dict1.txt").exists()

    code, out, _ = run(capsys, "train-selector", "--data", tmp_path / "train.tsv",
                       "--gold", tmp_path / "train.keywords.tsv", *dicts, "--out", tmp_path / "sel",
                       "--set", "selector_epochs=1")
    assert code == EXIT_OK
    code, out, _ = run(capsys, "select-keywords", "--selector", tmp_path / "sel", "--data", tmp_path / "test.tsv",
                       "--set", "keyword_n=3")
    assert code == EXIT_OK and len(out.splitlines()) <= 12
    code, out, _ = run(capsys, "summarize", "--model", tmp_path / "model", "--data", tmp_path / "test.tsv",
                       "--keywords", tmp_path / "sel", "--beam", 2, "--set", "max_len=5")
    assert code == EXIT_OK and len(out.splitlines()) == 4


def test_lattice_dump(capsys, tmp_path):
    (tmp_path / "d.txt").write_text("ab\n", encoding="utf-8")
    code, out, _ = run(capsys, "lattice", "abab", "--dict", tmp_path / "d.txt", "--set", "r=2")
    lines = out.splitlines()
    assert code == EXIT_OK and lines[1] == "1\t2\tword\tab" and len(lines) == 6 + 1 + 6


@pytest.mark.parametrize("argv,code", [
    (["nonsense"], EXIT_USAGE),
    (["gradcheck", "--set", "bogus=1"], EXIT_USAGE),
    (["gradcheck", "--set", "beam=x"], EXIT_USAGE),
    (["gradcheck", "--set", "mask_mode=soft"], EXIT_USAGE),
    (["train", "--data", "/no/such/file", "--out", "/tmp/x"], EXIT_DATA),
    (["gradcheck", "--config", "/no/such.cfg"], EXIT_DATA),
])
def test_exit_codes(capsys, argv, code):
    assert run(capsys, *argv)[0] == code


def test_malformed_corpus(tmp_path, capsys):
    (tmp_path / "bad.tsv").write_text("no tab\n", encoding="utf-8")
    code, _, err = run(capsys, "train", "--data", tmp_path / "bad.tsv", "--out", tmp_path / "m")
    assert code == EXIT_DATA and "bad.tsv:1" in err


def test_run_config_presets():
    with pytest.raises(UsageError):
        RunConfig(preset="huge")
    assert RunConfig().update({"lr_scale": "0.5"}).lr_scale == 0.5


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "lccn", "gradcheck", "--samples", "3"], capture_output=True, text=True)
    assert res.returncode == 0 and "PASS" in res.stdout
