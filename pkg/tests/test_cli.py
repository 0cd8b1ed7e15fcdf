import hashlib
import os

import pytest

from ridgediff.cli import run

TINY = """
corpus.n_ids = 3
corpus.n_impr = 2
corpus.side = 32
preprocess.output_side = 32
preprocess.min_quality = 0
diffusion.T = 20
diffusion.branch_d = 5
diffusion.branch_k = 2
denoiser.init_features = 4
denoiser.depth = 1
denoiser.time_embed_dim = 8
train.batch_size = 2
train.steps = 3
train.checkpoint_every = 2
sample.count = 2
sample.batch = 4
minutiae.border_margin = 2
"""


def digest(root):
    h = hashlib.sha256()
    for dirpath, dirnames, files in sorted(os.walk(root)):
        dirnames.sort()
        for name in sorted(files):
            path = os.path.join(dirpath, name)
            h.update(os.path.relpath(path, root).encode())
            with open(path, "rb") as fh:
                h.update(fh.read())
    return h.hexdigest()


def flow(tmp_path, out_name, seed=7):
    conf = tmp_path / "tiny.conf"
    conf.write_text(TINY)
    out = str(tmp_path / out_name)
    common = ["--config", str(conf), "--seed", str(seed), "--out", out]
    steps = [
        ["synth-corpus"],
        ["preprocess", "--input", f"{out}/corpus", "--variant", "fp"],
        ["train", "--input", f"{out}/preprocessed/fp"],
        ["sample"],
        ["impress", "--identities", "2"],
        ["extract", "--input", f"{out}/impressions"],
        ["match", "--input", f"{out}/templates"],
        ["evaluate", "--input", f"{out}/impressions", "--reference", f"{out}/preprocessed/fp"],
    ]
    for argv in steps:
        assert run(argv[:1] + common + argv[1:]) == 0, argv
    return out


def test_no_arguments_is_usage_error(capsys):
    assert run([]) == 2
    assert "usage" in capsys.readouterr().err


def test_bad_subcommand_and_flags():
    assert run(["launch"]) == 2
    assert run(["sample", "--count", "many"]) == 2
    assert run(["preprocess"]) == 2  # --input is required
    assert run(["sample", "--seed", "-1"]) == 2


def test_help_exits_zero():
    assert run(["--help"]) == 0


def test_domain_error_exit_code(tmp_path, capsys):
    assert run(["extract", "--input", str(tmp_path / "missing"), "--out", str(tmp_path)]) == 1
    assert "IoFailure" in capsys.readouterr().err
    bad = tmp_path / "bad.conf"
    bad.write_text("foo\n")
    assert run(["synth-corpus", "--config", str(bad), "--out", str(tmp_path)]) == 1
    assert "ParseError" in capsys.readouterr().err
    assert run(["sample", "--out", str(tmp_path)]) == 1


def test_end_to_end_flow_and_determinism(tmp_path):
    out = flow(tmp_path, "a")
    expected = [
        "corpus/manifest.tsv",
        "preprocessed/fp/manifest.tsv",
        "model/checkpoint.dfck",
        "model/loss.csv",
        "samples/sample_0000.pgm",
        "samples/sample_0001.pgm",
        "impressions/id1_impr1.pgm",
        "impressions/manifest.tsv",
        "templates/id0_impr0.txt",
        "scores.csv",
        "report/quality.csv",
        "report/summary.txt",
        "report/diversity_histogram.csv",
        "report/diversity_histogram.svg",
        "report/impression_cdf.csv",
        "report/impression_cdf.svg",
    ]
    for rel in expected:
        assert os.path.exists(os.path.join(out, rel)), rel
    assert len(open(os.path.join(out, "model/loss.csv")).read().splitlines()) == 4
    assert len(open(os.path.join(out, "scores.csv")).read().splitlines()) == 1 + 6
    summary = open(os.path.join(out, "report/summary.txt")).read()
    assert "frechet_distance" in summary and "quality_mean" in summary

    again = flow(tmp_path, "b")
    assert digest(out) == digest(again)
    assert digest(os.path.join(out, "samples")) != digest(os.path.join(flow(tmp_path, "c", seed=8), "samples"))


def test_sample_count_flag(tmp_path):
    out = flow(tmp_path, "a")
    assert run(["sample", "--out", out, "--count", "3", "--config", str(tmp_path / "tiny.conf")]) == 0
    assert len(os.listdir(os.path.join(out, "samples"))) == 3
