"""CLI surface: subcommands, file outputs, determinism, exit codes."""

import os
from fractions import Fraction

import pytest

from ncfp.cli import main
from ncfp.gnn import init_params, save_checkpoint
from ncfp.ludb import analyze
from ncfp.netmodel import overlap_tandem, parse, serialize
from ncfp.reports import read_metrics, read_timings


@pytest.fixture()
def dataset(tmp_path):
    d = tmp_path / "ds"
    rc = main([
        "generate", "--out", str(d), "--count", "2", "--seed", "3",
        "--topology", "tandem", "--servers", "5,6", "--flows", "4,5", "--path-len", "2,4",
    ])
    assert rc == 0
    return d


def test_generate_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        rc = main(["generate", "--out", str(d), "--count", "2", "--seed", "7",
                   "--topology", "tandem", "--servers", "5,5", "--flows", "4,4", "--path-len", "2,4"])
        assert rc == 0
    for name in sorted(os.listdir(a)):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_generate_impossible_range_exits_nonzero(tmp_path):
    rc = main(["generate", "--out", str(tmp_path / "x"), "--count", "1", "--seed", "1",
               "--topology", "tandem", "--servers", "3,3", "--flows", "2,2", "--path-len", "9,9"])
    assert rc == 1


def test_analyze_plain_and_reproducible(dataset, tmp_path):
    out = tmp_path / "plain.tsv"
    rc = main(["analyze", "--in", str(dataset), "--out", str(out), "--method", "ludb-ff"])
    assert rc == 0
    first = out.read_bytes()
    records = read_metrics(out)
    assert all(r.success for r in records)
    assert all(r.gap == 0.0 for r in records)  # self-referential gap
    rc = main(["analyze", "--in", str(dataset), "--out", str(out), "--method", "ludb-ff"])
    assert rc == 0
    assert out.read_bytes() == first  # timings live in the sidecar
    timings = read_timings(str(out) + ".timing")
    assert len(timings) == len(records)
    assert all(t >= 0 for t in timings.values())


def test_analyze_exhaustive_counts_alternatives(tmp_path):
    net_file = tmp_path / "net.txt"
    net_file.write_text(serialize(overlap_tandem()))
    out = tmp_path / "fp.tsv"
    rc = main(["analyze", "--in", str(net_file), "--out", str(out),
               "--method", "fp-exhaustive", "--foi", "foi"])
    assert rc == 0
    (rec,) = read_metrics(out)
    assert rec.explored == 12
    assert rec.gap is not None and rec.gap > 0


def test_analyze_deepfp_requires_checkpoint(dataset, tmp_path):
    rc = main(["analyze", "--in", str(dataset), "--out", str(tmp_path / "x.tsv"),
               "--method", "deepfp"])
    assert rc == 1


def test_analyze_deepfp_with_checkpoint(dataset, tmp_path):
    ckpt = tmp_path / "m.ckpt"
    save_checkpoint(ckpt, init_params(hidden=8, seed=1))
    out = tmp_path / "deep.tsv"
    rc = main(["analyze", "--in", str(dataset), "--out", str(out),
               "--method", "deepfp", "--k", "1", "--checkpoint", str(ckpt)])
    assert rc == 0
    records = read_metrics(out)
    assert all(r.explored == 1 for r in records if r.success)


def test_analyze_workers_preserve_order(dataset, tmp_path):
    seq = tmp_path / "seq.tsv"
    par = tmp_path / "par.tsv"
    assert main(["analyze", "--in", str(dataset), "--out", str(seq), "--method", "ludb-ff"]) == 0
    assert main(["analyze", "--in", str(dataset), "--out", str(par), "--method", "ludb-ff",
                 "--workers", "2"]) == 0
    assert seq.read_bytes() == par.read_bytes()


def test_analyze_timeout_marks_failures(dataset, tmp_path):
    out = tmp_path / "t.tsv"
    rc = main(["analyze", "--in", str(dataset), "--out", str(out),
               "--method", "fp-exhaustive", "--timeout-s", "0.000001"])
    assert rc == 2
    records = read_metrics(out)
    assert any(not r.success for r in records)


def test_evaluate_report_and_figures(dataset, tmp_path):
    plain = tmp_path / "plain.tsv"
    hfp = tmp_path / "hfp.tsv"
    assert main(["analyze", "--in", str(dataset), "--out", str(plain), "--method", "ludb-ff"]) == 0
    assert main(["analyze", "--in", str(dataset), "--out", str(hfp), "--method", "fp-heuristic"]) == 0
    rep = tmp_path / "report"
    rc = main(["evaluate", "--in", str(plain), str(hfp), "--out", str(rep)])
    assert rc == 0
    assert (rep / "report.txt").exists()
    assert (rep / "gap_cdf.tsv").exists()
    assert (rep / "gap_by_method.png").exists()
    assert (rep / "gap_cdf.png").exists()
    text = (rep / "report.txt").read_text()
    assert "common success subset" in text
    assert "ludb-ff" in text and "fp-heuristic" in text


def test_gap_arithmetic_example():
    # the headline aggregate form: (10 - 8.79) / 10
    assert abs((10 - 8.79) / 10 - 0.121) < 1e-12


def test_train_and_importance_roundtrip(dataset, tmp_path):
    ckpt = tmp_path / "model.ckpt"
    log = tmp_path / "train.log"
    rc = main(["train", "--in", str(dataset), "--checkpoint", str(ckpt),
               "--log", str(log), "--episodes", "4", "--hidden", "8", "--seed", "0"])
    assert rc == 0
    assert ckpt.exists() and log.exists()
    imp = tmp_path / "imp"
    rc = main(["importance", "--in", str(dataset), "--checkpoint", str(ckpt),
               "--out", str(imp), "--count", "4"])
    assert rc == 0
    assert (imp / "importance.tsv").exists()
    assert (imp / "importance.png").exists()
    lines = (imp / "importance.tsv").read_text().strip().split("\n")
    assert len(lines) == 14  # header + 13 features


def test_dump_lp_and_alternatives(tmp_path):
    net_file = tmp_path / "net.txt"
    net_file.write_text(serialize(overlap_tandem()))
    out = tmp_path / "m.tsv"
    lpdir = tmp_path / "lps"
    altdir = tmp_path / "alts"
    rc = main(["analyze", "--in", str(net_file), "--out", str(out), "--method", "ludb-ff",
               "--foi", "foi", "--dump-lp", str(lpdir), "--dump-alts", str(altdir)])
    assert rc == 0
    lp_files = sorted(os.listdir(lpdir))
    assert any("foi" in f for f in lp_files)
    content = (lpdir / [f for f in lp_files if ".foi." in f][0]).read_text()
    assert "min " in content and ">= 0" in content
    alts = (altdir / "net.txt.foi.alts").read_text().strip().split("\n")
    assert len(alts) == 12


def test_theta_grid_flag_never_loosens(tmp_path):
    net_file = tmp_path / "net.txt"
    net_file.write_text(serialize(overlap_tandem()))
    base = tmp_path / "a.tsv"
    refined = tmp_path / "b.tsv"
    assert main(["analyze", "--in", str(net_file), "--out", str(base),
                 "--method", "ludb-ff", "--foi", "foi"]) == 0
    assert main(["analyze", "--in", str(net_file), "--out", str(refined),
                 "--method", "ludb-ff", "--foi", "foi", "--theta-grid", "4"]) == 0
    (a,) = read_metrics(base)
    (b,) = read_metrics(refined)
    assert b.delay_bound <= a.delay_bound
