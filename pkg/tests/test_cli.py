import json
import subprocess
import sys

import pytest

from zcpt.cli import main
from zcpt.data import SynthDatasetCfg, synth_dataset
from zcpt.proxies import compute_proxy_batched
from zcpt.scoring import CorrelationReport
from zcpt.spaces import chain_space, instantiate, parse_genotype

TOY_G = "|conv_3x3~0|+|skip~1|+|conv_1x1~2|+|conv_3x3~3|"
SMALL = ["--image-size", "4", "--samples-per-class", "16", "--width", "2", "--batch-size", "16"]


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def toy_bench_path():
    from importlib import resources
    with resources.as_file(resources.files("zcpt.assets").joinpath("toy_bench.jsonl")) as p:
        yield str(p)


def test_score_synflow_seed_independent(capsys):
    outs = [run(capsys, "score", "--space", "chain4k3", "--genotype", TOY_G, "--proxy", "synflow",
                "--seed", s) for s in ("1", "2")]
    assert outs[0][0] == outs[1][0] == 0
    assert outs[0][1] == outs[1][1]
    assert json.loads(outs[0][2])["seed"] == 1  # resolved config on stderr


def test_score_malformed_genotype(capsys):
    code, out, err = run(capsys, "score", "--space", "nb201", "--genotype", "|nope~0|",
                         "--proxy", "nwot", "--seed", "0")
    assert code == 2 and "error" in err and out == ""


def test_score_usage_errors(capsys):
    assert run(capsys, "score", "--space", "nb201", "--proxy", "nwot", "--seed", "0")[0] == 2
    with pytest.raises(SystemExit) as exc:
        main(["score", "--proxy", "nwot"])
    assert exc.value.code == 2


def test_score_nwot_matches_library(capsys):
    code, out, _ = run(capsys, "score", "--space", "chain4k3", "--genotype", TOY_G,
                       "--proxy", "nwot", "--seed", "3", *SMALL)
    data = synth_dataset(SynthDatasetCfg(image_size=4, samples_per_class=16))
    net = instantiate(parse_genotype(chain_space(4, ops=("skip", "conv_1x1", "conv_3x3")), TOY_G),
                      2, input_shape=data.input_shape)
    lib = compute_proxy_batched([net], "nwot", 3, data, 16)[0]
    assert code == 0 and out == json.dumps(lib.to_dict()) + "\n"


def test_score_degenerate_exit_one(capsys, monkeypatch):
    from zcpt import cli
    from zcpt.proxies import ProxyScore
    monkeypatch.setattr(cli, "compute_proxy_batched",
                        lambda nets, proxy, seed, data, bs: [ProxyScore(0.0, proxy, seed, True)])
    code, _, _ = run(capsys, "score", "--space", "chain4k3", "--supernet", "--proxy", "nwot",
                     "--seed", "0", *SMALL)
    assert code == 1


def test_search_single_proposal(capsys, tmp_path):
    out_path = tmp_path / "t.json"
    code, out, _ = run(capsys, "search", "--space", "nb201", "-N", "1", "-V", "0", "--seed", "0",
                       "--out", str(out_path), *SMALL)
    trace = json.loads(out_path.read_text())
    assert code == 0 and out.strip() == trace["winner"] == trace["proposals"][0]["genotype"]
    assert trace["evaluations"] == 30


def test_search_twice_identical(capsys, tmp_path):
    args = ["search", "--space", "chain4k3", "-N", "3", "-V", "5", "--seed", "9", *SMALL]
    a = run(capsys, *args, "--out", str(tmp_path / "a.json"))
    b = run(capsys, *args, "--out", str(tmp_path / "b.json"))
    assert a == b
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_search_aborted_exit_one(capsys, monkeypatch):
    from zcpt import scoring
    from zcpt.proxies import ProxyScore
    monkeypatch.setattr(scoring, "compute_proxy_batched",
                        lambda nets, proxy, seed, data=None, batch_size=32:
                        [ProxyScore(0.0, proxy, seed, True) for _ in nets])
    code, _, err = run(capsys, "search", "--space", "chain2", "-N", "1", "-V", "0", "--seed", "0",
                       *SMALL)
    assert code == 1 and "aborted" in err


def test_search_jobs_env_does_not_change_result(capsys, monkeypatch, tmp_path):
    args = ["search", "--space", "chain3", "-N", "2", "-V", "2", "--seed", "1", *SMALL]
    base = run(capsys, *args)[1]
    monkeypatch.setenv("ZCPT_JOBS", "2")
    code, out, err = run(capsys, *args)
    assert code == 0 and out == base and json.loads(err)["jobs"] == 2


def test_analyze_self_pair(capsys, toy_bench_path):
    code, out, _ = run(capsys, "analyze", "--bench", toy_bench_path, "--space", "chain4k3",
                       "--policies", "best-acc", "--seeds", "0")
    rep = CorrelationReport.from_csv(out)
    assert code == 0 and rep.records and all(r.rho == 1.0 for r in rep.records)


def test_analyze_fixture_pinned(capsys):
    code, out, _ = run(capsys, "analyze", "--fixture")
    rep = CorrelationReport.from_csv(out)
    assert code == 0
    assert rep.edge_mean("zc-pt", "best-acc") == pytest.approx(23 / 30, abs=1e-12)
    assert rep.edge_mean("disc-zc", "best-acc") == pytest.approx(1 / 10, abs=1e-12)


def test_analyze_incomplete_bench_exit_two(capsys, tmp_path, toy_bench_path):
    lines = open(toy_bench_path).read().splitlines()[:10]
    p = tmp_path / "partial.jsonl"
    p.write_text("\n".join(lines) + "\n")
    code, _, err = run(capsys, "analyze", "--bench", str(p), "--space", "chain4k3")
    assert code == 2 and "missing" in err


def test_analyze_progressive_zc(capsys, toy_bench_path, tmp_path):
    out_csv = tmp_path / "p.csv"
    code, _, _ = run(capsys, "analyze", "--bench", toy_bench_path, "--mode", "progressive",
                     "--policies", "zc-pt", "--seeds", "0", "--data-config", "toy",
                     "--out", str(out_csv))
    rep = CorrelationReport.from_csv(out_csv.read_text())
    assert code == 0 and rep.iterations() == [0, 1, 2, 3]


def test_benchgen_toy_row_count(capsys, tmp_path):
    p = tmp_path / "b.jsonl"
    code, out, _ = run(capsys, "benchgen", "--out", str(p), "--epochs", "0", "--train-seeds", "0",
                       "--proxies", "", "--image-size", "4", "--samples-per-class", "8")
    assert code == 0 and len(p.read_text().splitlines()) == 81


def test_benchgen_limit_and_bad_proxy(capsys, tmp_path):
    p = tmp_path / "b.jsonl"
    assert run(capsys, "benchgen", "--out", str(p), "--limit", "2", "--epochs", "1",
               "--image-size", "4", "--samples-per-class", "8", "--proxies", "nwot,synflow")[0] == 0
    rows = [json.loads(x) for x in p.read_text().splitlines()]
    assert len(rows) == 2 and set(rows[0]["proxy"]) == {"nwot", "synflow"}
    assert run(capsys, "benchgen", "--out", str(p), "--proxies", "magic")[0] == 2


def test_report_table(capsys, toy_bench_path, tmp_path):
    trace = tmp_path / "t.json"
    run(capsys, "search", "--space", "chain4k3", "-N", "2", "-V", "3", "--seed", "0",
        "--data-config", "toy", "--out", str(trace))
    code, out, _ = run(capsys, "report", "--bench", toy_bench_path, "--greedy", "best-acc",
                       "--seeds", "0", "--trace", f"zcpt={trace}")
    lines = out.splitlines()
    assert code == 0 and lines[0] == "method,avg_error,rank"
    assert lines[1].startswith("best-acc,") and lines[1].endswith(",1.00")
    assert lines[2].startswith("zcpt,") and lines[3].startswith("random (expected),")


def test_data_config_file(capsys, tmp_path):
    cfg = tmp_path / "d.json"
    cfg.write_text(json.dumps({"image_size": 4, "samples_per_class": 8}))
    code, _, err = run(capsys, "score", "--space", "chain2", "--supernet", "--proxy", "nwot",
                       "--seed", "0", "--data-config", str(cfg), "--width", "2")
    assert code == 0 and json.loads(err)["data"]["image_size"] == 4
    cfg.write_text(json.dumps({"colour": 1}))
    assert run(capsys, "score", "--space", "chain2", "--supernet", "--proxy", "nwot",
               "--seed", "0", "--data-config", str(cfg))[0] == 2


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "zcpt.cli", "score", "--space", "chain2",
                          "--supernet", "--proxy", "synflow", "--seed", "0", "--width", "2",
                          "--image-size", "4"], capture_output=True, text=True)
    assert res.returncode == 0 and json.loads(res.stdout)["proxy"] == "synflow"
