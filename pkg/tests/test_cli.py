import json
import subprocess
from collections import Counter
import sys

import numpy as np
import pytest

from ordernet import cli
from ordernet.data import OrderingExample, read_jsonl, write_jsonl
from ordernet.model import ModelConfig
from ordernet.trainer import TrainConfig, train
from ordernet.tsp import TspInstance, canonicalize_tour, held_karp, tour_length
from ordernet.wordorder import SyntheticGrammar, write_embeddings

TINY = ["--encoder-layer1-depth", "8", "--encoder-layer2-depth", "4", "--decoder-blocks", "1",
        "--decoder-block-depth", "8"]


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def tsp_model(tmp_path_factory):
    root = tmp_path_factory.mktemp("tsp")
    assert cli.main(["gen-tsp", "--n-min", "5", "--n-max", "6", "--count-per-n", "20", "--out", str(root / "d.jsonl")]) == 0
    assert cli.main(["train", "--data", str(root / "d.jsonl"), "--out", str(root / "m.onet"), "--epochs", "1",
                     "--batch-size", "16", *TINY]) == 0
    return root


# -- gen-tsp ----------------------------------------------------------------------


def test_gen_tsp_counts(tmp_path, capsys):
    code, out, err = run(capsys, "gen-tsp", "--n-min", 5, "--n-max", 7, "--count-per-n", 10, "--seed", 3,
                         "--out", tmp_path / "d.jsonl")
    assert code == 0
    assert json.loads(out)["records"] == 30
    assert "resolved config:" in err and "seed: 3" in err
    data = read_jsonl(tmp_path / "d.jsonl")
    assert Counter(ex.n for ex in data) == {5: 10, 6: 10, 7: 10}
    for ex in data:
        inst = TspInstance(ex.x)
        np.testing.assert_array_equal(canonicalize_tour(inst, ex.y), ex.y)
        assert tour_length(inst, ex.y) == pytest.approx(held_karp(inst).length, abs=1e-12)


def test_gen_tsp_byte_identical(tmp_path, capsys, monkeypatch):
    args = ["gen-tsp", "--n-min", 4, "--n-max", 8, "--count-per-n", 7, "--seed", 11]
    assert run(capsys, *args, "--out", tmp_path / "a.jsonl")[0] == 0
    monkeypatch.setenv("ORDERNET_THREADS", "3")
    assert run(capsys, *args, "--out", tmp_path / "b.jsonl")[0] == 0
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_gen_tsp_cap_is_usage_error(tmp_path, capsys):
    code, _, err = run(capsys, "gen-tsp", "--n-min", 5, "--n-max", 25, "--count-per-n", 1, "--out", tmp_path / "d")
    assert code == 2
    assert "christofides" in err
    assert not (tmp_path / "d").exists()


def test_gen_tsp_christofides_beyond_cap(tmp_path, capsys):
    code, _, _ = run(capsys, "gen-tsp", "--n-min", 30, "--n-max", 30, "--count-per-n", 2, "--solver", "christofides",
                     "--out", tmp_path / "d.jsonl")
    assert code == 0
    assert [ex.meta["solver"] for ex in read_jsonl(tmp_path / "d.jsonl")] == ["christofides"] * 2


# -- config files and usage -------------------------------------------------------


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "gen.cfg"
    cfg.write_text("# desk run\nn-min = 5\nn_max = 6\ncount-per-n = 3\nseed = 2\nout = %s\n" % (tmp_path / "f.jsonl"))
    code, out, err = run(capsys, "gen-tsp", "--config", cfg)
    assert code == 0 and json.loads(out)["records"] == 6
    assert '"n_max": 6' in err
    code, out, err = run(capsys, "gen-tsp", "--config", cfg, "--n-max", 7, "--out", tmp_path / "g.jsonl")
    assert code == 0 and json.loads(out)["records"] == 9
    assert not (tmp_path / "g.jsonl").read_bytes() == (tmp_path / "f.jsonl").read_bytes()


def test_config_file_errors(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("n-mni = 5\n")
    assert run(capsys, "gen-tsp", "--config", bad, "--out", tmp_path / "x")[0] == 2
    bad.write_text("solver = dijkstra\n")
    assert run(capsys, "gen-tsp", "--config", bad, "--out", tmp_path / "x")[0] == 2
    assert run(capsys, "gen-tsp", "--config", tmp_path / "missing.cfg", "--out", tmp_path / "x")[0] == 3


def test_usage_errors(capsys):
    assert run(capsys, "gen-tsp", "--bogus", "1", "--out", "x")[0] == 2
    assert run(capsys)[0] == 2
    assert run(capsys, "check")[0] == 2
    assert run(capsys, "gen-tsp", "--count-per-n", "0", "--out", "x")[0] == 2
    assert run(capsys, "--help")[0] == 0


# -- solve / check ----------------------------------------------------------------


def test_solve(tmp_path, capsys):
    pts = tmp_path / "p.json"
    pts.write_text(json.dumps([[0, 0], [1, 0], [1, 1], [0, 1]]))
    for solver in ("held-karp", "brute", "christofides", "nearest-neighbor"):
        code, out, _ = run(capsys, "solve", "--solver", solver, "--points", pts, "--canonical")
        assert code == 0
        rec = json.loads(out)
        assert rec["length"] == pytest.approx(4.0)
        assert rec["order"][0] == 0
    code, out, _ = run(capsys, "solve", "--n", 8, "--seed", 4)
    assert code == 0 and sorted(json.loads(out)["order"]) == list(range(8))
    assert run(capsys, "solve")[0] == 2
    assert run(capsys, "solve", "--n", 11, "--solver", "brute")[0] == 2
    assert run(capsys, "solve", "--solver", "model", "--n", 5)[0] == 2
    pts.write_text(json.dumps([[0, 0], [2, 0]]))
    assert run(capsys, "solve", "--points", pts)[0] == 1


def test_solve_with_model(tsp_model, capsys):
    code, out, _ = run(capsys, "solve", "--solver", "model", "--model", tsp_model / "m.onet", "--n", 9, "--beam", 3)
    assert code == 0 and sorted(json.loads(out)["order"]) == list(range(9))


@pytest.mark.parametrize("kind", ["params", "causality"])
def test_check_passes(capsys, kind):
    code, out, _ = run(capsys, "check", "--kind", kind, "--seed", 1)
    assert code == 0
    assert out.startswith(f"{kind}: ok")


def test_check_params_reports_counts(capsys):
    _, out, _ = run(capsys, "check", "--kind", "params")
    assert "71623" in out.replace(",", "") and "73000" in out.replace(",", "")


def test_check_violation_exit_code(capsys, monkeypatch):
    from ordernet import checks

    monkeypatch.setitem(checks.SUITES, "params",
                        lambda seed: checks.CheckResult("params", False, 0.5, seed, {"why": "forced"}))
    code, out, _ = run(capsys, "check", "--kind", "params", "--seed", 4)
    assert code == 1
    assert "VIOLATED" in out and "seed=4" in out


# -- train / eval -----------------------------------------------------------------


def test_train_metrics_and_determinism(tsp_model, tmp_path, capsys):
    data = tsp_model / "d.jsonl"
    outs = []
    for tag in ("a", "b"):
        code, out, _ = run(capsys, "train", "--data", data, "--eval-data", data, "--out", tmp_path / f"{tag}.onet",
                           "--metrics", tmp_path / f"{tag}.csv", "--epochs", 2, "--batch-size", 8, "--seed", 5, *TINY)
        assert code == 0
        outs.append(json.loads(out))
    assert (tmp_path / "a.onet").read_bytes() == (tmp_path / "b.onet").read_bytes()
    assert outs[0]["sha256"] == outs[1]["sha256"]
    rows = [np.loadtxt(tmp_path / f"{t}.csv", delimiter=",", skiprows=1) for t in "ab"]
    np.testing.assert_allclose(rows[0][:, :3], rows[1][:, :3], atol=1e-6)


def test_train_errors(tsp_model, tmp_path, capsys):
    assert run(capsys, "train", "--data", tmp_path / "none.jsonl", "--out", tmp_path / "m.onet")[0] == 3
    assert run(capsys, "train", "--data", tsp_model / "d.jsonl", "--out", tmp_path / "m.onet", "--input-dim", 3)[0] == 2
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"x": [[0.1, 0.2]], "y": [0, 1]}\n')
    assert run(capsys, "train", "--data", bad, "--out", tmp_path / "m.onet")[0] == 1


def test_eval_tsp(tsp_model, tmp_path, capsys):
    code, out, _ = run(capsys, "eval-tsp", "--model", tsp_model / "m.onet", "--n", "6,22", "--count", 4,
                       "--csv", tmp_path / "r.csv")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "n,avg_model,avg_exact_or_NA,avg_christofides,avg_nn,valid_fraction"
    six, big = (line.split(",") for line in lines[1:])
    assert float(six[1]) >= float(six[2]) - 1e-12
    assert big[2] == "NA" and six[5] == big[5] == "1"
    assert (tmp_path / "r.csv").read_text() == out


def test_eval_tsp_dimension_mismatch(tmp_path, capsys):
    data = sort_dataset(tmp_path)
    cfg = TrainConfig(model=ModelConfig.tsp(input_dim=1, encoder_layer1_depth=8, encoder_layer2_depth=4,
                                            decoder_blocks=1, decoder_block_depth=8),
                      epochs=1, checkpoint=str(tmp_path / "sort.onet"))
    train(cfg, data)
    assert run(capsys, "eval-tsp", "--model", tmp_path / "sort.onet", "--count", 2)[0] == 2
    assert run(capsys, "eval-tsp", "--model", tmp_path / "missing.onet")[0] == 3
    (tmp_path / "junk.onet").write_bytes(b"not a checkpoint")
    assert run(capsys, "eval-tsp", "--model", tmp_path / "junk.onet")[0] == 3


def sort_dataset(tmp_path):
    rng = np.random.default_rng(0)
    xs = [rng.random((5, 1)) for _ in range(16)]
    path = tmp_path / "sort.jsonl"
    write_jsonl(path, [OrderingExample(x, np.argsort(x[:, 0])) for x in xs])
    return read_jsonl(path)


def test_word_order_pipeline(tmp_path, capsys):
    g = SyntheticGrammar(50, seed=0)
    write_embeddings(tmp_path / "emb.txt", g.table)
    (tmp_path / "corpus.txt").write_text(g.corpus_text(g.sentences(40, seed=1), header_every=10))
    code, out, _ = run(capsys, "prep-text", "--text", tmp_path / "corpus.txt", "--embeddings", tmp_path / "emb.txt",
                       "--seed", 2, "--out", tmp_path / "p.jsonl")
    assert code == 0
    stats = json.loads(out)
    assert stats["kept"] == 40 and stats["skipped"] == {"blank": 8, "header": 4}
    code, _, _ = run(capsys, "train", "--data", tmp_path / "p.jsonl", "--out", tmp_path / "w.onet", "--epochs", 1,
                     "--preset", "word-order", *TINY)
    assert code == 0
    code, out, _ = run(capsys, "eval-order", "--model", tmp_path / "w.onet", "--data", tmp_path / "p.jsonl", "--beam", 2)
    assert code == 0
    rec = json.loads(out)
    assert rec["examples"] == 40 and 0.0 <= rec["exact_order_accuracy"] <= 1.0


def test_eval_order_needs_tokens(tsp_model, capsys):
    assert run(capsys, "eval-order", "--model", tsp_model / "m.onet", "--data", tsp_model / "d.jsonl")[0] == 1


def test_prep_text_strict(tmp_path, capsys):
    (tmp_path / "emb.txt").write_text("a 1 2\nb 3\n")
    (tmp_path / "c.txt").write_text("a a a a a\n")
    base = ["prep-text", "--text", tmp_path / "c.txt", "--embeddings", tmp_path / "emb.txt", "--dim", 2,
            "--out", tmp_path / "p.jsonl"]
    assert run(capsys, *base)[0] == 0
    assert run(capsys, *base, "--strict")[0] == 3


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "ordernet", "check", "--kind", "params"],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0
    assert "resolved config" in proc.stderr
