import json
import os

import numpy as np
import pytest
from scipy import sparse

from sbnlab.harness.config import ConfigError, defaults, parse_config, parse_config_text
from sbnlab.harness.data import (BowData, BowFormatError, generate_synthetic_bow, load_bow,
                                 load_source, truncate_vocab, write_bow)
from sbnlab.harness.experiments import (run_accuracy_protocol, run_autoencoder,
                                        run_bayesbinn_demo, run_gumbel_sweep, run_tiny_classifier)
from sbnlab.harness.io import (file_sha256, format_value, load_checkpoint, read_csv,
                               save_checkpoint, write_csv)

TINY = """
[experiment]
train_epochs = 2
correction_epochs = 1
checkpoint_every = 1
trials = 3
batch_size = 8
base_seed = 5
[network]
bits = 3
hidden = 6
[data]
source = synthetic(24,30,3,1)
"""


def _cfg(tmp_path, extra=""):
    cfg = parse_config_text(TINY + extra)
    cfg.set("experiment", "output", str(tmp_path))
    return cfg


# ---------------------------------------------------------------- config


def test_defaults_and_parameterized_estimators():
    cfg = parse_config_text("")
    assert cfg.get("experiment", "train_epochs") == 200
    assert cfg.get("experiment", "reference") == "local_expectations_avg(K=10)"
    cfg = parse_config_text("estimator = gumbel_softmax(tau=0.5)\noptim.lr = 0.01\n[network]\nbits = 12")
    assert cfg.get("experiment", "estimator") == "gumbel_softmax(tau=0.5)"
    assert cfg.get("optim", "lr") == 0.01 and cfg.get("network", "bits") == 12
    cfg = parse_config_text("candidates = st, rescaled_st(lambda=0.5), local_expectations_avg(K=4)")
    assert cfg.get("experiment", "candidates") == ["st", "rescaled_st(lambda=0.5)", "local_expectations_avg(K=4)"]


@pytest.mark.parametrize("text,needle", [
    ("[optim]\nlr = abc", "line 2: bad value 'abc' for optim.lr"),
    ("optim.lr = abc", "line 1: bad value 'abc' for optim.lr"),
    ("[optim]\nlr = 1\nlr = 2", "line 3: duplicate key optim.lr"),
    ("[nope]", "line 1: unknown section [nope]"),
    ("[network]\nwidth = 3", "unknown key network.width"),
    ("estimator = arm", "estimator"),
    ("this is not a line", "cannot parse"),
])
def test_config_errors_name_key_and_line(text, needle):
    with pytest.raises(ConfigError) as err:
        parse_config_text(text)
    assert needle in str(err.value)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        parse_config(tmp_path / "missing.cfg")


def test_shipped_configs_parse():
    root = os.path.join(os.path.dirname(__file__), "..", "configs")
    for name in sorted(os.listdir(root)):
        parse_config(os.path.join(root, name))


# ---------------------------------------------------------------- io


def test_csv_format(tmp_path):
    p = write_csv([{"a": 0.1, "b": 3, "c": True, "d": "x"}], tmp_path / "t.csv")
    raw = open(p, "rb").read()
    assert raw == b"a,b,c,d\n0.10000000000000001,3,1,x\n"
    assert read_csv(p) == [{"a": "0.10000000000000001", "b": "3", "c": "1", "d": "x"}]
    assert float(format_value(np.float64(1 / 3))) == 1 / 3
    with pytest.raises(ValueError, match="missing columns"):
        write_csv([{"a": 1}], tmp_path / "u.csv", ["a", "b"])


def test_checkpoint_round_trip(tmp_path):
    t = {"L0.W": np.arange(6.0).reshape(2, 3) / 7, "s": np.float64(np.pi), "L1.b": np.array([-0.0, 1e-300])}
    h = save_checkpoint(t, tmp_path / "c.ckpt")
    back = load_checkpoint(tmp_path / "c.ckpt")
    for k in t:
        np.testing.assert_array_equal(back[k], t[k])
    assert h == file_sha256(tmp_path / "c.ckpt")
    (tmp_path / "bad.ckpt").write_text("sbnlab-ckpt v1\nW 2x2 1 2 3\n")
    with pytest.raises(ValueError, match="line 2"):
        load_checkpoint(tmp_path / "bad.ckpt")


# ---------------------------------------------------------------- data


def test_bow_round_trip_and_errors(tmp_path):
    data = generate_synthetic_bow(10, 20, 3, 0)
    write_bow(data, tmp_path / "d.txt")
    back = load_bow(tmp_path / "d.txt", vocab=20)
    np.testing.assert_array_equal(back.dense(), data.dense())
    (tmp_path / "e.txt").write_text("")
    assert load_bow(tmp_path / "e.txt").docs == 0
    for body, msg in [("0 1\n", "line 1: expected 3 fields"), ("0 1 2\n0 x 1\n", "line 2: fields must be integers"),
                      ("0 1 -2\n", "line 1: negative count"), ("0 1 2\n0 1 3\n", "line 2: duplicate pair")]:
        (tmp_path / "f.txt").write_text(body)
        with pytest.raises(BowFormatError, match=msg):
            load_bow(tmp_path / "f.txt")


def test_top_words_truncation_breaks_ties_by_lower_id():
    counts = sparse.csr_matrix(np.array([[5, 1, 3, 3, 0, 3], [0, 1, 0, 0, 9, 0]], dtype=float))
    data = truncate_vocab(BowData(counts, np.arange(6)), 3)
    # totals: 5, 2, 3, 3, 9, 3 -> keep 4, 0 and the lowest of the tied 3s
    np.testing.assert_array_equal(data.word_ids, [0, 2, 4])
    assert load_source("synthetic(30,40,4,2)", top_words=10).vocab == 10


# ---------------------------------------------------------------- experiments


def _bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


def test_autoencoder_run_is_reproducible(tmp_path):
    a = run_autoencoder(_cfg(tmp_path / "a"))
    b = run_autoencoder(_cfg(tmp_path / "b"))
    assert _bytes(a["csv"]) == _bytes(b["csv"])
    assert [r["phase"] for r in a["records"]] == ["init", "train", "train", "correct"]
    assert len(a["checkpoints"]) == 4
    assert [c[2] for c in a["checkpoints"]] == [c[2] for c in b["checkpoints"]]


def test_zero_epoch_phases_emit_only_the_initial_checkpoint(tmp_path):
    cfg = _cfg(tmp_path)
    cfg.set("experiment", "train_epochs", 0)
    cfg.set("experiment", "correction_epochs", 0)
    res = run_autoencoder(cfg)
    assert [c[0] for c in res["checkpoints"]] == [0]
    assert len(res["records"]) == 1


def test_accuracy_protocol_csv_and_metadata(tmp_path):
    r1 = run_accuracy_protocol(_cfg(tmp_path / "a"))
    r2 = run_accuracy_protocol(_cfg(tmp_path / "b"))
    assert _bytes(r1["csv"]) == _bytes(r2["csv"])
    rows = read_csv(r1["csv"])
    assert list(rows[0]) == ["checkpoint", "estimator", "ecs", "ecs_lo", "ecs_hi", "ei", "ei_max",
                             "rmse", "alpha_opt", "trials", "zero_trials"]
    exact = [r for r in rows if r["estimator"] == "exact_enum"]
    assert exact and all(float(r["ecs"]) == 1.0 and float(r["rmse"]) == 0.0 for r in exact)
    meta = json.load(open(os.path.join(tmp_path / "a", "accuracy_meta.json")))
    assert set(meta["checkpoints"]) == {"1", "2"}
    assert all(len(v["sha256"]) == 64 for v in meta["checkpoints"].values())


def test_gumbel_sweep_rows(tmp_path):
    cfg = _cfg(tmp_path, "[gumbel]\ndraws = 20000\n")
    res = run_gumbel_sweep(cfg, [0.5])
    row = res["rows"][0]
    assert abs(row["empirical_bias"] - row["quadrature_bias"]) < 4 * row["bias_se"]
    with pytest.raises(ValueError, match="tau"):
        run_gumbel_sweep(cfg, [0.0])


def test_bayesbinn_demo_collapse(tmp_path):
    cfg = _cfg(tmp_path, "[bayesbinn]\nsteps = 150\ndim = 6\nruns = 1e-10:1000, 1e-10:100000, 1:1000\n")
    res = run_bayesbinn_demo(cfg)
    s = {x["run"]: x for x in res["summary"]}
    assert s["1e-10:1000"]["coincide_from"] != -1
    np.testing.assert_array_equal(res["runs"]["1e-10:1000"]["replica_bits"],
                                  res["runs"]["1e-10:100000"]["replica_bits"])
    assert s["1:1000"]["mismatch_steps"] > 0


def test_tiny_classifier_learns(tmp_path):
    cfg = _cfg(tmp_path, "[optim]\nlr = 0.01\n[classifier]\nepochs = 8\n")
    res = run_tiny_classifier(cfg)
    assert res["rows"][-1]["ensemble_accuracy"] > 0.6
    assert res["rows"][-1]["train_loss"] < res["rows"][0]["train_loss"]


def test_documented_defaults_types():
    cfg = defaults()
    assert cfg.section("bayesbinn")["runs"] == ["1e-10:1000", "1e-10:100000", "1:1000"]
    assert cfg.get("gumbel", "taus") == [1.0, 0.5, 0.1, 0.05]
