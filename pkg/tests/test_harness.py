import json

import numpy as np
import pytest

from latentlag.harness import (CsvFormatError, ExperimentConfig, RocCurve, ingest_csv,
                               roc_from_sweep, run_synthetic, trapezoid_auc, vertical_average)
from latentlag.model import random_sparse_system, sign_pattern_of


def sparse_truth(p, seed):
    return sign_pattern_of(random_sparse_system(p, 2, 0, seed=seed).A)


# -- ROC --------------------------------------------------------------------------

def test_perfect_scores_auc_one():
    t = sparse_truth(8, 0)
    r = roc_from_sweep(np.abs(t), t)
    assert r.auc == pytest.approx(1.0)
    assert r.tpr_at(0.0) == pytest.approx(1.0)
    assert not r.degenerate


def test_null_scores_auc_half():
    rng = np.random.default_rng(0)
    aucs = [roc_from_sweep(rng.uniform(size=(30, 30)), sparse_truth(30, s)).auc for s in range(100)]
    assert np.mean(aucs) == pytest.approx(0.5, abs=0.05)


def test_degenerate_truth_flagged():
    r = roc_from_sweep(np.random.default_rng(1).uniform(size=(4, 4)), np.eye(4, dtype=int))
    assert r.degenerate


def test_roc_monotone_with_endpoints():
    rng = np.random.default_rng(2)
    t = sparse_truth(10, 3)
    r = roc_from_sweep(rng.uniform(size=(10, 10)) + np.abs(t), t)
    pts = r.points
    assert tuple(pts[0]) == (0.0, 0.0) and tuple(pts[-1]) == (1.0, 1.0)
    assert np.all(np.diff(pts[:, 0]) >= 0) and np.all(np.diff(pts[:, 1]) >= 0)


def test_wrong_signs_not_counted():
    t = sparse_truth(6, 4)
    r = roc_from_sweep(np.abs(t), t, signs=-t)
    assert r.tpr_at(0.0) == 0.0


def test_vertical_average_and_auc():
    a = RocCurve(np.array([[0, 0], [0, 1.0], [1, 1]]), 1.0)
    b = RocCurve(np.array([[0, 0], [1.0, 1]]), 0.5)
    avg = vertical_average([a, b])
    assert trapezoid_auc(avg) == pytest.approx(0.75, abs=1e-3)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        roc_from_sweep(np.zeros((3, 3)), np.zeros((4, 4), dtype=int))


# -- config ----------------------------------------------------------------------

def small_cfg(**kw):
    base = dict(system={"random": {"p": 3, "nonzeros_per_row": 1, "theta_max": 1}}, T=1000,
                seeds=[0], theta=1, test_T=300)
    base.update(kw)
    return ExperimentConfig(**base)


def test_config_roundtrip_and_hash():
    cfg = small_cfg()
    again = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again.hash() == cfg.hash()
    assert small_cfg(T=2000).hash() != cfg.hash()
    assert small_cfg(workers=4).hash() == cfg.hash()


def test_config_rejects_unknown_and_bad():
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({**small_cfg().to_dict(), "bogus": 1})
    with pytest.raises(ValueError):
        small_cfg(T=5)
    with pytest.raises(ValueError):
        small_cfg(seeds=[])


# -- end to end -------------------------------------------------------------------

def test_smoke_run_writes_artifacts(tmp_path):
    out = tmp_path / "run"
    s = run_synthetic(small_cfg(outputs=str(out)))
    assert s["n_failed"] == 0
    assert set(s["auc"]) == {"granger", "latentlag"}
    for f in ("summary.json", "mean_roc.csv", "per_seed.csv", "roc_points.csv"):
        assert (out / f).exists()
    saved = json.loads((out / "summary.json").read_text())
    assert {"config_hash", "per_seed", "mean_roc", "auc"} <= set(saved)


def test_oracle_estimator_perfect():
    oracle = lambda traj, params, cfg, seed: params.A
    s = run_synthetic(small_cfg(), extra={"oracle": oracle})
    assert s["auc"]["oracle"]["mean_of_seeds"] == pytest.approx(1.0)
    pts = np.array(s["per_seed"][0]["roc"]["oracle"])
    assert any(f == 0 and t == 1 for f, t in pts)


def test_failed_seed_is_counted():
    def boom(traj, params, cfg, seed):
        if seed == 1:
            raise RuntimeError("nope")
        return params.A
    s = run_synthetic(small_cfg(seeds=[0, 1]), extra={"x": boom})
    assert s["n_failed"] == 1
    assert [r["ok"] for r in s["per_seed"]] == [True, False]


def test_run_is_deterministic():
    a = run_synthetic(small_cfg())
    b = run_synthetic(small_cfg())
    assert a["auc"] == b["auc"]


# -- ingest -------------------------------------------------------------------------

def write(tmp_path, text):
    p = tmp_path / "d.csv"
    p.write_text(text)
    return p


def test_ingest_nan_names_line(tmp_path):
    with pytest.raises(CsvFormatError, match="line 3"):
        ingest_csv(write(tmp_path, "t,x1,x2\n0,1,2\n1,nan,2\n"))


def test_ingest_column_count(tmp_path):
    with pytest.raises(CsvFormatError, match="line 2"):
        ingest_csv(write(tmp_path, "t,x1,x2\n0,1\n"))


def test_ingest_malformed(tmp_path):
    with pytest.raises(CsvFormatError, match="line 2"):
        ingest_csv(write(tmp_path, "t,x1\n0,abc\n"))
    with pytest.raises(CsvFormatError, match="line 1"):
        ingest_csv(write(tmp_path, "time,a\n0,1\n"))


def test_ingest_standardizes(tmp_path):
    rng = np.random.default_rng(3)
    x = 5 + 3 * rng.standard_normal((500, 3))
    rows = "\n".join(f"{t}," + ",".join(format(v, ".17g") for v in r) for t, r in enumerate(x))
    tr = ingest_csv(write(tmp_path, "t,x1,x2,x3\n" + rows + "\n"), normalize=True)
    assert np.abs(tr.x.mean(axis=0)).max() <= 1e-12
    np.testing.assert_allclose(tr.x.var(axis=0), 1.0, atol=1e-9)
