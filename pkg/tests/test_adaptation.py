import math
import warnings

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st

from hpsmeta import adaptation, linalg, metrics, synthetic
from hpsmeta.adaptation import PreprocessSpec, SplitProtocol
from hpsmeta.errors import ArgumentError, DataError, DegeneracyError
from hpsmeta.model import MultiTaskDataset, Subspace, TaskData
from oracles import jacobi_svd


def test_adapt_task_recovers_true_weights(rng):
    gt = synthetic.generate_ground_truth(synthetic.DgpConfig(d=12, s=3, T=2, m=1, seed=0))
    X = rng.standard_normal((5, 12))
    out = adaptation.adapt_task(gt.subspace, TaskData(X, X @ gt.theta[0]))
    assert np.linalg.norm(out.w - gt.weights[0]) <= 1e-8 and not out.singular
    np.testing.assert_allclose(out.theta, gt.theta[0], atol=1e-8)


def test_adapt_task_zero_response(rng):
    out = adaptation.adapt_task(Subspace(np.eye(2, 4)), TaskData(rng.standard_normal((3, 4)), np.zeros(3)))
    assert np.array_equal(out.w, np.zeros(2)) and np.array_equal(out.theta, np.zeros(4))


def test_adapt_task_matches_two_by_two_normal_equations(rng):
    B = linalg.orthonormalize_rows(rng.standard_normal((2, 5)))
    X, y = rng.standard_normal((6, 5)), rng.standard_normal(6)
    Z = X @ B.T
    a, b, c = Z[:, 0] @ Z[:, 0], Z[:, 0] @ Z[:, 1], Z[:, 1] @ Z[:, 1]
    r0, r1 = Z[:, 0] @ y, Z[:, 1] @ y
    det = a * c - b * b
    expected = np.array([c * r0 - b * r1, a * r1 - b * r0]) / det
    np.testing.assert_allclose(adaptation.adapt_task(B, TaskData(X, y)).w, expected, rtol=1e-10)


def test_adapt_task_singular_projection_is_flagged():
    X = np.array([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    out = adaptation.adapt_task(Subspace(np.eye(2, 3)), TaskData(X, np.array([1.0, 2.0])))
    assert out.singular
    np.testing.assert_allclose(out.w, [1.0, 0.0], atol=1e-12)
    with pytest.raises(ArgumentError):
        adaptation.adapt_task(Subspace(np.eye(2, 4)), TaskData(X, np.ones(2)))


def test_lsq_pinv_examples(rng):
    X = rng.standard_normal((4, 4))
    y = rng.standard_normal(4)
    np.testing.assert_allclose(adaptation.lsq_pinv(TaskData(X, y)), np.linalg.solve(X, y), rtol=1e-9)
    X, y = rng.standard_normal((5, 8)), rng.standard_normal(5)
    th = adaptation.lsq_pinv(TaskData(X, y))
    np.testing.assert_allclose(X @ th, y, atol=1e-10)
    U, sv, V = jacobi_svd(X)
    oracle = V @ ((U.T @ y) / sv)
    np.testing.assert_allclose(th, oracle, atol=1e-9)


def test_random_b():
    a, b = adaptation.random_b(10, 3, 1), adaptation.random_b(10, 3, 2)
    assert linalg.row_orthonormality_residual(a.basis) <= 1e-10
    assert np.array_equal(a.basis, adaptation.random_b(10, 3, 1).basis)
    assert metrics.sine_angle(a, b) > 0
    with pytest.raises(ArgumentError):
        adaptation.random_b(3, 4, 0)


def test_mre_examples():
    t = np.array([1.5, -2.0, 4.0])
    assert adaptation.mre(t, t) == 0.0
    assert adaptation.mre(2 * t, t) == pytest.approx(1.0)
    assert adaptation.mre([1.0, 3.0], [2.0, 2.0]) == pytest.approx(0.5)


def test_mre_zero_truth_handling():
    with pytest.warns(UserWarning):
        assert adaptation.mre([1.0, 5.0], [0.0, 4.0]) == pytest.approx(0.25)
    with pytest.raises(DegeneracyError):
        adaptation.mre([1.0], [0.0])
    with pytest.raises(ArgumentError):
        adaptation.mre([1.0, 2.0], [1.0])


@given(st.floats(-1e3, 1e3).filter(lambda c: abs(c) > 1e-3), st.integers(0, 2**31))
def test_mre_scale_free(c, seed):
    g = np.random.default_rng(seed)
    truth = g.uniform(0.5, 2.0, 8) * g.choice([-1, 1], 8)
    pred = g.standard_normal(8)
    assert abs(adaptation.mre(c * pred, c * truth) - adaptation.mre(pred, truth)) <= 1e-12


def test_stage_report_mean():
    rep = adaptation.StageReport("test-test", [0.1, 0.2, 0.6])
    assert rep.m_mre == pytest.approx(0.3)
    with pytest.raises(ArgumentError):
        adaptation.StageReport("meta-train", [0.1])


def test_split_protocol_validation():
    with pytest.raises(ArgumentError):
        SplitProtocol(5, meta_fraction=1.0)
    with pytest.raises(ArgumentError):
        SplitProtocol(0)


def _hps(seed, T=125, sigma=0.1, m=40):
    return synthetic.generate(synthetic.DgpConfig(d=30, s=4, T=T, m=m, sigma=sigma, seed=seed))


def test_protocol_with_oracle_solver_is_exact():
    gt, ds = _hps(0, T=40, sigma=0.0)

    def oracle(meta_train, s):
        theta = np.array([adaptation.adapt_task(gt.subspace, meta_train.task(i)).theta
                          for i in range(meta_train.task_count)])
        return theta, gt.subspace

    reports = adaptation.run_protocol(ds, SplitProtocol(12, seed=3), oracle, 4)
    assert [r.stage for r in reports] == list(adaptation.STAGES)
    assert all(r.m_mre <= 1e-8 for r in reports)


def test_protocol_split_sizes_and_drops():
    sizes = [5] * 3 + [20] * 17
    ds = synthetic.generate(synthetic.DgpConfig(d=6, s=2, T=20, m=sizes, seed=1))[1]
    sp = adaptation.split_tasks(ds, SplitProtocol(5, seed=0))
    assert sp.dropped == 3
    assert len(sp.meta) == round(0.8 * 17) and len(sp.meta) + len(sp.test) == 17
    assert all(sp.test_rows[t].size == 15 for t in sp.meta + sp.test)


def test_protocol_is_deterministic():
    _, ds = _hps(2, T=30)
    args = (ds, SplitProtocol(12, seed=4), "Meta-SP", 4, {"step_size": 0.1, "max_iters": 50})
    a = adaptation.run_protocol(*args, method_seed=1)
    b = adaptation.run_protocol(*args, method_seed=1)
    for ra, rb in zip(a, b):
        assert np.array_equal(ra.per_task_mre, rb.per_task_mre)


def test_random_b_is_worse_than_learned_basis():
    learned, random = [], []
    for seed in range(5):
        _, ds = _hps(seed, T=100)
        split = SplitProtocol(12, seed=seed)
        learned.append(adaptation.run_protocol(ds, split, "Meta-SP", 4, {"step_size": 0.1, "max_iters": 300})[-1].m_mre)
        random.append(adaptation.run_protocol(ds, split, "Random-B", 4, method_seed=seed)[-1].m_mre)
    assert np.median(random) >= np.median(learned)


def test_learned_basis_beats_lsq_pinv_in_test_test():
    _, ds = _hps(11)
    split = SplitProtocol(12, seed=11)
    learned = adaptation.run_protocol(ds, split, "Meta-SP", 4, {"step_size": 0.1, "max_iters": 300})
    pinv = adaptation.run_protocol(ds, split, "Lsq-Pinv", 4)
    assert [r.stage for r in pinv] == ["test-train", "test-test"]
    assert learned[-1].m_mre < pinv[-1].m_mre


# --- preprocessing ------------------------------------------------------------

def _table():
    return pd.DataFrame({
        "task_id": ["a", "a", "a", "b", "b", "b"],
        "lon": [10.0, 20.0, 30.0, 15.0, 25.0, 20.0],
        "date": [183.0, 190.0, 176.0, 100.0, 200.0, 183.0],
        "co": [1.0, 2.0, 4.0, 3.0, 9.0, 27.0],
        "pm25": [10.0, 20.0, 40.0, 5.0, 6.0, 7.0],
    })


_SPEC = {"response": "pm25",
         "columns": {"lon": "minmax_global", "date": "fold_standardize", "co": "log_standardize_per_task"}}


def _zscore(v):
    v = np.asarray(v, dtype=float)
    return (v - v.mean()) / v.std()


def test_preprocess_transforms():
    out = adaptation.preprocess(_table(), PreprocessSpec.from_dict(_SPEC))
    ds = out.dataset
    assert out.task_ids == ["a", "b"] and out.rows_rejected == 0 and out.tasks_dropped == 0
    assert ds.dim == 4 and ds.sizes.tolist() == [3, 3]
    # minmax over [10, 30]: 20 -> 0
    np.testing.assert_allclose(ds.X[:, 0], [-1.0, 0.0, 1.0, -0.5, 0.5, 0.0], atol=1e-12)
    # 183 folds to 0 before the global standardization
    np.testing.assert_allclose(ds.X[:, 1], _zscore([0, 7, 7, 83, 17, 0]), atol=1e-12)
    np.testing.assert_allclose(ds.X[:3, 2], _zscore(np.log([1, 2, 4])), atol=1e-12)
    np.testing.assert_allclose(ds.X[3:, 2], _zscore(np.log([3, 9, 27])), atol=1e-12)
    np.testing.assert_array_equal(ds.X[:, 3], np.ones(6))
    np.testing.assert_allclose(ds.y, np.log([10, 20, 40, 5, 6, 7]), atol=1e-12)


def test_preprocess_rejects_nonpositive_log_rows():
    tab = _table()
    tab.loc[4, "co"] = 0.0
    tab.loc[[3, 5], "pm25"] = -1.0
    out = adaptation.preprocess(tab, PreprocessSpec.from_dict(_SPEC))
    assert out.rows_rejected == 3 and out.tasks_dropped == 1 and out.task_ids == ["a"]


def test_preprocess_constant_column_is_degenerate():
    tab = _table()
    tab["co"] = 5.0
    with pytest.raises(DegeneracyError):
        adaptation.preprocess(tab, PreprocessSpec.from_dict(_SPEC))


def test_preprocess_input_errors():
    with pytest.raises(DataError):
        adaptation.preprocess(_table().drop(columns="co"), PreprocessSpec.from_dict(_SPEC))
    with pytest.raises(DataError):
        PreprocessSpec.from_dict({"response": "pm25", "columns": {"lon": "rescale"}})
    with pytest.raises(DataError):
        PreprocessSpec.from_dict({"columns": {}})


def test_export_round_trip(tmp_path):
    _, ds = synthetic.generate(synthetic.DgpConfig(d=3, s=1, T=4, m=[2, 3, 4, 5], seed=0))
    path = adaptation.export_table(ds, tmp_path / "tab.csv")
    spec = PreprocessSpec.from_dict({"response": "y", "response_transform": "passthrough", "intercept": False,
                                     "columns": {f"x{k}": "passthrough" for k in range(3)}})
    back = adaptation.preprocess(adaptation.load_table(path), spec).dataset
    assert np.array_equal(back.X, ds.X) and np.array_equal(back.y, ds.y)
    assert np.array_equal(back.offsets, ds.offsets)
