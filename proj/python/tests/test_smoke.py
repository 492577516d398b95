import io
import json

import numpy as np
import pandas as pd
import pytest

import mixhmm

SPEC = json.dumps(
    {
        "n_states": 2,
        "observation": {"z": {"dist": "norm", "init": {"mean": [-3, 3], "sd": [1, 1]}}},
        "hidden": {"tpm": [[0.9, 0.1], [0.1, 0.9]]},
    }
)


def simulated(n=800, seed=3):
    table = pd.read_csv(io.StringIO(mixhmm.simulate(SPEC, [n], seed)))
    return table.drop(columns=["state"]), table["state"].to_numpy()


def test_spec_normalizes_to_a_fixed_point():
    once = mixhmm.normalize_spec(SPEC)
    assert mixhmm.normalize_spec(once) == once


def test_bad_spec_raises_model_error():
    with pytest.raises(mixhmm.ModelError, match="gamma2"):
        mixhmm.normalize_spec('{"n_states":2,"observation":{"z":{"dist":"gauss"}}}')


def test_simulation_is_seeded():
    assert mixhmm.simulate(SPEC, [50], 7) == mixhmm.simulate(SPEC, [50], 7)
    assert mixhmm.simulate(SPEC, [50], 7) != mixhmm.simulate(SPEC, [50], 8)


def test_fit_decode_and_predict():
    table, states = simulated()
    model = mixhmm.Model(SPEC, table.to_csv(index=False))
    assert model.n_states == 2
    assert model.n_rows == len(table)

    fit = model.fit()
    assert fit.converged
    assert fit.marginal_loglik == pytest.approx(model.loglik(fit.estimates))
    assert fit.covariance.shape[0] == fit.covariance.shape[1]

    path = np.asarray(model.viterbi(fit.estimates))
    assert np.mean(path == states) > 0.95
    probs = model.state_probs(fit.estimates)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    pred = model.predict(fit, what="tpm", rows=[0], n_post=200)
    assert pred["names"] == ["S1>S1", "S1>S2", "S2>S1", "S2>S2"]
    assert np.all(pred["lcl"] <= pred["mean"]) and np.all(pred["mean"] <= pred["ucl"])

    res = model.pseudo_residuals(fit.estimates)
    assert res.shape == (len(table), 1)
    assert abs(res.mean()) < 0.15
    assert "coef_fe" in model.estimates_csv(fit)


def test_reflected_random_walk_stays_in_bounds():
    x = np.asarray(mixhmm.reflected_random_walk(1000, 0.3, -1.0, 1.0, 2))
    assert x.min() >= -1.0 and x.max() <= 1.0
