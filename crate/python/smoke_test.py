"""Smoke test for the rampsvm extension module.

Build and install first:  pip install maturin && maturin develop -m crates/python/Cargo.toml
"""

import json
import math

import rampsvm


def main():
    data = rampsvm.Dataset.synthetic(300, flip=0.1, seed=1)
    assert len(data) == 300 and data.dim == 2

    models = {}
    for mode in ("none", "safe", "shrink", "shrink+safe"):
        model, trace = rampsvm.train(data, kernel="rbf", gamma=0.5, C=1.0, mode=mode)
        assert trace.converged, mode
        objectives = trace.ramp_objectives
        assert all(b <= a + 1e-8 for a, b in zip(objectives, objectives[1:])), objectives
        json.loads(trace.to_json())
        models[mode] = model

    ref = models["none"]
    for mode, model in models.items():
        assert model.support == ref.support, mode
        diff = max(abs(a - b) for a, b in zip(model.alpha, ref.alpha))
        assert diff < 1e-5, (mode, diff)

    model = models["safe"]
    assert model.accuracy(data) > 0.7
    again = rampsvm.Model.from_text(model.to_text())
    assert again.decision_function(data) == model.decision_function(data)
    assert set(model.predict([[0.0, 0.0], [3.0, -1.0]])) <= {-1.0, 1.0}

    small = rampsvm.Dataset.synthetic(40, flip=0.1, seed=2)
    fast = rampsvm.solve_cil(small, C=1.0, eps=1e-10, screening=True)
    alpha, bias = rampsvm.solve_cil_reference(small, C=1.0)
    assert max(abs(a - b) for a, b in zip(fast["alpha"], alpha)) < 1e-5
    assert math.isfinite(bias) and fast["gap"] < 1e-6

    toy = rampsvm.Dataset([[1.0], [-1.0]], [1, -1])
    linear, _ = rampsvm.train(toy, kernel="linear", mode="none")
    assert linear.n_sv == 2 and linear.predict(toy) == [1.0, -1.0]

    try:
        rampsvm.train(data, C=0.0)
    except ValueError:
        pass
    else:
        raise AssertionError("C=0 accepted")

    print("smoke test ok:", model)


if __name__ == "__main__":
    main()
