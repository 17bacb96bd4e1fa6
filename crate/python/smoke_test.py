"""Smoke test for the porenet_py extension module.

Build first:  pip install --no-build-isolation -e crates/py
Run:          python3 python/smoke_test.py
"""

import math
import os
import tempfile

import porenet_py as pn


def check(cond, message):
    if not cond:
        raise SystemExit("FAILED: " + message)
    print("ok   " + message)


def main():
    net = pn.Network.generate(3, 20, truth_seed=4)
    check(net.num_pores == 20 and net.num_throats > 0, "generate network")
    check(pn.Network.from_json(net.to_json()).to_json() == net.to_json(), "json round trip")

    g = net.analytic_conductance("cones-cylinders")
    sol = pn.solve(net, g)
    check(math.isclose(sol["permeability"], sol["darcy_factor"] * sol["inlet_flow"], rel_tol=1e-14), "K = cQ")
    dp = max(sol["pressures"]) - min(sol["pressures"])
    check(dp > 0, "pressure drop")

    k_star = net.target_permeability
    gc = pn.gradient_check(net, g, k_star)
    check(gc["passed"] and gc["max_relative_error"] < 1e-5, "adjoint matches finite differences")
    dk = pn.permeability_gradient(net, g)
    check(min(dk) >= -1e-12 * max(dk), "permeability is monotone in conductance")
    dj = pn.loss_gradient(net, g, k_star)
    k = sol["permeability"]
    check(all(math.isclose(a, (k - k_star) * b, rel_tol=1e-9, abs_tol=1e-300) for a, b in zip(dj, dk)), "dJ/dg = (K - K*) dK/dg")

    data = pn.generate_dataset(seed=1, count=20, pores=15)
    model, log = pn.train(data, epochs=30, batch_size=5, hidden=8, predictor=8)
    check(len(log) == 30 and log[-1][1] < log[0][1], "training reduces loss")
    check(model.kind == "embedded" and model.epochs == 30, "model metadata")
    g_hat = model.conductances(data[0])
    check(len(g_hat) == data[0].num_throats and min(g_hat) > 0, "positive predicted conductances")
    k_hat = model.predict(data[0])
    check(math.isclose(k_hat, pn.solve(data[0], g_hat)["permeability"], rel_tol=1e-12), "prediction goes through the solver")

    report = model.evaluate(data)
    check(report["n"] == 20 and report["mae"] <= report["rmse"], "evaluation metrics")
    m = pn.metrics([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    check(m["r_squared"] == 1.0 and m["mae"] == 0.0, "metric identities")

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "model.json")
        model.save(path)
        again = pn.Model.load(path)
        check(again.predict(data[0]) == k_hat, "checkpoint round trip")

    baseline, _ = pn.train(data, model="baseline", epochs=5, hidden=8, predictor=8)
    check(baseline.kind == "baseline" and baseline.predict(data[1]) > 0, "baseline model")

    try:
        pn.analytic_permeability(net, "hexagons")
    except ValueError:
        check(True, "unknown shape raises ValueError")
    else:
        check(False, "unknown shape raises ValueError")

    print("smoke test passed")


if __name__ == "__main__":
    main()
