"""Smoke test for the effgcn_py extension.

Build and install first:

    maturin develop --release -m crates/py/Cargo.toml

then run `python python/smoke_test.py`.
"""

import json
import math
import random
import tempfile

import effgcn_py as eg


def check_plans():
    b4 = eg.ArchPlan.efficient(4, 60)
    assert b4.stage_channels == [96, 48, 128, 272], b4.stage_channels
    assert b4.stage_depths == [2, 2, 3, 3], b4.stage_depths
    same = eg.ArchPlan.from_json(b4.to_json())
    assert json.loads(same.to_json()) == json.loads(b4.to_json())

    report = eg.ArchPlan.efficient(0, 60).profile(300, 25, 2)
    millions = report["total_params"] / 1e6
    assert abs(millions - 0.29) / 0.29 < 0.05, millions
    assert report["total_params"] == sum(b["params"] for b in report["blocks"])

    cells = eg.ArchPlan.efficient(0, 60).sweep([1, 2, 3], [3, 5])
    params = {(d, l): p for d, l, p, _ in cells}
    assert params[(2, 3)] > params[(1, 3)] and params[(1, 5)] > params[(1, 3)]

    product, residual, passed = eg.scaling_constraint(1.2, 1.35)
    assert abs(product - 1.944) < 1e-12 and passed
    try:
        eg.ArchPlan.scaled(alpha=1.5, beta=1.5)
    except ValueError:
        pass
    else:
        raise AssertionError("unconstrained scaling accepted")
    print("plans ok:", b4, f"B0 {millions:.3f}M params")


def check_graph_and_preprocess():
    g = eg.SkeletonGraph.ntu25()
    assert g.num_joints == 25 and len(g.edges) == 24
    hops = g.hop_distances()
    assert all(hops[i][i] == 0 for i in range(25))
    parts = g.partitions(2, normalized=False)
    assert len(parts) == 3
    assert all(parts[0][i][i] == 1.0 for i in range(25))

    rng = random.Random(0)
    frames = 12
    coords = [[[[rng.uniform(-1, 1)] for _ in range(25)] for _ in range(frames)] for _ in range(3)]
    (body,) = eg.preprocess(coords, g)
    c = g.center
    assert all(body["joint"][3 + w][t][c] == 0.0 for w in range(3) for t in range(frames))
    for t in range(frames - 2):
        for j in range(25):
            fast = body["velocity"][0][t][j]
            slow = body["velocity"][3][t][j] + body["velocity"][3][t + 1][j]
            assert abs(fast - slow) < 1e-12
    for t in range(frames):
        for j in range(25):
            angles = [body["bone"][3 + w][t][j] for w in range(3)]
            if any(body["bone"][w][t][j] for w in range(3)):
                assert abs(sum(math.cos(a) ** 2 for a in angles) - 1.0) < 1e-10
    print("graph and preprocessing ok")


def check_gradients():
    names = eg.probes()
    assert "tc-sep" in names and "mini-network" in names
    for probe in ["tc-sep", "sgc", "st-joint-att"]:
        passed, err = eg.gradcheck(probe, 1e-5)
        assert passed, (probe, err)
        print(f"gradcheck {probe}: max rel error {err:.2e}")


def check_training():
    with tempfile.TemporaryDirectory() as root:
        n_train, n_eval = eg.synth(root, classes=3, per_class=5, frames=16, joints=25, seed=1)
        assert (n_train, n_eval) == (12, 3)
        net = eg.Network(eg.ArchPlan.mini(3), eg.SkeletonGraph.ntu25(), seed=0)
        log = net.fit(root, epochs=2, warmup_epochs=1, batch_size=4, out=root + "/run")
        assert [row["epoch"] for row in log] == [0, 1]
        assert all(math.isfinite(row["train_loss"]) for row in log)
        metrics = net.evaluate(root, "eval")
        assert sum(map(sum, metrics["confusion"])) == 3

        again = eg.Network(eg.ArchPlan.mini(3), eg.SkeletonGraph.ntu25(), seed=5)
        again.load_checkpoint(root + "/run/checkpoint.skck")
        assert again.evaluate(root, "eval") == metrics

        rng = random.Random(2)
        coords = [[[[rng.uniform(-1, 1)] for _ in range(25)] for _ in range(16)] for _ in range(3)]
        scores = net.predict(coords)
        assert len(scores) == 3
        cam = net.class_activation_map(coords, 0)
        assert len(cam) == 4 and len(cam[0]) == 25
        assert all(0.0 <= x <= 1.0 for row in cam for x in row)
        print(f"training ok: {net.num_params} params, eval top1 {metrics['top1_accuracy']:.3f}")


if __name__ == "__main__":
    check_plans()
    check_graph_and_preprocess()
    check_gradients()
    check_training()
    print("smoke test passed")
