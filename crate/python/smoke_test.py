"""Smoke test for the `gsd` extension module.

Build and run from the repository root:

    cargo build --release -p gsd-py --features extension-module
    cp target/release/libgsd.so python/gsd.so
    python3 python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import gsd  # noqa: E402


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


def main():
    logit, w_norm, x_norm, cos = gsd.geometric_logit([3.0, 4.0], [1.0, 0.0])
    assert close(logit, 3.0) and close(w_norm, 5.0) and close(x_norm, 1.0) and close(cos, 0.6)

    lhs, rhs = gsd.exact_expansion(2.0, 0.5, 0.3, 0.1)
    assert close(lhs, rhs, 1e-12)
    assert close(gsd.compute_c(2.0, 1.0, 0.1), -math.log(0.9))

    probs = [[0.9, 0.1], [0.2, 0.8], [0.6, 0.4]]
    labels = [0, 1, 1]
    assert close(gsd.accuracy(probs, labels), 2 / 3)
    assert close(gsd.nll(probs, labels), -(math.log(0.9) + math.log(0.8) + math.log(0.4)) / 3)
    assert 0.0 <= gsd.ece(probs, labels) <= 1.0
    assert close(gsd.auroc([2.0, 3.0], [1.0, 0.0]), 1.0)

    train = gsd.gen_clusters(2, 2, 4.0, 0.5, 50, seed=1)
    val = gsd.gen_clusters(2, 2, 4.0, 0.5, 25, seed=2)
    model = gsd.Model(2, 2, head="gsd", encoder="linear", feature_dim=2, seed=3)
    trained, history = model.train(train, epochs=30, batch_size=20, seed=3)
    assert len(history) == 30
    assert history[-1][1] >= 0.99, history[-1]

    affine, nonlinear = trained.calibrate(val)
    assert affine.mode == "affine_beta" and nonlinear.mode == "nonlinear"
    before = trained.predict(val)
    after = trained.predict(val, calibration=nonlinear)
    for p, q, n in zip(before.predicted, after.predicted, after.effective_norms):
        assert n <= 0 or p == q

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "m.gsdm")
        trained.write(path)
        assert gsd.Model.read(path).to_bytes() == trained.to_bytes()
        data_path = os.path.join(tmp, "val.gsde")
        val.write(data_path)
        assert gsd.EmbeddingBatch.read(data_path).to_bytes() == val.to_bytes()
        cfg_path = os.path.join(tmp, "cal.cfg")
        nonlinear.write(cfg_path)
        assert gsd.CalibrationConfig.read(cfg_path).to_text() == nonlinear.to_text()

    try:
        gsd.Model.from_bytes(b"NOPE")
    except ValueError as err:
        assert "magic" in str(err).lower(), err
    else:
        raise AssertionError("malformed checkpoint accepted")

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
