import numpy as np
import pytest
import yaml

from imphrl.calibration import (CSV_HEADER, DemoFormatError, Demonstration, FitDegenerate, fit_adaptive_params,
                                load_demo, load_demo_dir, regressors, save_demo, synthetic_demo,
                                synthetic_demo_set, write_demo_set, write_fragment)


def test_noiseless_recovery():
    demos = synthetic_demo_set(8.0, 0.5, seed=3)
    assert len(demos) == 15
    assert sorted({d.primitive_kind for d in demos}) == ["atomic", "push", "reach"]
    fit = fit_adaptive_params(demos)
    assert fit.beta == pytest.approx(8.0, rel=1e-6)
    assert fit.gamma_e == pytest.approx(0.5, rel=1e-6)
    assert len(fit.mse) == 15 and max(fit.mse) < 1e-12


def test_noisy_recovery_single_seed():
    fit = fit_adaptive_params(synthetic_demo_set(8.0, 0.5, seed=11, noise=0.05))
    assert fit.beta == pytest.approx(8.0, rel=0.05)
    assert fit.gamma_e == pytest.approx(0.5, rel=0.05)


def test_degenerate_zero_regressors():
    n = 20
    d = Demonstration(time=np.arange(n) * 0.01, force=np.zeros((n, 3)), disp=np.zeros((n, 3)),
                      kdot=np.ones((n, 3)), name="flat.csv")
    with pytest.raises(FitDegenerate, match="flat.csv"):
        fit_adaptive_params([d])


def test_regressor_shape():
    d = synthetic_demo("reach", 8.0, 0.5, np.random.default_rng(0))
    a, y = regressors(d)
    assert a.shape == (3 * len(d.time), 2) and y.shape == (3 * len(d.time),)
    assert np.all(a[:, 0] >= 0) and np.all(a[:, 1] <= 0)


def test_csv_round_trip(tmp_path):
    d = synthetic_demo("push", 8.0, 0.5, np.random.default_rng(1), name="push_00.csv")
    p = tmp_path / "push_00.csv"
    save_demo(p, d)
    back = load_demo(p)
    assert back.primitive_kind == "push"
    for a, b in ((d.time, back.time), (d.force, back.force), (d.disp, back.disp), (d.kdot, back.kdot)):
        assert np.array_equal(a, b)


def _write(path, lines):
    path.write_text("\n".join(lines) + "\n")


def test_loader_diagnostics(tmp_path):
    good = [",".join(CSV_HEADER)] + [",".join([str(i * 0.01)] + ["1"] * 9) for i in range(12)]
    p = tmp_path / "reach_x.csv"
    _write(p, good[:5] + ["0.5,1,2"] + good[5:])
    with pytest.raises(DemoFormatError, match=r"reach_x.csv:6"):
        load_demo(p)
    _write(p, good[:5] + [",".join(["0.001"] + ["1"] * 9)] + good[5:])
    with pytest.raises(DemoFormatError, match=r":6: time not strictly increasing"):
        load_demo(p)
    _write(p, ["time,fx"] + good[1:])
    with pytest.raises(DemoFormatError, match=":1:"):
        load_demo(p)
    _write(p, good[:4])
    with pytest.raises(DemoFormatError, match="at least 10"):
        load_demo(p)
    _write(p, good[:3] + [",".join(["0.025", "abc"] + ["1"] * 8)] + good[3:])
    with pytest.raises(DemoFormatError, match=":4: non-numeric"):
        load_demo(p)


def test_demo_dir_and_fragment(tmp_path):
    write_demo_set(tmp_path / "demos", synthetic_demo_set(8.0, 0.5, seed=2, per_kind=2))
    demos = load_demo_dir(tmp_path / "demos")
    assert len(demos) == 6
    fit = fit_adaptive_params(demos)
    write_fragment(tmp_path / "frag.yaml", fit)
    frag = yaml.safe_load((tmp_path / "frag.yaml").read_text())
    assert set(frag["controller"]) == {"beta", "gamma_e", "fit_mse"}
    assert len(frag["controller"]["fit_mse"]) == 6


def test_demonstration_invariants():
    with pytest.raises(ValueError):
        Demonstration(time=np.arange(5.0), force=np.zeros((5, 3)), disp=np.zeros((5, 3)), kdot=np.zeros((5, 3)))
    t = np.arange(12.0)
    t[4] = t[3]
    with pytest.raises(ValueError):
        Demonstration(time=t, force=np.zeros((12, 3)), disp=np.zeros((12, 3)), kdot=np.zeros((12, 3)))
