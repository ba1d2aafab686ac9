import numpy as np
import pytest

from tsrefine.cli import main
from tsrefine.ingest import TrajectoryPoint, save_trajectories
from tsrefine.tsgrid import load_matrix

SYNTH = ["--extent-time", "600", "--extent-space", "1000"]


@pytest.fixture
def diagrams(tmp_path):
    for seed in (0, 1, 2):
        assert main(["synth", "--seed", str(seed), *SYNTH, "--output", str(tmp_path / f"h{seed}.csv"),
                     "--low-output", str(tmp_path / f"l{seed}.csv")]) == 0
        assert main(["synth", "--seed", str(seed), *SYNTH, "--cell-time", "15", "--cell-space", "25",
                     "--output", str(tmp_path / f"f{seed}.csv")]) == 0
    return tmp_path


def test_synth_shapes(diagrams):
    assert load_matrix(diagrams / "h0.csv").shape == (20, 20)
    assert load_matrix(diagrams / "l0.csv").shape == (10, 10)


@pytest.mark.parametrize("method", ["nalr", "glr", "ne"])
@pytest.mark.parametrize("factor", [4, 16])
def test_refine_methods(diagrams, method, factor):
    d = diagrams
    out = d / f"r_{method}_{factor}.csv"
    args = ["refine", "--input", str(d / "l2.csv"), "--method", method, "--factor", str(factor),
            "--k", "30", "--output", str(out)]
    for s in (0, 1):
        args += ["--train-low", str(d / f"l{s}.csv"), "--train-high", str(d / f"h{s}.csv")]
        if factor == 16:
            args += ["--train-high-2", str(d / f"f{s}.csv")]
    assert main(args) == 0
    r = load_matrix(out)
    assert r.shape == ((20, 20) if factor == 4 else (40, 40))
    assert 0 <= r.values.min() and r.values.max() <= 100


def test_refine_errors(diagrams, capsys):
    d = diagrams
    base = ["refine", "--input", str(d / "l2.csv"), "--output", str(d / "r.csv")]
    assert main(base) == 1
    assert main(base + ["--train-low", str(d / "l0.csv")]) == 1
    assert main(base + ["--train-low", str(d / "l0.csv"), "--train-high", str(d / "h0.csv"),
                        "--factor", "16"]) == 1
    assert main(base + ["--train-low", str(d / "l0.csv"), "--train-high", str(d / "nope.csv")]) == 1
    assert "error:" in capsys.readouterr().err


def test_evaluate_output(diagrams, capsys):
    d = diagrams
    assert main(["evaluate", "--truth", str(d / "h0.csv"), "--pred", str(d / "h0.csv"),
                 "--output", str(d / "m.csv")]) == 0
    first = capsys.readouterr().out.splitlines()[0].split(",")
    assert [float(v) for v in first[:5]] == [0.0, 0.0, 1.0, 1.0, 0.0]
    assert (d / "m.csv").read_text().startswith("mae,mape,cmjs,ssim,gmsd")


def test_evaluate_shape_mismatch(diagrams):
    assert main(["evaluate", "--truth", str(diagrams / "h0.csv"), "--pred", str(diagrams / "l0.csv")]) == 1


def test_perturb(diagrams):
    d = diagrams
    assert main(["perturb", "--input", str(d / "l0.csv"), "--missing-rate", "0.2", "--no-impute",
                 "--seed", "4", "--output", str(d / "p.csv")]) == 0
    assert np.isnan(load_matrix(d / "p.csv").values).sum() == 20
    assert main(["perturb", "--input", str(d / "l0.csv"), "--missing-rate", "0.2", "--noise-sd", "2",
                 "--seed", "4", "--output", str(d / "q.csv")]) == 0
    assert not load_matrix(d / "q.csv").has_missing
    assert main(["perturb", "--input", str(d / "l0.csv"), "--missing-rate", "1.5",
                 "--output", str(d / "x.csv")]) == 1


def test_rasterize(tmp_path, capsys):
    pts = [TrajectoryPoint("a", t, x, 60.0) for t in (5.0, 15.0) for x in (10.0, 110.0)]
    save_trajectories(pts, tmp_path / "t.csv")
    assert main(["rasterize", "--input", str(tmp_path / "t.csv"), "--cell-time", "10",
                 "--cell-space", "100", "--extent-time", "20", "--extent-space", "200",
                 "--output", str(tmp_path / "d.csv")]) == 0
    np.testing.assert_array_equal(load_matrix(tmp_path / "d.csv").values, 60.0)
    assert "0 empty" in capsys.readouterr().out


def _config(tmp_path, extra=""):
    p = tmp_path / "exp.ini"
    text = "[experiment]\noutput = out\nk = 20\n" + extra
    for i, role in enumerate(("train", "train", "test")):
        text += f"[synth:d{i}]\nrole = {role}\nseed = {i}\nextent_time = 600\nextent_space = 1000\n"
    p.write_text(text)
    return p


def test_experiment_and_sweep_exit_codes(tmp_path, monkeypatch):
    p = _config(tmp_path, "[sweep]\nkind = k\nvalues = 10, 20\n")
    assert main(["experiment", str(p)]) == 0
    assert (tmp_path / "out" / "summary.csv").exists()
    assert main(["sweep", str(p), "--kind", "missing", "--values", "0, 0.1"]) == 0
    assert (tmp_path / "out" / "sweep_missing.csv").exists()
    assert main(["sweep", str(p), "--values", "0"]) == 1

    from tsrefine import experiment
    monkeypatch.setattr(experiment.baselines, "ne_refine",
                        lambda *a, **k: (_ for _ in ()).throw(RuntimeError("ne broke")))
    assert main(["experiment", str(p)]) == 2


def test_config_error_exit(tmp_path):
    p = tmp_path / "bad.ini"
    p.write_text("[experiment]\nmethods = magic\n")
    assert main(["experiment", str(p)]) == 1
    assert main(["experiment", str(_config(tmp_path)), "--workers", "0"]) == 1
