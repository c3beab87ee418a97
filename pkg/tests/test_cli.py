import json

import pytest

from tamlab.cli import EXIT_CONFIG, EXIT_NUMERIC, main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_theory_alpha_c_and_kappa(capsys):
    code, out, _ = run(capsys, "theory", "alpha-c", "--r", "0.15")
    assert code == 0 and json.loads(out)["alpha_c"] == pytest.approx(0.2944, abs=1e-4)
    code, out, _ = run(capsys, "theory", "kappa", "--r", "0.5")
    assert json.loads(out)["kappa"] == pytest.approx(0.79788, abs=1e-5)


def test_theory_saddle_contract(capsys):
    code, out, _ = run(capsys, "theory", "saddle", "--alpha", "0.28", "--r", "0.15", "--beta", "30",
                       "--lambda", "1e-7")
    res = json.loads(out)
    assert code == 0
    assert abs(res["residual_nu"]) <= 1e-7 and abs(res["residual_chi"]) <= 1e-7
    assert res["nu_star"] > 20 and res["loss"] < 0.02


def test_theory_classify_and_rho(capsys):
    code, out, _ = run(capsys, "theory", "classify", "--alpha", "0.6", "--r", "0.15")
    assert json.loads(out)["phase"] == "UNSAT"
    code, out, _ = run(capsys, "theory", "rho", "--alpha", "0.28", "--r", "0.15")
    assert json.loads(out)["rho_alpha"] == pytest.approx(1.609, abs=1e-3)


@pytest.mark.parametrize("argv", [
    ("theory", "alpha-c", "--r", "1.5"),
    ("theory", "rho", "--alpha", "0.9", "--r", "0.15"),
    ("theory", "saddle", "--alpha", "0.3", "--r", "0.2", "--lambda", "0"),
    ("cmm-threshold", "--set", "trials=-1"),
    ("top1-sweep", "--full-scale"),
])
def test_domain_errors_exit_2(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == EXIT_CONFIG and "error" in err


def test_numerical_failure_exit_3(capsys, monkeypatch):
    import tamlab.phase as phase

    def boom(*a, **k):
        raise RuntimeError("ladder did not stabilize")

    monkeypatch.setattr(phase, "unsat_ridgeless", boom)
    code, _, err = run(capsys, "theory", "unsat", "--alpha", "0.6", "--r", "0.15")
    assert code == EXIT_NUMERIC and "numerical failure" in err


def test_sweep_and_replot(tmp_path, capsys):
    out = tmp_path / "cmm"
    code, stdout, _ = run(capsys, "cmm-threshold", "--out", str(out), "--seed", "1", "--workers", "1",
                          "--set", "n=40", "--set", "rho_grid=2,16", "--set", "trials=2")
    assert code == 0 and isinstance(json.loads(stdout), dict)
    svg = (out / "cmm_threshold.svg").read_bytes()
    (out / "cmm_threshold.svg").unlink()
    assert run(capsys, "replot", str(out))[0] == 0
    assert (out / "cmm_threshold.svg").read_bytes() == svg
