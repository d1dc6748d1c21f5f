import json

import numpy as np
import pandas as pd
import pytest

from conftest import a1_population, split
from saegamlss import AreaFunctional, load_config, load_model, parse_formula, predict_area
from saegamlss.artifact import model_from_dict, model_to_dict
from saegamlss.cli import main
from saegamlss.errors import ConfigError


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    frame = a1_population(51, J=10, N_j=120)
    n_j = np.r_[120, np.linspace(4, 30, 9).round().astype(int)]
    sample, pop = split(frame, n_j, 52)
    sample.frame.to_csv(d / "sample.csv", index=False)
    pop.frame.to_csv(d / "pop.csv", index=False)
    (d / "cfg.yaml").write_text('family: Normal\nunit_id: unit_id\nformulas:\n  mu: "y ~ x1 + (1|area)"\n')
    assert main(["fit", "--config", str(d / "cfg.yaml"), "--data", str(d / "sample.csv"),
                 "--out", str(d / "m.json")]) == 0
    return d, sample, pop


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_parse_formula():
    f = parse_formula("y ~ x1 + x2 + (1|area)")
    assert (f.response, f.terms, f.random_intercept, f.area) == ("y", ("x1", "x2"), True, "area")
    g = parse_formula("~ 1")
    assert g.response is None and g.terms == () and not g.random_intercept
    assert parse_formula("x2").terms == ("x2",)
    for bad in ("y ~ x1 * x2", "y ~ x1 + x1", "y ~ (1|a) + (1|a)", "y ~ x1 +", "y ~ log(x1)"):
        with pytest.raises(ConfigError):
            parse_formula(bad)


def test_config_errors_are_line_anchored():
    good = 'family: LogNormal\nformulas:\n  mu: "y ~ x1 + (1|dom)"\n  sigma: "~ x2"\ncontrol:\n  tol: 1.0e-7\n'
    cfg = load_config(good)
    assert cfg.area == "dom" and cfg.response == "y" and cfg.control.tol == 1e-7
    assert cfg.spec.params["sigma"].terms == ("x2",)
    cases = {
        "family: Normal\nformulas:\n  mu: y ~ x1\ncolour: red\n": ":4: unknown key 'colour'",
        "family: Normal\nformulas:\n  mu: y ~ x1\ncontrol:\n  speed: 3\n": ":5: unknown key 'speed'",
        "family: Normal\nformulas:\n  mu: y ~ x1 * x2\n": ":3:",
        "family: Normal\nformulas:\n  nu: ~ x1\n  mu: y ~ x1\n": ":3: Normal has no parameter 'nu'",
        "family: Weibull\nformulas:\n  mu: y ~ x1\n": ":1:",
        "family: Normal\nformulas:\n  mu: [1\n": "invalid YAML",
        "family: Normal\nformulas:\n  mu: ~ x1\n": "no response",
    }
    for text, msg in cases.items():
        with pytest.raises(ConfigError, match=msg.replace("*", r"\*").replace("[", r"\[")):
            load_config(text, "c.yaml")


def test_artifact_round_trip_gives_identical_predictions(files):
    d, sample, pop = files
    model, meta = load_model(d / "m.json")
    assert meta["unit_id"] == "unit_id" and model.converged
    doc = json.loads((d / "m.json").read_text())
    assert doc["format_version"] == 1
    again, _ = model_from_dict(json.loads(json.dumps(model_to_dict(model))))
    for zeta in (AreaFunctional.mean(), AreaFunctional.poverty_rate()):
        a = predict_area(model, sample, pop, zeta, L=10, seed=1)
        b = predict_area(again, sample, pop, zeta, L=10, seed=1)
        np.testing.assert_array_equal(a.h_hat, b.h_hat)


def test_artifact_version_checked(files):
    d, _, _ = files
    doc = json.loads((d / "m.json").read_text())
    doc["format_version"] = 99
    with pytest.raises(ConfigError, match="format_version"):
        model_from_dict(doc)


def test_fit_prints_coefficient_table(files, capsys):
    d, _, _ = files
    code, out, _ = run(capsys, "fit", "--family", "Normal", "--mu", "y ~ x1 + (1|area)",
                       "--data", d / "sample.csv", "--out", d / "m2.json")
    assert code == 0
    assert "Mu Coefficients:" in out and "Global Deviance" in out and "random intercept sd" in out


def test_predict_census_seed_and_closed_form(files, capsys):
    d, sample, _ = files
    base = ["predict", "--model", d / "m.json", "--sample", d / "sample.csv", "--population", d / "pop.csv"]
    code, out, _ = run(capsys, *base, "--out", d / "p.csv")
    assert code == 0
    p = pd.read_csv(d / "p.csv")
    assert list(p.columns) == ["area", "N_j", "n_j", "H_hat"]
    assert p.loc[0, "n_j"] == p.loc[0, "N_j"] == 120
    assert p.loc[0, "H_hat"] == pytest.approx(sample.frame.loc[sample.frame["area"] == 1, "y"].mean(),
                                              rel=1e-14)
    code, a, _ = run(capsys, *base, "--method", "mc", "--L", "2000", "--seed", "3")
    _, b, _ = run(capsys, *base, "--method", "mc", "--L", "2000", "--seed", "3", "--threads", "2")
    assert a == b
    mc = pd.read_csv(pd.io.common.StringIO(a))
    assert np.all(np.abs(mc["H_hat"] - p["H_hat"]) < 0.5)
    code, out, _ = run(capsys, *base, "--zeta", "quantile", "--u", "0.25", "--L", "5")
    assert code == 0
    code, out, _ = run(capsys, *base, "--zeta", "poverty-rate", "--fraction", "0.5", "--L", "5")
    assert code == 0 and pd.read_csv(pd.io.common.StringIO(out))["H_hat"].between(0, 1).all()


def test_mse_command(files, capsys):
    d, _, _ = files
    args = ["mse", "--model", d / "m.json", "--sample", d / "sample.csv", "--population", d / "pop.csv",
            "--B", "2", "--seed", "7"]
    code, a, _ = run(capsys, *args)
    _, b, _ = run(capsys, *args)
    assert code == 0 and a == b
    t = pd.read_csv(pd.io.common.StringIO(a))
    assert list(t.columns) == ["area", "H_hat", "mse", "rmse", "cv_pct"]
    np.testing.assert_allclose(t["cv_pct"], 100 * t["rmse"] / t["H_hat"], rtol=1e-12)


def test_select_dist_and_report(files, capsys):
    d, _, _ = files
    code, out, _ = run(capsys, "select-dist", "--data", d / "sample.csv", "--penalty", "bic",
                       "--out", d / "sel.csv")
    assert code == 0 and "Normal" in out
    assert set(pd.read_csv(d / "sel.csv")["family"]) == {"Normal", "LogNormal", "Gamma", "Dagum"}
    code, out, _ = run(capsys, "report", "--input", d / "m.json", "--csv", d / "coef.csv")
    assert code == 0 and "AIC" in out
    assert "re_sd" in set(pd.read_csv(d / "coef.csv")["term"])


def test_simulate_and_report(tmp_path, capsys):
    code, out, _ = run(capsys, "simulate", "--scenario", "A1", "--N-total", 1000, "--J", 5, "--T", 2,
                       "--B", 2, "--L", 5, "--seed", 1, "--outdir", tmp_path)
    assert code == 0
    doc = json.loads((tmp_path / "metrics.json").read_text())
    for block in doc["metrics"].values():
        assert set(block) == {"ARB", "AARB", "ACV", "ARRMSE", "ACVR", "AEFF", "ATMSE", "ABMSE", "PCR"}
    code, out, _ = run(capsys, "report", "--input", tmp_path / "metrics.json")
    assert code == 0 and "PCR" in out


def test_simulate_config_file(tmp_path, capsys):
    (tmp_path / "s.yaml").write_text("scenario: C1\nN_total: 1000\nJ: 5\nT: 1\nB: 0\nL: 3\n")
    code, _, _ = run(capsys, "simulate", "--config", tmp_path / "s.yaml", "--outdir", tmp_path / "o")
    assert code == 0
    (tmp_path / "bad.yaml").write_text("scenario: C1\nrounds: 3\n")
    code, _, err = run(capsys, "simulate", "--config", tmp_path / "bad.yaml")
    assert code == 2 and "bad.yaml:2" in err


def test_exit_codes(files, tmp_path, capsys):
    d, _, _ = files
    pd.read_csv(d / "sample.csv").rename(columns={"area": "region"}).to_csv(tmp_path / "s.csv", index=False)
    code, _, err = run(capsys, "fit", "--config", d / "cfg.yaml", "--data", tmp_path / "s.csv",
                       "--out", tmp_path / "m.json")
    assert code == 2 and "'area'" in err
    code, _, err = run(capsys, "simulate", "--scenario", "Z9", "--T", 2)
    assert code == 2 and "Z9" in err
    code, _, _ = run(capsys, "predict", "--model", d / "m.json")
    assert code == 2
    code, _, err = run(capsys, "fit", "--config", d / "cfg.yaml", "--data", d / "sample.csv",
                       "--out", tmp_path / "nc.json", "--max-outer", 1)
    assert code == 3
    assert json.loads((tmp_path / "nc.json").read_text())["converged"] is False
    f = pd.read_csv(d / "sample.csv")
    f.loc[3, "y"] = np.nan
    f.to_csv(tmp_path / "miss.csv", index=False)
    code, _, err = run(capsys, "fit", "--config", d / "cfg.yaml", "--data", tmp_path / "miss.csv",
                       "--out", tmp_path / "x.json")
    assert code == 2 and "missing" in err


def test_help_documents_every_flag(capsys):
    import argparse

    from saegamlss.cli import build_parser

    sub = next(a for a in build_parser()._actions if isinstance(a, argparse._SubParsersAction))
    assert set(sub.choices) == {"fit", "predict", "mse", "select-dist", "simulate", "report"}
    for name, p in sub.choices.items():
        for action in p._actions:
            if action.option_strings and action.dest != "help":
                assert action.help, f"{name} {action.option_strings} has no help text"
        assert main([name, "--help"]) == 0
    capsys.readouterr()
