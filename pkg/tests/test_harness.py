import csv
import io
import json
from pathlib import Path

import numpy as np
import pytest

from loopqed.harness import config as C
from loopqed.harness import estimators as E
from loopqed.harness import experiments as X
from loopqed.harness.cli import main
from loopqed.scales import FormFactor

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

BASIC = """
[run]
seed = 7
samples = 500
slices = 16
chunk = 128

[ratios]
lam_a = 1e-3
lam_b = 2e-3
lam_ph = 100

[grid]
r_over_lph = 1e-3, 1e-2
"""


def _write(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


# ---- configuration ------------------------------------------------------------


def test_parse_basic():
    cfg = C.parse_config(BASIC, "wc2")
    assert (cfg.seed, cfg.samples, cfg.slices, cfg.chunk) == (7, 500, 16, 128)
    assert (cfg.lam_a, cfg.lam_b, cfg.lam_ph) == (1e-3, 2e-3, 100.0)
    assert cfg.r_grid == (1e-3, 1e-2)
    assert cfg.form_factor == FormFactor("gaussian", 8.0)


def test_parse_physical_section():
    text = """
[physical]
beta = 2.0
pair = e, p
r = 3.0
[species.e]
mass = 1.0
charge = -1
[species.p]
mass = 4.0
"""
    cfg = C.parse_config(text, "normal-order")
    # lam_mat = sqrt(beta / m), lam_ph = beta, both over r
    assert cfg.lam_a == pytest.approx(np.sqrt(2.0) / 3.0)
    assert cfg.lam_b == pytest.approx(np.sqrt(0.5) / 3.0)
    assert cfg.lam_ph == pytest.approx(2.0 / 3.0)
    assert [s.label for s in cfg.species] == ["e", "p"]
    assert cfg.beta == 2.0


def test_parse_quad_and_options():
    text = BASIC + "\n[quad]\nn_polar = 16\nk_max = none\nadaptive_angular = no\n[wm2]\nroute = full\n"
    cfg = C.parse_config(text, "wm2")
    assert cfg.quad.n_polar == 16 and cfg.quad.k_max is None and not cfg.quad.adaptive_angular
    assert cfg.option("route") == "full"
    assert C.parse_config(text, "wc2").option("route", "dipole") == "dipole"


@pytest.mark.parametrize(
    "text",
    [
        "[run]\nsamples = many\n",
        "[run]\nsamples = 0\n",
        "[ratios]\nlam_ph = -1\n",
        "[grid]\nr_over_lph = 1e-2, 1e-3\n",
        "[grid]\nr_over_lph = 0, 1\n",
        "[ratios]\nlam_a = 1\n[physical]\nbeta = 1\n",
        "[bogus]\nx = 1\n",
        "[quad]\nwidth = 3\n",
        "[form_factor]\nkind = lorentzian\nk_cut = 2\n",
        "[physical]\nbeta = 1\npair = e, e\nr = 1\n",
        "not an ini file",
    ],
)
def test_config_errors(text):
    with pytest.raises(C.ConfigError):
        C.parse_config(text, "wc2")


def test_unknown_experiment_and_missing_file(tmp_path):
    with pytest.raises(C.ConfigError):
        C.ExperimentConfig("wc3")
    with pytest.raises(C.ConfigError):
        C.load_config(tmp_path / "missing.ini", "wc2")


def test_fingerprint_ignores_key_order_and_output_dir():
    reordered = """
[grid]
r_over_lph = 1e-3, 1e-2
[ratios]
lam_ph = 100
lam_b = 2e-3
lam_a = 1e-3
[run]
chunk = 128
slices = 16
samples = 500
seed = 7
out = elsewhere
"""
    a = C.parse_config(BASIC, "wc2")
    b = C.parse_config(reordered, "wc2")
    assert a.fingerprint() == b.fingerprint()
    assert a.with_overrides(seed=8).fingerprint() != a.fingerprint()
    assert a.with_overrides(seed=None) == a


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.ini")))
def test_shipped_configs_parse(path):
    cfg = C.load_config(path, path.stem)
    assert cfg.experiment == path.stem


# ---- estimators ----------------------------------------------------------------


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv(E.WORKERS_ENV, "3")
    assert E.worker_count() == 3
    for bad in ("0", "x", "-2"):
        monkeypatch.setenv(E.WORKERS_ENV, bad)
        with pytest.raises(C.ConfigError):
            E.worker_count()


def test_chunked_samples_independent_of_workers():
    fn = lambda rng, size: rng.standard_normal((size, 2))
    a = E.chunked_samples(fn, 1000, 4, 64, workers=1)
    b = E.chunked_samples(fn, 1000, 4, 64, workers=5)
    assert a.shape == (1000, 2) and np.array_equal(a, b)
    c = E.chunked_samples(fn, 1000, 4, 64, stream=1, workers=1)
    assert not np.array_equal(a, c)


def test_standard_errors():
    v = np.array([1.0, 2.0, 3.0, 4.0])
    assert E.mean_se(v) == pytest.approx((2.5, np.std(v, ddof=1) / 2))
    rng = np.random.default_rng(0)
    num = rng.normal(2.0, 0.1, 20000)
    den = rng.normal(4.0, 0.1, 20000)
    r, se = E.ratio_se(num, den)
    assert r == pytest.approx(0.5, abs=4 * se)
    # independent num, den: var(r) = (s^2/b^2 + a^2 s^2/b^4) / n
    assert se == pytest.approx(np.sqrt((0.01 / 16 + 4 * 0.01 / 256) / 20000), rel=0.05)


def test_wc_sq_zero_coupling():
    rec = E.estimate_wc_sq(C.ExperimentConfig("wc2", samples=300, slices=16, lam_a=0.0))
    assert rec.value == 0.0 and rec.se == 0.0


def test_wc_sq_se_scales_as_inverse_root_n():
    base = C.ExperimentConfig("wc2", samples=2000, slices=16, seed=5)
    s1 = E.estimate_wc_sq(base).se
    s4 = E.estimate_wc_sq(base.with_overrides(samples=8000)).se
    assert s1 / s4 == pytest.approx(2.0, rel=0.2)


def test_records_carry_fingerprint():
    cfg = C.parse_config(BASIC, "wc2")
    rec = E.estimate_wc_sq(cfg)
    d = rec.as_dict()
    assert d["fingerprint"] == cfg.fingerprint()
    assert (d["N"], d["M"], d["seed"]) == (500, 16, 7)
    assert d["tolerance"] >= d["discretization"]


def test_slices_for():
    cfg = C.ExperimentConfig("wm2", slices=64)
    assert E.slices_for(cfg, 1.0) == 64
    assert E.slices_for(cfg, 100.0) == 2048
    off = C.ExperimentConfig("wm2", slices=64, options=(("auto_slices", "no"),))
    assert E.slices_for(off, 100.0) == 64


def test_cancellation_scan_needs_grid():
    with pytest.raises(C.ConfigError):
        E.run_cancellation_scan(C.ExperimentConfig("cancellation-scan"))


def test_fit_slope():
    x = np.array([1.0, 2.0, 4.0])
    assert E.fit_slope(x, 3 * x**-1.5) == pytest.approx(-1.5)


# ---- experiments and outputs ---------------------------------------------------


def test_csv_header_matches_schema():
    cfg = C.parse_config(BASIC, "wc2")
    res = X.execute(cfg)
    header = next(csv.reader(io.StringIO(res.csv_text)))
    schema = json.loads((Path(X.__file__).parent / "csv_schema.json").read_text())
    assert header == [c["name"] for c in schema["columns"]]
    with pytest.raises(KeyError):
        X.render_csv([{"quantity": "x", "colour": 1}])


def test_summary_provenance():
    cfg = C.parse_config(BASIC, "wc2")
    res = X.execute(cfg)
    prov = res.summary["provenance"]
    assert prov["seed"] == 7 and prov["fingerprint"] == cfg.fingerprint()
    assert prov["quad_fingerprint"] == cfg.quad.fingerprint()
    assert res.summary["all_passed"] == res.passed
    json.dumps(res.summary)


def test_execute_deterministic_across_workers(monkeypatch):
    cfg = C.parse_config(BASIC, "wc2")
    monkeypatch.setenv(E.WORKERS_ENV, "1")
    a = X.execute(cfg)
    monkeypatch.setenv(E.WORKERS_ENV, "4")
    b = X.execute(cfg)
    assert a.csv_text == b.csv_text
    assert json.dumps(a.summary, sort_keys=True) == json.dumps(b.summary, sort_keys=True)


# ---- command line ----------------------------------------------------------------


def test_cli_success(tmp_path, monkeypatch):
    monkeypatch.setenv(E.WORKERS_ENV, "2")
    cfg = _write(tmp_path, BASIC)
    out = tmp_path / "out"
    assert main(["wc2", "--config", str(cfg), "--out", str(out), "--samples", "400"]) == 0
    summary = json.loads((out / "wc2.json").read_text())
    assert summary["config"]["samples"] == 400
    assert (out / "wc2.csv").read_text().startswith("quantity,")


def test_cli_config_error_writes_nothing(tmp_path):
    cfg = _write(tmp_path, "[run]\nsamples = -5\n")
    out = tmp_path / "out"
    assert main(["wc2", "--config", str(cfg), "--out", str(out)]) == 2
    assert not out.exists()
    assert main(["wc2", "--config", str(tmp_path / "nope.ini"), "--out", str(out)]) == 2


def test_cli_usage_errors(tmp_path):
    cfg = _write(tmp_path, BASIC)
    for argv in (["wc3", "--config", str(cfg)], ["wc2"], ["wc2", "--config", str(cfg), "--seed", "x"]):
        with pytest.raises(SystemExit) as err:
            main(argv)
        assert err.value.code == 2


def test_cli_bad_worker_env(tmp_path, monkeypatch):
    monkeypatch.setenv(E.WORKERS_ENV, "zero")
    cfg = _write(tmp_path, BASIC)
    assert main(["wc2", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_cli_numeric_failure(tmp_path):
    text = """
[run]
samples = 3
slices = 8
[ratios]
lam_a = 0.1
lam_b = 0.1
lam_ph = 2
[grid]
r_over_lph = 0.5
[quad]
limit = 1
epsabs = 1e-30
epsrel = 1e-15
[wm2]
route = full
"""
    out = tmp_path / "out"
    assert main(["wm2", "--config", str(_write(tmp_path, text)), "--out", str(out)]) == 1
    assert not out.exists()
