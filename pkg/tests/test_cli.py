import json

import pytest

from fockqng import __version__
from fockqng.cli import DEFAULT_CONFIG, main


@pytest.fixture
def cfg_file(tmp_path, curve_cache):
    """Default settings with the session curve cache so thresholds are computed once."""
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"cache_dir": str(curve_cache)}))
    return p


def run(*argv):
    return main([str(a) for a in argv])


def load(path):
    return json.loads(path.read_text())


def write(path, text):
    path.write_text(text)
    return path


class TestForce:
    def test_default_budget(self, tmp_path, capsys):
        assert run("force", "--out", tmp_path) == 0
        doc = load(tmp_path / "force.json")
        assert doc["sensitivity"] == pytest.approx(6.32e-14, rel=0.01)
        assert doc["units"]["sensitivity"] == "N/sqrt(Hz)"
        assert "63.2 fN" in capsys.readouterr().out

    def test_manifest(self, tmp_path):
        run("force", "--out", tmp_path, "--seed", 7)
        m = load(tmp_path / "force.json")["manifest"]
        assert m["command"] == "force" and m["seed"] == 7
        assert m["tool_version"] == __version__
        assert m["outputs"] == [str(tmp_path / "force.json")]
        assert set(m["config"]) == set(DEFAULT_CONFIG)

    def test_deterministic_apart_from_wall_time(self, tmp_path):
        docs = []
        for _ in range(2):
            run("force", "--out", tmp_path)
            d = load(tmp_path / "force.json")
            d["manifest"].pop("wall_time_s")
            docs.append(d)
        assert docs[0] == docs[1]


class TestConfig:
    def test_unknown_key(self, tmp_path, capsys):
        cfg = write(tmp_path / "c.json", '{"nope": 1}')
        assert run("force", "--config", cfg, "--out", tmp_path) == 1
        assert "nope" in capsys.readouterr().err

    def test_bad_json_has_line(self, tmp_path, capsys):
        cfg = write(tmp_path / "c.json", '{\n"seed": }')
        assert run("force", "--config", cfg, "--out", tmp_path) == 1
        assert "c.json:2" in capsys.readouterr().err

    def test_env_variable(self, tmp_path, monkeypatch):
        cfg = write(tmp_path / "c.json", '{"mass_ug": 64.8}')
        monkeypatch.setenv("FOCKQNG_CONFIG", str(cfg))
        run("force", "--out", tmp_path)
        doc = load(tmp_path / "force.json")
        assert doc["manifest"]["config_path"] == str(cfg)
        assert doc["sensitivity"] == pytest.approx(6.32e-14 * 2, rel=0.01)

    def test_usage_error(self, capsys):
        assert run("fisher", "--bogus") == 1
        assert run("qng", "explode") == 1


class TestFisher:
    def test_vacuum_is_flat_four(self, tmp_path):
        assert run("fisher", "--fock", 0, "--out", tmp_path, "--alpha-points", 20) == 0
        doc = load(tmp_path / "fisher.json")
        assert doc["fi_max"] == pytest.approx(4, abs=1e-6)
        rows = (tmp_path / "fisher.csv").read_text().splitlines()
        assert rows[0] == "alpha,fi" and len(rows) == 21
        assert all(abs(float(r.split(",")[1]) - 4) < 1e-6 for r in rows[1:])

    def test_single_phonon(self, tmp_path):
        run("fisher", "--fock", 1, "--out", tmp_path, "--alpha-points", 20)
        assert load(tmp_path / "fisher.json")["fi_max"] == pytest.approx(12, abs=1e-5)

    def test_damped_six(self, tmp_path):
        assert run("fisher", "--fock", 6, "--t-us", 10, "--out", tmp_path, "--alpha-points", 60) == 0
        doc = load(tmp_path / "fisher.json")
        assert 4 < doc["fi_max"] < 52
        assert doc["readout_damping_us"] == 10
        assert "manifest" in doc

    def test_measured_file_with_errors(self, tmp_path):
        f = write(tmp_path / "d.csv", "n,P_n,sigma\n0,0.1,0.01\n1,0.85,0.02\n2,0.05,0.01\n")
        assert run("fisher", "--input", f, "--out", tmp_path, "--alpha-points", 30) == 0
        doc = load(tmp_path / "fisher.json")
        assert doc["fi_max_sigma"] > 0
        assert doc["manifest"]["inputs"] == [str(f)]

    def test_needs_a_source(self, tmp_path):
        assert run("fisher", "--out", tmp_path) == 1

    def test_malformed_and_unphysical(self, tmp_path, capsys):
        bad = write(tmp_path / "bad.csv", "n,P_n\n0,0.5\n1,oops\n")
        assert run("fisher", "--input", bad, "--out", tmp_path) == 1
        assert "bad.csv:3" in capsys.readouterr().err
        big = write(tmp_path / "big.csv", "n,P_n\n0,0.9\n1,0.9\n")
        assert run("fisher", "--input", big, "--out", tmp_path) == 2


class TestQng:
    def test_fock_one(self, tmp_path, cfg_file):
        f = write(tmp_path / "one.csv", "n,P_n\n0,0\n1,1\n")
        assert run("qng", "witness", "--n", 1, "--input", f, "--config", cfg_file, "--out", tmp_path) == 0
        doc = load(tmp_path / "qng_witness.json")
        assert doc["results"][0]["violated"] is True
        assert doc["violated_n"] == [1]
        assert (tmp_path / "curve_n1.csv").read_text().startswith("a,f_bar,p_n,p_np1_plus")

    def test_vacuum(self, tmp_path, cfg_file):
        f = write(tmp_path / "vac.json", '{"probs": [1.0]}')
        assert run("qng", "depth", "--n", 1, 2, "--input", f, "--config", cfg_file, "--out", tmp_path) == 0
        doc = load(tmp_path / "qng_depth.json")
        for r in doc["results"]:
            assert r["violated"] is False
            assert r["depth_db"] == 0.0 and r["wait_time_us"] == 0.0
        assert doc["units"]["depth_db"] == "dB"

    def test_measured_style_six(self, tmp_path, cfg_file):
        f = write(tmp_path / "six.csv", "n,P_n,sigma\n4,0.08,0.01\n5,0.15,0.01\n6,0.75,0.02\n7,0.02,0.01\n8,0,0\n")
        assert run("qng", "depth", "--n", 6, "--input", f, "--config", cfg_file, "--out", tmp_path) == 0
        r = load(tmp_path / "qng_depth.json")["results"][0]
        assert r["violated"] is True
        assert r["depth_db"] > 0 and r["wait_time_us"] > 0

    def test_threshold_report(self, tmp_path, cfg_file):
        assert run("qng", "threshold", "--n", 1, "--config", cfg_file, "--out", tmp_path) == 0
        doc = load(tmp_path / "threshold_report.json")
        assert doc["thresholds"][0]["p_bar"] == pytest.approx(0.47789, abs=1e-4)
        assert load(tmp_path / "curve_n1.json")["format"] == "fockqng.threshold-curve"

    def test_input_required(self, tmp_path, cfg_file):
        assert run("qng", "witness", "--config", cfg_file, "--out", tmp_path) == 1

    def test_unphysical(self, tmp_path, cfg_file):
        f = write(tmp_path / "u.json", '{"probs": [0.7, 0.7]}')
        assert run("qng", "witness", "--n", 1, "--input", f, "--config", cfg_file, "--out", tmp_path) == 2


class TestGrape:
    def test_single_phonon(self, tmp_path, capsys):
        assert run("grape", "--n", 1, "--duration-us", 1.2, "--out", tmp_path) == 0
        rep = load(tmp_path / "grape_n1.json")
        assert rep["fidelity"] >= 0.999 and rep["converged"]
        assert rep["max_amplitude_mhz"] <= rep["ceiling_mhz"] * (1 + 1e-9)
        pulse = load(tmp_path / "pulse_n1.json")
        assert len(pulse["samples"]) == 300 and pulse["dt_ns"] == pytest.approx(4)

    def test_bad_duration(self, tmp_path):
        assert run("grape", "--n", 1, "--duration-us", 1.001, "--out", tmp_path) == 1


class TestRpn:
    def test_simulate_then_fit_then_certify(self, tmp_path, cfg_file):
        assert run("rpn", "simulate", "--n-max", 4, "--fock", 2, "--noise", "none", "--out", tmp_path) == 0
        header = (tmp_path / "rpn_basis.csv").read_text().splitlines()[0]
        assert header == "t_us,n0,n1,n2,n3,n4"
        data = tmp_path / "rpn_data.csv"
        fit_dir = tmp_path / "fit"
        assert run("rpn", "fit", "--n-max", 4, "--noise", "none", "--input", data, "--out", fit_dir) == 0
        doc = load(fit_dir / "distribution.json")
        assert doc["probs"][2] == pytest.approx(1, abs=1e-6)
        # files written by the fit are valid inputs elsewhere
        for name in ("distribution.json", "distribution.csv"):
            assert run("fisher", "--input", fit_dir / name, "--out", tmp_path / "fi", "--alpha-points", 10) == 0
            assert load(tmp_path / "fi" / "fisher.json")["fi_max"] == pytest.approx(20, abs=1e-3)
        assert run("qng", "witness", "--n", 2, "--input", fit_dir / "distribution.json", "--config", cfg_file,
                   "--out", tmp_path / "q") == 0
        assert load(tmp_path / "q" / "qng_witness.json")["results"][0]["violated"] is True

    def test_noisy_fit_with_device_basis(self, tmp_path):
        run("rpn", "simulate", "--n-max", 3, "--fock", 1, "--sigma", 0.01, "--out", tmp_path, "--seed", 3)
        assert run("rpn", "fit", "--n-max", 3, "--input", tmp_path / "rpn_data.csv", "--out", tmp_path) == 0
        doc = load(tmp_path / "distribution.json")
        assert doc["probs"][1] == pytest.approx(1, abs=0.05)
        assert all(s >= 0 for s in doc["sigma"])

    def test_fit_needs_input(self, tmp_path):
        assert run("rpn", "fit", "--out", tmp_path) == 1
