import io
import json
import subprocess
import sys

import numpy as np
import pytest

from crbounds import bounds, mp_law
from crbounds.cli import run
from crbounds.core_model import ModelConfig, constants
from crbounds.experiments import SWEEP_COLUMNS


def call(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = run(list(argv), out, err)
    return code, out.getvalue(), err.getvalue()


def record(text):
    return dict(tok.split("=", 1) for tok in text.split())


class TestOutput:
    def test_constants_linear(self):
        code, out, _ = call("constants", "--activation", "linear", "--alpha", "1", "--sigma-x2", "1")
        assert code == 0
        rec = record(out)
        assert (rec["eta0"], rec["theta11"], rec["eta1"]) == ("1", "1", "1")

    def test_constants_round_trip(self):
        _, out, _ = call("constants", "--activation", "tanh", "--sigma-x2", "2")
        c = constants("tanh", 2 ** 0.5)
        assert float(record(out)["eta0"]) == c.eta0

    def test_bound_linear_matches_library(self):
        code, out, _ = call("bound", "linear", "--d", "100", "--m", "200", "--alpha", "1",
                            "--sigma-x2", "1", "--sigma-eps2", "0.1")
        assert code == 0
        lib = bounds.bound_linear_any(ModelConfig(d=100, n1=100, m=200, sigma_eps2=0.1)).value
        assert float(record(out)["value"]) == lib

    def test_bound_two_layer_json(self):
        code, out, _ = call("bound", "two-layer", "--d", "40", "--n1", "40", "--m", "40",
                            "--activation", "sigmoid", "--json")
        assert code == 0
        rec = json.loads(out)
        assert rec["value"] == max(rec["b1"], rec["b2"])
        assert rec["activation"] == "sigmoid"

    def test_bound_unbiased(self):
        _, out, _ = call("bound", "unbiased", "--d", "10", "--n1", "5", "--m", "100",
                         "--sigma-eps2", "0.2", "--model", "nonlinear_two_layer")
        assert float(record(out)["value"]) == pytest.approx(0.2 * 50 / 100)

    def test_mp_integrate(self):
        _, out, _ = call("mp", "integrate", "--gamma", "2", "--moment", "0")
        rec = record(out)
        assert float(rec["value"]) == pytest.approx(1.0, abs=1e-10)
        assert float(rec["atom_mass"]) == 0.5

    def test_mp_density_csv(self):
        _, out, _ = call("mp", "density", "--gamma", "0.5", "--points", "5")
        lines = out.splitlines()
        assert lines[0] == "s,density"
        s, dens = map(float, lines[3].split(","))
        np.testing.assert_allclose(dens, mp_law.mp_density(mp_law.MPLaw(0.5), s), rtol=1e-15)

    def test_verify_stieltjes(self):
        _, out, _ = call("verify", "stieltjes", "--d", "50", "--n1", "50", "--m", "50")
        rec = record(out)
        assert float(rec["residual"]) <= 1e-12
        assert float(rec["complex_consistency"]) <= 1e-10

    def test_verify_expansion_json(self):
        _, out, _ = call("verify", "expansion", "--json")
        payload = json.loads(out)
        assert payload["columns"] == ["eps", "residual", "slope"]
        assert len(payload["rows"]) == 3

    def test_verify_sigma_csv(self):
        code, out, _ = call("verify", "sigma", "--dims", "10,20", "--trials", "2",
                            "--activation", "linear")
        assert code == 0
        lines = out.splitlines()
        assert lines[0] == "report,dim,metric,trials"
        assert len(lines) == 3

    def test_fisher_rank_and_spectrum(self, tmp_path):
        spec = tmp_path / "eig.csv"
        code, out, _ = call("fisher-rank", "--d", "4", "--n1", "3", "--activation", "linear",
                            "--spectrum", str(spec))
        assert code == 0
        assert record(out)["rank"] == "4"
        assert len(spec.read_text().splitlines()) == 1 + 15


class TestSweep:
    ARGS = ("sweep", "gamma0", "--from", "0.25", "--to", "4", "--points", "5", "--spacing", "log",
            "--d", "30", "--n1", "30", "--m", "30", "--activation", "tanh")

    def test_schema_and_grid(self):
        code, out, _ = call(*self.ARGS)
        assert code == 0
        lines = out.splitlines()
        assert lines[0] == ",".join(SWEEP_COLUMNS)
        assert len(lines) == 6

    def test_idempotent_bytes(self):
        assert call(*self.ARGS)[1] == call(*self.ARGS)[1]

    def test_sgd_out_file(self, tmp_path):
        cfg = tmp_path / "sweep.cfg"
        cfg.write_text("d = 6\nn1 = 6\nm = 6\nsigma_eps2 = 0.2\n")
        dest = tmp_path / "sweep.csv"
        code, out, _ = call("sweep", "gamma0", "--from", "1", "--to", "2", "--points", "2",
                            "--activation", "tanh", "--config", str(cfg), "--sgd", "--epochs", "3",
                            "--n-theta", "1", "--n-datasets", "2", "--n-test", "50",
                            "--threads", "1", "--out", str(dest))
        assert code == 0 and out == ""
        rows = [l.split(",") for l in dest.read_text().splitlines()[1:]]
        assert len(rows) == 2
        assert all(r[-1] == "ok" and r[5] != "" for r in rows)


class TestErrors:
    def test_usage_error(self):
        code, out, err = call("bound", "linear", "--d", "ten")
        assert code == 1 and out == "" and "error" in err

    def test_missing_subcommand(self):
        assert call()[0] == 1

    def test_invalid_config_value(self):
        code, _, err = call("bound", "linear", "--d", "100", "--m", "200", "--sigma-eps2", "-1")
        assert code == 1 and err

    def test_bad_config_file(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("d = 10\nwidth = 3\n")
        assert call("bound", "two-layer", "--config", str(cfg))[0] == 1

    def test_no_file_on_config_error(self, tmp_path):
        dest = tmp_path / "out.csv"
        code, _, _ = call("bound", "linear", "--d", "0", "--m", "5", "--out", str(dest))
        assert code == 1
        assert list(tmp_path.iterdir()) == []

    def test_numerical_failure_exit_2_no_file(self, tmp_path):
        dest = tmp_path / "out.txt"
        code, _, err = call("sgd", "--d", "6", "--n1", "6", "--m", "6", "--activation", "linear",
                            "--lr-constant", "400", "--epochs", "30", "--n-theta", "1",
                            "--n-datasets", "2", "--n-test", "50", "--out", str(dest))
        assert code == 2 and "diverged" in err
        assert list(tmp_path.iterdir()) == []

    def test_existing_file_untouched_on_failure(self, tmp_path):
        dest = tmp_path / "keep.txt"
        dest.write_text("old")
        call("mp", "integrate", "--gamma", "2", "--out", str(dest))
        assert dest.read_text() == "old"


def test_module_entry_point_help():
    res = subprocess.run([sys.executable, "-m", "crbounds", "sweep", "--help"],
                         capture_output=True, text=True, check=True)
    assert "--points" in res.stdout and "default: 9" in res.stdout
