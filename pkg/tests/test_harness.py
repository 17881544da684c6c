import csv
import json
import math
import textwrap
from pathlib import Path

import numpy as np
import pytest

from ddsde.harness import cli
from ddsde.harness.config import ConfigError, load_config, parse_config
from ddsde.harness.experiments import (run_bounds_table, run_density_propagation,
                                       run_mfl_sweep, run_stability, run_tanaka_check)
from ddsde.noise import read_ensemble

BROWNIAN = {"process": "brownian", "sigma": 1.0,
            "initial": {"kind": "gaussian", "mean": [0.0], "variance": [1.0]}}


def config(kind, **sections):
    raw = {"experiment": kind, "grid": {"horizon": 1.0, "steps": 16}}
    raw.update(sections)
    return parse_config(raw)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestConfig:
    def test_defaults(self):
        cfg = config("bounds-table")
        assert cfg.solver.picard_tol == 1e-8 and cfg.solver.weight_factor == 4.0
        assert cfg.seeds == [0]

    @pytest.mark.parametrize("raw,match", [
        ({"experiment": "density", "grid": {"step": 3}}, "unknown"),
        ({"experiment": "density", "bogus": 1}, "unknown"),
        ({"experiment": "nope"}, "unknown experiment"),
        ({"experiment": "density", "run": {"n_schedule": [16, 16]}}, "increasing"),
        ({"experiment": "density", "run": {"n_schedule": [16], "n_ref": 16}}, "n_ref"),
        ({"experiment": "density", "run": {"seeds": []}}, "nonempty"),
        ({"experiment": "density", "drift": {"family": "mean_attraction", "dim": 2}}, "dimension"),
        ({"experiment": "density", "drift": {"family": "unknown"}}, "family"),
        ({"experiment": "density", "grid": {"steps": 0}}, "steps"),
        ({"experiment": "density", "noise": {"initial": {"kind": "uniform"}}}, "low"),
    ])
    def test_rejects(self, raw, match):
        with pytest.raises(ConfigError, match=match):
            parse_config(raw)

    def test_kind_mismatch(self):
        with pytest.raises(ConfigError):
            parse_config({"experiment": "density"}, kind="stability")

    def test_seed_override_and_hash(self):
        raw = {"experiment": "stability", "run": {"seeds": [1, 2, 3]}}
        a, b = parse_config(raw), parse_config(raw, seed_override=9)
        assert b.seeds == [9] and a.config_hash != b.config_hash
        assert a.config_hash == parse_config(raw).config_hash

    def test_load_file(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text('experiment = "tanaka-check"\n[drift]\nfamily = "mean_attraction"\n'
                     'kappa = 2.0\n')
        cfg = load_config(p)
        assert cfg.drift.kappa == 2.0
        (tmp_path / "bad.toml").write_text("this is = = not toml")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "bad.toml")

    def test_drift_families(self, tmp_path):
        from ddsde.lattice import LatticeFunction, save_lattice
        kern = LatticeFunction([-1.0], 0.5, np.array([[1.0], [0.5], [0.0], [-0.5], [-1.0]]))
        save_lattice(kern, tmp_path / "k.lat")
        for drift in ({"family": "osgood_convolution", "modulus": "linear", "slope": 2.0},
                      {"family": "monotone_power", "interaction_kappa": 1.0},
                      {"family": "antisymmetric_interaction", "coefficient": -0.5},
                      {"family": "convolution_kernel", "lattice_file": str(tmp_path / "k.lat"),
                       "divergence_bound": 1.0},
                      {"family": "zero"}):
            cfg = config("stability", drift=drift)
            assert cfg.drift.family == drift["family"]


class TestMflSweep:
    def test_zero_drift_rows_equal(self):
        cfg = config("mfl-sweep", noise=BROWNIAN,
                     run={"n_schedule": [4, 8], "n_ref": 32, "seeds": [1, 2]})
        res = run_mfl_sweep(cfg)
        for row in res.rows:
            assert row[2] == row[3]
        assert [r[:2] for r in res.rows] == [[4, 1], [4, 2], [8, 1], [8, 2]]

    def test_lipschitz_bound_column(self):
        cfg = config("mfl-sweep", noise=BROWNIAN, drift={"family": "mean_attraction"},
                     run={"n_schedule": [8], "n_ref": 32, "seeds": [1]})
        row = run_mfl_sweep(cfg).rows[0]
        assert row[4] == pytest.approx(math.exp(2) * row[3], rel=1e-12)

    def test_nonlipschitz_bound_is_na(self):
        cfg = config("mfl-sweep", noise=BROWNIAN,
                     drift={"family": "monotone_power"},
                     run={"n_schedule": [4], "n_ref": 16, "seeds": [1]})
        res = run_mfl_sweep(cfg)
        assert res.rows[0][4] == "n/a" and res.passed

    def test_threads_do_not_change_numbers(self):
        cfg = config("mfl-sweep", noise=BROWNIAN, drift={"family": "mean_attraction"},
                     run={"n_schedule": [4, 8], "n_ref": 16, "seeds": [1, 2]})
        a, b = run_mfl_sweep(cfg), run_mfl_sweep(cfg, threads=3)
        assert [r[:5] for r in a.rows] == [r[:5] for r in b.rows]


class TestTanaka:
    def test_zero_drift(self):
        res = run_tanaka_check(config("tanaka-check", noise=BROWNIAN))
        assert res.passed and res.summary["max_gap"] == 0.0

    def test_osgood_linear_regime(self):
        cfg = config("tanaka-check", grid={"horizon": 1.0, "steps": 256}, noise=BROWNIAN,
                     drift={"family": "osgood_convolution", "modulus": "linear"},
                     solver={"picard_tol": 1e-8}, tanaka={"n": 32})
        res = run_tanaka_check(cfg)
        assert res.passed
        assert res.summary["max_gap"] <= 10 * 1e-8

    def test_slope_diagnostic(self):
        cfg = config("tanaka-check", grid={"horizon": 1.0, "steps": 1024}, noise=BROWNIAN,
                     drift={"family": "osgood_convolution", "modulus": "linear"},
                     solver={"picard_tol": 1e-7}, tanaka={"n": 64}, run={"seeds": [0]})
        res = run_tanaka_check(cfg)
        slope = res.rows[0][-1]
        assert abs(slope - 1.0) <= 0.3


class TestStability:
    def test_zero_delta(self):
        cfg = config("stability", noise=BROWNIAN, drift={"family": "mean_attraction"},
                     stability={"delta": 0.0, "n": 8})
        res = run_stability(cfg)
        assert res.passed and res.rows[0][3] == "n/a" and res.rows[0][2] == 0.0

    @pytest.mark.parametrize("mode", ["shift", "random_shift", "brownian"])
    def test_input_distance(self, mode):
        cfg = config("stability", noise=BROWNIAN, drift={"family": "mean_attraction"},
                     stability={"delta": 0.1, "n": 8, "perturbation": mode})
        res = run_stability(cfg)
        assert res.passed
        if mode != "brownian":
            assert res.rows[0][1] == pytest.approx(0.1, rel=1e-12)

    def test_unknown_perturbation(self):
        cfg = config("stability", stability={"perturbation": "spin"})
        with pytest.raises(ValueError):
            run_stability(cfg)


class TestDensity:
    UNIFORM = {"process": "zero",
               "initial": {"kind": "uniform", "low": [0.0, 0.0], "high": [1.0, 1.0]}}

    def test_zero_kernel_constant(self):
        cfg = config("density", noise=self.UNIFORM,
                     drift={"family": "convolution_kernel", "dim": 2,
                            "matrix": [[0.0, 0.0], [0.0, 0.0]]},
                     density={"n": 20000, "samples": 5, "lower_check": True})
        res = run_density_propagation(cfg)
        assert res.passed
        kdes = [r[2] for r in res.rows]
        assert max(kdes) == min(kdes)

    def test_contracting_kernel(self):
        kappa = 0.5
        cfg = config("density", noise=self.UNIFORM,
                     drift={"family": "convolution_kernel", "dim": 2,
                            "matrix": [[-kappa, 0.0], [0.0, -kappa]]},
                     density={"n": 20000, "samples": 5})
        res = run_density_propagation(cfg)
        assert res.summary["bound"] == pytest.approx(math.exp(2 * kappa))
        assert res.passed
        hist = [r[3] for r in res.rows]
        assert hist[-1] > hist[0]

    def test_needs_density(self):
        cfg = config("density", drift={"family": "convolution_kernel", "matrix": [[0.0]]})
        with pytest.raises(ValueError, match="density"):
            run_density_propagation(cfg)


class TestBoundsTable:
    def test_rows(self):
        res = run_bounds_table(config("bounds-table"))
        assert res.passed
        lin = [r for r in res.rows if r[0] == "bihari_M" and r[1].startswith("linear")]
        assert [r[5] for r in lin if r[3] == 1.0][0] == pytest.approx(math.exp(2))
        assert all(r[5] == 0.0 for r in res.rows if r[0] == "bihari_M" and r[3] == 0.0)
        log_vals = [r[5] for r in res.rows if r[0] == "bihari_M" and r[1] == "u(1-ln u)"]
        assert log_vals == sorted(log_vals)


def write(tmp_path, text):
    p = tmp_path / "cfg.toml"
    p.write_text(textwrap.dedent(text))
    return p


class TestCli:
    TANAKA = """
        experiment = "tanaka-check"
        [grid]
        steps = 64
        [drift]
        family = "mean_attraction"
        [noise]
        process = "brownian"
        sigma = 1.0
        [tanaka]
        n = 8
        [run]
        seeds = [1, 2]
    """

    def test_pass_writes_reports(self, tmp_path):
        cfg = write(tmp_path, self.TANAKA)
        out = tmp_path / "out"
        assert cli.main(["tanaka-check", "--config", str(cfg), "--out", str(out)]) == 0
        rows = read_csv(out / "report.csv")
        assert rows[0][:3] == ["seed", "picard_tol", "gap"]
        meta = json.loads((out / "report.meta").read_text())
        assert meta["passed"] and meta["schema_version"] == 1
        assert meta["config_hash"] == load_config(cfg).config_hash
        assert {"ddsde", "numpy", "scipy", "python"} <= set(meta["versions"])

    def test_reproducible_bits(self, tmp_path):
        cfg = write(tmp_path, self.TANAKA)
        for name in ("a", "b"):
            cli.main(["tanaka-check", "--config", str(cfg), "--out", str(tmp_path / name)])
        assert (tmp_path / "a/report.csv").read_bytes() == (tmp_path / "b/report.csv").read_bytes()

    def test_seed_override(self, tmp_path):
        cfg = write(tmp_path, self.TANAKA)
        cli.main(["tanaka-check", "--config", str(cfg), "--out", str(tmp_path / "o"),
                  "--seed-override", "5"])
        rows = read_csv(tmp_path / "o/report.csv")[1:]
        assert {r[0] for r in rows} == {"5"}

    def test_failure_exit_code(self, tmp_path):
        cfg = write(tmp_path, """
            experiment = "stability"
            [grid]
            steps = 16
            [drift]
            family = "mean_attraction"
            kappa = 1.0
            [noise]
            process = "brownian"
            sigma = 1.0
            [stability]
            n = 8
            perturbation = "shift"
            delta = 0.1
            [tolerance]
            stability_slack = 1.0
        """)
        assert cli.main(["stability", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
        # a blow-up is a runtime error, not a check failure
        cfg2 = write(tmp_path, """
            experiment = "stability"
            [grid]
            steps = 16
            [drift]
            family = "mean_attraction"
            kappa = -40.0
            [noise]
            process = "brownian"
            sigma = 1.0
            [solver]
            blowup_cap = 10.0
            [stability]
            n = 8
        """)
        assert cli.main(["stability", "--config", str(cfg2), "--out", str(tmp_path / "p")]) == 2

    def test_check_failure_is_one(self, tmp_path):
        cfg = write(tmp_path, """
            experiment = "density"
            [grid]
            steps = 4
            [drift]
            family = "convolution_kernel"
            dim = 2
            matrix = [[0.0, 0.0], [0.0, 0.0]]
            [noise]
            initial.kind = "uniform"
            initial.low = [0.0, 0.0]
            initial.high = [1.0, 1.0]
            [density]
            n = 2000
            samples = 2
            factor_tolerance = 1.001
            lower_check = true
        """)
        assert cli.main(["density", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1

    def test_config_error_exit_code(self, tmp_path):
        cfg = write(tmp_path, 'experiment = "density"\n[grid]\nbogus = 1\n')
        assert cli.main(["density", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert cli.main(["density", "--config", str(tmp_path / "missing.toml"),
                         "--out", str(tmp_path / "o")]) == 2

    def test_ensemble_dump(self, tmp_path):
        cfg = write(tmp_path, """
            experiment = "mfl-sweep"
            [grid]
            steps = 8
            [noise]
            process = "brownian"
            sigma = 1.0
            [run]
            n_schedule = [4]
            n_ref = 8
            seeds = [3]
            dump_ensembles = true
        """)
        out = tmp_path / "o"
        assert cli.main(["mfl-sweep", "--config", str(cfg), "--out", str(out)]) == 0
        ens = read_ensemble(out / "ensemble_N4_seed3.bin")
        assert ens.size == 4 and ens.seed_record == 3


CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.toml")), ids=lambda p: p.stem)
def test_shipped_configs_parse(path):
    cfg = load_config(path)
    assert cfg.kind in cli.EXPERIMENTS
