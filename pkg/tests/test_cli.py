import math

import numpy as np
import pytest

from rrbto import artifacts, benchmarks, cli, config, fem, report

SMALL = """\
benchmark = "cantilever"
nelx = 12
nely = 4
u0 = 440.0
beta = 1.0
epsilon = 0.5
max_mma = 15
max_sora = 3
mu_star = 479.6
sigma_star = 9.14
mc_samples = 200
mc_mode = "full"
"""


def write_config(tmp_path, text=SMALL, **extra):
    lines = [text] + [f"{k} = {v}" for k, v in extra.items()]
    path = tmp_path / "run.toml"
    path.write_text("\n".join(lines) + "\n")
    return path


def row(beta=1.0, epsilon=1.0, pf=0.15, muC=160.0):
    return {"beta": beta, "expected_Pf": artifacts.expected_pf(beta), "epsilon": epsilon,
            "muC": muC, "sigmaC": 0.9, "muB": -220.6, "sigmaB": 0.6, "Pf_mcs": pf,
            "muB_srsm": -220.6, "sigmaB_srsm": 0.6, "loops": 3, "converged": True}


class TestBenchmarks:
    def test_cantilever_counts(self):
        p = benchmarks.build_benchmark("cantilever")
        assert (p.nelx, p.nely, p.nel) == (60, 20, 1200)
        assert len(p.fixed_dofs) >= 42 and p.u0 == 220.0
        assert not p.passive_mask.any()
        assert p.monitored_dof == fem.dof_y(20, 60, 20)

    def test_cantilever_load_points(self):
        p = benchmarks.cantilever()
        assert sorted(d for d, _ in p.loads) == sorted([fem.dof_y(20, 30, 20), fem.dof_y(20, 60, 20)])
        assert all(m == -1.0 for _, m in p.loads)
        moved = benchmarks.cantilever(load_a_ix=45)
        assert fem.dof_y(20, 45, 20) in [d for d, _ in moved.loads]

    def test_lbeam_counts(self):
        p = benchmarks.build_benchmark("lbeam")
        assert p.nel == 3600 and p.passive_mask.sum() == 900 and p.u0 == 130.0
        assert len(p.fixed_dofs) == 2 * 31

    def test_lbeam_load_a_quarter_from_b(self):
        p = benchmarks.lbeam()
        assert sorted(d for d, _ in p.loads) == sorted([fem.dof_y(60, 45, 60), fem.dof_y(60, 60, 60)])
        assert p.monitored_dof == fem.dof_y(60, 60, 60)

    def test_lbeam_passive_is_top_right_quadrant(self):
        p = benchmarks.lbeam(n=8)
        centroids = fem.element_centroids(8, 8)
        expected = (centroids[:, 0] > 4) & (centroids[:, 1] > 4)
        assert np.array_equal(p.passive_mask, expected)

    def test_unknown(self):
        with pytest.raises(ValueError):
            benchmarks.build_benchmark("bridge")

    def test_bad_load_point(self):
        with pytest.raises(ValueError):
            benchmarks.cantilever(load_a_ix=0)


class TestConfig:
    def test_template_parses_to_defaults(self, tmp_path):
        path = tmp_path / "t.toml"
        path.write_text(config.TEMPLATE)
        spec = config.load_spec(path)
        assert spec.epsilons == (1.0, 0.9, 0.8, 0.5, 0.2, 0.0)
        assert spec.problem().nel == 1200 and spec.gamma == config.RunSpec().gamma

    def test_scalar_and_list_values(self):
        spec = config.spec_from_mapping({"beta": [1, 2, 3], "epsilon": 0.5})
        assert spec.cases() == [(1, 0.5), (2, 0.5), (3, 0.5)]

    @pytest.mark.parametrize("data", [{"benchmark": "bridge"}, {"betas": [1.0]},
                                      {"colour": 1}, {"beta": []}, {"epsilon": []},
                                      {"mc_mode": "fast"}, {"mc_samples": 0},
                                      {"modulus_bounds": [1.0]}, {"mma": {"tol": 1}}])
    def test_rejected(self, data):
        with pytest.raises(config.ConfigError):
            config.spec_from_mapping(data)

    def test_invalid_run_parameters(self):
        spec = config.spec_from_mapping({"nelx": 12, "nely": 4})
        with pytest.raises(config.ConfigError):
            spec.rrbto_config(1.0, 2.0)

    def test_correlation_length_units(self):
        spec = config.spec_from_mapping({"normalized_corr": True, "corr_length_x": 0.3})
        cov = spec.rrbto_config(1.0, 1.0).covariance
        assert cov.normalized and (cov.l1, cov.l2) == (0.3, 0.6)

    def test_custom_needs_geometry(self):
        with pytest.raises(config.ConfigError):
            config.spec_from_mapping({"benchmark": "custom", "nelx": 4}).problem()

    def test_custom_problem(self):
        spec = config.spec_from_mapping({
            "benchmark": "custom", "nelx": 4, "nely": 2, "u0": 5.0,
            "fixed_dofs": list(range(6)), "loads": [[fem.dof_y(2, 4, 2), -1.0]],
            "monitored_dof": fem.dof_y(2, 4, 2), "passive_elements": [7]})
        p = spec.problem()
        assert p.nel == 8 and p.passive_mask.sum() == 1 and p.name == "custom"

    def test_bad_toml(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("beta = [1.0\n")
        with pytest.raises(config.ConfigError):
            config.load_spec(path)


class TestExitCodes:
    @pytest.mark.parametrize("key", ["beta", "epsilon"])
    def test_empty_sweep_list_leaves_no_artifacts(self, tmp_path, capsys, key):
        out = tmp_path / "out"
        path = write_config(tmp_path, SMALL.replace(f"{key} = ", f"{key} = [] #"),
                            output=f'"{out}"')
        assert cli.main(["sweep", str(path)]) == cli.EXIT_CONFIG
        assert not out.exists()
        assert "configuration error" in capsys.readouterr().err

    def test_invalid_case_in_sweep_leaves_no_artifacts(self, tmp_path):
        out = tmp_path / "out"
        path = write_config(tmp_path, SMALL.replace("epsilon = 0.5", "epsilon = [0.5, 1.5]"),
                            output=f'"{out}"')
        assert cli.main(["sweep", str(path)]) == cli.EXIT_CONFIG
        assert not out.exists()

    def test_run_rejects_lists(self, tmp_path):
        path = write_config(tmp_path, SMALL.replace("epsilon = 0.5", "epsilon = [0.5, 1.0]"))
        assert cli.main(["run", str(path), "-o", str(tmp_path / "o")]) == cli.EXIT_CONFIG

    def test_missing_config(self, tmp_path):
        assert cli.main(["run", str(tmp_path / "nope.toml")]) == cli.EXIT_CONFIG

    def test_bad_thread_count(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.THREADS_ENV, "many")
        path = write_config(tmp_path)
        assert cli.main(["run", str(path), "-o", str(tmp_path / "o")]) == cli.EXIT_CONFIG

    def test_run_failure_is_reported(self, tmp_path, monkeypatch, capsys):
        def boom(*a, **k):
            raise fem.FeaError("singular stiffness")
        monkeypatch.setattr(cli.sora, "run_rrbto", boom)
        path = write_config(tmp_path)
        assert cli.main(["run", str(path), "-o", str(tmp_path / "o")]) == cli.EXIT_FAILURE
        assert "singular stiffness" in capsys.readouterr().err


@pytest.fixture(scope="module")
def run_outputs(tmp_path_factory):
    """Two identical ``run`` invocations on the 12 x 4 cantilever."""
    base = tmp_path_factory.mktemp("cli")
    path = write_config(base)
    outs = []
    for name in ("a", "b"):
        assert cli.main(["run", str(path), "-o", str(base / name)]) == 0
        outs.append(base / name / cli.case_tag("cantilever", 1.0, 0.5))
    return path, outs


class TestRun:
    def test_artifacts(self, run_outputs):
        _, (out, _) = run_outputs
        assert {p.name for p in out.iterdir()} == {"design.pgm", "design.npz", "trace.ndjson",
                                                   "metrics.csv"}
        assert artifacts.read_pgm(out / "design.pgm").shape == (4, 12)

    def test_csv_header_and_row(self, run_outputs):
        _, (out, _) = run_outputs
        header = (out / "metrics.csv").read_text().splitlines()[0]
        assert header == ("beta,expected_Pf,epsilon,muC,sigmaC,muB,sigmaB,Pf_mcs,muB_srsm,"
                          "sigmaB_srsm,loops,converged")
        (r,) = artifacts.read_rows(out / "metrics.csv")
        assert r["beta"] == 1.0 and r["epsilon"] == 0.5
        assert r["expected_Pf"] == pytest.approx(0.15865525393145707)
        assert r["muB"] < 0 and 0 <= r["Pf_mcs"] <= 1 and r["loops"] >= 1

    def test_trace_log(self, run_outputs):
        _, (out, _) = run_outputs
        events = artifacts.read_trace(out / "trace.ndjson")
        assert events[0]["event"] == "start" and events[-1]["event"] == "end"
        loops = [e for e in events if e["event"] == "loop"]
        assert len(loops) == events[-1]["loops"] and len(loops[0]["xi_star"]) == 2

    def test_deterministic(self, run_outputs):
        _, (a, b) = run_outputs
        for name in ("metrics.csv", "design.pgm"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_validate_saved_design(self, run_outputs, capsys):
        path, (out, _) = run_outputs
        capsys.readouterr()
        assert cli.main(["validate", str(out / "design.npz"), str(path), "--samples", "100",
                         "--mode", "surrogate"]) == 0
        header, values = capsys.readouterr().out.strip().splitlines()
        rec = dict(zip(header.split(","), values.split(",")))
        assert rec["n"] == "100" and rec["mode"] == "surrogate" and rec["mu_C"] == "nan"

    def test_validate_mesh_mismatch(self, run_outputs, tmp_path):
        _, (out, _) = run_outputs
        other = write_config(tmp_path, SMALL.replace("nelx = 12", "nelx = 16"))
        assert cli.main(["validate", str(out / "design.npz"), str(other)]) == cli.EXIT_CONFIG

    def test_threaded_run_matches_serial(self, run_outputs, tmp_path, monkeypatch):
        path, (a, _) = run_outputs
        monkeypatch.setenv(cli.THREADS_ENV, "3")
        assert cli.main(["run", str(path), "-o", str(tmp_path)]) == 0
        b = tmp_path / a.name
        assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()


class TestGraymap:
    def test_solid_is_black(self, tmp_path):
        img = np.array([[1.0, 0.0, 0.5]])
        artifacts.write_pgm(tmp_path / "x.pgm", img)
        assert artifacts.read_pgm(tmp_path / "x.pgm").tolist() == [[0, 255, 128]]

    def test_header(self, tmp_path):
        artifacts.write_pgm(tmp_path / "x.pgm", np.zeros((3, 7)))
        assert (tmp_path / "x.pgm").read_bytes().startswith(b"P5\n7 3\n255\n")


class TestReport:
    def test_pf_within_bound_passes(self):
        (c,) = report.check_rows([row(pf=0.15)])
        assert c.status == "PASS"

    def test_pf_above_bound_fails(self):
        (c,) = report.check_rows([row(pf=0.20)])
        assert c.status == "FAIL"

    def test_two_se_margin(self):
        p = artifacts.expected_pf(1.0)
        assert report.pf_bound(1.0, 50000) == pytest.approx(p + 2 * math.sqrt(p * (1 - p) / 50000))

    def test_inactive_epsilon_one_fails(self):
        (c,) = report.check_rows([row(pf=0.01)])
        assert c.status == "FAIL"

    def test_epsilon_zero_spread(self):
        same = report.check_rows([row(b, 0.0, 0.0, 206.2317 + 3e-4 * (b - 1)) for b in (1, 2, 3)])
        assert all(c.status == "PASS" for c in same)
        apart = report.check_rows([row(1.0, 0.0, 0.0, 200.0), row(2.0, 0.0, 0.0, 206.0)])
        assert all(c.status == "FAIL" for c in apart)

    def test_missing_monte_carlo_is_not_applicable(self):
        (c,) = report.check_rows([row(pf=float("nan"))])
        assert c.status == "n/a"

    def test_reference_lookup(self):
        checks = report.check_rows([row(1.0, 1.0), row(5.0, 1.0)])
        report.attach_reference(checks, "cantilever")
        assert checks[0].reference[0] == 162.9505 and checks[1].reference is None

    def test_cli_report(self, tmp_path, capsys):
        path = tmp_path / "cantilever_sweep.csv"
        artifacts.write_rows(path, [row(pf=0.15), row(epsilon=0.9, pf=0.20)])
        assert cli.main(["report", str(path)]) == cli.EXIT_FAILURE
        text = capsys.readouterr().out
        assert text.startswith("benchmark: cantilever") and "2 rows, 1 flagged" in text
        assert cli.main(["report", str(path)]) == cli.EXIT_FAILURE
        assert capsys.readouterr().out == text

    def test_cli_report_pass(self, tmp_path):
        path = tmp_path / "lbeam.csv"
        artifacts.write_rows(path, [row(pf=0.155)])
        assert cli.main(["report", str(path)]) == 0

    @pytest.mark.parametrize("text", ["", "beta,epsilon\n1,1\n",
                                      ",".join(artifacts.CSV_COLUMNS) + "\n1,2,3\n",
                                      ",".join(artifacts.CSV_COLUMNS) + "\n" +
                                      ",".join(["x"] * 12) + "\n"])
    def test_malformed_csv(self, tmp_path, text):
        path = tmp_path / "bad.csv"
        path.write_text(text)
        assert cli.main(["report", str(path)]) == cli.EXIT_CONFIG

    def test_missing_csv(self, tmp_path):
        assert cli.main(["report", str(tmp_path / "none.csv")]) == cli.EXIT_CONFIG


def test_csv_round_trip(tmp_path):
    rows = [row(), row(2.0, 0.0, 0.0)]
    artifacts.write_rows(tmp_path / "m.csv", rows[:1])
    artifacts.write_rows(tmp_path / "m.csv", rows[1:], append=True)
    assert artifacts.read_rows(tmp_path / "m.csv") == rows
