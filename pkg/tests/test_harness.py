"""Experiment harness and CLI: config parsing, deterministic tables,
report serialization, the sensitivity checker, and exit codes."""

import io
import math
import os

import numpy as np
import pytest

from pmsvm.cli import main
from pmsvm.data import Dataset
from pmsvm.harness import (
    ConfigError,
    MethodSpec,
    accountant_trace,
    build_dataset,
    cell_seed,
    curves_csv,
    load_report,
    parse_config,
    run_cell,
    run_experiment,
    save_report,
    verify_sensitivity,
    _build_wp_config,
    _warm_start,
)
from pmsvm.model import LinearModel
from pmsvm.privacy import (
    PrivacyBudget,
    RdpLedger,
    calibrate_analytic_gaussian,
)
from pmsvm.trainers import TrainReport


GOOD_CONFIG = """
[dataset]
kind = "synthetic"
classes = 3
n_per_class = 12
dim = 4
separation = 8.0

[preprocess]
test_fraction = 0.25

[budget]
epsilons = [1.0]
delta = 1e-5

[seeds]
base = 7
count = 2

[[method]]
name = "pmsvm_wp"
C_over_n = 0.01
tol = 1e-3
max_iter = 100000

[[method]]
name = "pmsvm_gp"
T = 12
q = 1.0
base_lr = 0.2
trace_every = 4

[output]
dir = "{outdir}"
"""


def write_config(tmp_path, outdir, body=GOOD_CONFIG):
    path = tmp_path / "exp.toml"
    path.write_text(body.format(outdir=str(outdir).replace("\\", "/")))
    return str(path)


class TestConfigParsing:
    def test_round_trip_fields(self, tmp_path):
        cfg = parse_config(write_config(tmp_path, tmp_path / "res"))
        assert cfg.dataset["kind"] == "synthetic"
        assert cfg.epsilons == [1.0]
        assert cfg.delta == 1e-5
        assert cfg.base_seed == 7
        assert cfg.test_fraction == 0.25
        assert cfg.minmax and cfg.unit_ball  # defaults
        assert [m.name for m in cfg.methods] == ["pmsvm_wp", "pmsvm_gp"]
        assert all(m.seeds == 2 for m in cfg.methods)
        assert cfg.methods[0].params == {
            "C_over_n": 0.01, "tol": 1e-3, "max_iter": 100000,
        }
        assert cfg.outdir == str(tmp_path / "res")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            parse_config(str(tmp_path / "nope.toml"))

    def test_bad_toml(self, tmp_path):
        p = tmp_path / "bad.toml"
        p.write_text("[dataset\nkind=")
        with pytest.raises(ConfigError):
            parse_config(str(p))

    def _parse_variant(self, tmp_path, old, new):
        return parse_config(
            write_config(tmp_path, tmp_path / "r", GOOD_CONFIG.replace(old, new))
        )

    def test_unknown_method(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown method 'pmsvm_qp'"):
            self._parse_variant(tmp_path, '"pmsvm_gp"', '"pmsvm_qp"')

    def test_duplicate_method(self, tmp_path):
        with pytest.raises(ConfigError, match="duplicate"):
            self._parse_variant(
                tmp_path, 'name = "pmsvm_gp"\nT = 12', 'name = "pmsvm_wp"'
            )

    def test_unknown_param_key(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown key 'learning_rate'"):
            self._parse_variant(tmp_path, "base_lr = 0.2", "learning_rate = 0.2")

    def test_wp_rejects_gp_keys(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown key 'T'"):
            self._parse_variant(tmp_path, "tol = 1e-3", "T = 5")

    def test_empty_epsilons(self, tmp_path):
        with pytest.raises(ConfigError, match="epsilons"):
            self._parse_variant(tmp_path, "epsilons = [1.0]", "epsilons = []")

    def test_negative_epsilon(self, tmp_path):
        with pytest.raises(ConfigError, match="epsilons"):
            self._parse_variant(tmp_path, "[1.0]", "[1.0, -2.0]")

    def test_delta_out_of_range(self, tmp_path):
        with pytest.raises(ConfigError, match="delta"):
            self._parse_variant(tmp_path, "delta = 1e-5", "delta = 1.5")

    def test_bad_seed_count(self, tmp_path):
        with pytest.raises(ConfigError, match="count"):
            self._parse_variant(tmp_path, "count = 2", "count = 0")

    def test_no_methods(self, tmp_path):
        body = GOOD_CONFIG[: GOOD_CONFIG.index("[[method]]")] + "\n"
        with pytest.raises(ConfigError, match="method"):
            parse_config(write_config(tmp_path, tmp_path / "r", body))

    def test_unknown_dataset_kind(self, tmp_path):
        with pytest.raises(ConfigError, match="kind"):
            self._parse_variant(tmp_path, '"synthetic"', '"mnist"')

    def test_missing_dataset_field(self, tmp_path):
        with pytest.raises(ConfigError, match="separation"):
            self._parse_variant(tmp_path, "separation = 8.0", "")


class TestCellSeed:
    def test_deterministic(self):
        assert cell_seed(7, "pmsvm_wp", 1.0, 0) == cell_seed(7, "pmsvm_wp", 1.0, 0)

    def test_distinct_coordinates(self):
        base = cell_seed(7, "pmsvm_wp", 1.0, 0)
        assert cell_seed(8, "pmsvm_wp", 1.0, 0) != base
        assert cell_seed(7, "pmsvm_gp", 1.0, 0) != base
        assert cell_seed(7, "pmsvm_wp", 2.0, 0) != base
        assert cell_seed(7, "pmsvm_wp", 1.0, 1) != base

    def test_integral_float_matches_int(self):
        # TOML may carry 1 or 1.0; both reach the hash as float('1.0')
        assert cell_seed(0, "ovr_wp", 1, 3) == cell_seed(0, "ovr_wp", 1.0, 3)

    def test_uint64_range(self):
        s = cell_seed(0, "pmsvm_gp", 0.5, 2)
        assert 0 <= s < 2**64


@pytest.fixture(scope="module")
def first_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("exp")
    out = tmp / "res"
    cfg = parse_config(write_config(tmp, out))
    table = run_experiment(cfg, workers=1)
    return cfg, table, out


class TestRunExperiment:
    def test_outputs_exist(self, first_run):
        _, table, out = first_run
        assert (out / "table.csv").is_file()
        assert (out / "table.md").is_file()
        reports = sorted(os.listdir(out / "reports"))
        # 2 methods x 1 epsilon x 2 seeds
        assert reports == [
            "pmsvm_gp_eps1_seed0.txt", "pmsvm_gp_eps1_seed1.txt",
            "pmsvm_wp_eps1_seed0.txt", "pmsvm_wp_eps1_seed1.txt",
        ]
        assert len(table.rows) == 2

    def test_all_cells_succeeded(self, first_run):
        _, table, _ = first_run
        for row in table.rows:
            assert row.status == "ok"
            assert len(row.accuracies) == 2

    def test_csv_shape(self, first_run):
        _, _, out = first_run
        lines = (out / "table.csv").read_text().splitlines()
        assert lines[0] == (
            "dataset,method,epsilon,mean_accuracy,std_accuracy,seeds,status"
        )
        assert len(lines) == 3
        assert lines[1].startswith("blobs_c3_d4,pmsvm_wp,1,")

    def test_rerun_byte_identical(self, first_run, tmp_path):
        cfg, _, out = first_run
        out2 = tmp_path / "res2"
        cfg2 = parse_config(write_config(tmp_path, out2))
        run_experiment(cfg2, workers=1)
        assert (out2 / "table.csv").read_bytes() == (out / "table.csv").read_bytes()

    def test_workers_byte_identical(self, first_run, tmp_path):
        cfg, _, out = first_run
        out3 = tmp_path / "res3"
        cfg3 = parse_config(write_config(tmp_path, out3))
        run_experiment(cfg3, workers=3)
        assert (out3 / "table.csv").read_bytes() == (out / "table.csv").read_bytes()
        for fname in sorted(os.listdir(out / "reports")):
            a = (out / "reports" / fname).read_text().splitlines()
            b = (out3 / "reports" / fname).read_text().splitlines()
            # wall_clock is the one timing-dependent field
            assert [l for l in a if not l.startswith("wall_clock")] == \
                   [l for l in b if not l.startswith("wall_clock")]

    def test_cells_reconstructible_from_seed(self, first_run):
        """Any saved cell re-runs to the same weights from its recorded seed."""
        cfg, _, out = first_run
        train, test, _ = build_dataset(cfg)
        for spec in cfg.methods:
            saved = load_report(
                out / "reports" / f"{spec.name}_eps1_seed1.txt"
            )
            warm = None
            if spec.name == "pmsvm_wp":
                warm = _warm_start(
                    spec.name, _build_wp_config(spec.params), train
                )
            fresh = run_cell(
                spec, train, test,
                PrivacyBudget(1.0, cfg.delta),
                cell_seed(cfg.base_seed, spec.name, 1.0, 1),
                warm,
            )
            assert saved.seed == fresh.seed
            np.testing.assert_allclose(
                saved.model.weights, fresh.model.weights, rtol=0, atol=1e-12
            )

    def test_removing_method_leaves_rows_unchanged(self, first_run, tmp_path):
        cfg, _, out = first_run
        body = GOOD_CONFIG[: GOOD_CONFIG.index('[[method]]\nname = "pmsvm_gp"')] \
            + GOOD_CONFIG[GOOD_CONFIG.index("[output]"):]
        out4 = tmp_path / "res4"
        cfg4 = parse_config(write_config(tmp_path, out4, body))
        assert [m.name for m in cfg4.methods] == ["pmsvm_wp"]
        run_experiment(cfg4, workers=1)
        full = (out / "table.csv").read_text().splitlines()
        solo = (out4 / "table.csv").read_text().splitlines()
        assert solo[0] == full[0]
        assert solo[1] == full[1]  # the pmsvm_wp row is bit-for-bit the same
        assert (out4 / "reports" / "pmsvm_wp_eps1_seed0.txt").read_text() \
            .split("wall_clock")[0] == \
            (out / "reports" / "pmsvm_wp_eps1_seed0.txt").read_text() \
            .split("wall_clock")[0]

    def test_single_seed_has_no_std(self, tmp_path):
        body = GOOD_CONFIG.replace("count = 2", "count = 1")
        body = body[: body.index('[[method]]\nname = "pmsvm_gp"')] \
            + body[body.index("[output]"):]
        out = tmp_path / "res"
        run_experiment(parse_config(write_config(tmp_path, out, body)))
        row = (out / "table.csv").read_text().splitlines()[1]
        cells = row.split(",")
        assert cells[4] == ""  # std column empty
        assert cells[5] == "1"

    def test_failed_cell_is_isolated(self, tmp_path):
        # q > 1 passes config parsing but fails inside the trainer
        body = GOOD_CONFIG.replace("q = 1.0", "q = 1.5")
        out = tmp_path / "res"
        table = run_experiment(parse_config(write_config(tmp_path, out, body)))
        by_name = {r.method: r for r in table.rows}
        assert by_name["pmsvm_wp"].status == "ok"
        assert by_name["pmsvm_gp"].status.startswith("failed 2 cell(s)")
        assert by_name["pmsvm_gp"].mean is None
        line = (out / "table.csv").read_text().splitlines()[2]
        assert ",,0," in line or ",,,0," in line


@pytest.fixture(scope="module")
def report(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("rt")
    out = tmp / "res"
    cfg = parse_config(write_config(tmp, out))
    train, test, _ = build_dataset(cfg)
    spec = cfg.methods[1]
    rep = run_cell(spec, train, test, PrivacyBudget(1.0, 1e-5),
                   cell_seed(7, spec.name, 1.0, 0))
    return rep, tmp


class TestReportRoundTrip:
    def test_exact_round_trip(self, report):
        rep, tmp = report
        path = str(tmp / "r.txt")
        save_report(path, rep)
        back = load_report(path)
        assert back.method == rep.method
        assert back.seed == rep.seed
        assert back.sigma == rep.sigma  # %.17g round-trips doubles exactly
        assert back.requested.epsilon == rep.requested.epsilon
        assert back.requested.delta == rep.requested.delta
        assert back.consumed.epsilon == rep.consumed.epsilon
        assert back.consumed.delta == rep.consumed.delta
        assert abs(back.wall_clock - rep.wall_clock) <= 1e-6
        np.testing.assert_array_equal(back.steps, rep.steps)
        np.testing.assert_array_equal(back.loss_trace, rep.loss_trace)
        np.testing.assert_array_equal(back.train_acc_trace, rep.train_acc_trace)
        np.testing.assert_array_equal(back.test_acc_trace, rep.test_acc_trace)
        np.testing.assert_array_equal(back.model.weights, rep.model.weights)
        np.testing.assert_array_equal(back.model.bias, rep.model.bias)
        assert back.config == {k: str(v) for k, v in rep.config.items()}
        assert back.extras == {k: str(v) for k, v in rep.extras.items()}

    def test_biasless_round_trip(self, report, tmp_path):
        rep, _ = report
        stripped = TrainReport(
            model=LinearModel(rep.model.weights.copy(), None),
            method=rep.method, seed=rep.seed, sigma=0.0,
            requested=None, consumed=None,
            steps=rep.steps, loss_trace=rep.loss_trace,
            train_acc_trace=rep.train_acc_trace,
            test_acc_trace=rep.test_acc_trace,
            wall_clock=0.0, config={}, extras={},
        )
        path = str(tmp_path / "r.txt")
        save_report(path, stripped)
        back = load_report(path)
        assert back.model.bias is None
        assert back.requested is None and back.consumed is None
        np.testing.assert_array_equal(back.model.weights, rep.model.weights)

    def test_malformed_report(self, tmp_path):
        p = tmp_path / "junk.txt"
        p.write_text("method=x\nseed=0\n")
        with pytest.raises(ValueError, match="malformed"):
            load_report(str(p))


def _empty_trace_report() -> TrainReport:
    model = LinearModel(np.zeros((2, 2)), None)
    z = np.array([])
    return TrainReport(
        model=model, method="pmsvm_wp", seed=0, sigma=0.0,
        requested=None, consumed=None,
        steps=z, loss_trace=z, train_acc_trace=z, test_acc_trace=z,
        wall_clock=0.0, config={}, extras={},
    )


class TestCurves:
    def test_long_format(self, tmp_path):
        cfg = parse_config(write_config(tmp_path, tmp_path / "res"))
        train, test, _ = build_dataset(cfg)
        spec = cfg.methods[1]
        paths = []
        for idx in range(2):
            rep = run_cell(train=train, test=test, spec=spec,
                           budget=PrivacyBudget(1.0, 1e-5),
                           seed=cell_seed(7, spec.name, 1.0, idx))
            p = str(tmp_path / f"run{idx}.txt")
            save_report(p, rep)
            paths.append((p, len(rep.steps)))
        buf = io.StringIO()
        curves_csv([p for p, _ in paths], buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "run,step,train_loss,train_acc,test_acc"
        assert len(lines) == 1 + sum(n for _, n in paths)
        assert lines[1].startswith("run0,")
        assert lines[1 + paths[0][1]].startswith("run1,")

    def test_missing_trace_names_report(self, tmp_path):
        p = str(tmp_path / "empty.txt")
        save_report(p, _empty_trace_report())
        with pytest.raises(ValueError, match="empty.txt"):
            curves_csv([p], io.StringIO())


@pytest.fixture(scope="module")
def small():
    return verify_sensitivity(n=14, d=4, c=3, trials=12, C_over_n=0.02)


class TestVerifySensitivity:
    def test_bound_holds(self, small):
        assert small["trials"] == 12
        assert small["violations"] == 0
        assert small["failures"] == []
        assert 0 < small["worst_ratio"] <= 1.0

    def test_deterministic(self, small):
        again = verify_sensitivity(n=14, d=4, c=3, trials=12, C_over_n=0.02)
        assert again == small

    def test_seed_changes_draws(self, small):
        other = verify_sensitivity(
            n=14, d=4, c=3, trials=12, C_over_n=0.02, base_seed=5
        )
        assert other["worst_ratio"] != small["worst_ratio"]

    def test_size_limits(self):
        with pytest.raises(ValueError, match="200"):
            verify_sensitivity(n=500)
        with pytest.raises(ValueError, match="n > c"):
            verify_sensitivity(n=3, c=3)
        with pytest.raises(ValueError, match="c >= 2"):
            verify_sensitivity(n=5, c=1)


class TestAccountantTrace:
    def test_zero_steps(self):
        assert accountant_trace(0.1, 2.0, 0, 1e-5) == []

    def test_negative_steps(self):
        with pytest.raises(ValueError):
            accountant_trace(0.1, 2.0, -1, 1e-5)

    def test_strictly_increasing(self):
        trace = accountant_trace(0.05, 1.5, 40, 1e-5)
        assert len(trace) == 40
        assert all(b > a for a, b in zip(trace, trace[1:]))

    def test_matches_ledger(self):
        trace = accountant_trace(0.1, 2.0, 25, 1e-6)
        ledger = RdpLedger()
        for t in range(25):
            ledger.rdp_step(q=0.1, sigma=2.0)
            if t in (0, 9, 24):
                assert trace[t] == ledger.rdp_epsilon(1e-6)


class TestCli:
    def run_main(self, capsys, argv):
        code = main(argv)
        captured = capsys.readouterr()
        return code, captured.out, captured.err

    def test_calibrate_matches_library(self, capsys):
        code, out, _ = self.run_main(
            capsys, ["calibrate", "--delta-sens", "0.01",
                     "--eps", "1", "--delta", "1e-5"]
        )
        sigma = calibrate_analytic_gaussian(0.01, PrivacyBudget(1.0, 1e-5))
        assert code == 0
        assert out == f"{sigma:.12g}\n"

    def test_calibrate_bad_input(self, capsys):
        code, _, err = self.run_main(
            capsys, ["calibrate", "--delta-sens", "0",
                     "--eps", "1", "--delta", "1e-5"]
        )
        assert code == 1
        assert "error" in err

    def test_accountant_trace_lines(self, capsys):
        code, out, _ = self.run_main(
            capsys, ["accountant", "--q", "0.1", "--sigma", "2",
                     "--steps", "3", "--delta", "1e-5"]
        )
        trace = accountant_trace(0.1, 2.0, 3, 1e-5)
        lines = out.splitlines()
        assert code == 0
        assert lines == [
            f"{t} {e:.12g}" for t, e in enumerate(trace, 1)
        ] + [f"final {trace[-1]:.12g}"]

    def test_accountant_zero_steps(self, capsys):
        code, out, _ = self.run_main(
            capsys, ["accountant", "--q", "0.1", "--sigma", "2",
                     "--steps", "0", "--delta", "1e-5"]
        )
        assert code == 0
        assert out == "final 0\n"

    def test_verify_output(self, capsys):
        code, out, _ = self.run_main(
            capsys, ["verify-sensitivity", "--n", "12", "--d", "3",
                     "--trials", "6", "--cn", "0.02"]
        )
        lines = out.splitlines()
        assert code == 0
        assert lines[0] == "trials: 6"
        assert lines[1] == "violations: 0"
        assert lines[2].startswith("worst ratio: ")
        assert float(lines[2].split(": ")[1]) <= 1.0

    def test_verify_seed_before_subcommand(self, capsys):
        code, out, _ = self.run_main(
            capsys, ["--seed", "5", "verify-sensitivity", "--n", "12",
                     "--d", "3", "--trials", "6", "--cn", "0.02"]
        )
        ref = verify_sensitivity(
            n=12, d=3, c=3, trials=6, C_over_n=0.02, base_seed=5
        )
        assert code == 0
        assert f"worst ratio: {ref['worst_ratio']:.12g}" in out

    def test_run_end_to_end(self, capsys, tmp_path):
        body = GOOD_CONFIG.replace("count = 2", "count = 1")
        body = body[: body.index('[[method]]\nname = "pmsvm_wp"')] \
            + body[body.index('[[method]]\nname = "pmsvm_gp"'):]
        cfg_path = write_config(tmp_path, tmp_path / "ignored", body)
        out_dir = tmp_path / "cli_out"
        code, out, _ = self.run_main(
            capsys, ["run", "--config", cfg_path, "--out", str(out_dir)]
        )
        assert code == 0
        assert (out_dir / "table.csv").is_file()
        assert f"wrote {out_dir}/table.csv" in out
        assert "pmsvm_gp eps=1" in out

    def test_run_bad_config_exits_1(self, capsys, tmp_path):
        p = tmp_path / "bad.toml"
        p.write_text('[dataset]\nkind = "synthetic"\n')
        code, _, err = self.run_main(capsys, ["run", "--config", str(p)])
        assert code == 1
        assert "error" in err

    def test_run_missing_config_exits_1(self, capsys, tmp_path):
        code, _, err = self.run_main(
            capsys, ["run", "--config", str(tmp_path / "none.toml")]
        )
        assert code == 1
        assert "not found" in err

    def test_usage_error_exits_1(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["calibrate", "--eps", "1", "--delta", "1e-5"])
        assert e.value.code == 1

    def test_unknown_command_exits_1(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["frobnicate"])
        assert e.value.code == 1

    def test_budget_unreachable_exits_3(self, capsys, monkeypatch):
        from pmsvm.privacy import BudgetUnreachable
        import pmsvm.cli as cli_mod

        def boom(*a, **k):
            raise BudgetUnreachable("no sigma reaches the target")

        monkeypatch.setattr(cli_mod, "accountant_trace", boom)
        code, _, err = self.run_main(
            capsys, ["accountant", "--q", "1", "--sigma", "0.1",
                     "--steps", "1", "--delta", "1e-5"]
        )
        assert code == 3
        assert "no sigma" in err

    def test_curves_to_file(self, capsys, tmp_path):
        cfg = parse_config(write_config(tmp_path, tmp_path / "res"))
        train, test, _ = build_dataset(cfg)
        spec = cfg.methods[1]
        rep = run_cell(spec, train, test, PrivacyBudget(1.0, 1e-5),
                       cell_seed(7, spec.name, 1.0, 0))
        rp = str(tmp_path / "a.txt")
        save_report(rp, rep)
        out_csv = tmp_path / "curves.csv"
        code, _, _ = self.run_main(
            capsys, ["curves", rp, "--out", str(out_csv)]
        )
        assert code == 0
        buf = io.StringIO()
        curves_csv([rp], buf)
        assert out_csv.read_text() == buf.getvalue()

    def test_curves_empty_trace_exits_1(self, capsys, tmp_path):
        p = str(tmp_path / "empty.txt")
        save_report(p, _empty_trace_report())
        code, _, err = self.run_main(capsys, ["curves", p])
        assert code == 1
        assert "no trace" in err
