"""Monte Carlo metrics, determinism and table output."""

import json

import numpy as np
import pytest

from rdforest.dgp_suite import preset, true_effect
from rdforest.domain_core import EstimateReport
from rdforest.errors import BoundaryError, ConfigError, EmptySideError, HarnessError, IoError
from rdforest.mc_harness import (
    COLUMNS,
    MCConfig,
    MCResult,
    MCRow,
    emit_table,
    format_table,
    load_study,
    read_result_json,
    run_mc,
    study_from_dict,
    write_table,
)
from rdforest.rd_estimators import method_config

LEE_TRUTH = true_effect(preset("lee"), 0.0)
_MINIMAL = {"dgp": "lee", "boundary_point": "0", "methods": ["llr"], "sample_sizes": [100], "replications": 2}


class _Noisy:
    """Truth plus N(0, 1) noise, reported with a fixed standard error."""

    def __init__(self, se, label="noisy"):
        self.se = se
        self.label = label

    def __call__(self, data, x_c, seed):
        est = LEE_TRUTH + np.random.default_rng(seed).standard_normal()
        return EstimateReport.build(est, self.se, 0.95, 1, 1)


class _Flaky:
    label = "flaky"

    def __call__(self, data, x_c, seed):
        if seed % 2:
            raise EmptySideError("no treated rows")
        return EstimateReport.build(LEE_TRUTH, 0.01, 0.95, 1, 1)


def _oracle(data, x_c, seed):
    return EstimateReport.build(LEE_TRUTH, 0.0, 0.95, 1, 1)


def _llr_configs():
    return (
        method_config("llr", kernel_options={"bandwidth": 0.3}, name="llr-tri"),
        method_config("llr", kernel_options={"kernel": "epanechnikov", "bandwidth": 0.3}, name="llr-epa"),
    )


class TestMetrics:
    def test_oracle(self):
        result = run_mc(MCConfig("lee", 0.0, (_oracle,), (100,), 20, master_seed=1))
        row = result.row("_oracle", 100)
        assert result.truth == pytest.approx(LEE_TRUTH)
        assert abs(row.mean_bias) < 1e-15
        assert row.variance < 1e-30
        assert row.coverage == 1.0
        assert row.failures == 0

    def test_nominal_coverage(self):
        result = run_mc(MCConfig("lee", 0.0, (_Noisy(1.0),), (20,), 10_000, master_seed=2))
        row = result.row("noisy", 20)
        assert abs(row.coverage - 0.95) < 0.007
        assert abs(row.mean_bias) < 4 / np.sqrt(10_000)
        assert row.variance == pytest.approx(1.0, rel=0.05)
        assert row.mean_ci_length == pytest.approx(2 * 1.959963984540054, rel=1e-12)

    def test_undersized_interval(self):
        result = run_mc(MCConfig("lee", 0.0, (_Noisy(0.5),), (20,), 2_000, master_seed=3))
        assert result.row("noisy", 20).coverage < 0.90

    def test_failures_are_counted(self):
        result = run_mc(MCConfig("lee", 0.0, (_Flaky(), _oracle), (50,), 40, master_seed=4))
        flaky = result.row("flaky", 50)
        assert 0 < flaky.failures < 40
        assert flaky.coverage == 1.0
        assert result.row("_oracle", 50).failures == 0

    def test_every_replication_failing(self):
        def broken(data, x_c, seed):
            raise EmptySideError("empty")

        with pytest.raises(HarnessError):
            run_mc(MCConfig("lee", 0.0, (broken,), (50,), 5))

    def test_mse(self):
        row = MCRow("m", 10, 0.1, 0.02, 0.9, 0.5, 0)
        assert row.mse == pytest.approx(0.03)
        assert row.rmse == pytest.approx(np.sqrt(0.03))

    def test_timing(self):
        result = run_mc(MCConfig("lee", 0.0, (_oracle,), (50,), 3), timing=True)
        assert result.rows[0].wall_time >= 0.0


class TestDeterminism:
    def test_same_seed_same_bytes(self):
        config = MCConfig("lee", 0.0, _llr_configs(), (500,), 6, master_seed=11)
        assert emit_table(run_mc(config)) == emit_table(run_mc(config))

    def test_worker_count_does_not_change_results(self):
        config = MCConfig("lee", 0.0, _llr_configs(), (500,), 6, master_seed=11)
        assert emit_table(run_mc(config, n_jobs=1)) == emit_table(run_mc(config, n_jobs=2))

    def test_methods_draw_their_own_streams(self):
        config = MCConfig("lee", 0.0, (_Noisy(1.0, "a"), _Noisy(1.0, "b")), (30,), 50, master_seed=5)
        result = run_mc(config)
        assert result.row("a", 30).mean_bias != result.row("b", 30).mean_bias


class TestConfig:
    def test_replications(self):
        with pytest.raises(ConfigError):
            MCConfig("lee", 0.0, (_oracle,), (100,), 1)

    def test_sample_sizes(self):
        with pytest.raises(ConfigError):
            MCConfig("lee", 0.0, (_oracle,), (0,), 5)

    def test_duplicate_labels(self):
        with pytest.raises(ConfigError):
            MCConfig("lee", 0.0, (method_config("rf"), method_config("rf")), (100,), 5)

    def test_off_boundary_point(self):
        config = MCConfig("lee", 0.5, (_oracle,), (100,), 2)
        with pytest.raises(BoundaryError):
            run_mc(config)

    def test_study(self):
        config = study_from_dict({
            "dgp": "lee",
            "boundary_point": [0.0],
            "methods": ["llr", {"method": "rf", "num_trees": 20, "name": "rf-20"}],
            "sample_sizes": [100, 200],
            "replications": 3,
            "seed": 8,
        })
        assert [m.label for m in config.methods] == ["llr", "rf-20"]
        assert config.sample_sizes == (100, 200)
        assert config.master_seed == 8
        assert study_from_dict({**_MINIMAL, "seed": 8}, seed=9).master_seed == 9

    @pytest.mark.parametrize(
        "change",
        [{"extra": 1}, {"replications": 1}, {"methods": "rf"}, {"sample_sizes": [1.5]}, {"methods": [{"method": "rf", "kernel": "uniform"}]}],
    )
    def test_bad_study(self, change):
        with pytest.raises(ConfigError):
            study_from_dict({**_MINIMAL, **change})

    def test_missing_key(self):
        spec = dict(_MINIMAL)
        del spec["replications"]
        with pytest.raises(ConfigError):
            study_from_dict(spec)

    def test_load_study(self, tmp_path):
        path = tmp_path / "study.json"
        path.write_text(json.dumps(_MINIMAL))
        assert load_study(path).replications == 2
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            load_study(path)
        with pytest.raises(IoError):
            load_study(tmp_path / "missing.json")


class TestOutput:
    def _result(self):
        return run_mc(MCConfig("lee", 0.0, _llr_configs(), (500,), 4, master_seed=6))

    def test_csv(self):
        lines = emit_table(self._result()).decode().splitlines()
        assert lines[0] == ",".join(COLUMNS)
        assert len(lines) == 3
        assert lines[1].startswith("llr-tri,500,")
        assert lines[1].endswith(",")

    def test_json_round_trip(self):
        result = self._result()
        assert read_result_json(emit_table(result, "json")) == result

    def test_bad_format(self):
        with pytest.raises(ConfigError):
            emit_table(self._result(), "xlsx")

    def test_write(self, tmp_path):
        result = self._result()
        path = tmp_path / "out.csv"
        write_table(result, path)
        assert path.read_bytes() == emit_table(result)
        with pytest.raises(IoError):
            write_table(result, tmp_path / "missing" / "out.csv")

    def test_not_a_result(self):
        with pytest.raises(ConfigError):
            read_result_json(b'{"rows": [{"method": "x"}]}')

    def test_text_table(self):
        text = format_table(MCResult((MCRow("rf", 100, 0.01, 0.002, 0.95, 0.2, 0),), 0.04, 10))
        assert text.splitlines()[0] == "truth = 0.04, replications = 10"
        assert "coverage" in text.splitlines()[1]
        assert "0.0021" in text
