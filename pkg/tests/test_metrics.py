import jsonschema
import numpy as np
import pytest

from src.metrics import compute_report, format_centimeters, format_table, quartile_means, validate_report
from src.neuralnet import MlpParams
from src.quadrotor_sim import FaultSpec, QuadState, simulate_tracking
from src.runtime_adapt import AdaptConfig, CorrectionGains, run_adaptive_tracking

SERIES = {"baseline": "b.csv", "adapted": "a.csv", "adapt_trace": "t.csv"}


@pytest.fixture
def runs(line_traj, setup):
    fault = FaultSpec((1.0, 0.7, 1.0, 1.0), name="F1*")
    initial = QuadState.at_rest(line_traj.pos[0])
    baseline = simulate_tracking(initial, line_traj, fault, setup)
    cfg = AdaptConfig(gains=CorrectionGains.zero())
    adapted = run_adaptive_tracking(MlpParams.zeros((6, 40, 40, 3)), line_traj, fault, cfg, setup, initial)
    return baseline, adapted


def test_quartile_means():
    assert quartile_means([4, 4, 1, 1, 1, 1, 2, 2]) == {"first_quartile": 4.0, "last_quartile": 2.0}
    assert quartile_means([3.0]) == {"first_quartile": 3.0, "last_quartile": 3.0}
    assert quartile_means([]) == {"first_quartile": 0.0, "last_quartile": 0.0}


def test_report_window_starts_after_warmup(runs, line_traj):
    baseline, adapted = runs
    report = compute_report("line", baseline, adapted, line_traj, SERIES, "0" * 64, 0)
    assert report.warmup_steps == 20
    assert report.window == {"start": 21, "end": len(line_traj) - 1}
    assert report.average_deviation_baseline == pytest.approx(float(np.mean(baseline.deviation[21:])))
    assert report.average_deviation_adapted == report.average_deviation_baseline
    assert report.improvement == 1.0
    assert report.nominal_average_deviation is None
    assert report.path_deviation_baseline <= report.average_deviation_baseline + 1e-12
    validate_report(report.to_dict())


def test_report_rejects_bad_hash(runs, line_traj, tmp_path):
    baseline, adapted = runs
    report = compute_report("line", baseline, adapted, line_traj, SERIES, "not-a-hash", 0)
    with pytest.raises(jsonschema.ValidationError):
        validate_report(report.to_dict())
    with pytest.raises(jsonschema.ValidationError):
        report.save(tmp_path / "report.json")
    assert not (tmp_path / "report.json").exists()


def test_format_centimeters():
    assert format_centimeters(0.0224) == "2.24 см"
    assert format_centimeters(None) == "—"


def test_format_table_aligns_columns():
    text = format_table([{"a": "1", "bb": "long value"}, {"a": "22"}], ["a", "bb"])
    lines = text.splitlines()
    assert len(lines) == 4
    assert lines[0].startswith("a   bb")
    assert lines[1] == "--  " + "-" * len("long value")
    assert lines[3].rstrip() == "22"
