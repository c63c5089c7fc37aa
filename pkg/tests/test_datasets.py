import numpy as np
import pytest

from agingecm.datasets import (BENCHMARKS, CyclingRecord, OcvFeature, Segment, SynthSpec, benchmark_scenario,
                               calibrate_ocv, discharge_capacity, extract_discharge_segments, linear_fade,
                               load_cycling_csv, read_segment, read_segments, sample_from_model,
                               synth_generate, synth_raw_stream, synth_rpt, write_segment)
from agingecm.ecm import CellConfig, linear_ocv, terminal_voltage
from agingecm.errors import ConfigError, DataError
from agingecm.params import HyperParams

SCHEMA = {"columns": {"time": "Test_Time(s)", "current": "Current(A)", "voltage": "Voltage(V)"}}


def _csv(tmp_path, rows, header="Test_Time(s),Current(A),Voltage(V)"):
    p = tmp_path / "log.csv"
    p.write_text(header + "\n" + "\n".join(rows) + "\n")
    return p


def test_three_row_file(tmp_path):
    rec = load_cycling_csv(_csv(tmp_path, ["0,0,4.2", "1,-0.1,4.1", "2,-0.1,4.0"]), SCHEMA)
    assert rec.t.tolist() == [0.0, 1.0, 2.0]
    assert rec.current.tolist() == [0.0, -0.1, -0.1]
    assert rec.malformed == 0


def test_milliamp_scaling_and_sign(tmp_path):
    schema = dict(SCHEMA, current_scale=1e-3, discharge_sign="positive", time_unit="min")
    rec = load_cycling_csv(_csv(tmp_path, ["0,0,4.2", "1,140,4.1", "2,140,4.0"]), schema)
    assert np.allclose(rec.current, [0.0, -0.14, -0.14])
    assert rec.t.tolist() == [0.0, 60.0, 120.0]


def test_missing_mapping_and_column(tmp_path):
    p = _csv(tmp_path, ["0,0,4.2"])
    with pytest.raises(ConfigError, match="voltage"):
        load_cycling_csv(p, {"columns": {"time": "Test_Time(s)", "current": "Current(A)"}})
    bad = {"columns": dict(SCHEMA["columns"], voltage="Volts")}
    with pytest.raises(ConfigError, match="Volts"):
        load_cycling_csv(p, bad)


def test_malformed_rows(tmp_path):
    rows = [f"{i},-0.1,{4.0 - 1e-4 * i}" for i in range(300)]
    rows[10] = "10,oops,4.0"
    rec = load_cycling_csv(_csv(tmp_path, rows), SCHEMA)
    assert rec.malformed == 1 and rec.t.size == 299
    rows[20] = "x,-0.1,4.0"
    rows[30] = "29,-0.1,4.0"  # does not advance the clock
    rows[40] = "40,-0.1,"
    rows[50] = "50,,"
    with pytest.raises(DataError):
        load_cycling_csv(_csv(tmp_path, rows), SCHEMA)


def test_extraction_recovers_schedule(small_synth):
    segs, _ = small_synth
    rec = synth_raw_stream(segs)
    out = extract_discharge_segments(rec, 4, 0.28, n_train=3)
    assert [s.role for s in out] == ["train", "train", "train", "test"]
    assert np.allclose(np.diff([s.age for s in out]), np.diff([s.age for s in segs]), atol=1e-9)
    assert out[0].age > 0
    for a, b in zip(out, segs):
        # the leading rest sample is kept, followed by the discharge itself
        assert a.current[0] == 0.0
        assert np.allclose(a.voltage[1:], b.voltage[1:])
        assert a.charge_ah < 0


def test_single_discharge_request_one():
    t = np.arange(0, 4000, 10.0)
    cur = np.where(t >= 100, -0.14, 0.0)
    rec = CyclingRecord(t=t, current=cur, voltage=np.linspace(4.2, 3.2, t.size))
    out = extract_discharge_segments(rec, 1, 0.28)
    assert len(out) == 1 and len(out[0]) == np.count_nonzero(cur) + 1
    with pytest.raises(DataError):
        extract_discharge_segments(rec, 2, 0.28)


def test_even_selection_gaps():
    # one 10-minute discharge per day for 50 days
    day = 86400.0
    t_parts, c_parts = [], []
    for d in range(50):
        tt = d * day + np.arange(0, 1800, 30.0)
        t_parts.append(tt)
        c_parts.append(np.where((tt - d * day) >= 600, -0.14, 0.0))
    t = np.concatenate(t_parts)
    rec = CyclingRecord(t=t, current=np.concatenate(c_parts), voltage=np.full(t.size, 3.8))
    ages = np.array([s.age for s in extract_discharge_segments(rec, 6, 0.28)])
    gaps = np.diff(ages)
    assert np.ptp(gaps) <= 1.0 + 1e-9


def test_calibrate_ocv_linear_with_ir_offset():
    ocv = linear_ocv()
    t, cur, v = synth_rpt(ocv, 0.28, 0.014, sample_period=10.0, resistance=0.1)
    fit = calibrate_ocv(t, cur, v, n_bins=100)
    assert fit.soc_knots.size == 100
    assert np.allclose(fit.voltage_knots, ocv(fit.soc_knots) - 0.0014, atol=2e-3)
    assert np.all(np.diff(fit.voltage_knots) > 0)
    assert discharge_capacity(t, cur) == pytest.approx(0.28, rel=1e-3)


def test_calibrate_ocv_rejects_non_monotone():
    t, cur, v = synth_rpt(linear_ocv(), 0.28, 0.014)
    v = v + 0.2 * np.sin(40 * np.linspace(0, 1, v.size))
    with pytest.raises(DataError):
        calibrate_ocv(t, cur, v)


def test_segment_file_roundtrip(tmp_path, small_synth):
    seg = small_synth[0][1]
    write_segment(tmp_path / "segment_001.csv", seg, {"source": "unit"})
    back = read_segment(tmp_path / "segment_001.csv")
    assert back.age == seg.age and back.soc0 == seg.soc0 and back.role == seg.role
    assert np.array_equal(back.t, seg.t) and np.array_equal(back.voltage, seg.voltage)
    assert len(read_segments(tmp_path)) == 1
    with pytest.raises(DataError):
        read_segments(tmp_path / "nothing")


def test_segment_validation():
    with pytest.raises(DataError):
        Segment(age=1.0, t=[0, 1], current=[0], voltage=[0, 1])
    with pytest.raises(DataError):
        Segment(age=1.0, t=[0, 0], current=[0, 0], voltage=[0, 1])


def test_noise_free_synth_matches_model_identity(ocv):
    spec = SynthSpec(capacity=lambda a: 0.28, resistance=lambda z, i, a: 0.13, ocv=ocv, ages=[3.0],
                     noise_std=0.0)
    segs, truth = synth_generate(spec)
    z = truth["soc"][0]
    assert np.array_equal(segs[0].voltage, terminal_voltage(np.clip(z, 0, 1), segs[0].current, 0.13, ocv))


def test_linear_fade_durations_shrink_proportionally(ocv):
    # a low cut-off so every segment runs to the same SOC floor
    spec = SynthSpec(capacity=linear_fade(), resistance=lambda z, i, a: 0.0, ocv=ocv, ages=[1.0, 50.0, 100.0],
                     noise_std=0.0, sample_period=1.0, v_min=3.0 + 1e-9)
    segs, truth = synth_generate(spec)
    durations = np.array([s.duration for s in segs])
    ratio = durations / durations[0]
    assert np.allclose(ratio, truth["capacity"] / truth["capacity"][0], atol=2 / durations[0])


def test_synth_is_seed_deterministic():
    sc = benchmark_scenario("linear_fade", n_segments=3)
    a, _ = synth_generate(sc.spec, seed=3)
    b, _ = synth_generate(sc.spec, seed=3)
    c, _ = synth_generate(sc.spec, seed=4)
    assert all(np.array_equal(x.voltage, y.voltage) for x, y in zip(a, b))
    assert not np.array_equal(a[0].voltage, c[0].voltage)


def test_synth_rejects_non_positive_ages(ocv):
    with pytest.raises(ConfigError):
        SynthSpec(capacity=lambda a: 0.28, resistance=lambda z, i, a: 0.13, ocv=ocv, ages=[0.0])


def test_benchmark_scenarios():
    assert set(BENCHMARKS) == {"linear_fade", "ocv_drift", "dva_shift", "dva_control"}
    with pytest.raises(ConfigError):
        benchmark_scenario("nope")
    lf = benchmark_scenario("linear_fade")
    assert lf.horizon_days == 30.0 and lf.spec.ages[0] == 2.0 and lf.spec.ages[-1] == 70.0
    assert lf.spec.capacity(100.0) == pytest.approx(0.25)
    dv = benchmark_scenario("dva_shift")
    assert dv.spec.ages[0] == 20.0 and dv.spec.ages[-1] == 90.0
    f = dv.features[0]
    assert f.height(0.0) == 0.0 and f.height(50.0) == pytest.approx(0.04) and f.height(200.0) == 0.08
    assert f.peak_ah(100.0, 0.25) == pytest.approx(0.24 * 0.25)
    ctl = benchmark_scenario("dva_control")
    assert ctl.spec.capacity(90.0) == 0.28
    assert ctl.features[0].centre(90.0) == ctl.features[0].centre(0.0)
    drift = benchmark_scenario("ocv_drift")
    assert np.all(drift.docv(np.linspace(0, 1, 11), 50.0) < 0)


def test_ocv_feature_shape():
    f = OcvFeature(0.05, 0.02, lambda a: 0.5)
    assert f(1.0, 10.0) == pytest.approx(0.0, abs=1e-10)
    assert f(0.0, 10.0) == pytest.approx(-0.05, abs=1e-10)
    assert f(0.5, 10.0) == pytest.approx(-0.025)


def test_sample_from_model_shapes(ocv):
    cell = CellConfig(1 / 0.28, 0.13, n_soc=5, current_range=(0.0, 0.28))
    hp = HyperParams(wv_variance=1e-6, noise_var=1e-6)
    out = sample_from_model(hp, cell, ocv, [5.0, 10.0], -0.14, 30.0, 50, seed=1)
    assert len(out.segments) == 2 and out.gp_end_states.shape == (2, 12)
    assert out.true_z[0].shape == (50,)
    dz = out.true_z[0][-1] - out.true_z[0][0]
    q = 1 / (cell.inv_capacity_prior * (1 + out.gp_end_states[0, 0]))
    assert dz == pytest.approx(-0.14 * 49 * 30 / 3600 / q, rel=1e-3)
