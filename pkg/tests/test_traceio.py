import csv

import numpy as np
import pytest

from multimode_mrta.scenario import load_bundled
from multimode_mrta.simulation import CertificateRecord, Simulator, run_simulation
from multimode_mrta.traceio import (CERTIFICATE_COLUMNS, TRAJECTORY_COLUMNS, export_traces,
                                    read_traces, summary_text)


@pytest.fixture(scope="module")
def band_trace():
    return run_simulation(load_bundled("band_mud").with_params(t_end=0.2))


def header(path):
    with path.open() as fh:
        return next(csv.reader(fh))


def test_round_trip(tmp_path, band_trace):
    export_traces(band_trace, tmp_path)
    back = read_traces(tmp_path)
    assert back == band_trace
    assert back.dt == pytest.approx(0.01)


def test_round_trip_with_certificates(tmp_path, band_trace):
    band_trace.records[0].certificate = CertificateRecord(2, (0.1, 1.0, 10.0), -0.25, False)
    try:
        export_traces(band_trace, tmp_path)
        assert read_traces(tmp_path) == band_trace
    finally:
        band_trace.records[0].certificate = None


def test_file_set_and_headers(tmp_path, band_trace):
    paths = export_traces(band_trace, tmp_path)
    names = sorted(p.name for p in paths)
    assert names == ["allocation.csv", "certificates.csv", "summary.txt", "tasks.csv",
                     "trajectory_uav1.csv", "trajectory_uav2.csv", "trajectory_uav3.csv"]
    assert header(tmp_path / "trajectory_uav2.csv") == TRAJECTORY_COLUMNS + ["u1", "u2"]
    assert header(tmp_path / "certificates.csv") == CERTIFICATE_COLUMNS
    alloc = header(tmp_path / "allocation.csv")
    assert alloc[:3] == ["t", "status", "alpha|uav1|cruise|left"]
    assert alloc[-1] == "delta|uav3|hovering|right"
    assert header(tmp_path / "tasks.csv") == ["t", "h|left", "h|right"]


def test_empty_trace_writes_headers_only(tmp_path):
    trace = Simulator(load_bundled("single_uav")).new_trace()
    export_traces(trace, tmp_path)
    for name in ("allocation.csv", "tasks.csv", "trajectory_uav.csv", "certificates.csv"):
        assert (tmp_path / name).read_text().count("\n") == 1
    assert "final distance to task [m]:\n  reach: n/a" in (tmp_path / "summary.txt").read_text()


def test_failed_record_round_trip(tmp_path):
    sim = Simulator(load_bundled("single_uav"))
    trace = sim.new_trace()
    good = sim.run(until=0.02).records
    trace.records.extend(good)
    failed = sim.run(until=0.01).records[0]
    failed.status = "infeasible"
    failed.t = 0.02
    failed.delta = np.zeros(0)
    failed.robots[0].mode = ""
    failed.robots[0].energy = 0.0
    failed.robots[0].u = ()
    trace.records.append(failed)
    export_traces(trace, tmp_path)
    back = read_traces(tmp_path)
    assert back == trace
    assert back.records[-1].status == "infeasible" and back.records[-1].delta.size == 0


def test_floats_survive_exactly(tmp_path, band_trace):
    export_traces(band_trace, tmp_path)
    back = read_traces(tmp_path)
    a = band_trace.records[-1].robots[2]
    b = back.records[-1].robots[2]
    assert (a.x, a.theta, a.energy) == (b.x, b.theta, b.energy)


def test_summary_reports_completion(band_trace):
    text = summary_text(band_trace)
    assert text.startswith("records: 20\ncomplete: True\n")
    assert "left: not completed" in text


def test_unwritable_directory(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    trace = Simulator(load_bundled("single_uav")).new_trace()
    with pytest.raises(OSError):
        export_traces(trace, blocker / "out")
