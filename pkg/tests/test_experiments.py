import dataclasses

import numpy as np
import pytest

from schauderlab.config import ExperimentConfig
from schauderlab.experiments import generate_instance, rows_csv, run_experiment
from schauderlab.field import GridField, holder_seminorm
from schauderlab.grid import Cube, GridSpec
from schauderlab.instances import CheckerboardModel


def _run(**kw):
    return run_experiment(ExperimentConfig(**kw), write=False)


def test_instance_is_deterministic():
    cfg = ExperimentConfig(experiment="solve", m=17, coefficient_class="holder")
    (p1, g1), (p2, g2) = generate_instance(cfg, 3), generate_instance(cfg, 3)
    assert p1.A.base.values.tobytes() == p2.A.base.values.tobytes()
    assert p1.F.values.tobytes() == p2.F.values.tobytes()
    assert g1.values.tobytes() == g2.values.tobytes()
    p3, _ = generate_instance(cfg, 4)
    assert not np.array_equal(p1.F.values, p3.F.values)


def test_holder_class_seminorm_refines():
    vals = []
    for m in (33, 65):
        prob, _ = generate_instance(ExperimentConfig(experiment="schauder", m=m), 0)
        vals.append(holder_seminorm(prob.A.base, 0.5))
    assert all(np.isfinite(vals))
    assert max(vals) / min(vals) <= 2.0


def test_checkerboard_spectrum_exact():
    model = CheckerboardModel(Cube.unit(2), 8, 1.0, 4.0)
    A = model(GridSpec(Cube.unit(2), 33).cell_centroids())
    ev = np.linalg.eigvalsh(A.reshape(-1, 2, 2))
    assert set(np.unique(ev)) == {1.0, 4.0}


def test_solve_rows_meet_tolerance():
    rep = _run(experiment="solve", coefficient_class="constant", m=33, instances=3)
    assert rep["failures"] == 0 and not rep["breaches"]
    assert rep["aggregate"]["max"] <= 1e-10
    assert all(r["derived_from"] for r in rep["rows"])


def test_rhi_rows_monotone():
    rep = _run(experiment="rhi", m=33, instances=2)
    assert all(r["monotone"] and r["finite"] for r in rep["rows"])
    qs = [k for k in rep["rows"][0] if k.startswith("ratio_q")]
    assert len(qs) == 7


def test_sparse_rows_verified():
    rep = _run(experiment="sparse-bound", m=33, instances=2)
    assert all(r["verify_sparse"] for r in rep["rows"])


def test_failures_are_recorded_not_raised():
    rep = _run(experiment="solve", m=17, instances=2, tol=1e-30)
    assert rep["failures"] == 2
    assert all("ConvergenceFailure" in r["error"] for r in rep["rows"])
    assert len(rep["breaches"]) == 2


def test_csv_is_byte_stable():
    cfg = ExperimentConfig(experiment="norms", m=33, instances=2, seed=1)
    a = run_experiment(cfg, write=False)["rows"]
    b = run_experiment(dataclasses.replace(cfg), write=False)["rows"]
    assert rows_csv(a) == rows_csv(b)
    assert "seconds" not in rows_csv(a).splitlines()[0]


def test_plot_files(tmp_path):
    run_experiment(ExperimentConfig(experiment="iterate", m=33, instances=1, depth=2, budget=2, m_local=9),
                   tmp_path)
    lines = (tmp_path / "level_term_sum.dat").read_text().splitlines()
    assert [ln.split()[0] for ln in lines] == ["0.0", "1.0", "2.0"]
    assert (tmp_path / "level_remainder.dat").exists()


@pytest.mark.slow
def test_parallel_workers_match_serial():
    cfg = ExperimentConfig(experiment="norms", m=33, instances=3)
    serial = run_experiment(cfg, write=False)["rows"]
    par = run_experiment(dataclasses.replace(cfg, workers=2), write=False)["rows"]
    assert rows_csv(serial) == rows_csv(par)
