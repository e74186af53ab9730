import io
import json

import numpy as np
import pytest

from gglm.certify import AffineCertificate, ConfidenceSet
from gglm.data_io import (GridSpec, MalformedInputError, generate_synthetic_events,
                          ingest_events, load_grid, load_json, read_trajectory_csv, save_json,
                          train_test_split, write_trajectory_csv)
from gglm.estimator import fit_least_squares
from gglm.model import FeasibleSet, ModelShape, ParamVector, Trajectory, unpack_params
from gglm.simulate import make_rng

# two unit cells side by side sharing the edge lon = 1
GRID = GridSpec(((0, 1, 0, 1), (1, 2, 0, 1)), "month", "2020-01-01T00:00:00")


def csv_text(rows):
    return "timestamp,lat,lon\n" + "".join(f"{t},{lat},{lon}\n" for t, lat, lon in rows)


class TestIngest:
    def test_three_events_one_cell(self):
        rows = [("2020-01-05", 0.5, 0.5), ("2020-01-20", 0.2, 0.9), ("2020-01-31T23:00", 0.1, 0.1)]
        rep = ingest_events(io.StringIO(csv_text(rows)), GRID, horizon=3)
        expect = np.zeros((3, 2))
        expect[0, 0] = 3
        np.testing.assert_array_equal(rep.trajectory.states, expect)
        assert rep.n_events == 3 and rep.n_dropped == 0

    def test_boundary_tie_goes_to_half_open_cell(self):
        rows = [("2020-02-01", 0.5, 1.0), ("2020-02-01", 0.0, 0.0)]
        rep = ingest_events(io.StringIO(csv_text(rows)), GRID)
        np.testing.assert_array_equal(rep.trajectory.states[1], [1, 1])
        # the right edge of the last cell is open
        rep = ingest_events(io.StringIO(csv_text([("2020-01-02", 0.5, 2.0)])), GRID, horizon=1)
        assert rep.n_dropped == 1 and not rep.trajectory.states.any()

    def test_empty_file(self, tmp_path):
        p = tmp_path / "e.csv"
        p.write_text("timestamp,lat,lon\n")
        rep = ingest_events(p, GRID, horizon=5)
        assert rep.trajectory.states.shape == (5, 2) and not rep.trajectory.states.any()
        p.write_text("")
        assert ingest_events(p, GRID, horizon=2).trajectory.states.shape == (2, 2)

    def test_dropped_accounting(self):
        rows = [("2020-01-02", 0.5, 0.5), ("2020-01-02", 5.0, 5.0), ("2019-12-31", 0.5, 0.5),
                ("2020-09-01", 0.5, 1.5), ("2020-02-03", 0.5, 1.5)]
        rep = ingest_events(io.StringIO(csv_text(rows)), GRID, horizon=3)
        assert rep.n_dropped == 3
        assert rep.trajectory.states.sum() == rep.n_events - rep.n_dropped
        assert rep.to_dict()["n_ingested"] == 2

    def test_malformed_rows(self):
        text = csv_text([("2020-01-02", 0.5, 0.5)]) + "garbage,1,2\n2020-01-03,0.5\n" + \
            "2020-01-04,nan,0.5\n"
        rep = ingest_events(io.StringIO(text), GRID)
        assert [ln for ln, _ in rep.malformed] == [3, 4, 5]
        assert rep.trajectory.states.sum() == 1
        with pytest.raises(MalformedInputError, match="line 3"):
            ingest_events(io.StringIO(text), GRID, strict=True)

    def test_bad_header(self):
        with pytest.raises(MalformedInputError):
            ingest_events(io.StringIO("time,x,y\n"), GRID)

    def test_order_independent(self):
        rng = make_rng(0)
        counts = rng.integers(0, 4, (6, 2))
        text = generate_synthetic_events(counts, GRID, seed=1)
        head, *rows = text.splitlines()
        shuffled = "\n".join([head] + [rows[i] for i in rng.permutation(len(rows))]) + "\n"
        a = ingest_events(io.StringIO(text), GRID, horizon=6).trajectory.states
        b = ingest_events(io.StringIO(shuffled), GRID, horizon=6).trajectory.states
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(a, counts)

    def test_fixed_width_bins(self):
        grid = GridSpec(((0, 1, 0, 1),), 7, "2020-01-01")
        rows = [("2020-01-01", 0.5, 0.5), ("2020-01-08", 0.5, 0.5), ("2020-01-14T23:59", 0.5, 0.5)]
        rep = ingest_events(io.StringIO(csv_text(rows)), grid)
        np.testing.assert_array_equal(rep.trajectory.states[:, 0], [1, 2])
        counts = make_rng(3).integers(0, 3, (5, 1))
        text = generate_synthetic_events(counts, grid, seed=2)
        np.testing.assert_array_equal(
            ingest_events(io.StringIO(text), grid, horizon=5).trajectory.states, counts)


class TestGrid:
    def test_overlap_rejected(self):
        with pytest.raises(ValueError):
            GridSpec(((0, 2, 0, 2), (1, 3, 1, 3)))

    def test_touching_allowed_and_round_trip(self, tmp_path):
        p = tmp_path / "g.json"
        p.write_text(json.dumps(GRID.to_dict()))
        assert load_grid(p) == GRID

    @pytest.mark.parametrize("cells", [(), ((0, 0, 0, 1),), ((0, 1, 0, float("nan")),)])
    def test_bad_cells(self, cells):
        with pytest.raises(ValueError):
            GridSpec(cells)


class TestSplit:
    def test_wildfire_shape(self):
        traj = Trajectory(ModelShape(26, 12), np.zeros((67, 26)))
        train, test = train_test_split(traj, 55)
        assert test.states.shape[0] - 12 == 12
        assert test.N == 12 and train.N == 43

    def test_partition_and_context(self, rng):
        states = rng.integers(0, 5, (30, 2)).astype(float)
        traj = Trajectory(ModelShape(2, 3), states)
        train, test = train_test_split(traj, 20)
        np.testing.assert_array_equal(test.states[:3], train.states[-3:])
        np.testing.assert_array_equal(np.vstack([train.states, test.states[3:]]), states)

    def test_all_train(self, rng):
        traj = Trajectory(ModelShape(1, 2), rng.integers(0, 3, (10, 1)).astype(float))
        train, test = train_test_split(traj, 10)
        assert test.states.shape[0] == 2 and test.N == 0

    def test_guards(self, rng):
        traj = Trajectory(ModelShape(1, 2), np.zeros((10, 1)))
        with pytest.raises(ValueError):
            train_test_split(traj, 2)
        with pytest.raises(ValueError):
            train_test_split(traj, 11)


class TestArtifacts:
    def test_trajectory_csv(self, tmp_path, rng):
        traj = Trajectory(ModelShape(3, 2), rng.integers(0, 9, (15, 3)).astype(float))
        p = tmp_path / "t.csv"
        write_trajectory_csv(traj, p)
        back = read_trajectory_csv(p)
        assert back.shape == traj.shape and np.array_equal(back.states, traj.states)
        assert p.read_text().splitlines()[1].startswith("-1,")
        with pytest.raises(ValueError):
            read_trajectory_csv(p, d=3)

    def test_continuous_values_round_trip(self, tmp_path, rng):
        traj = Trajectory(ModelShape(2, 1), rng.random((6, 2)), "continuous")
        p = tmp_path / "t.csv"
        write_trajectory_csv(traj, p)
        assert np.array_equal(read_trajectory_csv(p).states, traj.states)

    def test_param_bit_exact(self, tmp_path, rng):
        shape = ModelShape(3, 2)
        beta = unpack_params(rng.normal(size=shape.kappa()) * 10.0 ** rng.integers(-12, 12),
                             shape)
        p = tmp_path / "m.json"
        save_json((beta, shape), p)
        back, s2 = load_json(p)
        assert s2 == shape and np.array_equal(back.flat, beta.flat)

    def test_wrong_kappa(self, tmp_path):
        shape = ModelShape(2, 1)
        p = tmp_path / "m.json"
        save_json((ParamVector.zeros(shape), shape), p)
        with pytest.raises(ValueError, match="dimension"):
            load_json(p, expect_kappa=7)
        payload = json.loads(p.read_text())
        payload["beta"] = payload["beta"][:-1]
        p.write_text(json.dumps(payload))
        with pytest.raises(ValueError, match="dimension"):
            load_json(p)

    def test_version_and_corruption(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_text(json.dumps({"format_version": 99, "type": "model"}))
        with pytest.raises(ValueError, match="format_version"):
            load_json(p)
        p.write_text("{not json")
        with pytest.raises(MalformedInputError):
            load_json(p)

    def test_confidence_set(self, tmp_path, rng):
        shape = ModelShape(1, 1)
        certs = [AffineCertificate(rng.normal(size=2), rng.normal(), 0.1 + i, ("basic", i),
                                   0.01, 74, 37) for i in range(2)]
        Delta = ConfidenceSet(certs, FeasibleSet.box_row_sum(1.1, 0.55), shape, 0.99)
        p = tmp_path / "c.json"
        save_json(Delta, p)
        back = load_json(p)
        assert back.shape == shape and back.nominal_coverage == 0.99
        for a, b in zip(Delta.certificates, back.certificates):
            np.testing.assert_allclose(b.slope, a.slope, rtol=1e-15, atol=0)
            assert abs(b.delta - a.delta) <= 1e-15 and b.policy == a.policy

    def test_fit_result(self, tmp_path, small_poisson):
        _, traj = small_poisson
        res = fit_least_squares(traj, FeasibleSet.box_row_sum(1.1, 0.55))
        p = tmp_path / "f.json"
        save_json(res, p)
        payload = load_json(p, expect_kappa=traj.shape.kappa())
        assert payload["type"] == "fit_result"
        assert np.array_equal(np.asarray(payload["beta_hat"]), res.flat)

    def test_unserializable(self, tmp_path):
        with pytest.raises(TypeError):
            save_json(object(), tmp_path / "x.json")
