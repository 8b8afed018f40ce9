import math
import os
import xml.etree.ElementTree as ET

import numpy as np
import numpy.testing as npt
import pytest

from lipscope.lipschitz import local_lipschitz
from lipscope.network import Network, forward, random_network
from lipscope.region_algebra import PatternMatrix
from lipscope.regionviz import (
    RegionCell,
    SlicePlane,
    convergence_check,
    emit_svg,
    scan_regions,
    write_regions_csv,
)

from conftest import quadrant_net, random_net


GOLDEN = os.path.join(os.path.dirname(__file__), "golden")


def affine_net(w=(3.0, 4.0)):
    return Network([np.array([list(w)])], [np.zeros(1)], ["identity"])


def unit_plane(res=(16, 16), extent=(-1.0, 1.0, -1.0, 1.0)):
    return SlicePlane.axis_aligned(extent, res)


def quadrant_pm():
    net = quadrant_net()
    X = np.array([[1.0, -1.0], [-1.0, 1.0]])
    return net, X, PatternMatrix.from_frozen(net, X)


class TestSlicePlane:
    def test_rejects_non_orthonormal_axes(self):
        with pytest.raises(ValueError):
            SlicePlane(np.zeros(2), np.array([[1.0, 0.0], [1.0, 0.0]]),
                       (-1, 1, -1, 1), (4, 4))
        with pytest.raises(ValueError):
            SlicePlane(np.zeros(2), np.array([[2.0, 0.0], [0.0, 1.0]]),
                       (-1, 1, -1, 1), (4, 4))

    def test_rejects_bad_resolution_and_extent(self):
        with pytest.raises(ValueError):
            unit_plane(res=(1, 4))
        with pytest.raises(ValueError):
            unit_plane(extent=(1.0, -1.0, -1.0, 1.0))
        with pytest.raises(ValueError):
            SlicePlane(np.zeros(3), np.eye(3), (-1, 1, -1, 1), (4, 4))

    def test_cell_centers_hand_check(self):
        plane = unit_plane(res=(2, 2), extent=(0.0, 1.0, 0.0, 2.0))
        uv = plane.cell_centers_uv()
        npt.assert_allclose(uv, [[0.25, 0.5], [0.25, 1.5],
                                 [0.75, 0.5], [0.75, 1.5]])

    def test_to_input_and_project_round_trip(self, rng):
        q, _ = np.linalg.qr(rng.normal(size=(5, 2)))
        plane = SlicePlane(rng.normal(size=5), q.T, (-1, 1, -1, 1), (3, 3))
        uv = plane.cell_centers_uv()
        npt.assert_allclose(plane.project(plane.to_input(uv)), uv, atol=1e-12)

    def test_axis_aligned_embeds(self):
        plane = SlicePlane.axis_aligned((-1, 1, -1, 1), (4, 4), n_input=5)
        x = plane.to_input([[0.5, -0.5]])[0]
        npt.assert_allclose(x, [0.5, -0.5, 0.0, 0.0, 0.0])

    def test_doubled(self):
        plane = unit_plane(res=(4, 6))
        assert plane.doubled().resolution == (8, 12)
        assert plane.doubled().extent == plane.extent


class TestScanRegions:
    def test_affine_net_single_region(self):
        cells = scan_regions(affine_net(), unit_plane(res=(8, 8)))
        assert len(cells) == 1
        assert cells[0].cell_count == 64
        assert cells[0].lam == pytest.approx(5.0, rel=1e-12)
        assert cells[0].theorem2_status is None

    def test_quadrant_four_regions(self):
        cells = scan_regions(quadrant_net(), unit_plane())
        assert len(cells) == 4
        lams = sorted(c.lam for c in cells)
        npt.assert_allclose(lams, [0.0, 1.0, 1.0, math.sqrt(2.0)], atol=1e-15)
        assert all(c.cell_count == 64 for c in cells)

    def test_partition_property(self):
        plane = unit_plane(res=(10, 14))
        cells = scan_regions(quadrant_net(), plane)
        seen = np.zeros(plane.resolution, dtype=int)
        for c in cells:
            seen[c.members[:, 0], c.members[:, 1]] += 1
        assert (seen == 1).all()

    def test_members_share_pattern_and_exact_lambda(self, rng):
        net = random_network([2, 6, 3, 1], seed=12)
        plane = unit_plane(res=(12, 12), extent=(-2, 2, -2, 2))
        cells = scan_regions(net, plane)
        centers = plane.to_input(plane.cell_centers_uv())
        g_v = plane.resolution[1]
        for c in cells:
            pick = c.members[rng.integers(c.cell_count)]
            x = centers[pick[0] * g_v + pick[1]]
            assert forward(net, x)[1] == c.pattern
            # same pattern means the same linear map: bit-exact slope
            assert local_lipschitz(net, x) == c.lam

    def test_count_equals_distinct_patterns(self, rng):
        for _ in range(3):
            net = random_net(rng, max_depth=3, max_width=8)
            if net.input_dim < 2:
                continue
            plane = SlicePlane.axis_aligned((-2, 2, -2, 2), (9, 9),
                                            n_input=net.input_dim)
            cells = scan_regions(net, plane)
            centers = plane.to_input(plane.cell_centers_uv())
            keys = {forward(net, x)[1].key() for x in centers}
            assert len(cells) == len(keys)
            assert len({c.pattern_hash for c in cells}) == len(cells)

    def test_refinement_non_decreasing(self, rng):
        for seed in (0, 1, 2):
            net = random_network([2, 12, 1], seed=seed)
            plane = SlicePlane.axis_aligned((-2, 2, -2, 2), (6, 6))
            coarse = len(scan_regions(net, plane))
            fine = len(scan_regions(net, plane.doubled()))
            assert fine >= coarse

    def test_deterministic(self):
        net = random_network([2, 8, 1], seed=7)
        plane = unit_plane(res=(9, 9))
        a = scan_regions(net, plane)
        b = scan_regions(net, plane)
        assert [c.pattern_hash for c in a] == [c.pattern_hash for c in b]
        for ca, cb in zip(a, b):
            npt.assert_array_equal(ca.members, cb.members)
            assert ca.lam == cb.lam

    def test_pattern_matrix_statuses_and_soundness(self):
        net, X, pm = quadrant_pm()
        cells = scan_regions(net, unit_plane(), pm=pm)
        by_status = {}
        for c in cells:
            by_status.setdefault(c.theorem2_status, []).append(c)
        assert len(by_status["occupied"]) == 2
        assert len(by_status["feasible"]) == 2
        train_keys = {p.key() for p in pm.patterns}
        for c in by_status["occupied"]:
            assert c.contains_training_point
            assert c.pattern.key() in train_keys
        for c in by_status["feasible"]:
            assert c.theorem2_bound >= c.lam - 1e-12
        bounds = sorted(c.theorem2_bound for c in by_status["feasible"])
        npt.assert_allclose(bounds, [0.0, 2.0], atol=1e-10)

    def test_solve_budget_caps_largest_first(self):
        net, X, pm = quadrant_pm()
        plane = unit_plane(res=(16, 16), extent=(-1.0, 3.0, -1.0, 1.0))
        cells = scan_regions(net, plane, pm=pm, solve_budget=1)
        empty = [c for c in cells if not c.contains_training_point]
        solved = [c for c in empty if c.theorem2_status is not None]
        skipped = [c for c in empty if c.theorem2_status is None]
        assert len(solved) == 1 and len(skipped) == 1
        assert solved[0].cell_count > skipped[0].cell_count

    def test_infeasible_regions(self):
        net = Network(
            [np.eye(3), np.array([[1.0, 1.0, 1.0]])],
            [np.zeros(3), np.zeros(1)],
            ["relu", "identity"],
        )
        X = np.array([[1.0, 1.0, -1.0]])
        pm = PatternMatrix.from_frozen(net, X)
        plane = SlicePlane(np.array([0.0, 0.0, 1.0]),
                           np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
                           (-1, 1, -1, 1), (8, 8))
        cells = scan_regions(net, plane, pm=pm)
        # the third unit fires on the whole slice but in no column
        assert all(c.theorem2_status == "infeasible" for c in cells)


class TestConvergenceCheck:
    def test_quadrant_converged(self):
        rep = convergence_check(quadrant_net(), unit_plane())
        assert rep.converged and rep.count == 4 and rep.count_doubled == 4

    def test_coarse_grid_not_converged(self):
        net = random_network([2, 12, 1], seed=0)
        rep = convergence_check(net, SlicePlane.axis_aligned((-2, 2, -2, 2), (4, 4)))
        assert not rep.converged
        assert rep.count_doubled > rep.count


class TestEmitSvg:
    def test_empty_cells_frame_only(self):
        svg = emit_svg([], unit_plane(res=(4, 4)))
        ET.fromstring(svg)
        assert svg.count("<rect") == 1
        assert "<circle" not in svg

    def test_affine_single_color_canvas(self):
        plane = unit_plane(res=(4, 4))
        cells = scan_regions(affine_net(), plane)
        svg = emit_svg(cells, plane)
        ET.fromstring(svg)
        assert svg.count("<rect") == 17
        # lambda maps to the top of the scale everywhere
        assert svg.count('fill="#fde725"') == 16

    def test_bound_mode_colors(self):
        net, X, pm = quadrant_pm()
        plane = unit_plane(res=(8, 8))
        cells = scan_regions(net, plane, pm=pm)
        svg = emit_svg(cells, plane, mode="bound")
        ET.fromstring(svg)
        assert svg.count('fill="#ffffff"') == 32  # two occupied quadrants
        assert 'fill="#000000"' not in svg
        unsolved = scan_regions(net, plane, pm=pm, solve_budget=0)
        svg2 = emit_svg(unsolved, plane, mode="bound")
        assert svg2.count('fill="#000000"') == 32  # unsolved empty regions

    def test_training_dots_inside_extent_only(self):
        net, X, pm = quadrant_pm()
        plane = unit_plane(res=(8, 8))
        cells = scan_regions(net, plane, pm=pm)
        proj = plane.project(np.vstack([X, [[5.0, 5.0]]]))
        svg = emit_svg(cells, plane, dataset_projection=proj)
        ET.fromstring(svg)
        assert svg.count("<circle") == 2

    def test_deterministic_bytes(self):
        net, X, pm = quadrant_pm()
        plane = unit_plane(res=(8, 8))
        a = emit_svg(scan_regions(net, plane, pm=pm), plane,
                     dataset_projection=plane.project(X))
        b = emit_svg(scan_regions(net, plane, pm=pm), plane,
                     dataset_projection=plane.project(X))
        assert a == b

    def test_color_scale_override(self):
        plane = unit_plane(res=(4, 4))
        cells = scan_regions(affine_net(), plane)
        svg = emit_svg(cells, plane, color_scale=(0.0, 10.0))
        # lambda 5 sits at mid-scale now, not at the top
        assert 'fill="#fde725"' not in svg

    def test_mode_validation(self):
        with pytest.raises(ValueError):
            emit_svg([], unit_plane(), mode="heat")

    def test_golden_lambda_atlas(self):
        net, X, pm = quadrant_pm()
        plane = unit_plane(res=(16, 16))
        cells = scan_regions(net, plane, pm=pm)
        svg = emit_svg(cells, plane, dataset_projection=plane.project(X))
        with open(os.path.join(GOLDEN, "quadrant_lambda.svg"), "rb") as fh:
            assert svg.encode() == fh.read()

    def test_golden_bound_atlas(self):
        net, X, pm = quadrant_pm()
        plane = unit_plane(res=(16, 16))
        cells = scan_regions(net, plane, pm=pm)
        svg = emit_svg(cells, plane, mode="bound",
                       dataset_projection=plane.project(X))
        with open(os.path.join(GOLDEN, "quadrant_bound.svg"), "rb") as fh:
            assert svg.encode() == fh.read()


class TestRegionsCsv:
    def test_round_trip(self, tmp_path):
        net, X, pm = quadrant_pm()
        cells = scan_regions(net, unit_plane(res=(8, 8)), pm=pm)
        path = tmp_path / "regions.csv"
        write_regions_csv(cells, path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "pattern_hash,cell_count,lambda,occupied,bound,status"
        assert len(lines) == 5
        rows = [line.split(",") for line in lines[1:]]
        assert {r[5] for r in rows} == {"occupied", "feasible"}
        for r in rows:
            assert r[1] == "16"
            assert r[3] in ("0", "1")
            assert float(r[2]) >= 0.0
            if r[5] == "occupied":
                assert r[4] == ""
            else:
                assert float(r[4]) >= 0.0
