"""Grid storage, trilinear sampling, pruning and upsampling."""

import numpy as np
import pytest

from voxrf.grid import (
    OccupancyMask,
    SparseVoxelGrid,
    new_dense,
    prune_by_density,
    sample_trilinear,
    sparsity,
    upsample2x,
)


def random_grid(rng, res=16, fill=0.4, dtype=np.float64):
    n = res**3
    idx = np.flatnonzero(rng.random(n) < fill).astype(np.int64)
    density = rng.normal(1.0, 2.0, idx.size)
    sh0 = rng.normal(0.0, 1.0, (idx.size, 3))
    return SparseVoxelGrid(res, indices=idx, density=density, sh0=sh0, dtype=dtype)


def brute_force_sample(grid, p):
    """Independent 8-neighbor interpolation oracle (plain python loops)."""
    g = (np.asarray(p) - grid.lo) / grid.voxel_size - 0.5
    base = np.floor(g).astype(int)
    frac = g - base
    slot = grid.slot_table()
    sig, col = 0.0, np.zeros(3)
    for a in (0, 1):
        for b in (0, 1):
            for c in (0, 1):
                ijk = base + np.array([a, b, c])
                if np.any(ijk < 0) or np.any(ijk >= grid.resolution):
                    continue
                row = slot[(ijk[0] * grid.resolution + ijk[1])
                           * grid.resolution + ijk[2]]
                if row < 0:
                    continue
                w = ((frac[0] if a else 1 - frac[0])
                     * (frac[1] if b else 1 - frac[1])
                     * (frac[2] if c else 1 - frac[2]))
                sig += w * float(grid.density[row])
                col += w * grid.sh0[row].astype(np.float64)
    return sig, col


class TestConstruction:
    def test_new_dense_counts(self):
        g = new_dense(32)
        assert g.num_voxels == 32768
        assert sparsity(g) == 0.0

    def test_voxel_size(self):
        assert new_dense(8).voxel_size == pytest.approx(0.25, abs=0)

    def test_full_resolution_grid(self):
        g = new_dense(128)
        assert g.num_voxels == 2_097_152

    @pytest.mark.parametrize("res", [0, 4, 12, 2**21])
    def test_invalid_resolution(self, res):
        with pytest.raises(ValueError):
            new_dense(res)

    def test_non_cubic_bounds_rejected(self):
        with pytest.raises(ValueError):
            new_dense(8, bounds=((-1, -1, -1), (1, 1, 2)))

    def test_value_key_consistency(self):
        g = random_grid(np.random.default_rng(0))
        occ = g.occupancy()
        assert occ.occupied_count == g.num_voxels
        assert np.array_equal(np.flatnonzero(occ.bits), g.indices)
        # unordered indices are rejected
        with pytest.raises(ValueError):
            SparseVoxelGrid(16, indices=np.array([5, 3]),
                            density=np.zeros(2), sh0=np.zeros((2, 3)))


class TestSampleTrilinear:
    def test_vertex_exactness(self):
        g = new_dense(16, fill_sigma=0.0)
        g.density[g.slot_table()[(3 * 16 + 4) * 16 + 5]] = 5.0
        center = g.cell_centers(np.array([(3 * 16 + 4) * 16 + 5]))[0]
        sig, _ = sample_trilinear(g, center)
        assert sig == pytest.approx(5.0, abs=1e-12)

    def test_midpoint_linearity(self):
        g = new_dense(16, fill_sigma=0.0)
        slot = g.slot_table()
        i1 = (8 * 16 + 8) * 16 + 7
        i2 = (8 * 16 + 8) * 16 + 8
        g.density[slot[i1]] = 2.0
        g.density[slot[i2]] = 4.0
        c1 = g.cell_centers(np.array([i1]))[0]
        c2 = g.cell_centers(np.array([i2]))[0]
        sig, _ = sample_trilinear(g, 0.5 * (c1 + c2))
        assert sig == pytest.approx(3.0, abs=1e-12)

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(7)
        g = random_grid(rng)
        pts = rng.uniform(-1.1, 1.1, (200, 3))
        sig, col = sample_trilinear(g, pts)
        for i in range(pts.shape[0]):
            ref_sig, ref_col = brute_force_sample(g, pts[i])
            assert sig[i] == pytest.approx(ref_sig, abs=1e-12)
            np.testing.assert_allclose(col[i], ref_col, atol=1e-12)

    def test_outside_bounds_zero(self):
        g = new_dense(16, fill_sigma=3.0, fill_sh=1.0)
        sig, col = sample_trilinear(g, np.array([[2.5, 0.0, 0.0],
                                                 [0.0, -900.0, 0.0]]))
        assert np.all(sig == 0.0)
        assert np.all(col == 0.0)

    def test_partition_of_unity_constant_field(self):
        g = new_dense(16, fill_sigma=2.5, fill_sh=0.7)
        rng = np.random.default_rng(3)
        # interior: at least half a voxel away from the boundary
        pts = rng.uniform(-1 + g.voxel_size, 1 - g.voxel_size, (100, 3))
        sig, col = sample_trilinear(g, pts)
        np.testing.assert_allclose(sig, 2.5, atol=1e-12)
        np.testing.assert_allclose(col, 0.7, atol=1e-12)

    def test_continuity_across_cell_boundary(self):
        rng = np.random.default_rng(11)
        g = random_grid(rng)
        scale = np.abs(g.density).max()
        eps = 1e-9
        for _ in range(50):
            ijk = rng.integers(1, 15, 3)
            boundary = g.lo + ijk * g.voxel_size  # cell face
            p = boundary + rng.uniform(0, g.voxel_size, 3) * np.array([0, 1, 1])
            lo_p = p.copy()
            hi_p = p.copy()
            lo_p[0] -= eps
            hi_p[0] += eps
            s_lo, _ = sample_trilinear(g, lo_p)
            s_hi, _ = sample_trilinear(g, hi_p)
            assert abs(s_hi - s_lo) < 1e-6 * max(scale, 1.0)


class TestPrune:
    def test_all_zero_grid_empties(self):
        g = new_dense(8, fill_sigma=0.0)
        assert prune_by_density(g, 0.0).num_voxels == 0

    def test_single_voxel_survives(self):
        g = new_dense(8, fill_sigma=0.0)
        g.density[100] = 10.0
        pruned = prune_by_density(g, 1e-3, require_neighbors=False)
        assert pruned.num_voxels == 1
        assert pruned.indices[0] == g.indices[100]

    def test_block_with_neighbor_guard_matches_brute_force(self):
        res = 12  # not a power of two; use 16 with a 4^3 block
        res = 16
        g = new_dense(res, fill_sigma=0.0)
        vol = np.zeros((res, res, res))
        vol[6:10, 6:10, 6:10] = 10.0
        g.density[:] = vol.reshape(-1)
        pruned = prune_by_density(g, 1e-3, require_neighbors=True)

        # brute force: remove iff sigma <= tau and all 6 neighbors <= tau
        keep = np.zeros((res, res, res), dtype=bool)
        for i in range(res):
            for j in range(res):
                for k in range(res):
                    if vol[i, j, k] > 1e-3:
                        keep[i, j, k] = True
                        continue
                    for d in ((1, 0, 0), (-1, 0, 0), (0, 1, 0),
                              (0, -1, 0), (0, 0, 1), (0, 0, -1)):
                        ni, nj, nk = i + d[0], j + d[1], k + d[2]
                        if (0 <= ni < res and 0 <= nj < res and 0 <= nk < res
                                and vol[ni, nj, nk] > 1e-3):
                            keep[i, j, k] = True
                            break
        expected = np.flatnonzero(keep.reshape(-1))
        np.testing.assert_array_equal(pruned.indices, expected)
        # the solid block itself is fully retained, the far exterior is gone
        assert np.all(keep[6:10, 6:10, 6:10])
        assert pruned.num_voxels < g.num_voxels

    @pytest.mark.parametrize("require_neighbors", [False, True])
    def test_idempotent(self, require_neighbors):
        g = random_grid(np.random.default_rng(5))
        once = prune_by_density(g, 0.5, require_neighbors=require_neighbors)
        twice = prune_by_density(once, 0.5, require_neighbors=require_neighbors)
        np.testing.assert_array_equal(once.indices, twice.indices)

    def test_occupancy_subset(self):
        g = random_grid(np.random.default_rng(6))
        pruned = prune_by_density(g, 0.2)
        assert np.all(np.isin(pruned.indices, g.indices))

    def test_negative_tau_rejected(self):
        with pytest.raises(ValueError):
            prune_by_density(new_dense(8), -1.0)


class TestUpsample:
    def test_constant_preserved(self):
        g = new_dense(8, fill_sigma=1.5, fill_sh=0.25)
        up = upsample2x(g)
        assert up.resolution == 16
        assert up.num_voxels == 8 * g.num_voxels
        np.testing.assert_allclose(up.density, 1.5, atol=1e-6)
        np.testing.assert_allclose(up.sh0, 0.25, atol=1e-6)

    def test_child_count_bound(self):
        g = random_grid(np.random.default_rng(2), res=16)
        up = upsample2x(g)
        assert up.num_voxels == 8 * g.num_voxels

    def test_linear_ramp_reproduced(self):
        res = 16
        g = new_dense(res, dtype=np.float64)
        centers = g.cell_centers()
        g.density[:] = 2.0 * centers[:, 0] + 0.5
        up = upsample2x(g)
        child_centers = up.cell_centers()
        expected = 2.0 * child_centers[:, 0] + 0.5
        # interior children reproduce the ramp; boundary children clamp to the
        # outermost parent plane
        half_parent = g.voxel_size / 2
        interior = np.abs(child_centers[:, 0]) < 1 - half_parent
        np.testing.assert_allclose(up.density[interior].astype(np.float64),
                                   expected[interior], atol=1e-6)
        edge = ~interior
        clamped = 2.0 * np.sign(child_centers[edge, 0]) * (1 - half_parent) + 0.5
        np.testing.assert_allclose(up.density[edge].astype(np.float64),
                                   clamped, atol=1e-6)

    def test_parent_centers_reproduced_for_linear_field(self):
        res = 8
        g = new_dense(res, dtype=np.float64)
        centers = g.cell_centers()
        g.density[:] = centers @ np.array([0.3, -1.1, 0.7]) + 0.2
        up = upsample2x(g)
        # sampling the child grid at interior parent centers returns the
        # parent values (holds for locally linear fields)
        interior = np.all(np.abs(centers) < 1 - g.voxel_size, axis=1)
        sig, _ = sample_trilinear(up, centers[interior])
        np.testing.assert_allclose(sig, g.density[interior], atol=1e-12)


class TestSparsity:
    def test_dense_zero(self):
        assert sparsity(new_dense(8)) == 0.0

    def test_empty_one(self):
        assert sparsity(SparseVoxelGrid(8)) == 1.0

    def test_mask_counting(self):
        bits = np.zeros(16**3, dtype=bool)
        bits[:1000] = True
        mask = OccupancyMask(16, bits)
        assert sparsity(mask) == pytest.approx(1 - 1000 / 16**3, abs=0)

    def test_restrict(self):
        g = random_grid(np.random.default_rng(9))
        bits = np.zeros(g.resolution**3, dtype=bool)
        bits[g.indices[::2]] = True
        sub = g.restrict(OccupancyMask(g.resolution, bits))
        np.testing.assert_array_equal(sub.indices, g.indices[::2])
        np.testing.assert_array_equal(sub.density, g.density[::2])
