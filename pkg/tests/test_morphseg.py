from collections import deque

import numpy as np
import pytest

from vertseg import morphseg
from vertseg.errors import EmptyMaskError, SeedSelectionError, SeparationError
from vertseg.morphseg import (
    N6,
    N18,
    N26,
    StructuringElement,
    close_mask,
    dilate,
    erode,
    fill_holes,
    select_seeds,
    separate_processes,
    surface_voxels,
    trabecular_compartment,
    volume_grow,
)
from vertseg.phantom import PhantomSpec, generate_phantom

# ---------------------------------------------------------------------------
# independent oracles (straight loops, no shared code with the implementation)
# ---------------------------------------------------------------------------


def brute_erode(mask, offsets):
    """Out-of-grid neighbors count as foreground."""
    out = np.zeros_like(mask, dtype=bool)
    nz, ny, nx = mask.shape
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                if not mask[k, j, i]:
                    continue
                keep = True
                for dz, dy, dx in offsets:
                    kk, jj, ii = k + dz, j + dy, i + dx
                    if 0 <= kk < nz and 0 <= jj < ny and 0 <= ii < nx:
                        if not mask[kk, jj, ii]:
                            keep = False
                            break
                out[k, j, i] = keep
    return out


def brute_dilate(mask, offsets):
    """Out-of-grid neighbors count as background."""
    out = np.zeros_like(mask, dtype=bool)
    nz, ny, nx = mask.shape
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                hit = False
                for dz, dy, dx in offsets:
                    kk, jj, ii = k + dz, j + dy, i + dx
                    if 0 <= kk < nz and 0 <= jj < ny and 0 <= ii < nx:
                        if mask[kk, jj, ii]:
                            hit = True
                            break
                out[k, j, i] = hit
    return out


def conn_offsets(connectivity):
    offs = []
    for dz in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if (dz, dy, dx) == (0, 0, 0):
                    continue
                manhattan = abs(dz) + abs(dy) + abs(dx)
                if connectivity == 6 and manhattan > 1:
                    continue
                if connectivity == 18 and manhattan > 2:
                    continue
                offs.append((dz, dy, dx))
    return offs


def bfs_grow(data, seeds, threshold, connectivity):
    """Breadth-first flood fill over {data >= threshold} from seed voxels."""
    nz, ny, nx = data.shape
    offs = conn_offsets(connectivity)
    out = np.zeros_like(data, dtype=bool)
    queue = deque()
    for k, j, i in np.argwhere(seeds):
        if data[k, j, i] >= threshold and not out[k, j, i]:
            out[k, j, i] = True
            queue.append((k, j, i))
    while queue:
        k, j, i = queue.popleft()
        for dz, dy, dx in offs:
            kk, jj, ii = k + dz, j + dy, i + dx
            if 0 <= kk < nz and 0 <= jj < ny and 0 <= ii < nx \
                    and not out[kk, jj, ii] and data[kk, jj, ii] >= threshold:
                out[kk, jj, ii] = True
                queue.append((kk, jj, ii))
    return out


def random_mask(rng, shape, p=0.5):
    return rng.random(shape) < p


# ---------------------------------------------------------------------------
# structuring elements
# ---------------------------------------------------------------------------


class TestStructuringElement:
    def test_neighborhood_sizes(self):
        assert len(N6.offsets()) == 7
        assert len(N18.offsets()) == 19
        assert len(N26.offsets()) == 27

    def test_ball_radius_one_is_face_neighborhood(self):
        se = StructuringElement.ball(1.0)
        assert len(se.offsets((1.0, 1.0, 1.0))) == 7

    def test_ball_radius_respects_anisotropy(self):
        se = StructuringElement.ball(2.0)
        offs = se.offsets((1.0, 1.0, 2.0))
        dz = offs[:, 0]
        assert dz.max() == 1    # 2 mm slice spacing: only one slice up/down
        assert offs[:, 2].max() == 2

    def test_invalid(self):
        with pytest.raises(ValueError):
            StructuringElement("n4")
        with pytest.raises(ValueError):
            StructuringElement.ball(0.0)


# ---------------------------------------------------------------------------
# erosion / dilation
# ---------------------------------------------------------------------------


class TestErodeDilate:
    def test_single_voxel_erodes_away(self):
        mask = np.zeros((3, 3, 3), dtype=bool)
        mask[1, 1, 1] = True
        assert not erode(mask, N6).any()

    def test_cube_erodes_to_center(self):
        # hand enumeration: of the 27 cube voxels only the center keeps all
        # six face neighbors inside the cube
        mask = np.zeros((5, 5, 5), dtype=bool)
        mask[1:4, 1:4, 1:4] = True
        expected = np.zeros((5, 5, 5), dtype=bool)
        expected[2, 2, 2] = True
        assert np.array_equal(erode(mask, N6), expected)

    @pytest.mark.parametrize("se", [N6, N18, N26, StructuringElement.ball(1.8)])
    def test_matches_brute_force(self, se):
        rng = np.random.default_rng(0)
        offs = se.offsets((1.0, 1.0, 1.0))
        for _ in range(8):
            mask = random_mask(rng, (6, 7, 5))
            assert np.array_equal(erode(mask, se), brute_erode(mask, offs))
            assert np.array_equal(dilate(mask, se), brute_dilate(mask, offs))

    @pytest.mark.parametrize("se", [N6, N26])
    def test_opening_closing_sandwich(self, se):
        rng = np.random.default_rng(1)
        for _ in range(50):
            mask = random_mask(rng, (16, 16, 16))
            opened = dilate(erode(mask, se), se)
            closed = erode(dilate(mask, se), se)
            assert not (opened & ~mask).any()
            assert not (mask & ~closed).any()

    @pytest.mark.parametrize("se", [N6, N18, N26])
    def test_duality(self, se):
        # erosion == complemented dilation of the complement (symmetric se)
        rng = np.random.default_rng(2)
        for _ in range(50):
            mask = random_mask(rng, (12, 12, 12))
            assert np.array_equal(erode(mask, se), ~dilate(~mask, se))

    def test_closing_idempotent(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            mask = random_mask(rng, (12, 12, 12), p=0.4)
            once = close_mask(mask, N6)
            assert np.array_equal(close_mask(once, N6), once)


# ---------------------------------------------------------------------------
# hole filling
# ---------------------------------------------------------------------------


class TestFillHoles:
    def test_solid_cube_unchanged(self):
        mask = np.zeros((7, 7, 7), dtype=bool)
        mask[2:5, 2:5, 2:5] = True
        assert np.array_equal(fill_holes(mask), mask)

    def test_hollow_shell_filled_solid(self):
        mask = np.zeros((9, 9, 9), dtype=bool)
        mask[2:7, 2:7, 2:7] = True
        mask[3:6, 3:6, 3:6] = False
        filled = fill_holes(mask)
        expected = np.zeros((9, 9, 9), dtype=bool)
        expected[2:7, 2:7, 2:7] = True
        assert np.array_equal(filled, expected)

    def test_open_tube_not_filled(self):
        # bore reaches both grid faces: 6-connected to the outside
        mask = np.ones((5, 5, 5), dtype=bool)
        mask[:, 2, 2] = False
        assert np.array_equal(fill_holes(mask), mask)


# ---------------------------------------------------------------------------
# seeds + growing
# ---------------------------------------------------------------------------


class TestSelectSeeds:
    def test_all_below_threshold_errors(self):
        data = np.full((3, 3, 3), 100.0)
        surface = np.ones_like(data, dtype=bool)
        with pytest.raises(SeedSelectionError):
            select_seeds(data, surface, 300.0)

    def test_very_low_threshold_keeps_all(self):
        data = np.full((3, 3, 3), -500.0)
        surface = np.zeros_like(data, dtype=bool)
        surface[1, 1, :] = True
        seeds = select_seeds(data, surface, -2000.0)
        assert np.array_equal(seeds, surface)

    def test_phantom_seeds_land_on_cortical_shell(self):
        spec = PhantomSpec(noise_sigma=0.0)
        vol, truth = generate_phantom(spec)
        vert = truth.vertebrae[1]
        surf = surface_voxels(vert.body)
        seeds = select_seeds(vol, surf, 300.0)
        assert seeds.any()
        assert np.all(vol.data[seeds] == spec.hu_cortical)


class TestVolumeGrow:
    def test_empty_seeds_empty_mask(self):
        data = np.full((4, 4, 4), 500.0)
        seeds = np.zeros_like(data, dtype=bool)
        assert not volume_grow(data, seeds, 130.0).any()

    def test_full_flood(self):
        data = np.full((4, 5, 6), 500.0)
        seeds = np.zeros_like(data, dtype=bool)
        seeds[0, 0, 0] = True
        assert volume_grow(data, seeds, 130.0).all()

    def test_restricted_to_within(self):
        data = np.full((4, 4, 4), 500.0)
        seeds = np.zeros_like(data, dtype=bool)
        seeds[1, 1, 1] = True
        within = np.zeros_like(data, dtype=bool)
        within[1] = True
        grown = volume_grow(data, seeds, 130.0, within=within)
        assert np.array_equal(grown, within)

    @pytest.mark.parametrize("connectivity", [6, 26])
    def test_matches_bfs_oracle(self, connectivity):
        rng = np.random.default_rng(7)
        for _ in range(100):
            data = rng.integers(0, 300, size=(12, 12, 12)).astype(float)
            seeds = random_mask(rng, data.shape, p=0.01)
            seeds &= data >= 150.0
            got = volume_grow(data, seeds, 150.0, connectivity=connectivity)
            want = bfs_grow(data, seeds, 150.0, connectivity)
            assert np.array_equal(got, want)

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(8)
        data = rng.integers(0, 300, size=(14, 14, 14)).astype(float)
        seeds = np.zeros_like(data, dtype=bool)
        seeds[7, 7, 7] = True
        data[7, 7, 7] = 299.0
        low = volume_grow(data, seeds, 100.0)
        high = volume_grow(data, seeds, 200.0)
        assert not (high & ~low).any()


# ---------------------------------------------------------------------------
# body / process separation
# ---------------------------------------------------------------------------


def dumbbell(big=7, small=5, bridge=3):
    nz = max(big, small) + 4
    ny = max(big, small) + 4
    nx = big + small + bridge + 4
    mask = np.zeros((nz, ny, nx), dtype=bool)
    cz, cy = nz // 2, ny // 2
    b0 = 2
    mask[cz - big // 2:cz + big // 2 + 1,
         cy - big // 2:cy + big // 2 + 1, b0:b0 + big] = True
    s0 = b0 + big + bridge
    mask[cz - small // 2:cz + small // 2 + 1,
         cy - small // 2:cy + small // 2 + 1, s0:s0 + small] = True
    mask[cz, cy, b0 + big:s0] = True
    return mask, (slice(cz - big // 2, cz + big // 2 + 1),
                  slice(cy - big // 2, cy + big // 2 + 1),
                  slice(b0, b0 + big))


class TestSeparateProcesses:
    def test_dumbbell(self):
        mask, big_cube = dumbbell()
        body, proc = separate_processes(mask)
        assert (body & proc).sum() == 0
        assert np.array_equal(body | proc, mask)
        assert body[big_cube].all()          # the larger cube is the body
        assert proc.any()

    def test_convex_blob_errors(self):
        mask = np.zeros((9, 9, 9), dtype=bool)
        mask[2:7, 2:7, 2:7] = True
        with pytest.raises(SeparationError):
            separate_processes(mask)

    def test_empty_mask_errors(self):
        with pytest.raises(EmptyMaskError):
            separate_processes(np.zeros((3, 3, 3), dtype=bool))

    def test_disconnected_mask_rejected(self):
        mask = np.zeros((5, 5, 7), dtype=bool)
        mask[2, 2, 1] = True
        mask[2, 2, 5] = True
        with pytest.raises(ValueError):
            separate_processes(mask)

    @pytest.mark.parametrize("level", [0, 1, 2])
    def test_phantom_vertebra_overlap(self, level):
        spec = PhantomSpec(noise_sigma=0.0)
        _, truth = generate_phantom(spec)
        vert = truth.vertebrae[level]
        body, proc = separate_processes(vert.total, spacing=spec.spacing_mm)
        assert np.array_equal(body | proc, vert.total)
        assert (body & proc).sum() == 0
        gt_body = vert.body
        gt_proc = vert.processes
        covered = (body & gt_body).sum() / gt_body.sum()
        bleed = (body & gt_proc).sum() / gt_proc.sum()
        assert covered >= 0.95
        assert bleed < 0.05


# ---------------------------------------------------------------------------
# trabecular compartment
# ---------------------------------------------------------------------------


class TestTrabecularCompartment:
    def test_phantom_excludes_cortical_shell(self):
        spec = PhantomSpec(noise_sigma=0.0)
        vol, truth = generate_phantom(spec)
        vert = truth.vertebrae[0]
        trab = trabecular_compartment(vol, vert.body, cortical_hu=350.0,
                                      peel_mm=1.5, spacing=spec.spacing_mm)
        cortical_voxels = vert.total & (vol.data == spec.hu_cortical)
        assert not (trab & cortical_voxels).any()
        assert trab.any()

    def test_peel_zero_all_trabecular_is_identity(self):
        mask = np.zeros((8, 8, 8), dtype=bool)
        mask[2:6, 2:6, 2:6] = True
        data = np.full(mask.shape, 150.0)
        out = trabecular_compartment(data, mask, cortical_hu=350.0, peel_mm=0.0)
        assert np.array_equal(out, mask)

    def test_peel_steps_are_ceiling_of_depth(self):
        mask = np.zeros((10, 10, 10), dtype=bool)
        mask[1:9, 1:9, 1:9] = True
        data = np.full(mask.shape, 150.0)
        out = trabecular_compartment(data, mask, cortical_hu=350.0, peel_mm=1.5,
                                     spacing=(1.0, 1.0, 1.0))
        expected = erode(erode(mask, N6), N6)   # ceil(1.5/1) = 2 steps
        assert np.array_equal(out, expected)

    def test_strict_subset_for_positive_peel(self):
        mask = np.zeros((8, 8, 8), dtype=bool)
        mask[1:7, 1:7, 1:7] = True
        data = np.full(mask.shape, 150.0)
        out = trabecular_compartment(data, mask, cortical_hu=350.0, peel_mm=1.0)
        assert out.sum() < mask.sum()
        assert not (out & ~mask).any()

    def test_empty_result_errors(self):
        mask = np.zeros((4, 4, 4), dtype=bool)
        mask[1:3, 1:3, 1:3] = True
        data = np.full(mask.shape, 150.0)
        with pytest.raises(EmptyMaskError):
            trabecular_compartment(data, mask, cortical_hu=350.0, peel_mm=5.0)


class TestSurfaceVoxels:
    def test_definition(self):
        mask = np.zeros((6, 6, 6), dtype=bool)
        mask[1:5, 1:5, 1:5] = True
        surf = surface_voxels(mask)
        assert not (surf & ~mask).any()
        inner = np.zeros_like(mask)
        inner[2:4, 2:4, 2:4] = True
        assert not (surf & inner).any()
        assert np.array_equal(surf | inner, mask)

    def test_grid_border_counts_as_outside(self):
        mask = np.ones((3, 3, 3), dtype=bool)
        surf = surface_voxels(mask)
        # every voxel except the center touches the grid border
        assert not surf[1, 1, 1]
        assert surf.sum() == 26
