import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import ndimage

from microtrap.errors import DomainError, SequenceError
from microtrap.experiments import (ExperimentSpec, ImageGray, PatternSpec, build_sequence,
                                   fringe_contrast, make_pattern, nominal_ensemble,
                                   run_scan, synth_fluorescence_image)
from microtrap.optics import LensRect, SlmMask, trap_sites
from microtrap.spin import NoiseModel

QUIET = NoiseModel(enabled=False)
NO_DECAY = NoiseModel(enabled=False, irreversible_T2=1e9)
FULL = LensRect(0, 0, 50, 50)


class TestPatterns:
    def test_checkerboard_3x3(self):
        sel = make_pattern(PatternSpec("checkerboard"))
        assert sel == {(24, 24), (24, 26), (25, 25), (26, 24), (26, 26)}

    def test_full_3x3(self):
        assert len(make_pattern(PatternSpec("full"))) == 9

    def test_complement_partition(self):
        for grid in (LensRect(24, 24, 3, 3), LensRect(3, 7, 10, 5), FULL):
            a = make_pattern(PatternSpec("checkerboard", grid, parity=0))
            b = make_pattern(PatternSpec("checkerboard", grid, parity=1))
            assert a | b == set(grid) and not a & b

    def test_ring_matches_brute_force(self):
        sel = make_pattern(PatternSpec("ring", FULL, center=(24.5, 24.5),
                                       inner_r=3.5, outer_r=4.5))
        brute = set()
        for i in range(50):
            for j in range(50):
                d2 = (i - 24.5) ** 2 + (j - 24.5) ** 2
                if 3.5 ** 2 <= d2 <= 4.5 ** 2:
                    brute.add((i, j))
        assert sel == brute and len(sel) > 0

    def test_ring_fourfold_symmetry(self):
        sel = make_pattern(PatternSpec("ring", FULL, center=(24.5, 24.5),
                                       inner_r=3.5, outer_r=4.5))
        # rotation by 90 degrees about (24.5, 24.5): (i, j) -> (49 - j, i)
        assert {(49 - j, i) for i, j in sel} == sel

    def test_ring_is_closed(self):
        sel = make_pattern(PatternSpec("ring", FULL, center=(24.5, 24.5),
                                       inner_r=3.5, outer_r=4.5))
        img = np.zeros((50, 50), bool)
        for i, j in sel:
            img[j, i] = True
        _, n_parts = ndimage.label(img, structure=np.ones((3, 3)))
        holes, n_holes = ndimage.label(~img)
        assert n_parts == 1 and n_holes == 2

    def test_plaquettes(self):
        sel = make_pattern(PatternSpec("plaquettes", LensRect(0, 0, 5, 5), block_w=2,
                                       block_h=2, gap=1))
        assert sel == {(i, j) for i in (0, 1, 3, 4) for j in (0, 1, 3, 4)}

    def test_explicit_and_empty(self):
        assert make_pattern(PatternSpec("explicit", lenses=((25, 25),))) == {(25, 25)}
        with pytest.warns(UserWarning):
            assert make_pattern(PatternSpec("explicit")) == frozenset()

    def test_deterministic(self):
        spec = PatternSpec("ring", FULL, inner_r=2.0, outer_r=9.0)
        assert make_pattern(spec) == make_pattern(spec)

    @pytest.mark.parametrize("kwargs", [
        dict(kind="hexagon"), dict(kind="checkerboard", parity=2),
        dict(kind="ring", inner_r=2.0, outer_r=2.0), dict(kind="plaquettes", block_w=0),
        dict(kind="explicit", lenses=((0, 0),)),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(DomainError):
            PatternSpec(**kwargs)


class TestRunScan:
    def test_ramsey_addressed_oscillate_others_flat(self):
        table = run_scan(ExperimentSpec(noise=replace(QUIET, enabled=True)))
        addressed = set(table.metadata["addressed"])
        assert len(addressed) == 5
        for lens in table.sites():
            p = table.column(lens, "p0_ideal")
            if lens in addressed:
                assert p.max() - p.min() > 0.5
            else:
                assert p.max() - p.min() <= 1e-4

    def test_spin_texture_neighbours_sum_to_one(self):
        table = run_scan(ExperimentSpec(protocol="spin_texture_ramsey", noise=QUIET))
        for a, b in [((25, 25), (24, 25)), ((24, 24), (25, 24)), ((26, 26), (26, 25))]:
            s = table.column(a, "p0_measured") + table.column(b, "p0_measured")
            assert np.allclose(s, 1.0, atol=1e-12)

    def test_echo_rephases_at_twice_t_pi(self):
        exp = ExperimentSpec(protocol="echo", scan_stop=12e-3, noise=NO_DECAY)
        T = np.round(np.arange(4.1e-3, 12.0001e-3, 0.1e-3), 12)
        c = [fringe_contrast(exp, (25, 25), t) for t in T]
        assert T[int(np.argmax(c))] == pytest.approx(8e-3)
        assert max(c) == pytest.approx(1.0, abs=1e-9)

    def test_echo_non_addressed_envelope_is_monotone(self):
        exp = ExperimentSpec(protocol="echo", scan_stop=12e-3)
        T = np.linspace(0.1e-3, 12e-3, 120)
        c = np.array([fringe_contrast(exp, (24, 25), t) for t in T])
        assert np.all(np.diff(c) < 0)

    def test_table_complete_and_bounded(self):
        exp = ExperimentSpec(sites=LensRect(23, 23, 4, 5), scan_steps=7)
        table = run_scan(exp)
        assert len(table) == 20 * 7
        for r in table.rows:
            assert 0 <= r.p0_ideal <= 1 and 0 <= r.p0_measured <= 1 and r.sem >= 0

    def test_independent_of_workers(self):
        exp = ExperimentSpec(scan_steps=9)
        assert run_scan(exp, 1).rows == run_scan(exp, 4).rows
        mc = replace(exp, backend="monte_carlo", ensemble=nominal_ensemble(n_atoms=300))
        assert run_scan(mc, 1).rows == run_scan(mc, 3).rows

    def test_seed_changes_measurement_only(self):
        a = run_scan(ExperimentSpec(scan_steps=5))
        b = run_scan(ExperimentSpec(scan_steps=5, noise=NoiseModel(rng_seed=1)))
        assert [r.p0_ideal for r in a.rows] == [r.p0_ideal for r in b.rows]
        assert [r.p0_measured for r in a.rows] != [r.p0_measured for r in b.rows]

    def test_metadata(self):
        table = run_scan(ExperimentSpec(scan_steps=3))
        assert table.metadata["backend"] == "analytic"
        assert len(table.metadata["spec_hash"]) == 64

    def test_echo_pulse_outside_scan(self):
        with pytest.raises(SequenceError):
            run_scan(ExperimentSpec(protocol="echo", T_pi=9e-3, scan_stop=8e-3))

    @pytest.mark.parametrize("kwargs", [dict(scan_steps=1), dict(protocol="rabi"),
                                        dict(backend="gpu"), dict(scan_stop=0.0),
                                        dict(sites=LensRect(48, 48, 3, 3))])
    def test_invalid_spec(self, kwargs):
        with pytest.raises(DomainError):
            ExperimentSpec(**kwargs).validate()

    def test_masks_static_within_a_shot(self, slm):
        exp = ExperimentSpec()
        for protocol in ("ramsey", "echo", "spin_texture_ramsey"):
            seq = build_sequence(replace(exp, protocol=protocol), 6e-3, {(25, 25): 1.0})
            seq.check_mask_timing(slm.rise_time)


@pytest.fixture(scope="module")
def sites(slm, mla, beam, imaging, amap3):
    return trap_sites(SlmMask.uniform(255, slm), beam, amap3, mla, imaging)


class TestImages:
    def test_background_only(self, sites):
        img = synth_fluorescence_image(sites, {}, QUIET)
        assert np.all(img.data == 5.0)

    def test_nine_blobs_on_pitch(self, sites):
        pops = {s.lens: 1.0 for s in sites}
        img = synth_fluorescence_image(sites, pops, QUIET)
        peaks = img.data == ndimage.maximum_filter(img.data, size=15)
        peaks &= img.data > 5.0 + 1.0
        ys, xs = np.nonzero(peaks)
        assert len(xs) == 9
        xpos = np.unique(np.round(img.origin[0] + xs * img.pixel_scale, 7))
        assert np.allclose(np.diff(xpos), 55.47e-6, atol=img.pixel_scale)

    def test_averaging_reduces_noise(self, sites):
        noise = NoiseModel(rng_seed=3)
        one = synth_fluorescence_image(sites, {}, noise, averages=1)
        twenty = synth_fluorescence_image(sites, {}, noise, averages=20)
        ratio = one.data.std() / twenty.data.std()
        assert ratio == pytest.approx(math.sqrt(20), rel=0.10)

    def test_population_domain(self, sites):
        with pytest.raises(DomainError):
            synth_fluorescence_image(sites, {(25, 25): 1.5}, QUIET)

    def test_uint8_normalisation(self):
        img = ImageGray(np.array([[0.0, 1.0], [2.0, 4.0]]), 1e-6, (0.0, 0.0), 1e-6)
        assert img.to_uint8().tolist() == [[0, 64], [128, 255]]
        with pytest.raises(DomainError):
            ImageGray(np.array([[-1.0]]), 1e-6, (0.0, 0.0), 1e-6)
