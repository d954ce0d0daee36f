import numpy as np
import pytest

from rankmotion.lowrank import ensemble_spectrum
from rankmotion.phantom import PhantomSpec, generate_phantom, phantom_mass_check, reference_image

from conftest import small_spec


@pytest.fixture(scope="module")
def default_phantom():
    return generate_phantom(PhantomSpec())


class TestSpec:
    @pytest.mark.parametrize("kw", [
        dict(n_phases=2), dict(amplitude_mm=-1), dict(tumor_radius=0),
        dict(air=0.3, lung=0.25), dict(tumor=2.0, tissue=1.0), dict(noise_std=-0.1),
    ])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            PhantomSpec(**kw)

    def test_coefficients(self):
        s = PhantomSpec(n_phases=4, amplitude_mm=6, hysteresis_mm=2)
        assert s.coefficients(0) == (0.0, 0.0)
        a, b = s.coefficients(1)
        assert a == pytest.approx(3.0) and b == pytest.approx(2.0)
        a, b = s.coefficients(2)
        assert a == pytest.approx(6.0) and b == pytest.approx(0.0, abs=1e-12)


class TestGenerate:
    def test_zero_motion(self):
        t = generate_phantom(small_spec(amplitude_mm=0.0, hysteresis_mm=0.0))
        for img in t.images:
            assert np.array_equal(img.values, t.images[0].values)
        assert np.all(t.true_displacements.matrix() == 0)
        assert all(d == 0 for d in phantom_mass_check(t).deviations)

    def test_rank_one_without_hysteresis(self):
        t = generate_phantom(small_spec(hysteresis_mm=0.0))
        s = ensemble_spectrum(t.true_displacements).singvals
        assert s[1] <= 1e-10 * s[0]

    def test_default_rank_two(self, default_phantom):
        s = ensemble_spectrum(default_phantom.true_displacements).singvals
        assert s[1] > 1e-3 * s[0]
        assert s[2] <= 1e-10 * s[0]

    def test_reference_is_base_anatomy(self, default_phantom):
        assert np.array_equal(default_phantom.images[0].values, reference_image(PhantomSpec()).values)

    def test_layout(self, default_phantom):
        t = default_phantom
        assert len(t.images) == 10 and len(t.true_displacements) == 9
        assert t.true_displacements.phase_ids == list(range(1, 10))
        assert set(t.masks) == {"tumor", "lung"} and all(len(m) == 10 for m in t.masks.values())

    def test_positive_densities(self, default_phantom):
        assert min(im.values.min() for im in default_phantom.images) >= PhantomSpec().air

    def test_mass_conserved(self, default_phantom):
        assert phantom_mass_check(default_phantom).max_deviation <= 0.01

    def test_noise_reported(self):
        t = generate_phantom(small_spec(noise_std=0.01, seed=3))
        rep = phantom_mass_check(t)
        assert rep.noise_bound > 0 and len(rep.deviations) == 4

    def test_deterministic(self):
        a = generate_phantom(small_spec(noise_std=0.02, seed=5))
        b = generate_phantom(small_spec(noise_std=0.02, seed=5))
        assert all(np.array_equal(x.values, y.values) for x, y in zip(a.images, b.images))

    def test_fold_error_names_parameter(self):
        with pytest.raises(ValueError, match="amplitude_mm"):
            generate_phantom(small_spec(amplitude_mm=12.0))

    def test_masks_follow_motion(self, default_phantom):
        # the tumor mask of the reference pulled back by the truth matches the phase mask
        from rankmotion.evaluation import dice, warp_mask
        t = default_phantom
        for pid, d in zip(t.true_displacements.phase_ids, t.true_displacements.fields):
            assert dice(warp_mask(t.masks["tumor"][pid], d), t.masks["tumor"][0]) > 0.9
