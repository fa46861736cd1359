import pytest

from stochorin.presets import PRESETS, get_preset
from stochorin.study import StudySpec

EXPECTED_NAMES = {"fig5_1", "fig5_3", "fig5_4", "fig5_5", "fig5_6", "fig5_7"}


def test_preset_catalogue():
    assert set(PRESETS) == EXPECTED_NAMES
    for name in EXPECTED_NAMES:
        assert get_preset(name).name == name


def test_unknown_preset_message_lists_names():
    with pytest.raises(ValueError, match="fig5_1"):
        get_preset("fig9_9")


def test_full_scale_uses_benchmark_constants():
    spec = get_preset("fig5_1").scaled(1.0)
    assert spec.k0 == 1 / 4096
    assert spec.mesh_sizes == (50,)
    assert spec.reference_n == 50
    assert spec.n_realizations == 500
    assert spec.noise_coeff == 10.0
    assert spec.variant == "standard"

    spec = get_preset("fig5_5").scaled(1.0)
    assert spec.n_realizations == 800
    assert spec.noise_coeff == 1.0
    assert spec.variant == "modified"


def test_desk_scale_fig5_1_matches_pinned_surrogate():
    spec = get_preset("fig5_1").scaled(0.2)
    assert spec.mesh_sizes == (32,)
    assert spec.reference_n == 32
    assert spec.k0 == 1 / 1024
    assert spec.time_steps == (1 / 16, 1 / 32, 1 / 64, 1 / 128)
    assert spec.n_realizations == 100
    assert spec.noise_coeff == 10.0


def test_desk_scale_fig5_5_shares_the_run_grid():
    a = get_preset("fig5_1").scaled(0.2)
    b = get_preset("fig5_5").scaled(0.125)
    assert b.n_realizations == 100
    assert (b.mesh_sizes, b.reference_n, b.time_steps) == (
        a.mesh_sizes,
        a.reference_n,
        a.time_steps,
    )
    # the half-order study keeps the full-size reference step (see module
    # docstring: the coupled-gap suppression would steepen a 1/2 slope)
    assert b.k0 == 1 / 4096
    assert b.variant == "modified"
    assert b.noise_coeff == 1.0


def test_desk_scale_fixed_mesh_presets():
    for name, scale, np_expected in (("fig5_3", 0.1, 50), ("fig5_6", 0.0625, 50)):
        spec = get_preset(name).scaled(scale)
        assert spec.mesh_sizes == (16,)
        assert spec.reference_n == 32
        assert spec.k0 == 1 / 2048
        assert spec.time_steps[0] == 1 / 32
        assert spec.time_steps[-1] == 1 / 1024
        assert len(spec.time_steps) == 6
        assert spec.n_realizations == np_expected


def test_desk_scale_balanced_presets():
    spec = get_preset("fig5_4").scaled(0.1)
    assert spec.mesh_sizes == (8, 16, 32)
    assert spec.time_steps == (1 / 8, 1 / 16, 1 / 32)
    assert spec.reference_n == 64
    assert spec.k0 == 1 / 512
    assert spec.n_realizations == 50

    spec = get_preset("fig5_7").scaled(0.0625)
    assert spec.mesh_sizes == (8, 16, 32)
    assert spec.time_steps == (1 / 8, 1 / 32, 1 / 128)
    assert spec.reference_n == 32
    assert spec.k0 == 1 / 4096
    assert spec.n_realizations == 50


def test_every_preset_builds_valid_grids_at_both_anchors():
    # StudySpec validates divisibility on construction; points() exercises
    # the sweep pairing as well
    for preset in PRESETS.values():
        for scale in (1.0, 0.1):
            spec = preset.scaled(scale)
            assert isinstance(spec, StudySpec)
            assert len(spec.points()) == len(spec.time_steps)


def test_scale_bounds_and_floor():
    with pytest.raises(ValueError):
        get_preset("fig5_1").scaled(0.0)
    with pytest.raises(ValueError):
        get_preset("fig5_1").scaled(1.5)
    assert get_preset("fig5_1").scaled(1e-6).n_realizations == 4


def test_overrides_apply_last():
    spec = get_preset("fig5_1").scaled(0.2, master_seed=99, n_realizations=7)
    assert spec.master_seed == 99
    assert spec.n_realizations == 7
