import numpy as np
import pytest

from groups import (GroupStructure, WeightVector, combined_weights, compute_weights, format_groups, group_norm,
                    parse_groups, read_groups, singleton_groups, smoothed_group_norm, temporal_groups,
                    wavelet_tree_groups, write_groups)
from transforms import WaveletLayout


def as_lists(gs):
    return [g.tolist() for g in gs.groups]


def test_singleton_groups():
    gs = singleton_groups(3)
    assert as_lists(gs) == [[0], [1], [2]]
    assert not gs.overlapping
    assert group_norm(gs, [3.0, -4.0, 0.0]) == pytest.approx(7.0)


def test_singleton_weights_reduce_to_l1():
    w = compute_weights(singleton_groups(3), [4.0, 0.0, 0.0])
    assert w.diag[0] == pytest.approx(0.5)
    assert w.diag[1] == w.diag[2] == pytest.approx(1e5)
    single = compute_weights(singleton_groups(1), [4.0])
    assert (single.diag[0] * 4.0) ** 2 == pytest.approx(4.0)


def test_temporal_groups():
    gs = temporal_groups(2, 3)
    assert as_lists(gs) == [[0, 2, 4], [1, 3, 5]]
    assert not gs.overlapping
    z = np.zeros(6)
    z[3] = 1.0
    assert group_norm(gs, z) == pytest.approx(1.0)


@pytest.mark.parametrize("n_space, n_time", [(0, 3), (2, 0)])
def test_temporal_groups_reject_empty_dimensions(n_space, n_time):
    with pytest.raises(ValueError):
        temporal_groups(n_space, n_time)


def test_g1_counts_on_small_layout():
    layout = WaveletLayout(4, 4, 2)
    gs = wavelet_tree_groups(layout, "G1")
    assert gs.size == 13
    assert gs.overlapping
    assert sum(len(g) == 2 for g in gs.groups) == 12
    for orientation in ("LH", "HL", "HH"):
        parent = int(layout.block_indices(2, orientation)[0, 0])
        assert gs.counts[parent] == 4
    assert gs.counts.min() == 1


def test_g2_counts_on_small_layout():
    gs = wavelet_tree_groups(WaveletLayout(4, 4, 2), "G2")
    assert sorted(len(g) for g in gs.groups) == [1, 5, 5, 5]
    assert not gs.overlapping


def test_g2_overlaps_with_three_levels():
    gs = wavelet_tree_groups(WaveletLayout(8, 8, 3), "G2")
    assert gs.overlapping
    assert gs.counts.max() == 2


def test_wavelet_groups_reject_bad_input():
    with pytest.raises(ValueError):
        wavelet_tree_groups(WaveletLayout(4, 4, 2), "G3")
    with pytest.raises(ValueError):
        wavelet_tree_groups(WaveletLayout(4, 4, 1), "G1")


def test_group_norm_examples():
    assert group_norm(GroupStructure(3, ([0], [1, 2])), [3.0, 4.0, 0.0]) == pytest.approx(7.0)
    assert group_norm(GroupStructure(2, ([0, 1],)), [3.0, 4.0]) == pytest.approx(5.0)
    assert group_norm(GroupStructure(2, ([0, 1],)), [0.0, 0.0]) == 0.0


def test_smoothed_norm_tends_to_group_norm():
    gs = GroupStructure(3, ([0, 1], [1, 2]))
    z = [3.0, 4.0, 0.0]
    assert smoothed_group_norm(gs, z, 1e-12) == pytest.approx(9.0, rel=1e-12)
    assert smoothed_group_norm(gs, z, 1.0) > group_norm(gs, z)


def test_overlapping_weights_by_hand():
    gs = GroupStructure(3, ([0, 1], [1, 2]))
    z = np.array([3.0, 4.0, 0.0])
    w = compute_weights(gs, z, tau=1e-14)
    np.testing.assert_allclose(w.diag, [np.sqrt(1 / 5), np.sqrt(1 / 5 + 1 / 4), 0.5], rtol=1e-12)
    assert np.sum((w.diag * z) ** 2) == pytest.approx(9.0, rel=1e-12)
    assert np.sum((w.diag * z) ** 2) == pytest.approx(group_norm(gs, z), rel=1e-12)


def test_weights_at_zero_count_memberships():
    gs = wavelet_tree_groups(WaveletLayout(4, 4, 2), "G1")
    w = compute_weights(gs, np.zeros(16), tau=1.0)
    np.testing.assert_allclose(w.diag, np.sqrt(gs.counts))
    assert w.tau == 1.0


@pytest.mark.parametrize("tau", [0.0, -1.0])
def test_weights_need_positive_tau(tau):
    with pytest.raises(ValueError):
        compute_weights(singleton_groups(2), [1.0, 1.0], tau=tau)


def test_weights_reject_wrong_length():
    with pytest.raises(ValueError):
        compute_weights(singleton_groups(2), [1.0, 1.0, 1.0])


@pytest.mark.parametrize("gs", [
    singleton_groups(64),
    temporal_groups(16, 4),
    wavelet_tree_groups(WaveletLayout(8, 8, 3), "G1"),
    wavelet_tree_groups(WaveletLayout(8, 8, 3), "G2"),
], ids=["singleton", "temporal", "tree-g1", "tree-g2"])
def test_reweighting_identity(gs):
    rng = np.random.default_rng(11)
    for _ in range(200):
        z = rng.standard_normal(gs.n) * 10.0 ** rng.uniform(-3, 3)
        tau = 1e-14 * gs.group_norms(z).min()
        w = compute_weights(gs, z, tau=tau)
        assert np.all(np.isfinite(w.diag)) and np.all(w.diag > 0)
        assert np.sum((w.diag * z) ** 2) == pytest.approx(group_norm(gs, z), rel=1e-10)


def test_weights_give_a_tangent_majorant():
    rng = np.random.default_rng(12)
    gs = wavelet_tree_groups(WaveletLayout(8, 8, 2), "G1")
    for tau in (1e-3, 1.0):
        for _ in range(50):
            z_bar, z = rng.standard_normal(64), rng.standard_normal(64)
            z[rng.random(64) < 0.3] = 0.0
            w = compute_weights(gs, z_bar, tau=tau)
            majorant = (smoothed_group_norm(gs, z_bar, tau)
                        + 0.5 * np.sum((w.diag * z) ** 2) - 0.5 * np.sum((w.diag * z_bar) ** 2))
            assert majorant >= smoothed_group_norm(gs, z, tau) - 1e-12


def test_weights_decrease_when_a_group_grows():
    gs = temporal_groups(4, 3)
    rng = np.random.default_rng(13)
    z = rng.standard_normal(12)
    before = compute_weights(gs, z, tau=1e-6).diag
    bigger = z.copy()
    members = gs.groups[2]
    bigger[members] *= 3.0
    after = compute_weights(gs, bigger, tau=1e-6).diag
    assert np.all(after[members] < before[members])
    others = np.setdiff1d(np.arange(12), members)
    np.testing.assert_array_equal(after[others], before[others])


def test_combined_weights():
    ones = WeightVector(np.ones(3), 1e-10)
    np.testing.assert_allclose(combined_weights(ones, ones, 1.0).diag, np.sqrt(2.0))
    w1, w2 = WeightVector(np.array([3.0]), 1e-10), WeightVector(np.array([4.0]), 1e-10)
    assert combined_weights(w1, w2, 1.0).diag[0] == pytest.approx(5.0)
    assert combined_weights(w1, w2, 1e-8).diag[0] == pytest.approx(3.0, rel=1e-12)


def test_combined_weights_reject_bad_input():
    with pytest.raises(ValueError):
        combined_weights(WeightVector.identity(2), WeightVector.identity(3), 1.0)
    with pytest.raises(ValueError):
        combined_weights(WeightVector.identity(2), WeightVector.identity(2), 0.0)


def test_identity_weights():
    w = WeightVector.identity(4)
    np.testing.assert_array_equal(w.diag, 1.0)
    np.testing.assert_array_equal(w.inverse, 1.0)


def test_membership_inverts_groups():
    gs = wavelet_tree_groups(WaveletLayout(8, 8, 3), "G1")
    membership = gs.membership
    for j, owners in enumerate(membership):
        assert owners
        for i in owners:
            assert j in gs.groups[i]
    assert sum(len(owners) for owners in membership) == sum(len(g) for g in gs.groups)


@pytest.mark.parametrize("n, groups", [
    (3, ()),
    (3, ([0, 1], [])),
    (3, ([0, 1], [2, 3])),
    (3, ([0, 0], [1, 2])),
    (3, ([0, 1],)),
    (0, ([0],)),
], ids=["no-groups", "empty-group", "out-of-range", "repeat", "uncovered", "empty-space"])
def test_invalid_group_structures(n, groups):
    with pytest.raises(ValueError):
        GroupStructure(n, groups)


def test_text_format():
    gs = GroupStructure(3, ([0, 1], [1, 2]))
    assert format_groups(gs) == "# n = 3\n0: 0 1\n1: 1 2\n"
    parsed = parse_groups(format_groups(gs))
    assert parsed.n == 3
    assert as_lists(parsed) == [[0, 1], [1, 2]]


def test_parse_groups_infers_size_and_skips_blank_lines():
    parsed = parse_groups("\n0: 2 0\n\n1: 1\n")
    assert parsed.n == 3
    assert as_lists(parsed) == [[2, 0], [1]]


@pytest.mark.parametrize("text", ["", "# n = 2\n", "0: 0\n2: 1\n", "0 1\n", "# n = 2\n0: 0\n"])
def test_parse_groups_rejects_malformed_text(text):
    with pytest.raises(ValueError):
        parse_groups(text)


def test_groups_file_round_trip(tmp_path):
    gs = wavelet_tree_groups(WaveletLayout(8, 8, 2), "G2")
    path = write_groups(gs, "groups.txt", str(tmp_path))
    loaded = read_groups(path)
    assert loaded.n == gs.n
    assert as_lists(loaded) == as_lists(gs)
