import numpy as np
import pytest

from app.models.scenario_config import NetworkConfig
from app.services.network import (
    BLOCK_AA,
    BLOCK_AB,
    BLOCK_BC,
    BLOCK_CC,
    GROUP_COMMUNITY,
    GROUP_HCW,
    GROUP_HOSPITAL,
    EdgeSchedule,
    always_active_schedule,
    apply_contact_bounds,
    day_average_rate,
    discharge,
    edge_activation_rate,
    generate_static_network,
    load_network,
    mean_contact_rate,
    network_from_edges,
    occupant_of,
    resolve_contacts,
    restore_contact_bounds,
    sample_day_schedule,
    save_network_npz,
    save_network_text,
    transfer_to_hospital,
)
from app.utils.exceptions import (
    FormatVersionError,
    HospitalTransferError,
    NetworkGenerationError,
    UnknownNodeError,
)
from app.utils.rng import make_rng


def test_generated_network_layout(small_network):
    net = small_network
    assert net.n_persons == 300
    assert net.n_hcw == 15
    assert net.n_beds == 20
    assert np.all(net.group[: net.n_hcw] == GROUP_HCW)
    assert np.all(net.group[net.n_hcw:net.n_persons] == GROUP_COMMUNITY)
    assert np.all(net.group[net.n_persons:] == GROUP_HOSPITAL)
    assert np.all(net.edges[:, 0] < net.edges[:, 1])
    # no duplicate static edges
    assert np.unique(net.edges, axis=0).shape[0] == net.n_edges


def test_blocks_connect_the_right_groups(small_network):
    net = small_network
    u, v = net.edges[:, 0], net.edges[:, 1]
    cc = net.edge_block == BLOCK_CC
    assert np.all(net.group[u[cc]] == GROUP_COMMUNITY) and np.all(net.group[v[cc]] == GROUP_COMMUNITY)
    bc = net.edge_block == BLOCK_BC
    assert np.all(net.group[u[bc]] == GROUP_HCW) and np.all(net.group[v[bc]] == GROUP_COMMUNITY)
    aa = net.edge_block == BLOCK_AA
    assert np.all(net.group[u[aa]] == GROUP_HOSPITAL) and np.all(net.group[v[aa]] == GROUP_HOSPITAL)
    ab = net.edge_block == BLOCK_AB
    assert np.all(net.group[u[ab]] == GROUP_HCW) and np.all(net.group[v[ab]] == GROUP_HOSPITAL)


def test_community_mean_degree_close_to_target():
    net = generate_static_network(NetworkConfig(n_total=3000, seed=5))
    degrees = net.degrees(BLOCK_CC)[net.community_ids]
    # stub matching drops self-loops and repeated pairs
    assert degrees.mean() == pytest.approx(10.0, rel=0.1)
    assert degrees.max() <= 100


def test_healthcare_workers_have_working_ages(small_network):
    ages = small_network.age_band[: small_network.n_hcw]
    assert set(ages.tolist()) <= {1, 2}
    assert np.all(small_network.age_band[small_network.n_persons:] == -1)


def test_generation_is_deterministic():
    a = generate_static_network(NetworkConfig(n_total=250, seed=9))
    b = generate_static_network(NetworkConfig(n_total=250, seed=9))
    np.testing.assert_array_equal(a.edges, b.edges)
    np.testing.assert_array_equal(a.age_band, b.age_band)


@pytest.mark.parametrize(
    "params",
    [
        NetworkConfig(n_total=50),
        NetworkConfig(n_total=500, community_exponent=2.0),
        NetworkConfig(n_total=500, community_mean_degree=150.0),
        NetworkConfig(n_total=500, lambda_min=90.0),
    ],
)
def test_invalid_parameters_raise(params):
    with pytest.raises(NetworkGenerationError):
        generate_static_network(params)


def test_default_day_average_contact_rate():
    assert mean_contact_rate(4.0, 84.0) == pytest.approx(37.7, rel=0.01)


def test_lockdown_reduces_contact_rate_by_58_percent():
    reduction = 1.0 - mean_contact_rate(4.0, 33.0) / mean_contact_rate(4.0, 84.0)
    assert reduction == pytest.approx(0.58, abs=0.02)


def test_equal_bounds_give_constant_rate():
    assert day_average_rate(4.0, 4.0, 10.0) == pytest.approx(0.4)


def test_edge_activation_rate_uses_minimum_bounds(small_network):
    a, b = small_network.node(20), small_network.node(21)
    apply_contact_bounds(small_network, [21], 4.0, 4.0)
    b = small_network.node(21)
    # isolated endpoint caps the edge at its own bounds
    assert edge_activation_rate((a, b), 0.5, small_network.k_hat) == pytest.approx(0.4)
    with pytest.raises(ValueError):
        edge_activation_rate((a, b), 1.0, small_network.k_hat)


def test_contact_bounds_apply_and_restore(small_network):
    nodes = [30, 31, 32]
    apply_contact_bounds(small_network, nodes, 4.0, 33.0)
    assert np.all(small_network.lambda_max[nodes] == 33.0)
    restore_contact_bounds(small_network, nodes)
    assert np.all(small_network.lambda_max[nodes] == 84.0)
    with pytest.raises(ValueError):
        apply_contact_bounds(small_network, nodes, 40.0, 33.0)
    with pytest.raises(UnknownNodeError):
        apply_contact_bounds(small_network, [10**6], 4.0, 4.0)


def test_day_schedule_is_confined_to_its_day(small_network):
    schedule = sample_day_schedule(small_network, 3, make_rng(1, "s"))
    assert schedule.n_contacts > 0
    assert np.all(schedule.start >= 3.0) and np.all(schedule.end <= 4.0)
    assert np.all(schedule.end > schedule.start)
    # intervals of one edge never overlap
    for e in np.unique(schedule.edge)[:50]:
        spans = schedule.intervals_for_edge(int(e))
        for (s0, e0), (s1, _) in zip(spans, spans[1:]):
            assert s1 >= e0


def test_edge_process_stationary_activity():
    n_pairs, days = 1000, 100
    net = network_from_edges(2 * n_pairs, [(2 * k, 2 * k + 1) for k in range(n_pairs)])
    rng = make_rng(3, "stationarity")
    active = sum(sample_day_schedule(net, day, rng).active_time().sum() for day in range(days))
    a_bar = day_average_rate(4.0, 84.0, net.k_hat)
    mu = net.params.deactivation_rate
    assert active / (n_pairs * days) == pytest.approx(a_bar / (mu + a_bar), rel=0.03)


def test_always_active_schedule_covers_every_edge(path_network):
    schedule = always_active_schedule(path_network, 2)
    assert schedule.n_contacts == path_network.n_edges
    np.testing.assert_allclose(schedule.active_time(), 1.0)


def test_transfer_and_discharge(small_network):
    bed = transfer_to_hospital(small_network, 40, 1.5)
    assert bed >= small_network.n_persons
    assert occupant_of(small_network, bed) == 40
    assert occupant_of(small_network, 40) == -1
    with pytest.raises(HospitalTransferError):
        transfer_to_hospital(small_network, 40, 1.6)
    discharge(small_network, 40, 2.0)
    assert occupant_of(small_network, bed) == -1
    assert small_network.stay_log[-1].end == 2.0
    with pytest.raises(HospitalTransferError):
        discharge(small_network, 40, 2.1)
    with pytest.raises(HospitalTransferError):
        transfer_to_hospital(small_network, small_network.n_persons, 2.0)


def test_bed_pool_grows_when_full(small_network):
    initial = small_network.n_beds
    for node in range(20, 20 + initial + 1):
        transfer_to_hospital(small_network, node, 0.0)
    assert small_network.n_beds == 2 * initial
    assert np.count_nonzero(small_network.bed_occupant >= 0) == initial + 1


def _bed_degrees(net, block):
    return net.degrees(block)[net.bed_ids]


@pytest.fixture
def ward():
    return generate_static_network(NetworkConfig(n_total=2000, seed=3, n_beds=200))


def test_grown_bed_pool_keeps_block_mean_degrees(ward):
    params = ward.params
    assert _bed_degrees(ward, BLOCK_AA).mean() == pytest.approx(params.hospital_mean_degree, abs=0.75)
    for node in ward.community_ids[:900]:
        transfer_to_hospital(ward, int(node), 0.0)
    assert ward.n_beds == 1600
    assert _bed_degrees(ward, BLOCK_AA).mean() == pytest.approx(params.hospital_mean_degree, abs=0.6)
    new_beds = np.arange(200, ward.n_beds)
    hcw_links = _bed_degrees(ward, BLOCK_AB)[new_beds]
    assert hcw_links.mean() == pytest.approx(params.hospital_hcw_mean_degree, abs=0.5)


def test_admitted_patients_see_about_ten_hospital_neighbors(ward):
    beds = [transfer_to_hospital(ward, int(node), 0.0) for node in ward.community_ids[:900]]
    slots = np.asarray(beds) - ward.n_persons
    degree = _bed_degrees(ward, BLOCK_AA) + _bed_degrees(ward, BLOCK_AB)
    expected = ward.params.hospital_mean_degree + ward.params.hospital_hcw_mean_degree
    assert degree[slots].mean() == pytest.approx(expected, abs=1.0)


def test_resolve_contacts_maps_beds_and_removes_admitted(small_network):
    net = small_network
    bed = transfer_to_hospital(net, 100, 0.25)
    schedule = always_active_schedule(net, 0)
    contacts = resolve_contacts(schedule, net)
    # the admitted person keeps community contacts only before admission
    own = (contacts.i == 100) | (contacts.j == 100)
    community = own & ~contacts.hospital
    assert np.all(contacts.end[community] <= 0.25 + 1e-12)
    # bed contacts now reach the occupant after admission
    via_bed = own & contacts.hospital
    bed_neighbors = net.neighbors(bed)
    if bed_neighbors[bed_neighbors < net.n_persons].size:
        assert via_bed.any()
        assert np.all(contacts.start[via_bed] >= 0.25 - 1e-12)
    assert np.all(contacts.i < net.n_persons) and np.all(contacts.j < net.n_persons)


def test_text_and_binary_round_trip(small_network, tmp_path):
    save_network_text(small_network, tmp_path / "net.txt")
    save_network_npz(small_network, tmp_path / "net.npz")
    for name in ("net.txt", "net.npz"):
        loaded = load_network(tmp_path / name)
        np.testing.assert_array_equal(loaded.edges, small_network.edges)
        np.testing.assert_array_equal(loaded.group, small_network.group)
        assert loaded.k_hat == small_network.k_hat


def test_text_format_rejects_other_versions(small_network, tmp_path):
    path = tmp_path / "net.txt"
    save_network_text(small_network, path)
    lines = path.read_text().splitlines()
    lines[1] = "version 99"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(FormatVersionError):
        load_network(path)


def test_unknown_node_lookup(small_network):
    with pytest.raises(UnknownNodeError):
        small_network.node(small_network.n_nodes)


def test_empty_schedule_type():
    empty = EdgeSchedule(day=0, edge=np.empty(0, dtype=np.int64), start=np.empty(0), end=np.empty(0), n_edges=3,
                         deactivation_rate=720.0)
    assert empty.n_contacts == 0
    np.testing.assert_array_equal(empty.active_time(), np.zeros(3))
