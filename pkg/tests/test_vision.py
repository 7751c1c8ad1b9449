from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arn.errors import CapacityError, ParameterError, StateError, StructuralError, VersionError
from arn.graph import Layer, create_node
from arn.persist import dumps_model
from arn.vision import (
    FeatureList,
    Network,
    NetworkConfig,
    Reorder,
    Status,
    TilingSpec,
    decode_features,
    displaced_tiles,
    encode_features,
    evaluate,
    mask_tile,
    perturb_image,
    reorder_features,
    replay_trace,
    self_recognition,
    tile_image,
    trace_explain,
    train,
)

SPEC = TilingSpec()


# -- tiling --------------------------------------------------------------------------


def test_tile_image_shape_and_content(rng):
    image = rng.random((28, 28))
    tiles = tile_image(image, SPEC)
    assert tiles.shape == (16, 49)
    for t in range(16):
        r, c = divmod(t, 4)
        assert np.array_equal(tiles[t], image[7 * r : 7 * r + 7, 7 * c : 7 * c + 7].ravel())


def test_tile_image_zero():
    assert not tile_image(np.zeros((28, 28)), SPEC).any()


def test_tile_order_reverse(rng):
    image = rng.random((28, 28))
    forward = tile_image(image, SPEC)
    backward = tile_image(image, TilingSpec(order=tuple(range(15, -1, -1))))
    assert np.array_equal(forward[::-1], backward)


def test_tile_image_dimension_mismatch():
    with pytest.raises(StructuralError):
        tile_image(np.zeros((28, 27)), SPEC)


@pytest.mark.parametrize(
    "kwargs", [dict(rows=5), dict(cols=3), dict(order=(0, 1, 2)), dict(order=tuple([0] * 16)), dict(rows=0)]
)
def test_tiling_spec_validation(kwargs):
    with pytest.raises(ParameterError):
        TilingSpec(**kwargs)


def test_displaced_tiles_first_offset_is_identity(rng):
    image = rng.random((28, 28))
    stack = displaced_tiles(image, SPEC, 1)
    assert stack.shape == (9, 16, 49)
    assert np.array_equal(stack[0], tile_image(image, SPEC))


# -- feature lists -----------------------------------------------------------------------


def test_feature_encoding():
    values = encode_features([0, 5, None, 4095], 4096)
    assert values.tolist() == [0.0, 5 / 4096, 1.0, 4095 / 4096]
    assert decode_features(values, 4096) == (0, 5, None, 4095)
    with pytest.raises(CapacityError):
        encode_features([4096], 4096)


@given(ids=st.lists(st.one_of(st.none(), st.integers(0, 16383)), min_size=16, max_size=16))
def test_feature_values_in_unit_interval(ids):
    v = FeatureList(tuple(ids), 16384).values
    assert np.all((v >= 0) & (v <= 1))
    assert np.array_equal(v == 1.0, np.array([i is None for i in ids]))


def test_mirror_h_on_2x2():
    fl = FeatureList(("a", "b", "c", "d"))
    assert reorder_features(fl, Reorder.MIRROR_H, 2, 2).ids == ("b", "a", "d", "c")
    assert reorder_features(fl, Reorder.MIRROR_V, 2, 2).ids == ("c", "d", "a", "b")
    assert reorder_features(fl, Reorder.REVERSE, 2, 2).ids == ("d", "c", "b", "a")
    assert reorder_features(fl, Reorder.IDENTITY, 2, 2) == fl


@given(
    rows=st.integers(1, 6),
    cols=st.integers(1, 6),
    op=st.sampled_from([Reorder.REVERSE, Reorder.MIRROR_H, Reorder.MIRROR_V]),
    data=st.data(),
)
def test_reorders_are_involutions(rows, cols, op, data):
    ids = tuple(data.draw(st.lists(st.one_of(st.none(), st.integers(0, 99)), min_size=rows * cols, max_size=rows * cols)))
    fl = FeatureList(ids)
    once = reorder_features(fl, op, rows, cols)
    assert sorted(map(str, once.ids)) == sorted(map(str, ids))
    assert reorder_features(once, op, rows, cols) == fl


def test_reorder_length_mismatch():
    with pytest.raises(StructuralError):
        reorder_features(FeatureList((1, 2, 3)), Reorder.REVERSE, 2, 2)


# -- perturbation -----------------------------------------------------------------------


def test_perturb_zero_angle_identity(digits):
    assert np.array_equal(perturb_image(digits.images[0], 0.0), digits.images[0])


def test_perturb_round_trip(digits):
    for image in digits.images[:100]:
        back = perturb_image(perturb_image(image, 10.0), -10.0)
        assert np.mean(np.abs(back - image) <= 0.25) >= 0.9


@given(angle=st.floats(-15, 15))
def test_center_pixel_is_fixed(angle):
    image = np.zeros((28, 28))
    image[14, 14] = 1.0
    assert np.array_equal(perturb_image(image, angle), image)


@given(angle=st.floats(-15, 15))
def test_perturb_only_moves_pixels(angle):
    image = np.random.default_rng(0).random((28, 28))
    out = perturb_image(image, angle)
    assert set(np.unique(out)) <= set(np.unique(image)) | {0.0}


def test_perturb_direction_is_counter_clockwise():
    image = np.zeros((29, 29))
    image[14, 24] = 1.0  # right of centre
    out = perturb_image(image, 15.0)
    r, c = np.argwhere(out == 1.0)[0]
    assert r < 14  # moved up


@pytest.mark.parametrize("angle", [15.5, -20.0, float("nan")])
def test_perturb_angle_out_of_range(angle):
    with pytest.raises(ParameterError):
        perturb_image(np.zeros((28, 28)), angle)


# -- masking --------------------------------------------------------------------------


def test_mask_tile_examples():
    idx, vals = mask_tile(np.linspace(0, 1, 49), 0.0)
    assert len(idx) == 49
    idx, _ = mask_tile(np.zeros(49), 0.1)
    assert len(idx) == 0
    idx, vals = mask_tile(np.array([0.0, 0.5, 0.05]), 0.1)
    assert idx.tolist() == [1] and vals.tolist() == [0.5]


@settings(max_examples=50)
@given(floor=st.floats(0.0, 0.99), seed=st.integers(0, 2**16))
def test_masking_never_adds_resonators(floor, seed):
    tile = np.random.default_rng(seed).random(49) * (np.random.default_rng(seed + 1).random(49) > 0.5)
    plain, masked = Layer(49), Layer(49, pixel_floor=floor)
    a = len(plain.node(create_node(plain, tile)).resonators)
    if not (tile >= floor).any():
        return
    b = len(masked.node(create_node(masked, tile)).resonators)
    assert b <= a


# -- network ----------------------------------------------------------------------------


def test_untrained_network_refuses_to_classify():
    with pytest.raises(StateError):
        Network().classify(np.zeros((28, 28)))


def test_empty_training_set():
    with pytest.raises(StateError):
        train(Network(), np.zeros((0, 28, 28)), [])


def test_bad_labels_rejected():
    with pytest.raises(ParameterError):
        train(Network(), np.zeros((1, 28, 28)), [10])


def test_single_image_growth(digits):
    net = Network()
    report = train(net, digits.images[:1], digits.labels[:1])
    assert 1 <= report.l1_nodes <= 16
    assert report.l2_nodes == 1


def test_l1_is_shared_across_tiles(digits):
    net = Network()
    tiles = tile_image(digits.images[0], SPEC)
    winners, _, created = net._train_tiles(tiles)
    # one layer, dense ids: every new node id is the next ordinal regardless of tile
    assert sorted(set(winners)) == list(range(len(net.l1)))
    assert created == len(net.l1)
    assert winners[0] == 0


def test_self_recognition(small_net, small_split):
    train_set, _ = small_split
    for image, label in zip(train_set.images, train_set.labels):
        outcome, _ = small_net.classify(image, int(label))
        assert outcome.status in (Status.CORRECT, Status.MULTIPLE)
        assert int(label) in outcome.weights


def test_self_recognition_any_order(small_split):
    train_set, _ = small_split
    order = np.random.default_rng(9).permutation(len(train_set))
    net = Network()
    train(net, train_set.images[order], train_set.labels[order])
    assert self_recognition(net, train_set.images, train_set.labels) == 1.0


def test_blank_image_unrecognized(small_net):
    outcome, path = small_net.classify(np.zeros((28, 28)))
    assert outcome.status is Status.UNRECOGNIZED and outcome.weights == {}
    assert "unrecognized" in trace_explain(path)


def test_outcome_weights(small_net, small_split):
    _, test_set = small_split
    for image, label in zip(test_set.images, test_set.labels):
        outcome, _ = small_net.classify(image, int(label))
        if outcome.status is not Status.UNRECOGNIZED:
            assert sum(outcome.weights.values()) == pytest.approx(1.0)
            assert len(set(outcome.weights.values())) == 1
        if outcome.status in (Status.CORRECT, Status.WRONG):
            assert list(outcome.weights.values()) == [1.0]


def test_multiple_splits_weight(digits):
    net = Network()
    train(net, digits.images[:1], [3])
    # a second L2 node with a different label that saturates on the same image
    l2 = net.l2
    l2.add_node(l2.centers[0] - 0.01, 5, sources=l2.sources[0])
    outcome, path = net.classify(digits.images[0], 3)
    assert outcome.status is Status.MULTIPLE
    assert outcome.weights == {3: 0.5, 5: 0.5}
    assert path.labels == (3, 5)
    ev, _ = evaluate(net, digits.images[:1], [3])
    assert ev.exact[3][3] == Fraction(1, 2) and ev.exact[3][5] == Fraction(1, 2)


def test_confusion_rows_sum_to_counts(small_net, small_split):
    _, test_set = small_split
    ev, outcomes = evaluate(small_net, test_set.images, test_set.labels)
    for c in range(10):
        assert sum(ev.exact[c]) == 3
    assert sum(ev.counts.values()) == len(test_set)
    assert ev.confusion.shape == (10, 11)


def test_parallel_evaluation_matches_serial(small_net, small_split):
    _, test_set = small_split
    serial, a = evaluate(small_net, test_set.images, test_set.labels)
    threaded, b = evaluate(small_net, test_set.images, test_set.labels, workers=3)
    assert a == b and np.array_equal(serial.confusion, threaded.confusion)


def test_training_determinism(small_split):
    train_set, _ = small_split

    def run():
        net = Network()
        report = train(net, train_set.images, train_set.labels, angles=(-5.0, 5.0))
        return report.l1_nodes, report.l2_nodes, dumps_model(net)

    assert run() == run()


# -- tracing ---------------------------------------------------------------------------


def test_trace_is_complete_and_replays(small_net, small_split):
    _, test_set = small_split
    outcome, path = small_net.classify(test_set.images[0])
    assert len(path.tiles) == 16
    text = trace_explain(path, small_net)
    lines = text.splitlines()
    assert len(lines) == 17 and lines[-1].startswith("decision")
    assert trace_explain(path, small_net) == text
    replay_trace(path, small_net)


def test_stale_trace_is_rejected(small_split):
    train_set, test_set = small_split
    net = Network()
    train(net, train_set.images[:20], train_set.labels[:20])
    _, path = net.classify(test_set.images[0])
    train(net, train_set.images[20:], train_set.labels[20:])
    with pytest.raises(VersionError):
        trace_explain(path, net)


def test_network_config_round_trip():
    cfg = NetworkConfig(tiling=TilingSpec(rows=2, cols=2, order=(3, 2, 1, 0)), pixel_floor=0.2)
    assert NetworkConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize(
    "kwargs",
    [dict(threshold=1.0), dict(threshold=0.0), dict(rho=0.0), dict(jitter=-1), dict(dilation_factor=1.5),
     dict(tuning="sometimes"), dict(blank_level=1.0)],
)
def test_network_config_validation(kwargs):
    with pytest.raises((ParameterError, ValueError)):
        NetworkConfig(**kwargs)


def test_decision_threshold_leaves_tile_layer_alone(small_split):
    train_set, _ = small_split
    nets = [Network(NetworkConfig(threshold=t)) for t in (0.5, 0.9)]
    for net in nets:
        train(net, train_set.images[:20], train_set.labels[:20])
    assert np.array_equal(nets[0].l1.centers, nets[1].l1.centers)
    assert nets[0].l2.threshold == 0.5 and nets[0].l1.threshold == 0.9
