import numpy as np
import pytest

from fedzo.errors import ShapeError
from fedzo.layers import (conv2d, dense, descriptor_hash, flatten,
                          infer_shapes, lenet5, maxpool2d, model_by_name,
                          relu, synth_conv, synth_dense)
from fedzo.params import Mask, build_segments, init_params, prunable_index
from fedzo.rng import SeededRng


def test_lenet_parameter_count():
    # counted by hand: conv 3*6*25+6, conv 6*16*25+16, dense 400*120+120,
    # 120*84+84, 84*10+10
    model = lenet5()
    _, n = build_segments(list(model.spec))
    assert n == (3 * 6 * 25 + 6) + (6 * 16 * 25 + 16) + (400 * 120 + 120) \
        + (120 * 84 + 84) + (84 * 10 + 10) == 62006


def test_synth_conv_parameter_count():
    model = synth_conv()
    _, n = build_segments(list(model.spec))
    assert n == (2 * 16 * 9 + 16) + (64 * 256 + 256) + (256 * 10 + 10)


def test_segments_contiguous():
    model = synth_dense(dims=5, classes=3, hidden=4)
    segs, n = build_segments(list(model.spec))
    offset = 0
    for seg in segs:
        assert seg.offset == offset
        assert seg.size == int(np.prod(seg.shape))
        offset += seg.size
    assert offset == n


def test_infer_shapes_errors():
    with pytest.raises(ShapeError):
        infer_shapes([dense(4, 2)], (5,))
    with pytest.raises(ShapeError):
        infer_shapes([maxpool2d(2)], (3, 5, 5))  # not divisible
    with pytest.raises(ShapeError):
        infer_shapes([conv2d(3, 4, 7)], (3, 5, 5))  # kernel exceeds input


def test_descriptor_hash_distinguishes_architectures():
    def h(model):
        return descriptor_hash(list(model.spec), model.input_shape)

    a, b, c = h(lenet5()), h(synth_conv()), h(synth_dense())
    assert len(a) == 32
    assert len({a, b, c}) == 3
    assert h(lenet5()) == a


def test_model_by_name():
    assert model_by_name("lenet5").name == "lenet5"
    assert model_by_name("synth-dense", classes=3, dims=7).input_shape == (7,)
    with pytest.raises(ShapeError):
        model_by_name("resnet152")


def test_init_is_he_scaled():
    model = synth_dense(dims=100, classes=10, hidden=200)
    params = init_params(model, SeededRng(0))
    for seg in params.segments:
        block = params.flat[seg.offset:seg.offset + seg.size]
        if seg.prunable:
            fan_in = int(np.prod(seg.shape[1:]))
            assert block.std() == pytest.approx(np.sqrt(2 / fan_in), rel=0.1)
        else:
            assert np.all(block == 0)


def test_init_deterministic():
    model = synth_dense()
    a = init_params(model, SeededRng(3))
    b = init_params(model, SeededRng(3))
    assert np.array_equal(a.flat, b.flat)
    assert not np.array_equal(a.flat, init_params(model, SeededRng(4)).flat)


def test_params_immutable():
    model = synth_dense(dims=4, classes=2, hidden=3)
    params = init_params(model, SeededRng(5))
    with pytest.raises((ValueError, RuntimeError)):
        params.flat[0] = 99.0


def test_mask_density_and_layer_table():
    model = synth_dense(dims=4, classes=2, hidden=3)
    params = init_params(model, SeededRng(6))
    mask = Mask.ones(params.segments)
    assert mask.density == 1.0
    bits = np.array(mask.bits)
    seg = next(s for s in params.segments if s.prunable)
    bits[seg.offset:seg.offset + 6] = 0
    m = mask.with_bits(bits)
    assert m.density == (params.n - 6) / params.n
    table = m.layer_weight_density()
    assert table[seg.layer] == (seg.size - 6) / seg.size


def test_mask_rejects_zero_on_unprunable():
    model = synth_dense(dims=4, classes=2, hidden=3)
    params = init_params(model, SeededRng(7))
    mask = Mask.ones(params.segments)
    bits = np.array(mask.bits)
    bias = next(s for s in params.segments if not s.prunable)
    bits[bias.offset] = 0
    with pytest.raises(ShapeError):
        mask.with_bits(bits)


def test_prunable_index():
    model = synth_dense(dims=4, classes=2, hidden=3)
    params = init_params(model, SeededRng(8))
    idx = prunable_index(params.segments, params.n)
    expected = np.zeros(params.n, dtype=bool)
    for seg in params.segments:
        if seg.prunable:
            expected[seg.offset:seg.offset + seg.size] = True
    assert np.array_equal(idx, expected)
