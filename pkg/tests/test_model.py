import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_difference, grad_close
from reference import reference_forward_backward
from stsl.errors import ProtocolError, ValidationError
from stsl.model import (
    ModelSpec,
    SplitConfig,
    build_model,
    client_backward,
    client_forward,
    full_part,
    init_bound,
    partition_model,
    server_forward_backward,
)
from stsl.tensor import conv2d_forward, maxpool2x2_forward, relu_forward

SMALL = ModelSpec(filters=(4, 6, 8, 8, 12), dense_units=(16, 10), input_dims=(3, 32, 32))
# Paper-model parameter count from the shape formulas (conv: O*C*9 + O, dense: O*I + O), frozen.
PAPER_PARAM_COUNT = 529_322


def batch(spec, n=4, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.random((n, *spec.input_dims), dtype=np.float32)
    y = rng.integers(0, 10, n)
    return x, y


def test_paper_shapes():
    shapes = ModelSpec.paper().param_shapes()
    assert [shapes[f"block{i}.weight"] for i in range(1, 6)] == [
        (16, 3, 3, 3),
        (32, 16, 3, 3),
        (64, 32, 3, 3),
        (128, 64, 3, 3),
        (256, 128, 3, 3),
    ]
    assert shapes["dense1.weight"] == (512, 256)
    assert shapes["dense2.weight"] == (10, 512)


def test_paper_param_count_frozen():
    assert ModelSpec.paper().param_count() == PAPER_PARAM_COUNT
    params = build_model(ModelSpec.paper(), seed=0)
    assert sum(t.size for t in params.tensors.values()) == PAPER_PARAM_COUNT


def test_build_is_deterministic():
    a = build_model(ModelSpec.paper(), seed=7)
    b = build_model(ModelSpec.paper(), seed=7)
    assert all(a.tensors[k].tobytes() == b.tensors[k].tobytes() for k in a.tensors)
    c = build_model(ModelSpec.paper(), seed=8)
    assert a.tensors["block1.weight"].tobytes() != c.tensors["block1.weight"].tobytes()


def test_init_bound_and_biases():
    assert init_bound(27) == pytest.approx(0.4714, abs=1e-4)
    params = build_model(ModelSpec.paper(), seed=0)
    w = params.tensors["block1.weight"]
    assert np.abs(w).max() <= init_bound(27)
    assert not any(params.tensors[n].any() for n in params.tensors if n.endswith(".bias"))


def test_spec_validation():
    with pytest.raises(ValidationError):
        ModelSpec(filters=(4, 4), input_dims=(3, 6, 6))
    with pytest.raises(ValidationError):
        ModelSpec(dense_units=(8, 5))
    with pytest.raises(ValidationError):
        SplitConfig(6).validate(ModelSpec.paper())
    assert ModelSpec.paper().is_paper and not SMALL.is_paper


def test_partition_k0():
    part = partition_model(build_model(SMALL, 0), SplitConfig(0))
    assert part.client_part.is_empty
    assert set(part.server_part.tensors) == set(SMALL.param_shapes())


@pytest.mark.parametrize("k,shape", [(1, (16, 16, 16)), (4, (128, 2, 2))])
def test_paper_cut_shapes(k, shape):
    assert ModelSpec.paper().cut_shape(k) == shape


@settings(max_examples=20, deadline=None)
@given(k=st.integers(0, 5), n=st.integers(1, 3))
def test_cut_shape_lemma(k, n):
    spec = SMALL
    part = partition_model(build_model(spec, 0), k)
    x = np.zeros((n, *spec.input_dims), np.float32)
    smashed, _ = client_forward(part.client_part, x)
    expected = spec.input_dims if k == 0 else (spec.filters[k - 1], 32 >> k, 32 >> k)
    assert smashed.shape == (n, *expected)
    # concatenation of the two parts is the full chain
    names = list(part.client_part.tensors) + list(part.server_part.tensors)
    assert names == list(spec.param_shapes())


def test_client_forward_k0_passthrough():
    part = partition_model(build_model(SMALL, 0), 0)
    x, _ = batch(SMALL)
    smashed, _ = client_forward(part.client_part, x)
    np.testing.assert_array_equal(smashed, x)


def test_client_forward_zero_input():
    params = build_model(SMALL, 0)
    smashed, _ = client_forward(partition_model(params, 1).client_part, np.zeros((2, 3, 32, 32), np.float32))
    assert not smashed.any()


def test_client_forward_composition_k2():
    params = build_model(SMALL, 3)
    x, _ = batch(SMALL)
    smashed, _ = client_forward(partition_model(params, 2).client_part, x)
    h = x
    for b in (1, 2):
        h = maxpool2x2_forward(relu_forward(conv2d_forward(h, params.conv(b))))[0]
    assert smashed.tobytes() == h.tobytes()


def test_initial_loss_near_ln10():
    params = build_model(ModelSpec.paper(), seed=0)
    x, y = batch(ModelSpec.paper(), n=8)
    loss, grad_cut, _ = server_forward_backward(partition_model(params, 0).server_part, x, y)
    assert abs(loss - math.log(10)) < 0.3
    assert grad_cut.shape == x.shape


def test_grad_at_cut_shape():
    params = build_model(SMALL, 0)
    part = partition_model(params, 3)
    x, y = batch(SMALL)
    smashed, _ = client_forward(part.client_part, x)
    _, g, _ = server_forward_backward(part.server_part, smashed, y)
    assert g.shape == smashed.shape


def test_cut_shape_mismatch_is_protocol_error():
    params = build_model(SMALL, 0)
    server = partition_model(params, 2).server_part
    with pytest.raises(ProtocolError):
        server_forward_backward(server, np.zeros((2, 4, 16, 16), np.float32), [0, 1])


@pytest.mark.parametrize("k", range(6))
def test_split_equals_unsplit_bit_exact(k):
    params = build_model(SMALL, 11)
    x, y = batch(SMALL, seed=k)
    part = partition_model(params, k)
    smashed, cache = client_forward(part.client_part, x)
    loss, g_cut, server_grads = server_forward_backward(part.server_part, smashed, y)
    client_grads = client_backward(part.client_part, cache, g_cut)
    ref_loss, ref_grads, _ = reference_forward_backward(params.tensors, SMALL.n_blocks, x, y)
    assert loss == ref_loss
    merged = {**client_grads, **server_grads}
    assert merged.keys() == ref_grads.keys()
    for name in ref_grads:
        assert merged[name].tobytes() == ref_grads[name].tobytes(), name


def test_zero_grad_at_cut_gives_zero_client_grads():
    params = build_model(SMALL, 0)
    part = partition_model(params, 2)
    x, _ = batch(SMALL)
    smashed, cache = client_forward(part.client_part, x)
    grads = client_backward(part.client_part, cache, np.zeros_like(smashed))
    assert grads.keys() == {"block1.weight", "block1.bias", "block2.weight", "block2.bias"}
    assert not any(g.any() for g in grads.values())


def test_stale_or_foreign_cache_rejected():
    params = build_model(SMALL, 0)
    a = partition_model(params, 2).client_part
    b = partition_model(params, 2).client_part
    x, _ = batch(SMALL)
    smashed, cache = client_forward(a, x)
    with pytest.raises(ProtocolError):
        client_backward(b, cache, np.zeros_like(smashed))
    client_backward(a, cache, np.zeros_like(smashed))
    with pytest.raises(ProtocolError):
        client_backward(a, cache, np.zeros_like(smashed))
    _, cache = client_forward(a, x)
    with pytest.raises(ProtocolError):
        client_backward(a, cache, np.zeros((1, 6, 8, 8), np.float32))


def test_client_grads_match_finite_differences_k1():
    spec = ModelSpec(filters=(2, 3, 3, 3, 4), dense_units=(8, 10), input_dims=(3, 32, 32))
    params = build_model(spec, 5)
    x, y = batch(spec, n=2, seed=9)
    part = partition_model(params, 1)
    smashed, cache = client_forward(part.client_part, x)
    _, g_cut, _ = server_forward_backward(part.server_part, smashed, y)
    grads = client_backward(part.client_part, cache, g_cut)

    def end_to_end(name):
        def f(value):
            saved = params.tensors[name].copy()
            params.tensors[name][...] = value
            try:
                return reference_forward_backward(params.tensors, spec.n_blocks, x, y)[0]
            finally:
                params.tensors[name][...] = saved
        return f

    for name in ("block1.weight", "block1.bias"):
        numeric = central_difference(end_to_end(name), params.tensors[name])
        ok, err = grad_close(grads[name], numeric)
        assert ok, (name, err)


def test_full_part_matches_reference():
    params = build_model(SMALL, 2)
    x, y = batch(SMALL)
    logits, _ = full_part(params).forward(x)
    assert logits.tobytes() == reference_forward_backward(params.tensors, 5, x, y)[2].tobytes()
