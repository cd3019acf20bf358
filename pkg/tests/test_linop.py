import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mlcsc.conv import ShapeError
from mlcsc.linop import (
    Blend,
    BlockwiseDense,
    Composition,
    DiagonalMask,
    Identity,
    LinearCombination,
    Stacked,
    assemble,
    compose,
    make_alpha_blend,
    make_block_transform,
    make_inpainting_mask,
    project_consistent,
)

from conftest import inner_gap


def random_ops(seed):
    shape = (2, 8, 8)
    mask = make_inpainting_mask(shape, 0.4, seed=seed)
    block = make_block_transform(shape, 4, seed=seed + 1)
    return [
        Identity(shape),
        mask,
        block,
        make_alpha_blend(mask, block, 0.7),
        compose(block, mask),
        LinearCombination([2.0, -1.0], [mask, block]),
        block.T,
        Stacked([mask, block, Identity(shape)]),
    ]


def test_mask_example():
    op = DiagonalMask(np.array([1.0, 0.0]))
    assert np.array_equal(op.apply(np.array([4.0, 7.0])), [4.0, 0.0])
    assert np.array_equal(op.adjoint(np.array([4.0, 7.0])), op.apply(np.array([4.0, 7.0])))


def test_identity_blocks_leave_input_unchanged(rng):
    eye = np.broadcast_to(np.eye(16), (3, 2, 2, 16, 16))
    op = BlockwiseDense(eye, 4)
    x = rng.standard_normal((3, 8, 8))
    assert np.array_equal(op.apply(x), x)


def test_blockwise_matches_assembled_matrix(rng):
    op = make_block_transform((1, 4, 8), 2, seed=3)
    x = rng.standard_normal((1, 4, 8))
    dense = np.zeros((32, 32))
    for i in range(2):
        for j in range(4):
            idx = [(2 * i + a) * 8 + 2 * j + b for a in range(2) for b in range(2)]
            dense[np.ix_(idx, idx)] = op.matrices[0, i, j]
    assert np.allclose(op.apply(x).ravel(), dense @ x.ravel(), atol=1e-13)
    assert np.allclose(assemble(op), dense, atol=1e-15)


@pytest.mark.parametrize("k", range(8))
def test_adjoint_identity_all_families(k):
    op = random_ops(7)[k]
    r = np.random.default_rng(k)
    for _ in range(100):
        x = r.standard_normal(op.in_shape)
        y = r.standard_normal(op.out_shape)
        lhs = float(np.vdot(op.apply(x), y))
        rhs = float(np.vdot(x, op.adjoint(y)))
        assert abs(lhs - rhs) <= 1e-10 * np.linalg.norm(x) * np.linalg.norm(y)
        assert inner_gap(op.apply, op.adjoint, x, y) < 1e-10 or abs(lhs) < 1e-8


def test_composition_adjoint_is_reversed_product(rng):
    a = make_block_transform((1, 4, 4), 2, seed=1)
    b = make_block_transform((1, 4, 4), 4, seed=2)
    c = make_inpainting_mask((1, 4, 4), 0.3, seed=3)
    op = compose(a, compose(b, c))
    dense = assemble(a) @ assemble(b) @ assemble(c)
    assert np.allclose(assemble(op), dense, atol=1e-13)
    y = rng.standard_normal((1, 4, 4))
    assert np.allclose(op.adjoint(y), c.adjoint(b.adjoint(a.adjoint(y))), atol=1e-14)


def test_compose_with_identity(rng):
    m = make_block_transform((1, 4, 4), 2, seed=5)
    x = rng.standard_normal((1, 4, 4))
    assert np.array_equal(compose(Identity(m.out_shape), m).apply(x), m.apply(x))
    assert np.array_equal(compose(m, Identity(m.in_shape)).apply(x), m.apply(x))


def test_compose_shape_mismatch():
    with pytest.raises(ShapeError):
        Composition(Identity((3,)), Identity((4,)))


def test_apply_shape_mismatch():
    with pytest.raises(ShapeError):
        Identity((3,)).apply(np.zeros(4))
    with pytest.raises(ShapeError):
        Identity((3,)).adjoint(np.zeros(4))


def test_inpainting_mask_properties(rng):
    assert np.array_equal(make_inpainting_mask((5, 5), 0.0, seed=0).mask, np.ones((5, 5)))
    m = make_inpainting_mask((10000,), 0.5, seed=42)
    assert set(np.unique(m.mask)) <= {0.0, 1.0}
    assert abs(np.mean(m.mask == 0) - 0.5) < 0.02
    x = rng.standard_normal(10000)
    assert np.array_equal(m.apply(m.apply(x)), m.apply(x))
    assert np.array_equal(make_inpainting_mask((50,), 0.3, seed=9).mask,
                          make_inpainting_mask((50,), 0.3, seed=9).mask)


@pytest.mark.parametrize("p", [-0.1, 1.0, 1.5])
def test_inpainting_mask_rejects_bad_probability(p):
    with pytest.raises(ValueError):
        make_inpainting_mask((4,), p)


def test_block_transform_seeds_and_shapes(rng):
    x = rng.standard_normal((3, 8, 8))
    a = make_block_transform((3, 8, 8), seed=1).apply(x)
    b = make_block_transform((3, 8, 8), seed=2).apply(x)
    assert not np.allclose(a, b)
    assert np.array_equal(a, make_block_transform((3, 8, 8), seed=1).apply(x))
    with pytest.raises(ShapeError):
        make_block_transform((3, 6, 8), 4)


def test_block_transform_is_well_conditioned():
    op = make_block_transform((1, 4, 4), 4, seed=0)
    s = np.linalg.svd(op.matrices[0, 0, 0], compute_uv=False)
    assert s.max() <= 1.1 + 1e-12
    assert s.min() > 0


def test_blend_endpoints_and_dense(rng):
    mask = make_inpainting_mask((1, 4, 4), 0.5, seed=1)
    block = make_block_transform((1, 4, 4), 2, seed=2)
    x = rng.standard_normal((1, 4, 4))
    assert np.array_equal(make_alpha_blend(mask, block, 0.0).apply(x), mask.apply(x))
    assert np.array_equal(make_alpha_blend(mask, block, 1.0).apply(x), block.apply(x))
    half = assemble(make_alpha_blend(mask, block, 0.5))
    assert np.allclose(half, 0.5 * assemble(mask) + 0.5 * assemble(block), atol=1e-15)
    with pytest.raises(ValueError):
        Blend(mask, block, 1.2)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_blend_is_affine_in_alpha(a1, a2, t):
    mask = make_inpainting_mask((1, 4, 4), 0.5, seed=1)
    block = make_block_transform((1, 4, 4), 2, seed=2)
    x = np.random.default_rng(0).standard_normal((1, 4, 4))
    mid = (1 - t) * a1 + t * a2
    lhs = make_alpha_blend(mask, block, mid).apply(x)
    rhs = (1 - t) * make_alpha_blend(mask, block, a1).apply(x) + \
        t * make_alpha_blend(mask, block, a2).apply(x)
    assert np.allclose(lhs, rhs, atol=1e-12, rtol=0)


# -- pseudo-inverse and consistency projection -------------------------------

def pinv_ops(seed):
    shape = (2, 4, 4)
    rng = np.random.default_rng(seed)
    weights = rng.uniform(0.5, 2.0, shape) * make_inpainting_mask(shape, 0.4, seed=seed).mask
    return [
        Identity(shape),
        make_inpainting_mask(shape, 0.4, seed=seed),
        DiagonalMask(weights),
        Stacked([make_inpainting_mask(shape, 0.5, seed=seed + k) for k in range(3)]),
    ]


@pytest.mark.parametrize("seed", range(3))
def test_pseudo_inverse_matches_dense(seed):
    rng = np.random.default_rng(seed)
    for op in pinv_ops(seed):
        dense = np.linalg.pinv(assemble(op))
        v = rng.standard_normal(op.out_shape)
        np.testing.assert_allclose(op.pseudo_inverse(v).ravel(), dense @ v.ravel(),
                                   atol=1e-12, err_msg=op.kind)


def test_pseudo_inverse_errors():
    block = make_block_transform((1, 4, 4), 4, seed=0)
    with pytest.raises(NotImplementedError, match="blockwise-dense"):
        block.pseudo_inverse(np.zeros(block.out_shape))
    with pytest.raises(ShapeError):
        Identity((3,)).pseudo_inverse(np.zeros(4))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_projection_is_consistent_idempotent_and_contractive(seed):
    rng = np.random.default_rng(seed)
    for op in pinv_ops(seed % 50):
        truth = rng.standard_normal(op.in_shape)
        y = op.apply(truth)
        z = rng.standard_normal(op.in_shape)
        pz = project_consistent(op, z, y)
        np.testing.assert_allclose(op.apply(pz), y, atol=1e-12)
        np.testing.assert_allclose(project_consistent(op, pz, y), pz, atol=1e-12)
        # orthogonal projection onto an affine set that contains the truth
        assert np.linalg.norm(pz - truth) <= np.linalg.norm(z - truth) + 1e-12
