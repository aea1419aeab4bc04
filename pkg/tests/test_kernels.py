"""Both kernel backends must agree; each is also checked against the
definition directly."""
import numpy as np
import pytest

from rtl import kernels
from rtl.kernels import _reference

compiled = pytest.mark.skipif("compiled" not in kernels.BACKENDS, reason="extension not built")


def random_case(seed, B=3, L1=5, L2=4, h=6, d=7):
    rng = np.random.default_rng(seed)
    m1 = np.ones((B, L1))
    m2 = np.ones((B, L2))
    for b in range(B):
        m1[b, rng.integers(1, L1 + 1):] = 0.0
        m2[b, rng.integers(1, L2 + 1):] = 0.0
    return dict(
        f1=rng.normal(size=(B, L1, h)),
        f2=rng.normal(size=(B, L2, h)),
        x1=rng.normal(size=(B, L1, d)),
        x2=rng.normal(size=(B, L2, d)),
        m1=m1,
        m2=m2,
        d2=rng.normal(size=(B, L1, d)),
        d1=rng.normal(size=(B, L2, d)),
    )


def run_all(backend, c):
    mod = kernels.BACKENDS[backend]
    fw = mod.attention_forward(c["f1"], c["f2"], c["x1"], c["x2"], c["m1"], c["m2"])
    bw = mod.attention_backward(c["d2"], c["d1"], fw[0], fw[1], c["f1"], c["f2"], c["x1"], c["x2"])
    v = np.ascontiguousarray(c["x1"])
    pf = mod.pool_forward(v, c["m1"])
    pb = mod.pool_backward(pf[0], pf[1], pf[2], c["m1"])
    return list(fw) + list(bw) + list(pf) + [pb]


@compiled
@pytest.mark.parametrize("seed", range(10))
def test_backends_agree(seed):
    c = random_case(seed)
    for a, b in zip(run_all("python", c), run_all("compiled", c)):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


@compiled
@pytest.mark.parametrize("shape", [(2, 40, 13, 50, 31), (1, 1, 17, 3, 2), (4, 9, 1, 1, 8)])
def test_backends_agree_odd_shapes(shape):
    B, L1, L2, h, d = shape
    c = random_case(B * L1 + L2, B=B, L1=L1, L2=L2, h=h, d=d)
    for a, b in zip(run_all("python", c), run_all("compiled", c)):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-10)


@compiled
def test_cdf_l1_backends_agree():
    rng = np.random.default_rng(0)
    u, v = rng.dirichlet(np.ones(30)), rng.dirichlet(np.ones(30))
    assert abs(_reference.cdf_l1(u, v) - kernels.BACKENDS["compiled"].cdf_l1(u, v)) < 1e-12


@pytest.mark.parametrize("backend", sorted(kernels.BACKENDS))
def test_pad_weights_exactly_zero(backend):
    c = random_case(3)
    p_row, p_col, _, _ = kernels.BACKENDS[backend].attention_forward(
        c["f1"], c["f2"], c["x1"], c["x2"], c["m1"], c["m2"]
    )
    assert np.all(p_row[c["m2"][:, None, :].repeat(p_row.shape[1], 1) == 0] == 0.0)
    assert np.all(p_col[c["m1"][:, :, None].repeat(p_col.shape[2], 2) == 0] == 0.0)
    np.testing.assert_allclose(p_row.sum(axis=2), 1.0, atol=1e-12)
    np.testing.assert_allclose(p_col.sum(axis=1), 1.0, atol=1e-12)


@pytest.mark.parametrize("backend", sorted(kernels.BACKENDS))
def test_attention_matches_definition(backend):
    c = random_case(4, B=1)
    p_row, p_col, eps2, eps1 = kernels.BACKENDS[backend].attention_forward(
        c["f1"], c["f2"], c["x1"], c["x2"], c["m1"], c["m2"]
    )
    n1, n2 = int(c["m1"].sum()), int(c["m2"].sum())
    e = c["f1"][0, :n1] @ c["f2"][0, :n2].T
    rows = np.exp(e) / np.exp(e).sum(axis=1, keepdims=True)
    cols = np.exp(e) / np.exp(e).sum(axis=0, keepdims=True)
    np.testing.assert_allclose(p_row[0, :n1, :n2], rows, atol=1e-12)
    np.testing.assert_allclose(eps2[0, :n1], rows @ c["x2"][0, :n2], atol=1e-12)
    np.testing.assert_allclose(eps1[0, :n2], cols.T @ c["x1"][0, :n1], atol=1e-12)


def test_use_backend_rejects_unknown():
    with pytest.raises(ValueError):
        kernels.use_backend("gpu")
