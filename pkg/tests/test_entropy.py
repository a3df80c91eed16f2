import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from colorlic import tensor as T
from colorlic.entropy import (
    GaussianConditional,
    default_scale_table,
    estimate_rate_bits,
    factorized_likelihood,
    gaussian_likelihood,
)
from colorlic.errors import FormatError
from colorlic.model import BRANCHES, LatentBundle, ModelParams, preset
from colorlic.rangecoder import TOTAL, check_cdf, pmf_to_quantized_cdf, range_decode, range_encode, unzigzag, zigzag


# -- range coder ------------------------------------------------------------------------

def test_empty_stream_round_trip():
    cdf = pmf_to_quantized_cdf([0.5, 0.5, 1e-9])
    data = range_encode([], cdf)
    assert range_decode(data, cdf, 0) == []


def test_single_symbol_alphabet():
    cdf = pmf_to_quantized_cdf([1.0, 0.0])
    check_cdf(cdf)
    data = range_encode([0] * 1000, cdf)
    assert len(data) < 16
    assert range_decode(data, cdf, 1000) == [0] * 1000


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(-70000, 70000), max_size=300), st.integers(2, 40), st.integers(0, 2**31))
def test_round_trip_random_tables(symbols, n, seed):
    rng = np.random.default_rng(seed)
    tables = [pmf_to_quantized_cdf(np.append(rng.dirichlet(np.ones(n)), 1e-6)) for _ in range(5)]
    idx = [i % 5 for i in range(len(symbols))]
    syms = [s % n if i % 3 else s for i, s in enumerate(symbols)]  # mostly in range, some escapes
    data = range_encode(syms, tables, idx)
    assert range_decode(data, tables, len(syms), idx) == syms


def test_escapes_and_zigzag():
    for v in (0, 1, -1, 12345, -70000, 2**31 - 1, -(2**31)):
        assert unzigzag(zigzag(v)) == v
    cdf = pmf_to_quantized_cdf([0.7, 0.3, 1e-6])
    syms = [0, 1, 70000, -3, 2, 1]
    assert range_decode(range_encode(syms, cdf), cdf, len(syms)) == syms


def test_shannon_bound_four_symbols():
    p = np.array([0.5, 0.25, 0.15, 0.1])
    cdf = pmf_to_quantized_cdf(np.append(p, 1e-9))
    rng = np.random.default_rng(5)
    syms = rng.choice(4, size=100_000, p=p).tolist()
    data = range_encode(syms, cdf)
    bound = -np.sum(np.log2(p[syms])) / 8
    assert len(data) <= bound * 1.02
    assert range_decode(data, cdf, len(syms)) == syms


def test_truncated_or_padded_stream_is_rejected():
    cdf = pmf_to_quantized_cdf([0.3, 0.3, 0.4, 1e-6])
    syms = np.random.default_rng(0).integers(0, 3, 500).tolist()
    data = range_encode(syms, cdf)
    with pytest.raises(FormatError):
        range_decode(data[:-3], cdf, len(syms))
    with pytest.raises(FormatError):
        range_decode(data + b"\x00", cdf, len(syms))


def test_quantized_cdf_invariants():
    rng = np.random.default_rng(1)
    for n in (2, 7, 300, 5000):
        pmf = rng.dirichlet(np.ones(n) * 0.1)
        cdf = pmf_to_quantized_cdf(pmf)
        check_cdf(cdf)
        assert cdf[-1] == TOTAL and np.all(np.diff(cdf) >= 1)


# -- likelihoods -------------------------------------------------------------------------

def test_gaussian_likelihood_values():
    assert gaussian_likelihood(0.0, 1.0).item() == pytest.approx(special.ndtr(0.5) - special.ndtr(-0.5), abs=1e-12)
    assert gaussian_likelihood(0.0, 1.0).item() == pytest.approx(0.382925, abs=1e-6)
    v = np.linspace(-5, 5, 41)
    np.testing.assert_array_equal(gaussian_likelihood(v, 2.0).data, gaussian_likelihood(-v, 2.0).data)
    p = gaussian_likelihood(np.zeros(5), np.array([0.5, 1, 2, 4, 8])).data
    assert np.all(np.diff(p) < 0)
    # below-floor sigma clamps instead of failing
    assert gaussian_likelihood(0.0, 0.01).item() == gaussian_likelihood(0.0, 0.11).item()
    assert gaussian_likelihood(100.0, 0.2).item() == 1e-9


def test_gaussian_likelihood_grad():
    v = T.Tensor(np.linspace(-3, 3, 13), requires_grad=True)
    s = T.Tensor(np.linspace(0.3, 4, 13), requires_grad=True)
    assert T.grad_check(lambda: T.log(gaussian_likelihood(v, s)).sum(), [v, s]) < 1e-6


def test_scale_table():
    t = default_scale_table()
    assert len(t) == 64 and t[0] == pytest.approx(0.11) and t[-1] == pytest.approx(64)
    np.testing.assert_allclose(np.diff(np.log(t)), np.log(64 / 0.11) / 63)
    gc = GaussianConditional()
    for cdf in gc.tables:
        check_cdf(cdf)
    np.testing.assert_array_equal(gc.indexes([0.01, 0.11, 0.1100001, 64, 1e4]), [0, 0, 1, 63, 63])


@pytest.fixture(scope="module")
def prior():
    return ModelParams.init(preset("tiny"), seed=0, dtype=np.float64).prior("lum")


def test_prior_monotone_and_symmetric_at_init(prior):
    grid = np.arange(-30, 30.0001, 0.01)
    cdf = prior.cdf(grid)
    assert np.all(np.diff(cdf, axis=1) >= 0)
    # zero biases make the untrained cascade odd: symmetric about median 0
    np.testing.assert_allclose(cdf + cdf[:, ::-1], 1.0, atol=1e-12)
    lik = [factorized_likelihood(v, 3, prior) for v in range(-30, 31)]
    assert min(lik) > 0


def test_prior_normalized_after_fitting_unit_scale_data():
    from colorlic.optim import AdamState, adam_step

    params = ModelParams.init(preset("tiny"), seed=0, dtype=np.float64)
    pr = params.prior("lum")
    names = {n: params[n] for n in params.names() if n.startswith("lum.prior")}
    rng = np.random.default_rng(0)
    state = AdamState(lr=0.05)
    for _ in range(150):
        z = T.Tensor(rng.normal(0, 1, (1, pr.channels, 8, 8)) + rng.uniform(-0.5, 0.5, (1, pr.channels, 8, 8)))
        for p in names.values():
            p.grad = None
        (-T.log(pr.likelihood(z))).sum().backward()
        adam_step(names, state)
    for ch in range(pr.channels):
        mass = sum(factorized_likelihood(v, ch, pr) for v in range(-30, 31))
        assert mass >= 1 - 1e-6


def test_prior_tables_valid(prior):
    offsets, tables = prior.build_tables()
    assert len(tables) == prior.channels
    for off, cdf in zip(offsets, tables):
        check_cdf(cdf)
        assert off < 0 < off + len(cdf) - 2


def test_prior_likelihood_grad():
    params = ModelParams.init(preset("tiny"), seed=2, dtype=np.float64)
    pr = params.prior("chroma")
    z = T.Tensor(np.random.default_rng(0).normal(0, 2, (1, 16, 2, 2)), requires_grad=True)
    names = [n for n in params.names() if n.startswith("chroma.prior")]
    assert T.grad_check(lambda: T.log(pr.likelihood(z)).sum(), [z] + [params[n] for n in names], max_coords=6) < 1e-4


# -- rate estimate ------------------------------------------------------------------------

def _bundle(params, rng, scale=0.0):
    cfg = params.config
    shapes = {"y_L": (cfg.lum_channels, 4, 4), "y_C": (cfg.chroma_channels, 4, 4),
              "z_L": (cfg.lum_hyper_channels, 1, 1), "z_C": (cfg.chroma_hyper_channels, 1, 1)}
    arrays = {k: np.round(rng.normal(0, scale, s)) if scale else np.zeros(s) for k, s in shapes.items()}
    arrays["sigma_L"] = np.full(shapes["y_L"], 1.5)
    arrays["sigma_C"] = np.full(shapes["y_C"], 1.5)
    return LatentBundle(image_size=(64, 64), **arrays)


def test_rate_estimate_additivity_and_zero_minimum(tiny_params64, rng):
    b = _bundle(tiny_params64, rng)
    est = estimate_rate_bits(b, tiny_params64)
    total = sum(v.sum() for v in est.channel_bits.values())
    assert abs(total - est.total_bits) < 1e-6
    for name in ("y_L", "z_C"):
        for delta in (1.0, -1.0):
            arr = b.latent(name).copy()
            arr.flat[0] += delta
            b2 = LatentBundle(**{**b.__dict__, name: arr})
            assert estimate_rate_bits(b2, tiny_params64).total_bits > est.total_bits


def test_rate_estimate_doubles_with_tiling(tiny_params64, rng):
    b = _bundle(tiny_params64, rng, scale=2.0)
    est = estimate_rate_bits(b, tiny_params64)
    tiled = {k: np.concatenate([v, v], axis=2) if isinstance(v, np.ndarray) else v for k, v in b.__dict__.items()}
    est2 = estimate_rate_bits(LatentBundle(**tiled), tiny_params64)
    assert est2.total_bits == pytest.approx(2 * est.total_bits, rel=0.01)


def test_branches_have_priors(tiny_params):
    for b in BRANCHES:
        assert tiny_params.prior(b).channels == tiny_params.config.hyper_channels(b)
