"""Reduction-to-BI-AWGN, capacity, and coset-coding tests.

Oracles: Monte Carlo evaluation of the BI-AWGN mutual-information integral,
and the matched-filter error rate Q(sqrt(r * snr)) for a length-r repetition
code, both independent of the implementation under test.
"""

import math

import numpy as np
import pytest
from scipy import stats

from cvqkd import algebra
from cvqkd import reconciliation as rec
from cvqkd.modulation import sample_sphere_blocks


def unit_sphere_blocks(d, n, rng):
    return sample_sphere_blocks(d, 1.0, n, rng)


def noisy_pair(d, snr_use, n, rng):
    """x on the unit sphere and y = x + z at the requested per-use snr."""
    sigma = math.sqrt(1.0 / (d * snr_use))
    x = unit_sphere_blocks(d, n, rng)
    return x, x + sigma * rng.standard_normal(x.shape)


def test_bob_reduce_is_algebra_product():
    rng = np.random.default_rng(0)
    y = rng.standard_normal((200, 8))
    u, t = rec.bob_reduce(y, rng)
    assert np.max(np.abs(t - algebra.mul(u, y))) < 1e-12
    assert np.allclose(np.abs(u), 1 / math.sqrt(8), atol=1e-15)
    assert np.max(np.abs(algebra.norm(t) - algebra.norm(y))) < 1e-12


def test_bob_reduce_d1_is_sign_flip():
    rng = np.random.default_rng(1)
    y = np.full((100, 1), 0.8)
    u, t = rec.bob_reduce(y, rng)
    assert np.array_equal(t, u * 0.8)


def test_alice_reduce_noiseless_roundtrip():
    rng = np.random.default_rng(2)
    for d in (1, 2, 4, 8):
        x = unit_sphere_blocks(d, 500, rng)
        u, t = rec.bob_reduce(x, rng)
        v = rec.alice_reduce(x, t)
        assert np.max(np.abs(v - u)) < 1e-12


def test_alice_reduce_identity_element():
    v = rec.alice_reduce(np.array([[1.0, 0.0]]), np.array([[0.6, 0.2]]))
    assert np.allclose(v, [[0.6, 0.2]], atol=1e-15)


def test_alice_reduce_rejects_zero_block():
    with pytest.raises(ZeroDivisionError):
        rec.alice_reduce(np.zeros((1, 4)), np.ones((1, 4)))
    with pytest.raises(ValueError):
        rec.alice_reduce(np.ones((2, 4)), np.ones((3, 4)))


def test_normalizers():
    rng = np.random.default_rng(3)
    blocks = rng.standard_normal((50, 4))
    x = rec.normalize_alice_blocks(blocks)
    assert np.allclose(np.linalg.norm(x, axis=1), 1.0, atol=1e-12)
    with pytest.raises(ValueError):
        rec.normalize_alice_blocks(np.zeros((1, 4)))
    # Bob divides out the gain and the quadrature sphere radius
    y = rec.normalize_bob_blocks(np.full((1, 8), 2.0), 0.25, 0.5)
    radius = 2 * 0.5 * math.sqrt(4.0)
    assert np.allclose(y, 2.0 / (0.5 * radius), atol=1e-15)
    with pytest.raises(ValueError):
        rec.normalize_bob_blocks(np.ones((1, 8)), 0.0, 0.5)


@pytest.mark.parametrize("d", [2, 8])
def test_virtual_channel_is_gaussian(d):
    rng = np.random.default_rng(10 + d)
    sigma2 = 0.3
    x, y = noisy_pair(d, 1.0 / (d * sigma2), 20_000, rng)
    u, t = rec.bob_reduce(y, rng)
    w = rec.alice_reduce(x, t) - u
    for col in (0, d - 1):
        res = stats.kstest(w[:, col] / math.sqrt(sigma2), "norm")
        assert res.pvalue > 0.01
    assert abs(np.var(w) / sigma2 - 1.0) < 0.02


def test_noise_independent_of_signs_and_t():
    rng = np.random.default_rng(4)
    d, sigma2, n = 4, 0.5, 30_000
    x, y = noisy_pair(d, 1.0 / (d * sigma2), n, rng)
    u, t = rec.bob_reduce(y, rng)
    w = rec.alice_reduce(x, t) - u
    bound = 4.5 / math.sqrt(n)
    for i in range(d):
        for j in range(d):
            assert abs(np.corrcoef(u[:, i], w[:, j])[0, 1]) < bound
            assert abs(np.corrcoef(u[:, i], t[:, j])[0, 1]) < bound


def test_biawgn_capacity_endpoints():
    assert rec.biawgn_capacity(0.0) == 0.0
    assert rec.biawgn_capacity(100.0) >= 0.999
    with pytest.raises(ValueError):
        rec.biawgn_capacity(-0.1)
    grid = [rec.biawgn_capacity(s) for s in np.linspace(0.0, 5.0, 30)]
    assert np.all(np.diff(grid) > 0)


def test_biawgn_capacity_against_monte_carlo():
    rng = np.random.default_rng(5)
    z = rng.standard_normal(10_000_000)
    mc = 1.0 - np.mean(np.logaddexp(0.0, -2.0 - 2.0 * z)) / math.log(2.0)
    assert abs(rec.biawgn_capacity(1.0) - mc) < 1e-3


def test_identity_code():
    code = rec.IdentityCode(4)
    assert (code.n_bits, code.k_bits, code.rate) == (4, 4, 1.0)
    assert code.syndrome(np.array([1, 0, 1, 1], dtype=np.uint8)).size == 0
    got = code.decode(np.array([-1.0, 2.0, -3.0, 0.5]), np.zeros(0, dtype=np.uint8))
    assert np.array_equal(got, [1, 0, 1, 0])


def test_repetition_code_cosets():
    rng = np.random.default_rng(6)
    code = rec.RepetitionCode(5)
    assert code.rate == 0.2
    for _ in range(20):
        word = rng.integers(0, 2, size=5).astype(np.uint8)
        synd = code.syndrome(word)
        assert synd.size == 4
        llr = 10.0 * (1.0 - 2.0 * word)  # exact-codeword likelihoods
        assert np.array_equal(code.decode(llr, synd), word)
        assert np.array_equal(code.info_bits(word), word[:1])


def test_repetition_majority_example():
    code = rec.RepetitionCode(3)
    got = code.decode(np.array([2.0, 2.0, -2.0]), np.zeros(2, dtype=np.uint8))
    assert np.array_equal(got, [0, 0, 0])


def test_concatenated_code_rates():
    inner = rec.ParityCheckCode(2, 1, [[0, 1]])
    code = rec.concatenated_code(4, inner)
    assert (code.n_bits, code.k_bits) == (8, 1)
    assert code.rate == 1.0 / 8.0
    assert isinstance(rec.concatenated_code(1), rec.IdentityCode)
    assert isinstance(rec.concatenated_code(16), rec.RepetitionCode)
    with pytest.raises(ValueError):
        rec.concatenated_code(0)


def test_concatenated_code_decodes_exact_words():
    rng = np.random.default_rng(7)
    code = rec.ConcatenatedCode(3, rec.IdentityCode(4))
    for _ in range(20):
        word = rng.integers(0, 2, size=code.n_bits).astype(np.uint8)
        synd = code.syndrome(word)
        assert synd.size == code.n_bits - code.k_bits
        llr = 8.0 * (1.0 - 2.0 * word)
        assert np.array_equal(code.decode(llr, synd), word)


def test_concatenation_of_identity_equals_repetition():
    rng = np.random.default_rng(8)
    concat = rec.ConcatenatedCode(16, rec.IdentityCode(1))
    plain = rec.RepetitionCode(16)
    for _ in range(10):
        word = rng.integers(0, 2, size=16).astype(np.uint8)
        assert np.array_equal(concat.syndrome(word), plain.syndrome(word))
        llr = rng.standard_normal(16)
        synd = plain.syndrome(word)
        assert np.array_equal(concat.decode(llr, synd), plain.decode(llr, synd))


def test_parity_check_code_from_file(tmp_path):
    path = tmp_path / "code.txt"
    path.write_text(
        "# toy single-parity-check code\n"
        "4 3\n"
        "0 0\n"
        "0 1 1\n"
        "0 2\n"
        "0 3\n"
    )
    code = rec.ParityCheckCode.from_file(path)
    assert (code.n_bits, code.k_bits) == (4, 3)
    word = np.array([1, 0, 1, 1], dtype=np.uint8)
    assert np.array_equal(code.syndrome(word), [1])
    with pytest.raises(NotImplementedError):
        code.decode(np.zeros(4), np.zeros(1, dtype=np.uint8))


def test_parity_check_code_with_injected_decoder(tmp_path):
    path = tmp_path / "code.txt"
    path.write_text("2 1\n0 0\n0 1\n")
    calls = {}

    def hard_decoder(llr, syndrome, code):
        calls["hit"] = True
        return (np.asarray(llr) < 0).astype(np.uint8)

    code = rec.ParityCheckCode.from_file(path, decoder=hard_decoder)
    got = code.decode(np.array([1.0, -1.0]), np.array([1], dtype=np.uint8))
    assert calls["hit"] and np.array_equal(got, [0, 1])


def test_parity_check_file_errors(tmp_path):
    bad_header = tmp_path / "a.txt"
    bad_header.write_text("4\n")
    with pytest.raises(ValueError):
        rec.ParityCheckCode.from_file(bad_header)
    bad_value = tmp_path / "b.txt"
    bad_value.write_text("4 3\n0 0 2\n")
    with pytest.raises(ValueError):
        rec.ParityCheckCode.from_file(bad_value)
    bad_check = tmp_path / "c.txt"
    bad_check.write_text("4 3\n5 0\n")
    with pytest.raises(ValueError):
        rec.ParityCheckCode.from_file(bad_check)
    empty = tmp_path / "d.txt"
    empty.write_text("# nothing\n")
    with pytest.raises(ValueError):
        rec.ParityCheckCode.from_file(empty)


def test_reconcile_noiseless():
    rng = np.random.default_rng(9)
    x = unit_sphere_blocks(8, 64, rng)
    res = rec.reconcile(x, x.copy(), rec.RepetitionCode(16), rng)
    assert res.n_frames == 32
    assert res.frame_success.all()
    assert res.bob_bits.size == 32 * 16
    assert np.array_equal(res.alice_bits, res.bob_bits)
    assert res.sigma2_hat <= 1e-10
    assert res.message.t_blocks.shape == (64, 8)
    assert res.message.syndromes.shape == (32, 15)


def test_reconcile_input_validation():
    rng = np.random.default_rng(10)
    x = unit_sphere_blocks(4, 10, rng)
    with pytest.raises(ValueError):
        rec.reconcile(x, x[:5], rec.RepetitionCode(4), rng)
    with pytest.raises(ValueError):
        rec.reconcile(x[:1], x[:1], rec.RepetitionCode(16), rng)


def test_reconcile_reliable_operating_point():
    # rep-16 at per-use snr 0.7: predicted bit error Q(sqrt(11.2)) ~ 4e-4
    rng = np.random.default_rng(11)
    x, y = noisy_pair(8, 0.7, 1000, rng)
    res = rec.reconcile(x, y, rec.RepetitionCode(16), rng)
    assert res.n_frames == 500
    assert np.mean(res.frame_success) >= 0.99
    assert abs(res.snr_hat - 0.7) < 0.05
    assert res.beta_achieved == res.code_rate / rec.biawgn_capacity(res.snr_hat)


def test_reconcile_error_rate_matches_matched_filter_oracle():
    rng = np.random.default_rng(12)
    snr = 0.15
    x, y = noisy_pair(8, snr, 6000, rng)
    res = rec.reconcile(x, y, rec.RepetitionCode(16), rng)
    p_pred = stats.norm.sf(math.sqrt(16 * snr))
    p_obs = 1.0 - np.mean(res.frame_success)
    assert res.n_frames == 3000
    assert abs(p_obs - p_pred) < 5 * math.sqrt(p_pred * (1 - p_pred) / res.n_frames)


def test_reconcile_concatenated_matches_plain_repetition():
    rng1 = np.random.default_rng(13)
    rng2 = np.random.default_rng(13)
    x, y = noisy_pair(8, 0.5, 400, np.random.default_rng(14))
    res1 = rec.reconcile(x, y, rec.RepetitionCode(16), rng1)
    res2 = rec.reconcile(x, y, rec.ConcatenatedCode(16, rec.IdentityCode(1)), rng2)
    assert np.array_equal(res1.alice_bits, res2.alice_bits)
    assert np.array_equal(res1.frame_success, res2.frame_success)
