"""Reverse reconciliation by division-algebra reduction to a BI-AWGN channel.

Bob holds y = x + z with x on the unit sphere of R^d (both sides rescale to
get there).  He draws a uniform sign element u in {+-1/sqrt(d)}^d, publishes
t = u * y, and keeps the signs of u as his bits.  Alice computes
v = t * x^{-1} = u + w; multiplicativity of the algebra norm makes w an
isotropic Gaussian independent of u, so decoding u from v is a binary-input
AWGN problem handled with coset coding against Bob's syndrome.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import algebra


def bob_reduce(y_blocks, rng):
    """Draw sign elements u and form the public side information t = u * y."""
    y = np.atleast_2d(np.asarray(y_blocks, dtype=float))
    u = algebra.sample_unit(y.shape[1], rng, size=y.shape[0])
    return u, algebra.mul(u, y)


def alice_reduce(x_blocks, t_blocks):
    """Recover v = t * x^{-1}; equals u exactly on a noiseless channel."""
    x = np.atleast_2d(np.asarray(x_blocks, dtype=float))
    t = np.atleast_2d(np.asarray(t_blocks, dtype=float))
    if x.shape != t.shape:
        raise ValueError(f"shape mismatch between x {x.shape} and t {t.shape}")
    return algebra.mul(t, algebra.inv(x))


def normalize_alice_blocks(blocks):
    """Scale each block to unit norm (the sphere radius is publicly known)."""
    blocks = np.atleast_2d(np.asarray(blocks, dtype=float))
    norms = np.linalg.norm(blocks, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("cannot normalize a zero block")
    return blocks / norms


def normalize_bob_blocks(blocks, t_eff_hat, alpha):
    """Rescale Bob's quadrature-unit blocks onto Alice's unit sphere.

    The quadrature sphere radius is 2 alpha sqrt(d/2), and the channel gain is
    sqrt(T_eff); only Bob knows his calibration, so he divides both out.
    """
    blocks = np.atleast_2d(np.asarray(blocks, dtype=float))
    if t_eff_hat <= 0:
        raise ValueError("estimated transmittance must be positive")
    d = blocks.shape[1]
    radius = 2.0 * alpha * math.sqrt(d / 2.0)
    return blocks / (math.sqrt(t_eff_hat) * radius)


_HERMITE_NODES, _HERMITE_WEIGHTS = np.polynomial.hermite.hermgauss(101)


def biawgn_capacity(snr):
    """Capacity in bits/use of the binary-input AWGN channel at the given snr.

    C = 1 - E_z[log2(1 + exp(-2 snr - 2 sqrt(snr) z))], z standard normal,
    evaluated by Gauss-Hermite quadrature.
    """
    if snr < 0:
        raise ValueError("snr must be nonnegative")
    z = math.sqrt(2.0) * _HERMITE_NODES
    exponent = -2.0 * snr - 2.0 * math.sqrt(snr) * z
    expected = np.sum(_HERMITE_WEIGHTS * np.logaddexp(0.0, exponent)) / math.sqrt(math.pi)
    return max(0.0, 1.0 - float(expected) / math.log(2.0))


class IdentityCode:
    """Rate-1 code: no syndrome, decisions straight off the LLR signs."""

    def __init__(self, k_bits):
        if k_bits < 1:
            raise ValueError("k_bits must be >= 1")
        self.n_bits = k_bits
        self.k_bits = k_bits

    @property
    def rate(self):
        return 1.0

    def syndrome(self, bits):
        return np.zeros(0, dtype=np.uint8)

    def info_bits(self, bits):
        return np.asarray(bits, dtype=np.uint8)

    def decode(self, llr, syndrome):
        return (np.asarray(llr) < 0).astype(np.uint8)


class RepetitionCode:
    """Length-r repetition code; the syndrome pins every bit to the first."""

    def __init__(self, r):
        if r < 1:
            raise ValueError("repetition length must be >= 1")
        self.n_bits = r
        self.k_bits = 1

    @property
    def rate(self):
        return 1.0 / self.n_bits

    def syndrome(self, bits):
        bits = np.asarray(bits, dtype=np.uint8)
        return bits[1:] ^ bits[0]

    def info_bits(self, bits):
        return np.asarray(bits, dtype=np.uint8)[:1]

    def decode(self, llr, syndrome):
        llr = np.asarray(llr, dtype=float)
        signs = np.concatenate([[1.0], 1.0 - 2.0 * np.asarray(syndrome, dtype=float)])
        folded = np.sum(llr * signs)
        first = np.uint8(folded < 0)
        out = np.empty(self.n_bits, dtype=np.uint8)
        out[0] = first
        out[1:] = first ^ np.asarray(syndrome, dtype=np.uint8)
        return out


class ConcatenatedCode:
    """Inner code with every code bit repeated rep_len times consecutively."""

    def __init__(self, rep_len, inner):
        if rep_len < 1:
            raise ValueError("repetition length must be >= 1")
        self.rep_len = rep_len
        self.inner = inner
        self.n_bits = inner.n_bits * rep_len
        self.k_bits = inner.k_bits

    @property
    def rate(self):
        return self.k_bits / self.n_bits

    def _split(self, syndrome):
        n_par = self.inner.n_bits * (self.rep_len - 1)
        return syndrome[:n_par].reshape(self.inner.n_bits, self.rep_len - 1), syndrome[n_par:]

    def syndrome(self, bits):
        groups = np.asarray(bits, dtype=np.uint8).reshape(self.inner.n_bits, self.rep_len)
        parities = groups[:, 1:] ^ groups[:, :1]
        return np.concatenate([parities.reshape(-1), self.inner.syndrome(groups[:, 0])])

    def info_bits(self, bits):
        groups = np.asarray(bits, dtype=np.uint8).reshape(self.inner.n_bits, self.rep_len)
        return self.inner.info_bits(groups[:, 0])

    def decode(self, llr, syndrome):
        syndrome = np.asarray(syndrome, dtype=np.uint8)
        parities, inner_synd = self._split(syndrome)
        groups = np.asarray(llr, dtype=float).reshape(self.inner.n_bits, self.rep_len)
        signs = np.hstack([np.ones((self.inner.n_bits, 1)), 1.0 - 2.0 * parities])
        folded = np.sum(groups * signs, axis=1)
        leaders = self.inner.decode(folded, inner_synd)
        out = np.empty((self.inner.n_bits, self.rep_len), dtype=np.uint8)
        out[:, 0] = leaders
        out[:, 1:] = leaders[:, None] ^ parities
        return out.reshape(-1)


def concatenated_code(rep_len, inner=None):
    """Repetition-only code when inner is absent; rep_len = 1 means identity."""
    if rep_len < 1:
        raise ValueError("repetition length must be >= 1")
    if inner is None:
        return IdentityCode(1) if rep_len == 1 else RepetitionCode(rep_len)
    return ConcatenatedCode(rep_len, inner)


class ParityCheckCode:
    """Binary code given by an explicit sparse parity-check matrix.

    Decoding needs an externally supplied soft decoder (an LDPC implementation
    is out of scope here); syndrome computation and plumbing work without one.
    """

    def __init__(self, n_bits, k_bits, checks, decoder=None):
        if not 1 <= k_bits <= n_bits:
            raise ValueError("need 1 <= k_bits <= n_bits")
        self.n_bits = n_bits
        self.k_bits = k_bits
        self.checks = [np.asarray(sorted(c), dtype=int) for c in checks]
        if len(self.checks) != n_bits - k_bits:
            raise ValueError(
                f"{len(self.checks)} checks do not match n-k = {n_bits - k_bits}"
            )
        for row in self.checks:
            if row.size and (row[0] < 0 or row[-1] >= n_bits):
                raise ValueError("parity check references a bit out of range")
        self.decoder = decoder

    @property
    def rate(self):
        return self.k_bits / self.n_bits

    def syndrome(self, bits):
        bits = np.asarray(bits, dtype=np.uint8)
        return np.array(
            [np.bitwise_xor.reduce(bits[row]) if row.size else 0 for row in self.checks],
            dtype=np.uint8,
        )

    def info_bits(self, bits):
        return np.asarray(bits, dtype=np.uint8)[: self.k_bits]

    def decode(self, llr, syndrome):
        if self.decoder is None:
            raise NotImplementedError(
                "no soft decoder attached to this parity-check code"
            )
        return self.decoder(llr, syndrome, self)

    @classmethod
    def from_file(cls, path, decoder=None):
        """Load 'n_bits k_bits' header plus sparse 'check bit [1]' lines."""
        header = None
        triples = []
        with open(path) as fh:
            for line_no, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                parts = line.split()
                if header is None:
                    if len(parts) != 2:
                        raise ValueError(f"{path}:{line_no}: header must be 'n_bits k_bits'")
                    header = (int(parts[0]), int(parts[1]))
                    continue
                if len(parts) not in (2, 3):
                    raise ValueError(f"{path}:{line_no}: expected 'check bit [value]'")
                if len(parts) == 3 and parts[2] != "1":
                    raise ValueError(f"{path}:{line_no}: only binary entries allowed")
                triples.append((int(parts[0]), int(parts[1])))
        if header is None:
            raise ValueError(f"{path}: missing header line")
        n_bits, k_bits = header
        rows = [[] for _ in range(n_bits - k_bits)]
        for check, bit in triples:
            if not 0 <= check < n_bits - k_bits:
                raise ValueError(f"{path}: check index {check} out of range")
            rows[check].append(bit)
        return cls(n_bits, k_bits, rows, decoder=decoder)


@dataclass(frozen=True)
class ReconciliationMessage:
    """Bob's public reconciliation traffic: one t per block, one syndrome per frame."""

    t_blocks: np.ndarray
    syndromes: np.ndarray


@dataclass(frozen=True)
class ReconcileResult:
    bob_bits: np.ndarray
    alice_bits: np.ndarray
    frame_success: np.ndarray
    n_frames: int
    sigma2_hat: float
    snr_hat: float
    code_rate: float
    beta_achieved: float
    message: ReconciliationMessage


def reconcile(x_blocks, y_blocks, code, rng):
    """Run the full reverse-reconciliation pipeline over aligned block arrays.

    Both inputs must already be normalized (x on the unit sphere, y = x + z).
    Trailing bits that do not fill a whole frame are dropped.  The returned
    strings are the per-coordinate sign bits (Bob's true ones and Alice's
    coset decode); syndrome leakage is charged through beta_achieved, not by
    shortening the strings.
    """
    x = np.atleast_2d(np.asarray(x_blocks, dtype=float))
    y = np.atleast_2d(np.asarray(y_blocks, dtype=float))
    if x.shape != y.shape:
        raise ValueError(f"x blocks {x.shape} and y blocks {y.shape} differ")
    n_blocks, d = x.shape
    n_frames = (n_blocks * d) // code.n_bits
    if n_frames == 0:
        raise ValueError(
            f"{n_blocks * d} bits cannot fill one frame of {code.n_bits}"
        )

    u, t = bob_reduce(y, rng)
    v = alice_reduce(x, t)
    w_power = float(np.mean(v * v))
    sigma2_hat = max(w_power - 1.0 / d, 1e-12)
    snr_hat = 1.0 / (d * sigma2_hat)
    llr_all = 2.0 * math.sqrt(d) * v.reshape(-1) / sigma2_hat

    bits_all = (u.reshape(-1) < 0).astype(np.uint8)
    used = n_frames * code.n_bits
    frames = bits_all[:used].reshape(n_frames, code.n_bits)
    llr = llr_all[:used].reshape(n_frames, code.n_bits)

    syndromes = np.array([code.syndrome(f) for f in frames], dtype=np.uint8)
    success = np.zeros(n_frames, dtype=bool)
    decoded = np.empty_like(frames)
    for i in range(n_frames):
        decoded[i] = code.decode(llr[i], syndromes[i])
        success[i] = np.array_equal(decoded[i], frames[i])

    capacity = biawgn_capacity(snr_hat)
    beta = code.rate / capacity if capacity > 0 else math.inf
    return ReconcileResult(
        bob_bits=frames.reshape(-1).copy(),
        alice_bits=decoded.reshape(-1),
        frame_success=success,
        n_frames=n_frames,
        sigma2_hat=sigma2_hat,
        snr_hat=snr_hat,
        code_rate=code.rate,
        beta_achieved=beta,
        message=ReconciliationMessage(t_blocks=t, syndromes=syndromes),
    )
