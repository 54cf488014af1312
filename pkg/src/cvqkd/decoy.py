"""Photon-number statistics of the modulations and approximate decoy design.

All three modulations (key sphere, Gaussian, decoy mixtures) are invariant
under orthogonal rotations of the m = d/2 signal modes, so each state is
block-diagonal over total photon number k and fully described by its
photon-number law: Poisson(m alpha^2) for the key sphere (any fixed-radius
sphere of amplitude radius rho gives Poisson(rho^2)), negative binomial for
the Gaussian modulation.  Trace distances between such states reduce to l1
distances between those laws, which is what the decoy optimizer minimizes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats

log = logging.getLogger(__name__)

TAIL_BOUND = 1e-12
DECOY_DIMS = (2, 4, 8)


@dataclass(frozen=True)
class PhotonNumberDistribution:
    """Total-photon-number weights for k = 0..n_max; the deficit is tail mass."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 1 or probs.size == 0:
            raise ValueError("probs must be a nonempty 1-d array")
        if np.any(probs < -1e-15):
            raise ValueError("photon-number weights must be nonnegative")
        object.__setattr__(self, "probs", np.clip(probs, 0.0, None))

    @property
    def n_max(self):
        return self.probs.size - 1

    @property
    def tail(self):
        return max(0.0, 1.0 - float(np.sum(self.probs)))

    def mean(self):
        return float(np.arange(self.probs.size) @ self.probs)


def _auto_n_max(tail_of):
    n = 16
    while tail_of(n) > TAIL_BOUND:
        n *= 2
        if n > 1 << 20:
            raise RuntimeError("photon-number truncation failed to converge")
    return n


def f_dist(d, alpha, n_max=None):
    """Sphere-modulation photon-number law: Poisson with mean (d/2) alpha^2."""
    _check_decoy_dim(d)
    mu = (d / 2.0) * alpha * alpha
    if n_max is None:
        n_max = _auto_n_max(lambda n: stats.poisson.sf(n, mu))
    return PhotonNumberDistribution(stats.poisson.pmf(np.arange(n_max + 1), mu))


def g_dist(d, alpha, n_max=None):
    """Gaussian-modulation law: negative binomial, same mean as f_dist.

    g(k) = C(m+k-1, k) alpha^{2k} / (1+alpha^2)^{m+k} with m = d/2 modes.
    """
    _check_decoy_dim(d)
    m = d // 2
    p_nb = 1.0 / (1.0 + alpha * alpha)
    if n_max is None:
        n_max = _auto_n_max(lambda n: stats.nbinom.sf(n, m, p_nb))
    return PhotonNumberDistribution(stats.nbinom.pmf(np.arange(n_max + 1), m, p_nb))


def _check_decoy_dim(d):
    if d not in DECOY_DIMS:
        raise ValueError(f"d must be one of {DECOY_DIMS}, got {d}")


def povm_scale(d, alpha, n_max=None):
    """(pi_d, k_star): the minimum of g(k)/f(k) and where it is attained.

    The ratio of consecutive ratios is (m + k) / (m (1 + alpha^2)), which
    exceeds 1 for all k > m alpha^2, so any truncation beyond that point
    brackets the global minimum; smaller truncations are an error.
    """
    _check_decoy_dim(d)
    m = d // 2
    if n_max is not None and n_max <= m * alpha * alpha + 1:
        raise ValueError(
            f"n_max={n_max} cannot bracket the ratio minimum near {m * alpha * alpha:.3f}"
        )
    f = f_dist(d, alpha, n_max)
    g = g_dist(d, alpha, f.n_max)
    ratio = g.probs / f.probs
    k_star = int(np.argmin(ratio))
    pi_d = float(ratio[k_star])
    paper_k = math.ceil(alpha * alpha * d)
    if paper_k != k_star:
        log.info(
            "POVM ratio argmin k*=%d (ratio %.12g) differs from the ceil(alpha^2 d)=%d "
            "shorthand (ratio %.12g)",
            k_star, pi_d, paper_k, float(ratio[min(paper_k, f.n_max)]),
        )
    return pi_d, k_star


def p_succ(d, alpha):
    """Success probability of the key-state extraction measurement."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if d == 1:
        a2 = alpha * alpha
        return math.factorial(math.floor(1.0 + a2)) / (1.0 + a2) ** math.floor(2.0 + a2)
    return povm_scale(d, alpha)[0]


def mixture_photon_dist(radii, weights, n_max=None):
    """Photon-number law of a weighted mixture of fixed-radius spheres.

    A sphere of amplitude radius rho carries Poisson(rho^2) total photons,
    independent of d.
    """
    radii = np.asarray(radii, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if radii.shape != weights.shape or radii.ndim != 1 or radii.size == 0:
        raise ValueError("radii and weights must be matching nonempty 1-d arrays")
    if np.any(radii < 0) or np.any(weights < 0):
        raise ValueError("radii and weights must be nonnegative")
    if abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError(f"weights sum to {weights.sum()}, expected 1")
    means = radii * radii
    if n_max is None:
        n_max = _auto_n_max(
            lambda n: float(np.max(stats.poisson.sf(n, np.maximum(means, 1e-300))))
        )
    k = np.arange(n_max + 1)
    probs = sum(w * stats.poisson.pmf(k, mu) for w, mu in zip(weights, means))
    return PhotonNumberDistribution(probs)


def trace_distance(pd1, pd2):
    """Trace distance of two orthogonally-invariant states from their laws.

    Equals half the l1 distance of the photon-number weights, plus half of
    both truncated tails so the result upper-bounds the untruncated value.
    """
    if pd1.n_max != pd2.n_max:
        raise ValueError(
            f"distributions truncate at different n_max: {pd1.n_max} vs {pd2.n_max}"
        )
    core = 0.5 * float(np.sum(np.abs(pd1.probs - pd2.probs)))
    return core + 0.5 * (pd1.tail + pd2.tail)


def mix_probabilities(p, p_est):
    """Per-symbol label probabilities (key, estimation, decoy)."""
    if not 0.0 <= p <= 1.0 or not 0.0 <= p_est <= 1.0:
        raise ValueError("p and p_est must lie in [0, 1]")
    return p * (1.0 - p_est), p_est, (1.0 - p) * (1.0 - p_est)


class InfeasibleDecoyError(ValueError):
    """No nonnegative decoy mixture exists; carries the violating photon number."""

    def __init__(self, message, photon_number):
        super().__init__(message)
        self.photon_number = photon_number


@dataclass(frozen=True)
class DecoyDesign:
    """Radius mixture certified to hide the key states inside the Gaussian law."""

    d: int
    alpha: float
    p: float
    radii: tuple
    weights: tuple
    epsilon: float
    n_max: int

    def __post_init__(self):
        if len(self.radii) != len(self.weights) or not self.radii:
            raise ValueError("radii and weights must be nonempty and aligned")
        if any(w < 0 for w in self.weights) or any(r < 0 for r in self.radii):
            raise ValueError("radii and weights must be nonnegative")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {sum(self.weights)}, expected 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")

    def save(self, path):
        with open(path, "w") as fh:
            fh.write("# cvqkd decoy design v1\n")
            fh.write(f"d {self.d}\n")
            fh.write(f"alpha {repr(self.alpha)}\n")
            fh.write(f"p {repr(self.p)}\n")
            fh.write(f"epsilon {repr(self.epsilon)}\n")
            fh.write(f"n_max {self.n_max}\n")
            for r, w in zip(self.radii, self.weights):
                fh.write(f"{repr(r)},{repr(w)}\n")

    @classmethod
    def load(cls, path):
        header = {}
        rows = []
        with open(path) as fh:
            for raw in fh:
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "," in line:
                    r, w = line.split(",")
                    rows.append((float(r), float(w)))
                else:
                    key, value = line.split()
                    header[key] = value
        missing = {"d", "alpha", "p", "epsilon", "n_max"} - set(header)
        if missing or not rows:
            raise ValueError(f"{path}: malformed decoy design (missing {sorted(missing)})")
        return cls(
            d=int(header["d"]),
            alpha=float(header["alpha"]),
            p=float(header["p"]),
            epsilon=float(header["epsilon"]),
            n_max=int(header["n_max"]),
            radii=tuple(r for r, _ in rows),
            weights=tuple(w for _, w in rows),
        )


def _fit_weights(means, target, one_minus_p, n_max):
    """Best l1 fit of (1-p) * mixture(means) to target; returns (weights, l1)."""
    k = np.arange(n_max + 1)
    q = np.column_stack([stats.poisson.pmf(k, mu) for mu in means])
    n_w, n_e = q.shape[1], q.shape[0]
    c = np.concatenate([np.zeros(n_w), np.ones(n_e)])
    block = one_minus_p * q
    a_ub = np.block([[block, -np.eye(n_e)], [-block, -np.eye(n_e)]])
    b_ub = np.concatenate([target, -target])
    a_eq = np.concatenate([np.ones(n_w), np.zeros(n_e)])[None, :]
    res = optimize.linprog(
        c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[1.0], method="highs"
    )
    if not res.success:
        raise RuntimeError(f"decoy weight fit failed: {res.message}")
    return res.x[:n_w], float(res.fun)


def optimize_decoy(d, alpha, p, n_radii_max=12, n_max=None):
    """Design a decoy radius mixture hiding the key fraction p in sigma_G.

    Fits (1-p) * mixture against g - p*f in l1 on a log grid of Poisson means,
    prunes the support to n_radii_max radii, then refines each surviving
    radius by coordinate descent.  The returned epsilon is a sound trace
    distance certificate including all truncation tails.
    """
    _check_decoy_dim(d)
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if not 0.0 <= p < 1.0:
        raise ValueError(f"key fraction p must lie in [0, 1), got {p}")
    pi_d, k_star = povm_scale(d, alpha)
    if p > pi_d + 1e-12:
        raise InfeasibleDecoyError(
            f"p={p} exceeds the POVM scale pi_d={pi_d:.12g}: "
            f"p*f(k) > g(k) at photon number {k_star}",
            photon_number=k_star,
        )
    if n_max is None:
        n_max = max(f_dist(d, alpha).n_max, g_dist(d, alpha).n_max)
    f = f_dist(d, alpha, n_max)
    g = g_dist(d, alpha, n_max)
    target = g.probs - p * f.probs

    means = np.geomspace(1e-3, max(float(n_max), 1.0), 241)
    weights, _ = _fit_weights(means, target, 1.0 - p, n_max)

    support = np.flatnonzero(weights > 1e-10)
    if support.size > n_radii_max:
        support = support[np.argsort(weights[support])[-n_radii_max:]]
    if support.size == 0:
        support = np.array([np.argmax(weights)])
    mus = np.sort(means[support])
    weights, best = _fit_weights(mus, target, 1.0 - p, n_max)

    factors = (0.8, 0.9, 0.95, 1.05, 1.1, 1.25)
    for _ in range(2):
        for j in range(mus.size):
            for factor in factors:
                trial = mus.copy()
                trial[j] = mus[j] * factor
                w_try, l1_try = _fit_weights(trial, target, 1.0 - p, n_max)
                if l1_try < best - 1e-15:
                    mus, weights, best = trial, w_try, l1_try

    weights = np.clip(weights, 0.0, None)
    keep = weights > 1e-12
    mus, weights = mus[keep], weights[keep]
    weights /= weights.sum()
    k = np.arange(n_max + 1)
    mix = sum(w * stats.poisson.pmf(k, mu) for w, mu in zip(weights, mus))
    residual = float(np.sum(np.abs(g.probs - p * f.probs - (1.0 - p) * mix)))
    tail_slack = (
        g.tail
        + p * f.tail
        + (1.0 - p) * float(np.sum(weights * stats.poisson.sf(n_max, mus)))
    )
    order = np.argsort(mus)
    return DecoyDesign(
        d=d,
        alpha=alpha,
        p=p,
        radii=tuple(math.sqrt(mu) for mu in mus[order]),
        weights=tuple(float(w) for w in weights[order]),
        epsilon=0.5 * residual + 0.5 * tail_slack,
        n_max=n_max,
    )
