"""Full prepare-and-measure session flows with symmetrization and estimation.

Two flows are provided: a Gaussian-modulated run whose key blocks are carved
out afterwards by a norm band (post-selection), and a pre-labeled run that
mixes key spheres, Gaussian estimation blocks, and decoy spheres before
anything is sent.  Both hand their key blocks to the reconciliation layer and
report a secret-key-rate bound from the estimated channel.
"""

from __future__ import annotations

import logging
import math
import os
import re
from dataclasses import dataclass, field, replace

import numpy as np

from . import algebra, modulation, reconciliation, security
from .channel import DETECTIONS, ChannelParams, distance_to_T, transmit_measure
from .decoy import DecoyDesign, mix_probabilities
from .modulation import ModulationScheme, RadiusBand

log = logging.getLogger(__name__)

FLOWS = ("gaussian", "decoy")
# integer label codes used in transcripts; -1 marks band-discarded blocks
LABELS = ("key", "estimation", "decoy")
DEFAULT_BAND = RadiusBand(0.95, 1.05)
MIN_EST_SAMPLES = 100


class ProtocolError(RuntimeError):
    """A session cannot proceed (too little data, too many frame failures)."""


class ConfigError(ValueError):
    """A protocol configuration file or value is malformed."""


@dataclass(frozen=True)
class ProtocolConfig:
    d: int
    alpha: float
    n_symbols: int
    flow: str = "decoy"
    channel: ChannelParams = ChannelParams(t=1.0)
    p_est: float = 0.5
    p: float = 1.0
    band: RadiusBand = DEFAULT_BAND
    decoy: DecoyDesign = None
    symmetrization_k: int = 1
    beta_target: float = 0.95
    code: str = "rep16"
    seed: int = 0
    max_frame_failure: float = 0.05
    min_est_samples: int = MIN_EST_SAMPLES

    def __post_init__(self):
        if self.d not in algebra.DIVISION_DIMS:
            raise ConfigError(f"d must be one of {algebra.DIVISION_DIMS}, got {self.d}")
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive")
        if self.n_symbols < 1:
            raise ConfigError("n_symbols must be at least 1")
        if self.flow not in FLOWS:
            raise ConfigError(f"flow must be one of {FLOWS}, got {self.flow!r}")
        mix_probabilities(self.p, self.p_est)
        if self.symmetrization_k < 1:
            raise ConfigError("symmetrization_k must be at least 1")
        if not 0.0 < self.beta_target <= 1.0:
            raise ConfigError("beta_target must lie in (0, 1]")
        if not 0.0 <= self.max_frame_failure <= 1.0:
            raise ConfigError("max_frame_failure must lie in [0, 1]")
        if self.min_est_samples < 1:
            raise ConfigError("min_est_samples must be at least 1")
        if self.flow == "decoy":
            if self.d < 2:
                raise ConfigError("the decoy flow needs block dimension d >= 2")
            if self.channel.detection != "heterodyne":
                raise ConfigError("the decoy flow requires heterodyne detection")
            if self.p < 1.0:
                if self.decoy is None:
                    raise ConfigError("decoy flow with p < 1 needs a decoy design")
                if (
                    self.decoy.d != self.d
                    or abs(self.decoy.alpha - self.alpha) > 1e-9
                    or abs(self.decoy.p - self.p) > 1e-9
                ):
                    raise ConfigError(
                        "decoy design was optimized for "
                        f"(d={self.decoy.d}, alpha={self.decoy.alpha}, p={self.decoy.p}), "
                        f"config has (d={self.d}, alpha={self.alpha}, p={self.p})"
                    )
        if self.n_coordinates % self.d != 0:
            raise ConfigError(
                f"{self.n_coordinates} retained coordinates do not split into "
                f"blocks of {self.d}"
            )

    @property
    def n_coordinates(self):
        """Coordinates entering the block structure (homodyne keeps one per mode)."""
        if self.flow == "gaussian" and self.channel.detection == "homodyne":
            return self.n_symbols
        return 2 * self.n_symbols

    @property
    def v_a(self):
        return 2.0 * self.alpha * self.alpha

    @classmethod
    def from_file(cls, path):
        raw = {}
        with open(path) as fh:
            for line_no, raw_line in enumerate(fh, start=1):
                line = raw_line.split("#", 1)[0].strip()
                if not line:
                    continue
                parts = line.split(None, 1)
                if len(parts) != 2:
                    raise ConfigError(f"{path}:{line_no}: expected 'key value', got {line!r}")
                key, value = parts
                if key not in _CONFIG_CASTS:
                    raise ConfigError(f"{path}:{line_no}: unknown key {key!r}")
                if key in raw:
                    raise ConfigError(f"{path}:{line_no}: duplicate key {key!r}")
                raw[key] = (value.strip(), line_no)
        return _build_config(cls, raw, path)


def _parse_bool(value):
    lowered = value.lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ValueError(f"expected true/false, got {value!r}")


_CONFIG_CASTS = {
    "flow": str,
    "d": int,
    "alpha": float,
    "n_symbols": int,
    "p_est": float,
    "p": float,
    "gamma_min": float,
    "gamma_max": float,
    "transmittance": float,
    "distance_km": float,
    "xi": float,
    "eta": float,
    "detection": str,
    "eta_trusted": _parse_bool,
    "symmetrization_k": int,
    "beta_target": float,
    "code": str,
    "seed": int,
    "decoy_file": str,
    "max_frame_failure": float,
    "min_est_samples": int,
}


def _build_config(cls, raw, path):
    def take(key, default=None, required=False):
        if key not in raw:
            if required:
                raise ConfigError(f"{path}: missing required key {key!r}")
            return default
        value, line_no = raw.pop(key)
        try:
            return _CONFIG_CASTS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{line_no}: bad value for {key!r}: {exc}") from None

    d = take("d", required=True)
    alpha = take("alpha", required=True)
    n_symbols = take("n_symbols", required=True)
    flow = take("flow", default="decoy")

    transmittance = take("transmittance")
    distance_km = take("distance_km")
    if transmittance is not None and distance_km is not None:
        raise ConfigError(f"{path}: give either transmittance or distance_km, not both")
    if distance_km is not None:
        transmittance = distance_to_T(distance_km)
    elif transmittance is None:
        transmittance = 1.0

    detection = take("detection", default="homodyne" if d == 1 else "heterodyne")
    try:
        channel = ChannelParams(
            t=transmittance,
            xi=take("xi", default=0.0),
            eta=take("eta", default=1.0),
            detection=detection,
            eta_trusted=take("eta_trusted", default=False),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None

    gamma_min = take("gamma_min", default=DEFAULT_BAND.gamma_min)
    gamma_max = take("gamma_max", default=DEFAULT_BAND.gamma_max)
    try:
        band = RadiusBand(gamma_min, gamma_max)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None

    decoy = None
    decoy_file = take("decoy_file")
    if decoy_file is not None:
        if not os.path.isabs(decoy_file):
            decoy_file = os.path.join(os.path.dirname(os.path.abspath(path)), decoy_file)
        try:
            decoy = DecoyDesign.load(decoy_file)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"{path}: cannot load decoy design: {exc}") from None

    kwargs = dict(
        d=d,
        alpha=alpha,
        n_symbols=n_symbols,
        flow=flow,
        channel=channel,
        p_est=take("p_est", default=0.5),
        p=take("p", default=1.0),
        band=band,
        decoy=decoy,
        symmetrization_k=take("symmetrization_k", default=1),
        beta_target=take("beta_target", default=0.95),
        code=take("code", default="rep16"),
        seed=take("seed", default=0),
        max_frame_failure=take("max_frame_failure", default=0.05),
        min_est_samples=take("min_est_samples", default=MIN_EST_SAMPLES),
    )
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


@dataclass
class SessionTranscript:
    """Append-only record of one session; reconciliation fields fill in later.

    alice_blocks hold amplitude-unit coordinates; bob_blocks hold the aligned
    quadrature-unit outcomes (already un-mixed where the flow requires it).
    """

    config: ProtocolConfig
    events: list = field(default_factory=list)
    labels: np.ndarray = None
    alice_blocks: np.ndarray = None
    bob_blocks: np.ndarray = None
    transform: algebra.OrthogonalTransform = None
    outcomes: np.ndarray = None
    basis: np.ndarray = None
    key_indices: np.ndarray = None
    est_indices: np.ndarray = None
    band_kept_fraction: float = None
    t_hat: float = None
    xi_hat: float = None
    n_est_samples: int = 0
    reconcile_result: reconciliation.ReconcileResult = None
    report: security.KeyRateReport = None
    alice_bits: np.ndarray = None
    bob_bits: np.ndarray = None
    n_key_modes: int = 0

    def record(self, event):
        self.events.append(event)

    def phase_index(self, event):
        return self.events.index(event)


def _session_rngs(config):
    children = np.random.SeedSequence(config.seed).spawn(2)
    return np.random.default_rng(children[0]), np.random.default_rng(children[1])


def estimate_channel(alice_blocks, bob_blocks, v_a, detection, min_samples=MIN_EST_SAMPLES):
    """(T_hat, xi_hat) from aligned Gaussian-modulated coordinates.

    T_hat = (C_hat / V_A)^2 with C_hat the Alice-quadrature/Bob covariance,
    so detector efficiency is folded in exactly as the measurement sees it.
    xi_hat is input-referenced and may come out slightly negative; it is
    reported raw.
    """
    a = np.asarray(alice_blocks, dtype=float).reshape(-1)
    y = np.asarray(bob_blocks, dtype=float).reshape(-1)
    if a.shape != y.shape:
        raise ValueError(f"alice ({a.size}) and bob ({y.size}) sample counts differ")
    if detection not in DETECTIONS:
        raise ValueError(f"detection must be one of {DETECTIONS}")
    if a.size < min_samples:
        raise ProtocolError(
            f"only {a.size} estimation samples, need at least {min_samples}"
        )
    floor = 1.0 if detection == "homodyne" else 2.0
    a_q = modulation.QUADRATURE_SCALE * a
    c_hat = float(np.mean(a_q * y))
    v_y = float(np.mean(y * y))
    t_hat = (c_hat / v_a) ** 2
    if t_hat < 1e-12:
        raise ProtocolError("estimated transmittance is numerically zero")
    xi_hat = (v_y - floor - t_hat * v_a) / t_hat
    return t_hat, xi_hat


def estimation_std(t_hat, xi_hat, v_a, n_samples, detection):
    """Delta-method standard deviations of (T_hat, xi_hat).

    Uses the Gaussian fourth-moment identities Var(xy) = VxVy + C^2,
    Var(y^2) = 2Vy^2, Cov(xy, y^2) = 2C Vy.
    """
    floor = 1.0 if detection == "homodyne" else 2.0
    c = math.sqrt(t_hat) * v_a
    v_y = floor + t_hat * (v_a + xi_hat)
    var_c = (v_a * v_y + c * c) / n_samples
    var_vy = 2.0 * v_y * v_y / n_samples
    cov = 2.0 * c * v_y / n_samples
    dt_dc = 2.0 * c / (v_a * v_a)
    std_t = abs(dt_dc) * math.sqrt(var_c)
    dxi_dvy = 1.0 / t_hat
    dxi_dc = -2.0 * (v_y - floor) / (t_hat * c)
    var_xi = dxi_dvy**2 * var_vy + dxi_dc**2 * var_c + 2.0 * dxi_dvy * dxi_dc * cov
    return std_t, math.sqrt(max(var_xi, 0.0))


def resolve_code(code_id):
    """Map a config code id to a code object: 'identity', 'repN', or a file path."""
    if code_id == "identity":
        return reconciliation.IdentityCode(1)
    match = re.fullmatch(r"rep(\d+)", code_id)
    if match:
        return reconciliation.concatenated_code(int(match.group(1)))
    if os.path.exists(code_id):
        return reconciliation.ParityCheckCode.from_file(code_id)
    raise ValueError(
        f"unknown code {code_id!r} (expected 'identity', 'repN', or a code file path)"
    )


def run_decoy_flow(config, rng=None):
    """Pre-labeled flow: commit labels, modulate, mix, send, measure, reveal."""
    if config.flow != "decoy":
        raise ValueError(f"config.flow is {config.flow!r}, expected 'decoy'")
    if rng is None:
        rng = _session_rngs(config)[0]
    d, params = config.d, config.channel
    if d != 8:
        log.info("decoy flow with d=%d is non-standard (designed for d=8)", d)
    n_blocks = config.n_coordinates // d
    transcript = SessionTranscript(config=config)

    p_key, p_est, p_dec = mix_probabilities(config.p, config.p_est)
    labels = rng.choice(3, size=n_blocks, p=[p_key, p_est, p_dec])
    transcript.labels = labels
    transcript.record("labels_committed")

    scheme_key = ModulationScheme(d, config.alpha, "key")
    scheme_est = ModulationScheme(d, config.alpha, "gaussian")
    key_idx = np.flatnonzero(labels == 0)
    est_idx = np.flatnonzero(labels == 1)
    dec_idx = np.flatnonzero(labels == 2)
    blocks = np.empty((n_blocks, d))
    blocks[key_idx] = modulation.sample_key_blocks(scheme_key, key_idx.size, rng)
    blocks[est_idx] = modulation.sample_gaussian_blocks(scheme_est, est_idx.size, rng)
    if dec_idx.size:
        design = config.decoy
        pick = rng.choice(len(design.radii), size=dec_idx.size, p=design.weights)
        radii = np.asarray(design.radii)[pick]
        directions = modulation.sample_sphere_blocks(d, 1.0, dec_idx.size, rng)
        blocks[dec_idx] = radii[:, None] * directions
    transcript.alice_blocks = blocks
    transcript.record("modulated")

    transform = algebra.sample_orthogonal(n_blocks * d, config.symmetrization_k, rng)
    sent = transform.apply(blocks.reshape(-1)).reshape(n_blocks, d)
    transcript.transform = transform
    transcript.record("symmetrized")

    quads = modulation.blocks_to_quadratures(sent, d)
    outcomes, basis = transmit_measure(quads, params, rng)
    transcript.outcomes, transcript.basis = outcomes, basis
    transcript.record("transmitted")
    transcript.record("measured")

    # outcome pairs are already in block coordinate order; undo the mixing
    y_flat = transform.apply_inverse(outcomes.reshape(-1))
    transcript.bob_blocks = y_flat.reshape(n_blocks, d)
    transcript.record("unsymmetrized")
    transcript.record("labels_revealed")

    transcript.key_indices = key_idx
    transcript.est_indices = est_idx
    transcript.t_hat, transcript.xi_hat = estimate_channel(
        blocks[est_idx],
        transcript.bob_blocks[est_idx],
        config.v_a,
        params.detection,
        config.min_est_samples,
    )
    transcript.n_est_samples = est_idx.size * d
    transcript.record("estimated")
    return transcript


def run_gaussian_postselected(config, rng=None):
    """Gaussian flow: send, measure, symmetrize, pick estimation, band-filter."""
    if config.flow != "gaussian":
        raise ValueError(f"config.flow is {config.flow!r}, expected 'gaussian'")
    if rng is None:
        rng = _session_rngs(config)[0]
    d, params = config.d, config.channel
    if (d, params.detection) not in ((1, "homodyne"), (8, "heterodyne")):
        log.info(
            "gaussian-postselected flow with d=%d/%s is non-standard",
            d, params.detection,
        )
    transcript = SessionTranscript(config=config)
    n = config.n_symbols
    x = rng.normal(0.0, config.alpha / math.sqrt(2.0), size=2 * n)
    transcript.record("modulated")

    quads = modulation.QUADRATURE_SCALE * x.reshape(n, 2)
    outcomes, basis = transmit_measure(quads, params, rng)
    transcript.outcomes, transcript.basis = outcomes, basis
    transcript.record("transmitted")
    transcript.record("measured")

    if params.detection == "homodyne":
        # Bob announces bases; Alice keeps only the measured coordinate
        a = x[2 * np.arange(n) + basis]
        y = np.asarray(outcomes, dtype=float)
    else:
        a = x
        y = outcomes.reshape(-1)

    transform = algebra.sample_orthogonal(a.size, config.symmetrization_k, rng)
    x_sym = transform.apply(a)
    y_sym = transform.apply(y)
    transcript.transform = transform
    transcript.record("symmetrized")

    n_blocks = a.size // d
    alice_blocks = x_sym.reshape(n_blocks, d)
    bob_blocks = y_sym.reshape(n_blocks, d)
    transcript.alice_blocks = alice_blocks
    transcript.bob_blocks = bob_blocks

    n_est = int(round(config.p_est * n_blocks))
    order = rng.permutation(n_blocks)
    est_idx = np.sort(order[:n_est])
    rest = np.sort(order[n_est:])
    transcript.est_indices = est_idx
    transcript.record("estimation_coordinates_chosen")

    scheme = ModulationScheme(d, config.alpha, "key")
    keep = modulation.label_by_band(alice_blocks[rest], scheme, config.band)
    key_idx = rest[keep]
    transcript.key_indices = key_idx
    transcript.band_kept_fraction = float(np.mean(keep)) if rest.size else 0.0
    labels = np.full(n_blocks, -1)
    labels[key_idx] = 0
    labels[est_idx] = 1
    transcript.labels = labels
    transcript.record("band_filtered")

    transcript.t_hat, transcript.xi_hat = estimate_channel(
        alice_blocks[est_idx],
        bob_blocks[est_idx],
        config.v_a,
        params.detection,
        config.min_est_samples,
    )
    transcript.n_est_samples = est_idx.size * d
    transcript.record("estimated")
    return transcript


def distill(transcript, code=None, rng=None):
    """Reconcile the key blocks, bound the key rate, truncate to the bound.

    Privacy amplification is modeled as plain truncation of the agreed bit
    string to floor(K * n_key_modes) bits; no hashing is performed.  A bound
    K <= 0 refuses to emit any key material.
    """
    config = transcript.config
    if transcript.t_hat is None:
        raise ProtocolError("transcript has no channel estimate")
    if rng is None:
        rng = _session_rngs(config)[1]
    if code is None:
        code = resolve_code(config.code)
    d = config.d
    key_idx = transcript.key_indices
    n_bits_avail = key_idx.size * d
    if n_bits_avail < code.n_bits:
        detail = ""
        if transcript.band_kept_fraction is not None:
            detail = f" (band kept fraction {transcript.band_kept_fraction:.4f})"
        raise ProtocolError(
            f"{key_idx.size} key blocks give {n_bits_avail} bits, fewer than one "
            f"{code.n_bits}-bit frame{detail}"
        )

    x = reconciliation.normalize_alice_blocks(transcript.alice_blocks[key_idx])
    y = reconciliation.normalize_bob_blocks(
        transcript.bob_blocks[key_idx], transcript.t_hat, config.alpha
    )
    result = reconciliation.reconcile(x, y, code, rng)
    transcript.reconcile_result = result
    failure = 1.0 - float(np.mean(result.frame_success))
    if failure > config.max_frame_failure:
        raise ProtocolError(
            f"frame failure rate {failure:.4f} exceeds {config.max_frame_failure} "
            f"({result.n_frames} frames at snr_hat {result.snr_hat:.4f})"
        )

    xi_eff = transcript.xi_hat
    if xi_eff < 0.0:
        log.warning(
            "clamping negative excess-noise estimate %.3g to 0 for the key-rate bound",
            xi_eff,
        )
        xi_eff = 0.0
    params_hat = replace(
        config.channel,
        t=min(transcript.t_hat / config.channel.eta, 1.0),
        xi=xi_eff,
    )
    report = security.secret_key_rate(d, config.v_a, params_hat, config.beta_target)
    transcript.report = report
    key_coords = key_idx.size * d
    if config.channel.detection == "homodyne":
        transcript.n_key_modes = key_coords
    else:
        transcript.n_key_modes = key_coords // 2
    transcript.record("reconciled")

    if report.k <= 0.0:
        log.warning("key-rate bound %.3g is not positive; emitting no key", report.k)
        transcript.alice_bits = np.zeros(0, dtype=np.uint8)
        transcript.bob_bits = np.zeros(0, dtype=np.uint8)
        transcript.record("key_refused")
        return transcript.alice_bits, transcript.bob_bits, report

    # failed frames are detected (hash in a real system) and discarded, so the
    # distillable pool is the corrected bits of the successful frames only
    kept = np.repeat(result.frame_success, code.n_bits)
    alice_pool = result.alice_bits[kept]
    bob_pool = result.bob_bits[kept]
    n_emit = min(int(report.k * transcript.n_key_modes), alice_pool.size)
    transcript.alice_bits = alice_pool[:n_emit].copy()
    transcript.bob_bits = bob_pool[:n_emit].copy()
    transcript.record("key_emitted")
    return transcript.alice_bits, transcript.bob_bits, report


def run_session(config):
    """Run the configured flow end to end and return the finished transcript."""
    rng_flow, rng_distill = _session_rngs(config)
    if config.flow == "decoy":
        transcript = run_decoy_flow(config, rng_flow)
    else:
        transcript = run_gaussian_postselected(config, rng_flow)
    distill(transcript, rng=rng_distill)
    return transcript


def save_transcript(transcript, dir_path):
    """Write the session to a directory: manifest, CSV parts, transform, keys."""
    os.makedirs(dir_path, exist_ok=True)
    config = transcript.config
    with open(os.path.join(dir_path, "manifest.txt"), "w") as fh:
        fh.write("# cvqkd session manifest v1\n")
        fh.write(f"flow {config.flow}\n")
        fh.write(f"d {config.d}\n")
        fh.write(f"alpha {repr(config.alpha)}\n")
        fh.write(f"n_symbols {config.n_symbols}\n")
        fh.write(f"detection {config.channel.detection}\n")
        fh.write(f"t {repr(config.channel.t)}\n")
        fh.write(f"xi {repr(config.channel.xi)}\n")
        fh.write(f"eta {repr(config.channel.eta)}\n")
        fh.write(f"code {config.code}\n")
        fh.write(f"seed {config.seed}\n")
        fh.write(f"beta_target {repr(config.beta_target)}\n")
        fh.write(f"t_hat {repr(transcript.t_hat)}\n")
        fh.write(f"xi_hat {repr(transcript.xi_hat)}\n")
        fh.write(f"n_est_samples {transcript.n_est_samples}\n")
        if transcript.band_kept_fraction is not None:
            fh.write(f"band_kept_fraction {repr(transcript.band_kept_fraction)}\n")
        if transcript.report is not None:
            fh.write(f"beta_achieved {repr(transcript.reconcile_result.beta_achieved)}\n")
            fh.write(f"snr_hat {repr(transcript.reconcile_result.snr_hat)}\n")
            fh.write(f"k_bound {repr(transcript.report.k)}\n")
            fh.write(f"n_key_modes {transcript.n_key_modes}\n")
            fh.write(f"emitted_bits {transcript.alice_bits.size}\n")
        fh.write("events " + ",".join(transcript.events) + "\n")

    modulation.write_blocks_csv(
        os.path.join(dir_path, "symbols.csv"),
        transcript.alice_blocks,
        labels=transcript.labels,
        kind="symbols",
    )
    with open(os.path.join(dir_path, "outcomes.csv"), "w") as fh:
        fh.write("# cvqkd-csv-v1 outcomes\n")
        if config.channel.detection == "homodyne":
            fh.write("mode_index,basis,y\n")
            for i, (b, value) in enumerate(zip(transcript.basis, transcript.outcomes)):
                fh.write(f"{i},{b},{repr(float(value))}\n")
        else:
            fh.write("mode_index,y_x,y_p\n")
            for i, (yx, yp) in enumerate(transcript.outcomes):
                fh.write(f"{i},{repr(float(yx))},{repr(float(yp))}\n")
    with open(os.path.join(dir_path, "transform.bin"), "wb") as fh:
        fh.write(transcript.transform.to_bytes())
    for name, bits in (("alice_key.txt", transcript.alice_bits),
                       ("bob_key.txt", transcript.bob_bits)):
        with open(os.path.join(dir_path, name), "w") as fh:
            if bits is not None and bits.size:
                fh.write("".join(str(int(b)) for b in bits))
            fh.write("\n")
