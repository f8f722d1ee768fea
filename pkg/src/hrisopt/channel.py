r"""Geometry-driven channel generation for the RIS-aided uplink.

All links combine a distance-based path loss PL(d) = \beta_0 d^{-\alpha}
with small-scale fading: Rayleigh on the direct user-BS link and Rician on
the two RIS links, whose LoS components are uniform-linear-array steering
vectors at the azimuth angles implied by the node positions.

Randomness is counter-based (Philox) with one substream per channel, so a
single trial seed reproduces every draw independently of evaluation order.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

# substream ids; a trial seed fans out into one independent stream per use
_STREAMS = {
    "h_d": 0,       # direct user-BS fading
    "h_r": 1,       # user-RIS fading
    "g": 2,         # RIS-BS fading
    "phase_noise": 3,
    "signal": 4,    # symbols and receiver noise in signal-level simulation
    "init": 5,      # optimizer initialization, when randomized
}


def substream(seed, name):
    """Independent Generator for one named use of a trial seed."""
    if name not in _STREAMS:
        raise ValueError(f"unknown substream {name!r}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_STREAMS[name],))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class Geometry:
    """Node positions in meters, (x, y, z)."""

    bs: tuple = (0.0, 80.0, 5.0)
    ris: tuple = (50.0, 50.0, 15.0)
    user: tuple = (0.0, 0.0, 2.0)

    def distance(self, a, b):
        pa = np.asarray(getattr(self, a), dtype=float)
        pb = np.asarray(getattr(self, b), dtype=float)
        return float(np.linalg.norm(pa - pb))

    def azimuth(self, a, b):
        """Azimuth (rad) of the horizontal direction from node a to node b."""
        pa = np.asarray(getattr(self, a), dtype=float)
        pb = np.asarray(getattr(self, b), dtype=float)
        d = pb - pa
        return float(np.arctan2(d[1], d[0]))


@dataclass
class FadingParams:
    """Large- and small-scale fading parameters for the three links."""

    beta0_db: float = -30.0          # reference path loss at 1 m
    alpha_direct: float = 3.5        # user-BS exponent
    alpha_user_ris: float = 2.2
    alpha_ris_bs: float = 2.2
    rician_factor: float = 0.75
    # 'fraction': rician_factor is the LoS power fraction in [0, 1)
    # 'kfactor' : rician_factor is the K-factor, LoS fraction K/(1+K)
    rician_interpretation: str = "fraction"

    def los_fraction(self):
        if self.rician_interpretation == "fraction":
            frac = self.rician_factor
        elif self.rician_interpretation == "kfactor":
            frac = self.rician_factor / (1.0 + self.rician_factor)
        else:
            raise ValueError(
                f"unknown rician_interpretation {self.rician_interpretation!r}"
            )
        if not 0.0 <= frac < 1.0:
            raise ValueError(f"LoS power fraction {frac} outside [0, 1)")
        return frac


@dataclass
class ChannelSet:
    """One realization of all three links plus the seed that produced it."""

    h_d: np.ndarray          # (n_r,) user-BS
    h_r: np.ndarray          # (n,) user-RIS
    g: np.ndarray            # (n, n_r) RIS-BS
    seed: int = 0

    def __post_init__(self):
        self.h_d = np.asarray(self.h_d, dtype=complex)
        self.h_r = np.asarray(self.h_r, dtype=complex)
        self.g = np.asarray(self.g, dtype=complex)
        if self.g.shape != (self.h_r.size, self.h_d.size):
            raise ValueError(
                f"ris-bs matrix shape {self.g.shape} inconsistent with "
                f"h_d ({self.h_d.size}) and h_r ({self.h_r.size})"
            )


def path_loss(distance_m, exponent, beta0_db=-30.0):
    """Linear power gain beta_0 * d^-alpha. Distances must be positive."""
    d = np.asarray(distance_m, dtype=float)
    if np.any(d <= 0):
        raise ValueError("path loss requires a positive distance")
    return 10.0 ** (beta0_db / 10.0) * d ** (-exponent)


def ula_steering(n_elements, azimuth_rad):
    r"""Half-wavelength ULA steering vector a_k = e^{j \pi k \sin(azimuth)}."""
    k = np.arange(n_elements)
    return np.exp(1j * np.pi * k * np.sin(azimuth_rad))


def gen_rayleigh(shape, variance_scale, rng):
    """Circularly symmetric complex Gaussian entries, E|x|^2 = variance_scale."""
    if variance_scale < 0:
        raise ValueError("variance_scale must be nonnegative")
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return np.sqrt(variance_scale / 2.0) * (re + 1j * im)


def gen_rician(shape, los_fraction, variance_scale, rng, los):
    """LoS/NLoS mixture with total average power variance_scale per entry.

    los must be unit-modulus per entry and of the requested shape; the
    los_fraction is the share of power carried by the deterministic part.
    """
    los = np.asarray(los, dtype=complex)
    if los.shape != tuple(np.atleast_1d(shape)):
        raise ValueError(f"los shape {los.shape} does not match {shape}")
    if not 0.0 <= los_fraction < 1.0:
        raise ValueError(f"los_fraction {los_fraction} outside [0, 1)")
    nlos = gen_rayleigh(shape, 1.0, rng)
    mix = np.sqrt(los_fraction) * los + np.sqrt(1.0 - los_fraction) * nlos
    return np.sqrt(variance_scale) * mix


def gen_channel_set(geometry, fading, params, seed):
    """Draw all three links for one trial seed.

    params only contributes the dimensions (n_r receive antennas, n RIS
    elements). Each link consumes its own substream of the seed, so e.g.
    regenerating only h_r gives the same values as a full regeneration.
    """
    n_r, n = params.n_r, params.n

    pl_direct = path_loss(
        geometry.distance("user", "bs"), fading.alpha_direct, fading.beta0_db
    )
    pl_user_ris = path_loss(
        geometry.distance("user", "ris"), fading.alpha_user_ris, fading.beta0_db
    )
    pl_ris_bs = path_loss(
        geometry.distance("ris", "bs"), fading.alpha_ris_bs, fading.beta0_db
    )

    h_d = gen_rayleigh(n_r, pl_direct, substream(seed, "h_d"))

    frac = fading.los_fraction()
    los_hr = ula_steering(n, geometry.azimuth("ris", "user"))
    h_r = gen_rician(n, frac, pl_user_ris, substream(seed, "h_r"), los_hr)

    los_g = np.outer(
        ula_steering(n, geometry.azimuth("ris", "bs")),
        ula_steering(n_r, geometry.azimuth("bs", "ris")).conj(),
    )
    g = gen_rician((n, n_r), frac, pl_ris_bs, substream(seed, "g"), los_g)

    return ChannelSet(h_d=h_d, h_r=h_r, g=g, seed=int(seed))


_MAGIC = b"HRCH"
_VERSION = 1


def save_channel_set(channels, path):
    """Write a channel set to the binary interchange format.

    Layout (little-endian): magic, version u32, n_r u32, n u32, seed i64,
    then h_d, h_r, and g (row-major) as interleaved re/im float64 pairs.
    """
    n_r = channels.h_d.size
    n = channels.h_r.size
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<IIIq", _VERSION, n_r, n, channels.seed))
        for arr in (channels.h_d, channels.h_r, channels.g):
            flat = np.ascontiguousarray(arr).reshape(-1)
            inter = np.empty(2 * flat.size, dtype="<f8")
            inter[0::2] = flat.real
            inter[1::2] = flat.imag
            f.write(inter.tobytes())


def load_channel_set(path):
    """Read a channel set written by save_channel_set. Exact round trip."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _MAGIC:
            raise ValueError(f"not a channel interchange file: {magic!r}")
        version, n_r, n, seed = struct.unpack("<IIIq", f.read(20))
        if version != _VERSION:
            raise ValueError(f"unsupported interchange version {version}")

        def read_complex(count):
            raw = np.frombuffer(f.read(16 * count), dtype="<f8")
            if raw.size != 2 * count:
                raise ValueError("truncated channel interchange file")
            return raw[0::2] + 1j * raw[1::2]

        h_d = read_complex(n_r)
        h_r = read_complex(n)
        g = read_complex(n * n_r).reshape(n, n_r)
    return ChannelSet(h_d=h_d, h_r=h_r, g=g, seed=seed)
