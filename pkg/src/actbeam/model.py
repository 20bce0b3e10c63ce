"""Problem data for joint base-station activation and coordinated beamforming.

A network instance collects everything the solvers need: complex downlink
channels from every BS antenna to every single-antenna user, per-user SINR
targets, per-BS transmit-power caps and incremental active-mode
implementation powers.  Instances are immutable after construction and safe
to share across threads.

Activation vectors are plain int arrays with entries in {0, 1}, one per BS;
``as_activation`` validates and normalizes them.

Units: powers in watts, SINR targets linear, channels dimensionless linear
amplitude gains.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "PowerModel",
    "HexNetConfig",
    "NetworkInstance",
    "BeamformingSolution",
    "dbm_to_watts",
    "watts_to_dbm",
    "as_activation",
    "activation_bits",
    "generate_hexnet",
    "eval_sinr",
    "total_power",
    "load_instance",
    "save_instance",
]


def dbm_to_watts(x_dbm: float) -> float:
    """10^((x - 30)/10); e.g. 30 dBm -> 1 W, 43 dBm -> 19.953 W."""
    return 10.0 ** ((x_dbm - 30.0) / 10.0)


def watts_to_dbm(p_watts: float) -> float:
    """Exact inverse of :func:`dbm_to_watts` (requires p > 0)."""
    if p_watts <= 0:
        raise ValueError("watts_to_dbm requires a positive power")
    return 10.0 * np.log10(p_watts) + 30.0


@dataclass(frozen=True)
class PowerModel:
    """Per-BS power consumption model.

    An active BS draws ``p_active + p_tx / amp_efficiency`` watts, a sleeping
    BS draws ``p_sleep``.  After dropping the constant sleep-power floor and
    rescaling by the amplifier efficiency, the quantity that enters the
    optimization objective per active BS is

        incremental_power = (p_active - p_sleep) * amp_efficiency.

    Defaults (6.8 W active, 4.3 W sleep, 25% amplifier, 43 dBm cap) give
    an incremental power of 0.625.
    """

    p_active: float = 6.8
    p_sleep: float = 4.3
    amp_efficiency: float = 0.25
    p_max_dbm: float = 43.0

    def __post_init__(self):
        if not (self.p_active >= self.p_sleep >= 0.0):
            raise ValueError("power model requires p_active >= p_sleep >= 0")
        if not (0.0 < self.amp_efficiency <= 1.0):
            raise ValueError("amplifier efficiency must lie in (0, 1]")

    @property
    def incremental_power(self) -> float:
        return (self.p_active - self.p_sleep) * self.amp_efficiency

    @property
    def p_max_watts(self) -> float:
        return dbm_to_watts(self.p_max_dbm)


@dataclass(frozen=True)
class HexNetConfig:
    """Scenario parameters for the hexagonal-layout generator.

    Path loss at distance d km is ``pathloss_const + pathloss_slope*log10(d)``
    dB, the antenna gain applies per BS-user link, and log-normal shadowing
    has the given standard deviation in dB (zero mean).  A minimum BS-user
    distance keeps the path-loss formula away from its d -> 0 singularity.
    """

    cell_radius_km: float = 1.0
    pathloss_const_db: float = 148.1
    pathloss_slope_db: float = 37.6
    antenna_gain_dbi: float = 9.0
    shadowing_std_db: float = 8.0
    noise_dbm: float = -143.0
    min_distance_km: float = 0.01
    n_bs: int = 7
    antennas_per_bs: int = 2
    n_cells: int = 1
    sinr_target_db: float = 5.0
    power: PowerModel = field(default_factory=PowerModel)

    def __post_init__(self):
        if not (1 <= self.n_bs <= 7):
            raise ValueError("generator supports 1..7 hexagonal cell centers")
        if self.antennas_per_bs < 1:
            raise ValueError("each BS needs at least one antenna")
        if not (1 <= self.n_cells <= self.n_bs):
            raise ValueError("n_cells must lie in 1..n_bs")


# Canonical instance-file field set; the reader rejects anything else.
_INSTANCE_FIELDS = (
    "L", "K", "N", "gamma", "sigma2", "P", "pi",
    "cell_of_bs", "cell_of_user", "h",
)


@dataclass(frozen=True)
class NetworkInstance:
    """The full problem datum.

    ``H[k]`` is user k's channel stacked across all BS antennas (length
    ``sum(N)``), so BS l's coefficients occupy ``block(l)``.  All arrays are
    frozen read-only on construction.
    """

    L: int
    K: int
    N: np.ndarray            # antennas per BS, shape (L,)
    H: np.ndarray            # complex, shape (K, sum(N))
    gamma: np.ndarray        # linear SINR targets, shape (K,)
    sigma2: np.ndarray       # noise powers in watts, shape (K,)
    P: np.ndarray            # per-BS power caps in watts, shape (L,)
    pi: np.ndarray           # incremental implementation powers, shape (L,)
    cell_of_bs: np.ndarray   # int, shape (L,)
    cell_of_user: np.ndarray # int, shape (K,)

    def __post_init__(self):
        # freeze private copies so instances never alias caller-owned arrays
        object.__setattr__(self, "N", np.array(self.N, dtype=np.int64))
        object.__setattr__(self, "H", np.array(self.H, dtype=np.complex128))
        for name in ("gamma", "sigma2", "P", "pi"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=np.float64))
        for name in ("cell_of_bs", "cell_of_user"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=np.int64))
        self._validate()
        for name in ("N", "H", "gamma", "sigma2", "P", "pi", "cell_of_bs", "cell_of_user"):
            getattr(self, name).setflags(write=False)

    def _validate(self):
        if self.L < 1 or self.K < 1:
            raise ValueError("need at least one BS and one user")
        if self.N.shape != (self.L,) or (self.N < 1).any():
            raise ValueError("N must hold one positive antenna count per BS")
        ntot = int(self.N.sum())
        if self.H.shape != (self.K, ntot):
            raise ValueError(f"H must have shape ({self.K}, {ntot}), got {self.H.shape}")
        if self.gamma.shape != (self.K,) or (self.gamma <= 0).any():
            raise ValueError("gamma must be positive, one target per user")
        if self.sigma2.shape != (self.K,) or (self.sigma2 <= 0).any():
            raise ValueError("sigma2 must be positive, one noise power per user")
        if self.P.shape != (self.L,) or (self.P <= 0).any():
            raise ValueError("P must be positive, one cap per BS")
        if self.pi.shape != (self.L,) or (self.pi < 0).any():
            raise ValueError("pi must be nonnegative, one value per BS")
        if self.cell_of_bs.shape != (self.L,) or self.cell_of_user.shape != (self.K,):
            raise ValueError("cell maps must cover every BS and user")

    @property
    def n_antennas(self) -> int:
        return int(self.N.sum())

    @property
    def block_starts(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.N)])

    def block(self, l: int) -> slice:
        """Antenna index range of BS l within a stacked vector."""
        starts = self.block_starts
        return slice(int(starts[l]), int(starts[l + 1]))

    def channel(self, l: int, k: int) -> np.ndarray:
        """Channel vector from BS l to user k, length N[l]."""
        return self.H[k, self.block(l)]

    def with_sinr_targets(self, gamma) -> "NetworkInstance":
        """Copy with replaced SINR targets (scalar broadcast allowed)."""
        g = np.broadcast_to(np.asarray(gamma, dtype=np.float64), (self.K,)).copy()
        return replace(self, gamma=g)

    def restrict_bs(self, keep) -> "NetworkInstance":
        """Sub-instance over a subset of BSs (antenna columns sliced out)."""
        keep = list(keep)
        cols = np.concatenate([np.arange(self.block(l).start, self.block(l).stop) for l in keep])
        return NetworkInstance(
            L=len(keep), K=self.K, N=self.N[keep], H=self.H[:, cols],
            gamma=self.gamma, sigma2=self.sigma2, P=self.P[keep], pi=self.pi[keep],
            cell_of_bs=self.cell_of_bs[keep], cell_of_user=self.cell_of_user,
        )


def as_activation(a, L: int) -> np.ndarray:
    """Validate an on/off pattern: length L with entries in {0, 1}."""
    arr = np.asarray(a, dtype=np.int64)
    if arr.shape != (L,):
        raise ValueError(f"activation must have length {L}, got shape {arr.shape}")
    if not np.isin(arr, (0, 1)).all():
        raise ValueError("activation entries must be 0 or 1")
    return arr


def activation_bits(a) -> str:
    """Render an activation as a bitstring, BS 0 leftmost."""
    return "".join(str(int(x)) for x in a)


@dataclass(frozen=True)
class BeamformingSolution:
    """Stacked beamformers plus the bookkeeping the solvers report.

    ``w[k]`` is user k's beamformer across all BS antennas; blocks of
    inactive BSs are exactly zero.  ``tx_power[l]`` is BS l's transmit power
    sum_k ||w_k restricted to block l||^2 and ``objective`` the total
    sum_k ||w_k||^2 + a'pi.
    """

    activation: np.ndarray
    w: np.ndarray            # complex, shape (K, sum(N))
    tx_power: np.ndarray     # watts, shape (L,)
    objective: float

    def __post_init__(self):
        for name in ("activation", "w", "tx_power"):
            arr = np.array(getattr(self, name))
            object.__setattr__(self, name, arr)
            arr.setflags(write=False)

    @classmethod
    def from_beams(cls, inst: NetworkInstance, activation, W,
                   zero_mask: np.ndarray | None = None) -> "BeamformingSolution":
        """Build from raw beamformers, hard-zeroing inactive (and masked) blocks."""
        a = as_activation(activation, inst.L)
        W = np.array(W, dtype=np.complex128, copy=True)
        if W.shape != (inst.K, inst.n_antennas):
            raise ValueError("beamformer matrix shape mismatch")
        for l in range(inst.L):
            if a[l] == 0:
                W[:, inst.block(l)] = 0.0
        if zero_mask is not None:
            W[zero_mask] = 0.0
        tx = np.array([np.sum(np.abs(W[:, inst.block(l)]) ** 2) for l in range(inst.L)])
        obj = float(tx.sum() + a @ inst.pi)
        return cls(activation=a, w=W, tx_power=tx, objective=obj)


def eval_sinr(inst: NetworkInstance, sol: BeamformingSolution, k: int) -> float:
    """Achieved SINR of user k: |h_k' w_k|^2 / (sum_{i!=k} |h_k' w_i|^2 + sigma_k^2)."""
    W = np.asarray(sol.w if isinstance(sol, BeamformingSolution) else sol)
    if W.shape != (inst.K, inst.n_antennas):
        raise ValueError("solution dimensions do not match the instance")
    rx = inst.H[k].conj() @ W.T          # h_k^H w_i for every i
    sig = abs(rx[k]) ** 2
    interf = float(np.sum(np.abs(rx) ** 2) - sig)
    return sig / (interf + float(inst.sigma2[k]))


def total_power(inst: NetworkInstance, sol: BeamformingSolution) -> float:
    """Total consumed power sum_k ||w_k||^2 + a'pi, recomputed from the beams."""
    W = np.asarray(sol.w)
    if W.shape != (inst.K, inst.n_antennas):
        raise ValueError("solution dimensions do not match the instance")
    return float(np.sum(np.abs(W) ** 2) + as_activation(sol.activation, inst.L) @ inst.pi)


# ---------------------------------------------------------------------------
# Hexagonal-layout instance generation
# ---------------------------------------------------------------------------

_HEX_SLAB_NORMALS = np.array(
    [[np.cos(t), np.sin(t)] for t in (0.0, np.pi / 3, 2 * np.pi / 3)]
)


def hex_centers(n_bs: int, radius_km: float) -> np.ndarray:
    """Centers of up to 7 tiling hexagons: origin plus a ring at sqrt(3)*R."""
    pts = [(0.0, 0.0)]
    ring = np.sqrt(3.0) * radius_km
    for i in range(6):
        t = i * np.pi / 3.0
        pts.append((ring * np.cos(t), ring * np.sin(t)))
    return np.array(pts[:n_bs])


def _in_any_hexagon(p: np.ndarray, centers: np.ndarray, radius_km: float) -> bool:
    # pointy-top hexagon = intersection of three slabs of half-width sqrt(3)R/2
    half = np.sqrt(3.0) * radius_km / 2.0
    d = p[None, :] - centers                      # (C, 2)
    proj = np.abs(d @ _HEX_SLAB_NORMALS.T)        # (C, 3)
    return bool((proj <= half + 1e-12).all(axis=1).any())


def _assign_cells(config: HexNetConfig, centers: np.ndarray,
                  users: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Partition BSs into n_cells angular sectors; users join the nearest BS's cell."""
    M = config.n_cells
    if M == 1:
        return np.zeros(len(centers), dtype=np.int64), np.zeros(len(users), dtype=np.int64)
    cell_of_bs = np.zeros(len(centers), dtype=np.int64)
    for l in range(1, len(centers)):
        ang = np.arctan2(centers[l, 1], centers[l, 0]) % (2 * np.pi)
        cell_of_bs[l] = int(ang / (2 * np.pi) * (M - 1)) % (M - 1) + 1 if M > 1 else 0
    # collapse to a contiguous 0..M-1 labeling with the center BS in cell 0
    uniq = {c: i for i, c in enumerate(sorted(set(cell_of_bs.tolist())))}
    cell_of_bs = np.array([uniq[c] for c in cell_of_bs], dtype=np.int64)
    d2 = ((users[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    cell_of_user = cell_of_bs[np.argmin(d2, axis=1)]
    return cell_of_bs, cell_of_user


def generate_hexnet(seed: int, K: int, config: HexNetConfig | None = None) -> NetworkInstance:
    """Draw a seeded instance on the hexagonal layout.

    BSs sit at the hexagonal cell centers with ``antennas_per_bs`` antennas
    each; users are placed uniformly over the union of the cells (rejection
    sampling).  Channel amplitude per antenna is

        sqrt(pathloss * gain * shadowing) * h_tilde,

    composed in dB as -PL(d) + gain + shadow and converted with 10^(dB/20),
    with h_tilde circularly-symmetric complex Gaussian of unit variance.
    Deterministic for a fixed (seed, config): PCG64 stream, fixed draw order.
    """
    if K < 1:
        raise ValueError("need at least one user")
    cfg = config or HexNetConfig()
    rng = np.random.default_rng(seed)
    centers = hex_centers(cfg.n_bs, cfg.cell_radius_km)
    L = cfg.n_bs
    N = np.full(L, cfg.antennas_per_bs, dtype=np.int64)
    ntot = int(N.sum())

    # user drop: rejection sampling over the bounding box of the hex union
    lim = (np.sqrt(3.0) + 1.0) * cfg.cell_radius_km
    users = np.empty((K, 2))
    placed = 0
    while placed < K:
        p = rng.uniform(-lim, lim, size=2)
        if _in_any_hexagon(p, centers, cfg.cell_radius_km):
            users[placed] = p
            placed += 1

    shadow_db = rng.normal(0.0, cfg.shadowing_std_db, size=(L, K))
    fading = (rng.standard_normal((K, ntot)) + 1j * rng.standard_normal((K, ntot))) / np.sqrt(2.0)

    H = np.zeros((K, ntot), dtype=np.complex128)
    starts = np.concatenate([[0], np.cumsum(N)])
    for l in range(L):
        d = np.maximum(
            np.sqrt(((users - centers[l]) ** 2).sum(axis=1)), cfg.min_distance_km
        )
        pl_db = cfg.pathloss_const_db + cfg.pathloss_slope_db * np.log10(d)
        gain_db = -pl_db + cfg.antenna_gain_dbi + shadow_db[l]
        amp = 10.0 ** (gain_db / 20.0)
        H[:, starts[l]:starts[l + 1]] = fading[:, starts[l]:starts[l + 1]] * amp[:, None]

    cell_of_bs, cell_of_user = _assign_cells(cfg, centers, users)
    return NetworkInstance(
        L=L, K=K, N=N, H=H,
        gamma=np.full(K, 10.0 ** (cfg.sinr_target_db / 10.0)),
        sigma2=np.full(K, dbm_to_watts(cfg.noise_dbm)),
        P=np.full(L, cfg.power.p_max_watts),
        pi=np.full(L, cfg.power.incremental_power),
        cell_of_bs=cell_of_bs, cell_of_user=cell_of_user,
    )


# ---------------------------------------------------------------------------
# Instance files: UTF-8 JSON, complex numbers as [re, im] pairs, channels
# listed per (l, k) pair in l-major order.
# ---------------------------------------------------------------------------

def _h_to_lists(inst: NetworkInstance) -> list:
    out = []
    for l in range(inst.L):
        for k in range(inst.K):
            vec = inst.channel(l, k)
            out.append([[float(c.real), float(c.imag)] for c in vec])
    return out


def instance_to_dict(inst: NetworkInstance) -> dict:
    return {
        "L": inst.L,
        "K": inst.K,
        "N": inst.N.tolist(),
        "gamma": inst.gamma.tolist(),
        "sigma2": inst.sigma2.tolist(),
        "P": inst.P.tolist(),
        "pi": inst.pi.tolist(),
        "cell_of_bs": inst.cell_of_bs.tolist(),
        "cell_of_user": inst.cell_of_user.tolist(),
        "h": _h_to_lists(inst),
    }


def instance_from_dict(data: dict) -> NetworkInstance:
    unknown = set(data) - set(_INSTANCE_FIELDS)
    if unknown:
        raise ValueError(f"unknown instance fields: {sorted(unknown)}")
    missing = set(_INSTANCE_FIELDS) - set(data)
    if missing:
        raise ValueError(f"missing instance fields: {sorted(missing)}")
    L, K = int(data["L"]), int(data["K"])
    N = np.asarray(data["N"], dtype=np.int64)
    if N.shape != (L,):
        raise ValueError("N must list one antenna count per BS")
    ntot = int(N.sum())
    h = data["h"]
    if len(h) != L * K:
        raise ValueError(f"h must hold {L * K} per-(BS, user) vectors, got {len(h)}")
    H = np.zeros((K, ntot), dtype=np.complex128)
    starts = np.concatenate([[0], np.cumsum(N)])
    for l in range(L):
        for k in range(K):
            vec = h[l * K + k]
            if len(vec) != N[l]:
                raise ValueError(f"h entry for (BS {l}, user {k}) must have {N[l]} antennas")
            H[k, starts[l]:starts[l + 1]] = [complex(re, im) for re, im in vec]
    return NetworkInstance(
        L=L, K=K, N=N, H=H,
        gamma=data["gamma"], sigma2=data["sigma2"], P=data["P"], pi=data["pi"],
        cell_of_bs=data["cell_of_bs"], cell_of_user=data["cell_of_user"],
    )


def save_instance(inst: NetworkInstance, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(instance_to_dict(inst), f, indent=1)
        f.write("\n")


def load_instance(path) -> NetworkInstance:
    with open(path, "r", encoding="utf-8") as f:
        return instance_from_dict(json.load(f))
