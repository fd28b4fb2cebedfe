"""Simulated mixed-signal spiking substrate.

Models the hardware constraints that shape the readout problem: per-neuron
parameter mismatch (lognormal multipliers), quantized fixed connectivity
(8 state-input edges per neuron, 1..4 parallel unit connections each), one
shared synaptic efficacy per core of 256 neurons, and a windowed spike-count
readout whose dynamic state persists from window to window.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .encoding import (
    PopulationCodeConfig,
    SpikeTrain,
    count_events,
    encode_action,
    encode_state,
    rates_to_trains,
)
from .pong import PongAction, PongEnv, PongPhysics

CORE_SIZE = 256
N_CORES_AVAILABLE = 2
CORE_CAPACITY = N_CORES_AVAILABLE * CORE_SIZE
STATE_FAN_IN = 8
N_ACTION_GENERATORS = 3
MAX_FAN_IN = 64
PARALLEL_MAX = 4

# Field ids for the binary dump records (little-endian: neuron u32, id u8, value f64).
DUMP_FIELD_TAU_MEM_FACTOR = 0
DUMP_FIELD_TAU_SYN_FACTOR = 1
DUMP_FIELD_V_THRESH_FACTOR = 2
DUMP_FIELD_EDGE_PRE = 3
DUMP_FIELD_EDGE_PARALLEL = 4
_DUMP_RECORD = struct.Struct("<IBd")


@dataclass(frozen=True)
class NeuronParams:
    """Shared base parameters; mismatch multiplies per-neuron copies at build time."""

    tau_mem_s: float = 0.020
    tau_syn_s: float = 0.010
    v_thresh: float = 1.0
    v_reset: float = 0.0
    refractory_s: float = 0.001
    core_efficacy: float = 1.0

    def __post_init__(self) -> None:
        if not (self.tau_mem_s > 0.0 and self.tau_syn_s > 0.0):
            raise ValueError("time constants must be positive")
        if not self.v_thresh > self.v_reset:
            raise ValueError("v_thresh must exceed v_reset")
        if self.refractory_s < 0.0:
            raise ValueError("refractory must be >= 0")
        if not self.core_efficacy >= 0.0:
            raise ValueError("core_efficacy must be >= 0")


@dataclass(frozen=True)
class SubstrateConfig:
    variant: str = "agent"  # "agent" or "model" (model adds 3 action generators)
    n_neurons: int = 510
    n_state_generators: int = 40
    mismatch_cv: float = 0.2
    sim_dt_us: float = 100.0
    reset_each_window: bool = False
    base_params: NeuronParams = field(default_factory=NeuronParams)

    def __post_init__(self) -> None:
        if self.variant not in ("agent", "model"):
            raise ValueError("variant must be 'agent' or 'model'")
        if not 1 <= self.n_neurons <= CORE_CAPACITY:
            raise ValueError(f"n_neurons must be in [1, {CORE_CAPACITY}]")
        if self.n_state_generators < STATE_FAN_IN:
            raise ValueError(f"need at least {STATE_FAN_IN} state generators to sample from")
        if self.mismatch_cv < 0.0:
            raise ValueError("mismatch_cv must be >= 0")
        if not self.sim_dt_us > 0.0:
            raise ValueError("sim_dt_us must be > 0")

    @property
    def n_generators(self) -> int:
        extra = N_ACTION_GENERATORS if self.variant == "model" else 0
        return self.n_state_generators + extra

    @property
    def fan_in(self) -> int:
        return STATE_FAN_IN + (N_ACTION_GENERATORS if self.variant == "model" else 0)


@dataclass(frozen=True)
class Connectivity:
    """Edge list: pre generator id, post neuron id, parallel count in 1..4."""

    pre: np.ndarray
    post: np.ndarray
    parallel: np.ndarray

    @property
    def n_edges(self) -> int:
        return self.pre.size


class Substrate:
    """One spiking network with fixed structure and persistent dynamic state.

    Not thread-safe: run_window mutates membrane state in place. A separate
    shadow state drives the fine-step reference integrator so both tracks can
    be stepped side by side through the same stimulus history.
    """

    def __init__(
        self,
        config: SubstrateConfig,
        connectivity: Connectivity,
        tau_mem_factors: np.ndarray,
        tau_syn_factors: np.ndarray,
        v_thresh_factors: np.ndarray,
    ) -> None:
        n = config.n_neurons
        base = config.base_params
        fan_in = np.bincount(connectivity.post, minlength=n)
        if np.any(fan_in > MAX_FAN_IN):
            raise ValueError(f"fan-in exceeds the hardware maximum of {MAX_FAN_IN}")
        if np.any(connectivity.parallel < 1) or np.any(connectivity.parallel > PARALLEL_MAX):
            raise ValueError(f"parallel counts must be in 1..{PARALLEL_MAX}")
        if np.any(connectivity.pre < 0) or np.any(connectivity.pre >= config.n_generators):
            raise ValueError("edge references an unknown generator")

        self.config = config
        self.connectivity = connectivity
        self.tau_mem_factors = np.asarray(tau_mem_factors, dtype=np.float64)
        self.tau_syn_factors = np.asarray(tau_syn_factors, dtype=np.float64)
        self.v_thresh_factors = np.asarray(v_thresh_factors, dtype=np.float64)
        self.tau_mem_s = base.tau_mem_s * self.tau_mem_factors
        self.tau_syn_s = base.tau_syn_s * self.tau_syn_factors
        self.v_thresh = base.v_thresh * self.v_thresh_factors
        self.v_reset = base.v_reset
        self.refractory_us = base.refractory_s * 1e6

        self.core_index = np.arange(n, dtype=np.int64) // CORE_SIZE
        self.n_cores = int(self.core_index[-1]) + 1
        self.core_efficacy = np.full(self.n_cores, base.core_efficacy, dtype=np.float64)

        # Generator-major adjacency (CSR) so arriving events walk contiguous edges.
        order = np.argsort(connectivity.pre, kind="stable")
        self._edge_post = connectivity.post[order].astype(np.int64)
        self._edge_parallel = connectivity.parallel[order].astype(np.float64)
        counts = np.bincount(connectivity.pre, minlength=config.n_generators)
        self._gen_ptr = np.zeros(config.n_generators + 1, dtype=np.int64)
        np.cumsum(counts, out=self._gen_ptr[1:])

        dt_s = config.sim_dt_us * 1e-6
        self._decay_mem = np.exp(-dt_s / self.tau_mem_s)
        self._decay_syn = np.exp(-dt_s / self.tau_syn_s)

        self._weights_cache: np.ndarray | None = None
        self.v = np.zeros(n, dtype=np.float64)
        self.i_syn = np.zeros(n, dtype=np.float64)
        self.refr_us = np.zeros(n, dtype=np.float64)
        self._ref_v = np.zeros(n, dtype=np.float64)
        self._ref_i = np.zeros(n, dtype=np.float64)
        self._ref_refr = np.zeros(n, dtype=np.float64)

    @property
    def n_neurons(self) -> int:
        return self.config.n_neurons

    @property
    def n_generators(self) -> int:
        return self.config.n_generators

    def reset_state(self) -> None:
        """Zero membrane, synapse, and refractory state on both integrator tracks."""
        for arr in (self.v, self.i_syn, self.refr_us, self._ref_v, self._ref_i, self._ref_refr):
            arr.fill(0.0)

    def set_core_efficacy(self, value) -> None:
        """Set the shared per-core efficacy; a scalar applies to every core."""
        value = np.asarray(value, dtype=np.float64)
        if value.ndim == 0:
            self.core_efficacy.fill(float(value))
        elif value.shape == (self.n_cores,):
            self.core_efficacy[:] = value
        else:
            raise ValueError(f"expected a scalar or {self.n_cores} per-core values")
        self._weights_cache = None

    def edge_weights(self) -> np.ndarray:
        """Per-edge charge: parallel count times the post neuron's core efficacy."""
        if self._weights_cache is None:
            eff = self.core_efficacy[self.core_index[self._edge_post]]
            self._weights_cache = self._edge_parallel * eff
        return self._weights_cache


@njit(cache=True)
def _lif_window(
    v,
    i_syn,
    refr_us,
    counts,
    spike_bins,
    spike_gens,
    gen_ptr,
    edge_post,
    edge_weight,
    n_steps,
    decay_mem,
    decay_syn,
    dt_s,
    dt_us,
    v_thresh,
    v_reset,
    refractory_us,
):
    n = v.shape[0]
    m = spike_bins.shape[0]
    ptr = 0
    for step in range(n_steps):
        for j in range(n):
            i_syn[j] *= decay_syn[j]
        while ptr < m and spike_bins[ptr] == step:
            g = spike_gens[ptr]
            for e in range(gen_ptr[g], gen_ptr[g + 1]):
                i_syn[edge_post[e]] += edge_weight[e]
            ptr += 1
        for j in range(n):
            if refr_us[j] > 0.0:
                # Decrement first so the dead time is exactly refractory_us at any dt.
                refr_us[j] -= dt_us
                if refr_us[j] > 0.0:
                    continue
            vj = v[j] * decay_mem[j] + i_syn[j] * dt_s
            if vj >= v_thresh[j]:
                counts[j] += 1
                v[j] = v_reset
                refr_us[j] = refractory_us
            else:
                v[j] = vj


def _bin_events(
    substrate: Substrate, trains: list[SpikeTrain], window_us: float, dt_us: float
) -> tuple[np.ndarray, np.ndarray, int]:
    steps = window_us / dt_us
    n_steps = int(round(steps))
    if n_steps < 1 or abs(steps - n_steps) > 1e-9:
        raise ValueError("window_us must be a positive integer multiple of the step size")
    ts_parts: list[np.ndarray] = []
    gid_parts: list[np.ndarray] = []
    for train in trains:
        gid = train.generator_id
        if not 0 <= gid < substrate.n_generators:
            raise ValueError(f"unknown generator id {gid}")
        ts = np.asarray(train.timestamps_us, dtype=np.float64)
        if ts.size == 0:
            continue
        if ts[0] < 0.0 or ts[-1] >= window_us:
            raise ValueError("spike timestamps must lie in [0, window_us)")
        ts_parts.append(ts)
        gid_parts.append(np.full(ts.size, gid, dtype=np.int64))
    if not ts_parts:
        return (
            np.empty(0, dtype=np.int64),
            np.empty(0, dtype=np.int64),
            n_steps,
        )
    bins = (np.concatenate(ts_parts) / dt_us).astype(np.int64)
    gens = np.concatenate(gid_parts)
    order = np.argsort(bins, kind="stable")
    return bins[order], gens[order], n_steps


def run_window(substrate: Substrate, trains: list[SpikeTrain], window_us: float) -> np.ndarray:
    """Integrate one readout window; returns per-neuron emitted spike counts.

    Dynamic state persists across calls, so consecutive windows form one
    continuous trace, unless config.reset_each_window asks for a reset.
    """
    if substrate.config.reset_each_window:
        substrate.reset_state()
    dt_us = substrate.config.sim_dt_us
    bins, gens, n_steps = _bin_events(substrate, trains, window_us, dt_us)
    counts = np.zeros(substrate.n_neurons, dtype=np.int64)
    _lif_window(
        substrate.v,
        substrate.i_syn,
        substrate.refr_us,
        counts,
        bins,
        gens,
        substrate._gen_ptr,
        substrate._edge_post,
        substrate.edge_weights(),
        n_steps,
        substrate._decay_mem,
        substrate._decay_syn,
        dt_us * 1e-6,
        dt_us,
        substrate.v_thresh,
        substrate.v_reset,
        substrate.refractory_us,
    )
    return counts


def reference_run_window(
    substrate: Substrate, trains: list[SpikeTrain], window_us: float, fine_dt_us: float
) -> np.ndarray:
    """Same dynamics on the shadow state at a finer step (oracle for tests)."""
    if not fine_dt_us <= substrate.config.sim_dt_us / 10.0:
        raise ValueError("fine_dt_us must be at most sim_dt_us / 10")
    if substrate.config.reset_each_window:
        substrate.reset_state()
    bins, gens, n_steps = _bin_events(substrate, trains, window_us, fine_dt_us)
    counts = np.zeros(substrate.n_neurons, dtype=np.int64)
    dt_s = fine_dt_us * 1e-6
    _lif_window(
        substrate._ref_v,
        substrate._ref_i,
        substrate._ref_refr,
        counts,
        bins,
        gens,
        substrate._gen_ptr,
        substrate._edge_post,
        substrate.edge_weights(),
        n_steps,
        np.exp(-dt_s / substrate.tau_mem_s),
        np.exp(-dt_s / substrate.tau_syn_s),
        dt_s,
        fine_dt_us,
        substrate.v_thresh,
        substrate.v_reset,
        substrate.refractory_us,
    )
    return counts


def _mismatch_factors(rng: np.random.Generator, n: int, cv: float) -> np.ndarray:
    """Lognormal multipliers with mean exactly 1 and the given coefficient of variation."""
    if cv == 0.0:
        return np.ones(n, dtype=np.float64)
    sigma_ln = math.sqrt(math.log1p(cv * cv))
    mu_ln = -0.5 * sigma_ln * sigma_ln
    return np.exp(rng.normal(mu_ln, sigma_ln, size=n))


def build_substrate(config: SubstrateConfig, seed) -> Substrate:
    """Draw connectivity and mismatch from the seed; returns a zero-state substrate.

    seed may be an integer or a numpy Generator (the trainer passes a
    dedicated stream so ablations can share substrates).
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = config.n_neurons
    if config.fan_in > MAX_FAN_IN:
        raise ValueError(f"fan-in {config.fan_in} exceeds the hardware maximum of {MAX_FAN_IN}")

    pre = np.empty((n, STATE_FAN_IN), dtype=np.int64)
    for j in range(n):
        pre[j] = rng.choice(config.n_state_generators, size=STATE_FAN_IN, replace=False)
    parallel = rng.integers(1, PARALLEL_MAX + 1, size=(n, STATE_FAN_IN), dtype=np.int64)
    post = np.repeat(np.arange(n, dtype=np.int64), STATE_FAN_IN)
    pre_flat = pre.reshape(-1)
    par_flat = parallel.reshape(-1)

    if config.variant == "model":
        # Every action generator feeds every neuron.
        action_ids = config.n_state_generators + np.arange(N_ACTION_GENERATORS, dtype=np.int64)
        a_pre = np.tile(action_ids, n)
        a_post = np.repeat(np.arange(n, dtype=np.int64), N_ACTION_GENERATORS)
        a_par = rng.integers(1, PARALLEL_MAX + 1, size=n * N_ACTION_GENERATORS, dtype=np.int64)
        pre_flat = np.concatenate([pre_flat, a_pre])
        post = np.concatenate([post, a_post])
        par_flat = np.concatenate([par_flat, a_par])

    conn = Connectivity(pre_flat, post, par_flat)
    tau_mem_f = _mismatch_factors(rng, n, config.mismatch_cv)
    tau_syn_f = _mismatch_factors(rng, n, config.mismatch_cv)
    v_thresh_f = _mismatch_factors(rng, n, config.mismatch_cv)
    return Substrate(config, conn, tau_mem_f, tau_syn_f, v_thresh_f)


def integration_factor(out_counts: np.ndarray, in_event_count: int) -> float:
    """Total emitted spikes divided by total input events (one probe period)."""
    if in_event_count <= 0:
        raise ValueError("in_event_count must be positive")
    return float(np.sum(out_counts)) / float(in_event_count)


@dataclass(frozen=True)
class CalibrationConfig:
    target_lo: float = 0.45
    target_hi: float = 0.58
    probe_games: int = 1
    probe_frames_per_game: int = 100
    max_steps: int = 40
    initial_efficacy: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.target_lo < self.target_hi <= 1.0:
            raise ValueError("target band must satisfy 0 < lo < hi <= 1")
        if self.probe_games < 1 or self.probe_frames_per_game < 1:
            raise ValueError("probe sizes must be >= 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not self.initial_efficacy > 0.0:
            raise ValueError("initial_efficacy must be > 0")


@dataclass(frozen=True)
class CalibrationResult:
    core_efficacy: float
    factor: float
    probes: int
    history: tuple[tuple[float, float], ...]


class CalibrationError(RuntimeError):
    """Raised when bisection cannot land the integration factor in the band."""

    def __init__(self, message: str, history=()):
        super().__init__(message)
        self.history = tuple(history)

    def trace(self) -> str:
        lines = [f"  probe {i}: efficacy={w:.6g} factor={f:.6g}" for i, (w, f) in enumerate(self.history)]
        return "\n".join(lines) if lines else "  (no probes recorded)"


def make_probe_windows(
    encoding_cfg: PopulationCodeConfig,
    physics: PongPhysics,
    variant: str,
    rng: np.random.Generator,
    games: int = 1,
    frames_per_game: int = 100,
) -> tuple[list[list[SpikeTrain]], int]:
    """Fixed calibration stimulus: encoded random-action environment rollouts."""
    env = PongEnv(physics, frames_per_game=frames_per_game)
    windows: list[list[SpikeTrain]] = []
    total_events = 0
    for _ in range(games):
        state = env.reset(int(rng.integers(2**63)))
        for _ in range(frames_per_game):
            action = PongAction(int(rng.integers(len(PongAction))))
            rates = encode_state(state, encoding_cfg)
            if variant == "model":
                rates = np.concatenate([rates, encode_action(action, encoding_cfg)])
            trains = rates_to_trains(rates, encoding_cfg, rng)
            windows.append(trains)
            total_events += count_events(trains)
            state = env.step(action).next_state
    return windows, total_events


def measure_integration_factor(
    substrate: Substrate, windows: list[list[SpikeTrain]], window_us: float, in_events: int
) -> float:
    """Run the probe stimulus from a clean state and report out/in events."""
    substrate.reset_state()
    total_out = 0
    for trains in windows:
        total_out += int(run_window(substrate, trains, window_us).sum())
    return integration_factor(np.asarray(total_out), in_events)


# Tiny tolerance for the monotonicity check: spike/reset timing can shift a
# couple of counts when efficacy grows, which is noise at probe scale.
_MONOTONE_SLACK = 1e-3


def calibrate_efficacy(
    substrate: Substrate,
    encoding_cfg: PopulationCodeConfig,
    physics: PongPhysics,
    rng: np.random.Generator,
    calib: CalibrationConfig | None = None,
) -> CalibrationResult:
    """Bisect the shared core efficacy until the integration factor lands in the band.

    The probe stimulus is generated once and reused for every evaluation;
    dynamic state is reset before each probe and once more on success so
    training starts clean. Raises CalibrationError when the band cannot be
    reached within max_steps probes or the response is not monotone.
    """
    calib = calib if calib is not None else CalibrationConfig()
    windows, in_events = make_probe_windows(
        encoding_cfg,
        physics,
        substrate.config.variant,
        rng,
        games=calib.probe_games,
        frames_per_game=calib.probe_frames_per_game,
    )
    if in_events == 0:
        raise CalibrationError("probe stimulus produced no input events")

    history: list[tuple[float, float]] = []

    def measure(efficacy: float) -> float:
        substrate.set_core_efficacy(efficacy)
        factor = measure_integration_factor(substrate, windows, encoding_cfg.window_us, in_events)
        history.append((efficacy, factor))
        return factor

    lo_w = 0.0  # factor at 0 drive is exactly 0, below any valid band
    hi_w: float | None = None
    w = calib.initial_efficacy
    found: float | None = None
    for _ in range(calib.max_steps):
        factor = measure(w)
        if calib.target_lo <= factor <= calib.target_hi:
            found = w
            break
        if factor < calib.target_lo:
            lo_w = w
        else:
            hi_w = w
        w = w * 2.0 if hi_w is None else 0.5 * (lo_w + hi_w)

    ordered = sorted(history)
    for (_, f_a), (_, f_b) in zip(ordered, ordered[1:]):
        if f_b < f_a - _MONOTONE_SLACK:
            raise CalibrationError(
                "integration factor is not monotone in core efficacy; bisection is invalid",
                history,
            )
    if found is None:
        last_w, last_f = history[-1]
        raise CalibrationError(
            f"integration factor did not reach [{calib.target_lo}, {calib.target_hi}] "
            f"within {calib.max_steps} probes (last: efficacy={last_w:.6g}, factor={last_f:.4f})",
            history,
        )
    substrate.set_core_efficacy(found)
    substrate.reset_state()
    return CalibrationResult(found, history[-1][1], len(history), tuple(history))


def dump_substrate(substrate: Substrate, path) -> None:
    """Write mismatch factors and connectivity as little-endian records.

    Record layout: neuron index u32, field id u8, value f64. Mismatch records
    (ids 0..2) come first, one per neuron per field; each edge then emits an
    id-3 record (pre generator) immediately followed by an id-4 record
    (parallel count), in edge order.
    """
    conn = substrate.connectivity
    with open(path, "wb") as fh:
        for fid, factors in (
            (DUMP_FIELD_TAU_MEM_FACTOR, substrate.tau_mem_factors),
            (DUMP_FIELD_TAU_SYN_FACTOR, substrate.tau_syn_factors),
            (DUMP_FIELD_V_THRESH_FACTOR, substrate.v_thresh_factors),
        ):
            for j in range(substrate.n_neurons):
                fh.write(_DUMP_RECORD.pack(j, fid, float(factors[j])))
        for e in range(conn.n_edges):
            fh.write(_DUMP_RECORD.pack(int(conn.post[e]), DUMP_FIELD_EDGE_PRE, float(conn.pre[e])))
            fh.write(
                _DUMP_RECORD.pack(int(conn.post[e]), DUMP_FIELD_EDGE_PARALLEL, float(conn.parallel[e]))
            )


def read_substrate_dump(path) -> list[tuple[int, int, float]]:
    """Parse a dump back into (neuron, field id, value) records."""
    records = []
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) % _DUMP_RECORD.size != 0:
        raise ValueError("truncated substrate dump")
    for off in range(0, len(data), _DUMP_RECORD.size):
        records.append(_DUMP_RECORD.unpack_from(data, off))
    return records
