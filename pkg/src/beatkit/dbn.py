"""Hidden-Markov post-processing that turns activation curves into beat times.

The state space is the classic bar-pointer construction: a state is a beat
period ``tau`` (in frames) and a countdown phase ``phi in [0, tau)``. Within a
beat the phase deterministically decreases; when it hits zero the pointer
re-enters at ``(tau', tau'-1)`` where the tempo change ``tau -> tau'`` costs
``exp(-lambda * |ln(tau'/tau)|)``, renormalized over the tempo range. States
whose phase lies in the leading ``tau/Lambda`` fraction of the beat period
("beat region") emit the activation value, all others its complement. The
maximum-a-posteriori path under a uniform initial distribution is found by
Viterbi; beats are reported where the path enters the beat region.

For downbeats the state gains a bar position ``beta``; each bar-length
hypothesis is decoded separately and the best-scoring one wins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .sequences import BeatSequence

OBS_EPS = 1e-10


@dataclass(frozen=True)
class DbnConfig:
    """Decoder settings. All numeric choices are surfaced here on purpose."""

    frame_rate_hz: float = 100.0
    min_bpm: float = 55.0
    max_bpm: float = 215.0
    transition_lambda: float = 100.0
    observation_lambda: float = 16.0
    beats_per_bar: tuple[int, ...] = (3, 4)

    def __post_init__(self):
        if not self.frame_rate_hz > 0:
            raise ValueError("frame rate must be positive")
        if not 0 < self.min_bpm <= self.max_bpm:
            raise ValueError(
                f"need 0 < min_bpm <= max_bpm, got {self.min_bpm}, {self.max_bpm}"
            )
        if not self.transition_lambda > 0:
            raise ValueError("transition_lambda must be positive")
        if self.observation_lambda < 1:
            raise ValueError("observation_lambda must be >= 1")
        if any(b < 1 for b in self.beats_per_bar):
            raise ValueError("beats_per_bar entries must be >= 1")


class BeatStateSpace:
    """Enumerated (tau, phi) states with transition and observation structure.

    States are ordered by ascending ``tau``, then ascending ``phi``; this total
    order is what Viterbi tie-breaking refers to.
    """

    def __init__(self, cfg: DbnConfig):
        fps = cfg.frame_rate_hz
        tau_min = max(1, math.ceil(60.0 * fps / cfg.max_bpm))
        tau_max = math.ceil(60.0 * fps / cfg.min_bpm)
        if tau_max < tau_min:
            raise ValueError(f"empty tempo range: tau in [{tau_min}, {tau_max}]")
        self.cfg = cfg
        self.intervals = np.arange(tau_min, tau_max + 1, dtype=np.int64)
        self.num_intervals = self.intervals.size
        self.offsets = np.concatenate(([0], np.cumsum(self.intervals)))[:-1]
        self.num_states = int(self.intervals.sum())
        self.state_interval = np.repeat(self.intervals, self.intervals)
        self.state_phase = np.concatenate([np.arange(tau) for tau in self.intervals])
        # log p(tau' | tau): exp(-lambda |ln(tau'/tau)|), rows renormalized
        ratio = self.intervals[None, :].astype(np.float64) / self.intervals[:, None]
        raw = -cfg.transition_lambda * np.abs(np.log(ratio))
        rowmax = raw.max(axis=1, keepdims=True)
        with np.errstate(divide="ignore"):
            self.log_tempo_trans = raw - (
                rowmax + np.log(np.exp(raw - rowmax).sum(axis=1, keepdims=True))
            )
        # beat region: phase < tau / Lambda
        self.in_beat_region = self.state_phase < (
            self.state_interval / cfg.observation_lambda
        )
        # states receiving a tempo-change landing: phi == tau - 1
        self.is_landing = self.state_phase == self.state_interval - 1
        self.landing_indices = self.offsets + self.intervals - 1
        self.phase_zero_indices = self.offsets.copy()

    def state_index(self, tau: int, phi: int) -> int:
        i = int(np.searchsorted(self.intervals, tau))
        if i >= self.num_intervals or self.intervals[i] != tau or not 0 <= phi < tau:
            raise ValueError(f"no state (tau={tau}, phi={phi})")
        return int(self.offsets[i] + phi)

    def transition_table(self):
        """Sparse transitions as (from_idx, to_idx, probability) arrays."""
        froms, tos, probs = [], [], []
        tempo_probs = np.exp(self.log_tempo_trans)
        for i, tau in enumerate(self.intervals):
            base = self.offsets[i]
            for phi in range(1, tau):
                froms.append(base + phi)
                tos.append(base + phi - 1)
                probs.append(1.0)
            for i2 in range(self.num_intervals):
                froms.append(base)
                tos.append(self.landing_indices[i2])
                probs.append(tempo_probs[i, i2])
        return np.asarray(froms), np.asarray(tos), np.asarray(probs)


def observation_logprob(activation: float, state: tuple[int, int], cfg: DbnConfig) -> float:
    """Log-likelihood of one activation value for one ``(tau, phi)`` state."""
    tau, phi = state
    if phi < tau / cfg.observation_lambda:
        return float(np.log(activation + OBS_EPS))
    return float(np.log(1.0 - activation + OBS_EPS))


def _beat_obs_row(space: BeatStateSpace, activation: float) -> np.ndarray:
    return np.where(
        space.in_beat_region,
        np.log(activation + OBS_EPS),
        np.log(1.0 - activation + OBS_EPS),
    )


def _viterbi(space, obs_row, t: int) -> tuple[np.ndarray, float]:
    """Shared DP core; ``obs_row(j)`` is the per-state log-likelihood row.

    Ties break towards the lowest predecessor state index and the lowest final
    state index. Returns (state path, total log score).
    """
    num_states = space.num_states
    within_targets = ~space.is_landing
    within_sources = np.nonzero(within_targets)[0] + 1
    delta = np.full(num_states, -np.log(num_states)) + obs_row(0)
    landing_from = np.zeros((t, space.landing_indices.size), dtype=np.int64)
    new_delta = np.empty(num_states)
    for j in range(1, t):
        # tempo change: (tau', 0) -> (tau, tau - 1)
        cand = delta[space.phase_zero_indices][:, None] + space.log_tempo_trans
        best_from = np.argmax(cand, axis=0)
        landing_from[j] = best_from
        new_delta[within_targets] = delta[within_sources]
        new_delta[space.landing_indices] = cand[best_from, np.arange(best_from.size)]
        delta = new_delta + obs_row(j)
        new_delta = np.empty(num_states)
    final = int(np.argmax(delta))
    score = float(delta[final])
    path = np.empty(t, dtype=np.int64)
    path[-1] = final
    for j in range(t - 1, 0, -1):
        s = path[j]
        pos = np.searchsorted(space.landing_indices, s)
        if pos < space.landing_indices.size and space.landing_indices[pos] == s:
            path[j - 1] = space.phase_zero_indices[landing_from[j, pos]]
        else:
            path[j - 1] = s + 1
    return path, score


def viterbi_path(activation: np.ndarray, cfg: DbnConfig) -> tuple[np.ndarray, float]:
    """MAP state path through the beat state space and its log score."""
    act = _validate_activation(activation)
    space = BeatStateSpace(cfg)
    return _viterbi(space, lambda j: _beat_obs_row(space, act[j]), act.size)


def _validate_activation(activation) -> np.ndarray:
    act = np.asarray(activation, dtype=np.float64).reshape(-1)
    if act.size < 1:
        raise ShapeError("activation must contain at least one frame")
    if act.min() < 0.0 or act.max() > 1.0:
        raise ValueError("activation values must lie in [0, 1]")
    return act


def _phase_zero_entries(phase_flags: np.ndarray) -> np.ndarray:
    """Frames where the path reaches the first phase of the beat region (phi=0)."""
    prev = np.concatenate(([False], phase_flags[:-1]))
    return np.nonzero(phase_flags & ~prev)[0]


def viterbi_decode(activation: np.ndarray, cfg: DbnConfig) -> BeatSequence:
    """Decode a beat activation curve into beat times (seconds)."""
    act = _validate_activation(activation)
    space = BeatStateSpace(cfg)
    path, _ = _viterbi(space, lambda j: _beat_obs_row(space, act[j]), act.size)
    entries = _phase_zero_entries(space.state_phase[path] == 0)
    times = (entries + 0.5) / cfg.frame_rate_hz
    return BeatSequence(times)


class _JointStateSpace:
    """Bar-pointer space for one bar-length hypothesis: states (beta, tau, phi).

    Reuses the beat-space layout per bar position; ordering is beta-major so
    index = beta * num_beat_states + beat_state_index.
    """

    def __init__(self, beat_space: BeatStateSpace, beats_per_bar: int):
        self.beat = beat_space
        self.bars = beats_per_bar
        nb = beat_space.num_states
        self.num_states = beats_per_bar * nb
        self.is_landing = np.tile(beat_space.is_landing, beats_per_bar)
        bar_offsets = np.arange(beats_per_bar) * nb
        self.landing_indices = (
            bar_offsets[:, None] + beat_space.landing_indices[None, :]
        ).reshape(-1)
        self.phase_zero_indices = (
            bar_offsets[:, None] + beat_space.phase_zero_indices[None, :]
        ).reshape(-1)
        # landing into bar position beta comes from phase-zero states at beta-1
        ni = beat_space.num_intervals
        src_bars = (np.repeat(np.arange(beats_per_bar), ni) - 1) % beats_per_bar
        self._pz_by_landing = src_bars * nb + np.tile(
            beat_space.phase_zero_indices, beats_per_bar
        )
        self.log_tempo_trans = np.tile(beat_space.log_tempo_trans, (beats_per_bar, 1))
        self.state_bar = np.repeat(np.arange(beats_per_bar), nb)
        self.in_beat_region = np.tile(beat_space.in_beat_region, beats_per_bar)


def _joint_viterbi(space: _JointStateSpace, obs_row, t: int) -> tuple[np.ndarray, float]:
    num_states = space.num_states
    within_targets = ~space.is_landing
    within_sources = np.nonzero(within_targets)[0] + 1
    delta = np.full(num_states, -np.log(num_states)) + obs_row(0)
    ni = space.beat.num_intervals
    landing_from = np.zeros((t, space.landing_indices.size), dtype=np.int64)
    new_delta = np.empty(num_states)
    for j in range(1, t):
        # cand[b, i', i]: predecessor tempo i' at bar b-1 landing into (b, i)
        cand = delta[space._pz_by_landing].reshape(space.bars, ni, 1) + (
            space.beat.log_tempo_trans[None, :, :]
        )
        best_from = np.argmax(cand, axis=1)  # [bars, ni]
        landing_vals = np.take_along_axis(cand, best_from[:, None, :], axis=1)[:, 0, :]
        landing_from[j] = best_from.reshape(-1)
        new_delta[within_targets] = delta[within_sources]
        new_delta[space.landing_indices] = landing_vals.reshape(-1)
        delta = new_delta + obs_row(j)
        new_delta = np.empty(num_states)
    final = int(np.argmax(delta))
    score = float(delta[final])
    path = np.empty(t, dtype=np.int64)
    path[-1] = final
    for j in range(t - 1, 0, -1):
        s = path[j]
        pos = np.searchsorted(space.landing_indices, s)
        if pos < space.landing_indices.size and space.landing_indices[pos] == s:
            bar = pos // ni
            src_interval = landing_from[j, pos]
            src_bar = (bar - 1) % space.bars
            path[j - 1] = src_bar * space.beat.num_states + space.beat.phase_zero_indices[
                src_interval
            ]
        else:
            path[j - 1] = s + 1
    return path, score


def joint_downbeat_decode(
    beat_act: np.ndarray, down_act: np.ndarray, cfg: DbnConfig
) -> BeatSequence:
    """Joint beat/downbeat decoding over all bar-length hypotheses.

    In the beat region, states at bar position 0 emit the downbeat activation
    and the others ``beat * (1 - downbeat)``; outside the region every state
    emits ``1 - beat``. Output positions are 1-based with 1 at bar position 0.
    """
    beat = _validate_activation(beat_act)
    down = _validate_activation(down_act)
    if beat.size != down.size:
        raise ShapeError("beat and downbeat activations must have equal length")
    beat_space = BeatStateSpace(cfg)
    best = None
    for bars in cfg.beats_per_bar:
        space = _JointStateSpace(beat_space, bars)
        is_down_region = space.in_beat_region & (space.state_bar == 0)
        is_beat_region = space.in_beat_region & (space.state_bar != 0)

        def obs_row(j, space=space, down_mask=is_down_region, beat_mask=is_beat_region):
            obs = np.full(space.num_states, np.log(1.0 - beat[j] + OBS_EPS))
            obs[down_mask] = np.log(down[j] + OBS_EPS)
            obs[beat_mask] = np.log(beat[j] * (1.0 - down[j]) + OBS_EPS)
            return obs

        path, score = _joint_viterbi(space, obs_row, beat.size)
        if best is None or score > best[0]:
            best = (score, path, space)
    _, path, space = best
    beat_phase = space.beat.state_phase[path % space.beat.num_states]
    entries = _phase_zero_entries(beat_phase == 0)
    times = (entries + 0.5) / cfg.frame_rate_hz
    positions = space.state_bar[path[entries]] + 1
    return BeatSequence(times, positions)


def pick_peaks(
    activation: np.ndarray,
    frame_rate_hz: float,
    threshold: float = 0.5,
    min_separation_s: float = 0.0,
) -> BeatSequence:
    """Plain thresholded peak picking; the baseline the HMM is compared against.

    A frame is picked when it exceeds ``threshold``, is at least as large as
    both neighbours (strictly larger than the right one, to split plateaus)
    and ``min_separation_s`` has elapsed since the previous pick.
    """
    act = _validate_activation(activation)
    t = act.size
    times = []
    min_gap = min_separation_s
    last = -np.inf
    for j in range(t):
        left = act[j - 1] if j > 0 else -np.inf
        right = act[j + 1] if j < t - 1 else -np.inf
        if act[j] > threshold and act[j] >= left and act[j] > right:
            when = (j + 0.5) / frame_rate_hz
            if when - last >= min_gap:
                times.append(when)
                last = when
    return BeatSequence(np.asarray(times))
