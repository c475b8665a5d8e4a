"""N-user system model: stochastic medium, modems, and the rollout engine.

The system evolves in discrete time. Within each step every modem fires
first and then the medium fires; both condition on strictly past values
only, so the order within a step carries no information. The engine
advances ``lanes`` independent replicas in lockstep, with all per-step
work vectorized across lanes; a rollout is bit-reproducible from
(system, seeds, lanes, horizon).

Randomness is namespaced off a single root handle: one stream per source
pair, one for the medium, one private stream per modem, and a common
stream shared by all modems (the common randomness available for random
codes).
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace

import numpy as np

from .probcore import (
    Alphabet,
    Pmf,
    RandomnessHandle,
    sample_iid_array,
    wilson_half_width,
)
from .ratedist import DistortionBudget, DistortionMetric

__all__ = [
    "CoupledDmcMedium",
    "DmcMedium",
    "ForwardRelayModem",
    "GuaranteeReport",
    "MarkovLinkRule",
    "MarkovMedium",
    "MediumKernel",
    "Modem",
    "ModemView",
    "NetworkSystem",
    "Trajectory",
    "WiringError",
    "baseline_guarantee",
    "block_average_distortions",
    "gilbert_elliott_rule",
    "make_dmc_medium",
    "make_markov_medium",
    "rollout",
]


class WiringError(ValueError):
    """Alphabet or topology mismatch detected before simulation starts."""


def _check_stochastic(mat: np.ndarray, what: str) -> np.ndarray:
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2:
        raise WiringError(f"{what} must be a matrix")
    if np.any(mat < 0) or not np.allclose(mat.sum(axis=1), 1.0, atol=1e-9):
        raise WiringError(f"{what} rows must be probability vectors")
    return mat


def _row_cumsum(mat: np.ndarray) -> np.ndarray:
    cum = np.cumsum(mat, axis=-1)
    cum[..., -1] = 1.0
    return cum


def _sample_categorical(cum_rows: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    """Sample one symbol per row of pre-gathered cumulative distributions."""
    u = gen.random(cum_rows.shape[0])
    out = (cum_rows <= u[:, None]).sum(axis=1)
    return np.minimum(out, cum_rows.shape[1] - 1)


class MediumKernel(ABC):
    """Stochastic law producing per-link outputs from all users' past inputs.

    Outputs at step tau may depend only on inputs up to tau-1 and the
    medium's own (opaque) state. Link outputs at tau=0 are the zero symbol;
    the kernel is first consulted at tau=1.
    """

    num_users: int
    links: tuple

    @abstractmethod
    def user_input_alphabet(self, user: int) -> Alphabet: ...

    @abstractmethod
    def link_output_alphabet(self, link) -> Alphabet: ...

    @abstractmethod
    def start(self, lanes: int):
        """Allocate per-rollout state for ``lanes`` replicas."""

    @abstractmethod
    def step(self, tau: int, state, iota_prev: np.ndarray, gen: np.random.Generator) -> dict:
        """Produce {link: (lanes,) outputs} from inputs at tau-1."""


class DmcMedium(MediumKernel):
    """Memoryless medium: each link applies its own stochastic matrix."""

    def __init__(self, num_users: int, link_matrices: dict):
        self.num_users = int(num_users)
        mats = {}
        for (i, j), mat in link_matrices.items():
            if not (0 <= i < num_users and 0 <= j < num_users and i != j):
                raise WiringError(f"link ({i},{j}) references unknown users")
            mats[(i, j)] = _check_stochastic(mat, f"link ({i},{j}) matrix")
        self.links = tuple(sorted(mats))
        self._mats = mats
        self._cums = {lk: _row_cumsum(m) for lk, m in mats.items()}

    def user_input_alphabet(self, user: int) -> Alphabet:
        for (i, _), mat in self._mats.items():
            if i == user:
                return Alphabet(mat.shape[0])
        return Alphabet(2)

    def link_output_alphabet(self, link) -> Alphabet:
        return Alphabet(self._mats[link].shape[1])

    def start(self, lanes: int):
        return None

    def step(self, tau, state, iota_prev, gen):
        out = {}
        for (i, j), cum in self._cums.items():
            rows = cum[iota_prev[i]]
            out[(i, j)] = _sample_categorical(rows, gen)
        return out


class CoupledDmcMedium(DmcMedium):
    """Memoryless medium with cross-user interference.

    A coupled link's matrix is selected per step by another user's last
    medium input, so its statistics depend on that user's input law. This
    exercises the requirement that an architecture change at one pair must
    not disturb the law seen by others.
    """

    def __init__(self, num_users: int, link_matrices: dict, coupling: dict):
        super().__init__(num_users, link_matrices)
        self._coupling = {}
        for link, (watch, stack) in coupling.items():
            if link not in self._mats:
                raise WiringError(f"coupling references unknown link {link}")
            stack = np.asarray(stack, dtype=np.float64)
            for s in range(stack.shape[0]):
                _check_stochastic(stack[s], f"coupled matrix {link}[{s}]")
            self._coupling[link] = (int(watch), _row_cumsum(stack))

    def step(self, tau, state, iota_prev, gen):
        out = {}
        for (i, j), cum in self._cums.items():
            link = (i, j)
            if link in self._coupling:
                watch, cum3 = self._coupling[link]
                rows = cum3[iota_prev[watch], iota_prev[i]]
            else:
                rows = cum[iota_prev[i]]
            out[link] = _sample_categorical(rows, gen)
        return out


@dataclass(frozen=True)
class MarkovLinkRule:
    """Per-link hidden state chain: emission matrices per state plus the
    state transition matrix."""

    transition: np.ndarray  # (S, S)
    emission: np.ndarray    # (S, K, K) stochastic matrix per state
    initial_state: int = 0

    def __post_init__(self):
        trans = _check_stochastic(self.transition, "state transition")
        emission = np.asarray(self.emission, dtype=np.float64)
        if emission.ndim != 3 or emission.shape[0] != trans.shape[0]:
            raise WiringError("emission must be (states, k, k) matching transition")
        for s in range(emission.shape[0]):
            _check_stochastic(emission[s], f"emission[{s}]")
        if not 0 <= self.initial_state < trans.shape[0]:
            raise WiringError("initial state out of range")
        object.__setattr__(self, "transition", trans)
        object.__setattr__(self, "emission", emission)


class MarkovMedium(MediumKernel):
    """Medium with memory: each link carries an independent state chain.

    At each step the link emits through its current state's matrix, then
    the state advances.
    """

    def __init__(self, num_users: int, link_rules: dict):
        self.num_users = int(num_users)
        self.links = tuple(sorted(link_rules))
        for (i, j) in self.links:
            if not (0 <= i < num_users and 0 <= j < num_users and i != j):
                raise WiringError(f"link ({i},{j}) references unknown users")
        self._rules = dict(link_rules)
        self._emit_cums = {lk: _row_cumsum(r.emission) for lk, r in self._rules.items()}
        self._trans_cums = {lk: _row_cumsum(r.transition) for lk, r in self._rules.items()}

    def user_input_alphabet(self, user: int) -> Alphabet:
        for (i, _), rule in self._rules.items():
            if i == user:
                return Alphabet(rule.emission.shape[1])
        return Alphabet(2)

    def link_output_alphabet(self, link) -> Alphabet:
        return Alphabet(self._rules[link].emission.shape[2])

    def start(self, lanes: int):
        return {
            lk: np.full(lanes, rule.initial_state, dtype=np.int8)
            for lk, rule in self._rules.items()
        }

    def step(self, tau, state, iota_prev, gen):
        out = {}
        for (i, j) in self.links:
            link = (i, j)
            st = state[link]
            rows = self._emit_cums[link][st, iota_prev[i]]
            out[link] = _sample_categorical(rows, gen)
            state[link] = _sample_categorical(self._trans_cums[link][st], gen).astype(np.int8)
        return out


def make_dmc_medium(num_users: int, link_matrices: dict) -> DmcMedium:
    """Memoryless medium from per-link stochastic matrices."""
    return DmcMedium(num_users, link_matrices)


def make_markov_medium(num_users: int, state_count: int, transition_rule: dict) -> MarkovMedium:
    """Stateful medium from per-link ``MarkovLinkRule`` values."""
    for link, rule in transition_rule.items():
        if rule.transition.shape[0] != state_count:
            raise WiringError(f"link {link} rule has wrong state count")
    return MarkovMedium(num_users, transition_rule)


def gilbert_elliott_rule(
    flip_good: float,
    flip_bad: float,
    p_good_to_bad: float,
    p_bad_to_good: float,
    initial_state: int = 0,
) -> MarkovLinkRule:
    """Two-state burst-noise flip channel (state 0 good, state 1 bad)."""
    def bsc(q):
        return np.array([[1 - q, q], [q, 1 - q]])

    trans = np.array(
        [[1 - p_good_to_bad, p_good_to_bad], [p_bad_to_good, 1 - p_bad_to_good]]
    )
    return MarkovLinkRule(trans, np.stack([bsc(flip_good), bsc(flip_bad)]), initial_state)


class ModemView:
    """Per-rollout window a modem gets on the trajectory.

    Only the modem's own slices are present: its outgoing pairs' source
    arrays, its incoming links' output arrays, and its own emission array.
    The medium state is never exposed. Reading columns >= tau during step
    tau breaks causality and is checked by perturbation tests.
    """

    __slots__ = (
        "user",
        "lanes",
        "horizon",
        "sources",
        "source_pmfs",
        "link_in",
        "own_iota",
        "common",
        "private_gen",
        "telemetry",
    )

    def __init__(self, user, lanes, horizon, sources, source_pmfs, link_in,
                 own_iota, common, private_gen):
        self.user = user
        self.lanes = lanes
        self.horizon = horizon
        self.sources = sources
        self.source_pmfs = source_pmfs
        self.link_in = link_in
        self.own_iota = own_iota
        self.common = common
        self.private_gen = private_gen
        self.telemetry = {}


class Modem(ABC):
    """User protocol box: maps past observations to a medium input and
    source reproductions, one symbol per step."""

    user: int

    def check_wiring(self, system: "NetworkSystem") -> None:
        """Validate alphabet compatibility; raise WiringError on mismatch."""

    def start(self, view: ModemView):
        """Allocate per-rollout state."""
        return None

    @abstractmethod
    def step(self, tau: int, state, view: ModemView):
        """Return (medium input vector or None, {pair: reproduction vector})."""


class PassthroughModem(Modem):
    """Uncoded modem: relays last source symbol into the medium and last
    received link symbol out as the reproduction.

    Before the first source symbol is available it emits fresh i.i.d.
    symbols from the source law, so the medium input law is exact from
    step 0.
    """

    def __init__(self, user: int, send_pair=None, recv_pairs=(), recv_links=None):
        self.user = int(user)
        self.send_pair = tuple(send_pair) if send_pair else None
        self.recv_pairs = tuple(tuple(p) for p in recv_pairs)
        # Relayed pairs are heard on a link that differs from the pair
        # itself; recv_links overrides the listening link per pair.
        overrides = {tuple(k): tuple(v) for k, v in (recv_links or {}).items()}
        self.recv_link = {p: overrides.get(p, p) for p in self.recv_pairs}

    def check_wiring(self, system):
        medium = system.medium
        if self.send_pair:
            if self.send_pair not in system.sources:
                raise WiringError(f"modem {self.user} sends unknown pair {self.send_pair}")
            src_size = system.sources[self.send_pair].alphabet.size
            med_size = medium.user_input_alphabet(self.user).size
            if src_size != med_size:
                raise WiringError(
                    f"pair {self.send_pair}: source alphabet {src_size} vs "
                    f"medium input alphabet {med_size}"
                )
        for (i, j) in self.recv_pairs:
            if j != self.user:
                raise WiringError(f"modem {self.user} cannot receive pair ({i},{j})")
            link = self.recv_link[(i, j)]
            if link not in medium.links:
                raise WiringError(f"no medium link {link} for pair ({i},{j})")
            if link[1] != self.user:
                raise WiringError(f"modem {self.user} cannot hear link {link}")

    def step(self, tau, state, view):
        iota = None
        if self.send_pair:
            if tau == 0:
                pmf = view.source_pmfs[self.send_pair]
                iota = sample_iid_array(pmf, view.lanes, view.private_gen)
            else:
                iota = view.sources[self.send_pair][tau - 1]
        repro = {}
        for pair in self.recv_pairs:
            if tau == 0:
                repro[pair] = np.zeros(view.lanes, dtype=np.int8)
            else:
                repro[pair] = view.link_in[self.recv_link[pair]][tau - 1]
        return iota, repro


class ForwardRelayModem(Modem):
    """Relay: re-emits the last symbol received on ``in_link``."""

    def __init__(self, user: int, in_link):
        self.user = int(user)
        self.in_link = tuple(in_link)

    def check_wiring(self, system):
        if self.in_link not in system.medium.links:
            raise WiringError(f"relay {self.user}: unknown link {self.in_link}")
        if self.in_link[1] != self.user:
            raise WiringError(f"relay {self.user} cannot hear link {self.in_link}")

    def step(self, tau, state, view):
        if tau == 0:
            return np.zeros(view.lanes, dtype=np.int8), {}
        return view.link_in[self.in_link][tau - 1], {}


@dataclass(frozen=True)
class NetworkSystem:
    """Complete system description: medium, modems, sources, and timing.

    ``latency_map`` gives the fixed per-pair reproduction delay: the
    reproduction of x[m] is read at y[m + L]. Sources for distinct pairs
    always draw from independent randomness streams.
    """

    medium: MediumKernel
    modems: tuple
    sources: dict
    pair_of_interest: tuple
    horizon: int
    block_length: int
    latency_map: dict
    warmup: int = 8

    def __post_init__(self):
        users = [m.user for m in self.modems]
        if sorted(users) != list(range(self.medium.num_users)):
            raise WiringError("need exactly one modem per user 0..N-1")
        object.__setattr__(self, "modems", tuple(self.modems))
        for pair in self.latency_map:
            if pair not in self.sources:
                raise WiringError(f"latency entry for unknown pair {pair}")

    def modem_for(self, user: int) -> Modem:
        return self.modems[[m.user for m in self.modems].index(user)]

    def with_modems(self, new_modems, latency_map=None) -> "NetworkSystem":
        return replace(
            self,
            modems=tuple(new_modems),
            latency_map=dict(latency_map if latency_map is not None else self.latency_map),
        )


@dataclass(frozen=True, eq=False)
class Trajectory:
    """All realized streams of one (batched) rollout, immutable.

    Arrays are (horizon, lanes) for per-pair streams and (users, horizon,
    lanes) for medium inputs.
    """

    sources: dict
    medium_inputs: np.ndarray
    link_outputs: dict
    repro: dict
    telemetry: dict
    latency_map: dict
    horizon: int
    lanes: int


def rollout(
    system: NetworkSystem,
    seeds: RandomnessHandle,
    lanes: int = 1,
    horizon: int | None = None,
    source_override: dict | None = None,
) -> Trajectory:
    """Simulate the system for ``horizon`` steps across ``lanes`` replicas.

    ``source_override`` substitutes explicit (horizon, lanes) source arrays
    for chosen pairs; everything else still follows the seeded streams.
    """
    T = int(horizon if horizon is not None else system.horizon)
    B = int(lanes)
    if T < 1 or B < 1:
        raise ValueError("horizon and lanes must be >= 1")
    medium = system.medium
    N = medium.num_users
    for modem in system.modems:
        modem.check_wiring(system)

    sources = {}
    for pair, pmf in sorted(system.sources.items()):
        if source_override and pair in source_override:
            arr = np.asarray(source_override[pair]).astype(pmf.alphabet.dtype)
            if arr.shape != (T, B):
                raise ValueError(f"override for {pair} must have shape {(T, B)}")
        else:
            gen = seeds.derive("src", *pair).generator()
            arr = sample_iid_array(pmf, T * B, gen).reshape(T, B)
        sources[pair] = arr

    iota = np.zeros((N, T, B), dtype=np.int8)
    link_out = {
        link: np.zeros((T, B), dtype=medium.link_output_alphabet(link).dtype)
        for link in medium.links
    }
    repro = {
        pair: np.zeros((T, B), dtype=pmf.alphabet.dtype)
        for pair, pmf in system.sources.items()
    }

    common = seeds.derive("common")
    views = []
    for modem in system.modems:
        u = modem.user
        views.append(
            ModemView(
                user=u,
                lanes=B,
                horizon=T,
                sources={p: a for p, a in sources.items() if p[0] == u},
                source_pmfs={p: f for p, f in system.sources.items() if p[0] == u},
                link_in={lk: link_out[lk] for lk in medium.links if lk[1] == u},
                own_iota=iota[u],
                common=common,
                private_gen=seeds.derive("modem", u).generator(),
            )
        )

    states = [m.start(v) for m, v in zip(system.modems, views)]
    med_state = medium.start(B)
    med_gen = seeds.derive("medium").generator()

    for tau in range(T):
        for modem, st, view in zip(system.modems, states, views):
            iota_vec, repro_map = modem.step(tau, st, view)
            if iota_vec is not None:
                iota[modem.user, tau] = iota_vec
            for pair, vec in repro_map.items():
                repro[pair][tau] = vec
        if tau >= 1:
            outs = medium.step(tau, med_state, iota[:, tau - 1, :], med_gen)
            for link, vec in outs.items():
                link_out[link][tau] = vec

    for arr in sources.values():
        arr.flags.writeable = False
    iota.flags.writeable = False
    for arr in link_out.values():
        arr.flags.writeable = False
    for arr in repro.values():
        arr.flags.writeable = False

    telemetry = {v.user: v.telemetry for v in views if v.telemetry}
    return Trajectory(
        sources=sources,
        medium_inputs=iota,
        link_outputs=link_out,
        repro=repro,
        telemetry=telemetry,
        latency_map=dict(system.latency_map),
        horizon=T,
        lanes=B,
    )


def block_average_distortions(
    traj: Trajectory,
    pair: tuple,
    metric: DistortionMetric,
    block_length: int,
    start: int = 0,
    num_blocks: int | None = None,
) -> np.ndarray:
    """Per-block average distortions, flattened across blocks and lanes.

    Block k covers source positions [start + k*n, start + (k+1)*n); the
    reproduction is read at the pair's declared latency offset.
    """
    n = int(block_length)
    lat = traj.latency_map[pair]
    x = traj.sources[pair]
    y = traj.repro[pair]
    avail = (traj.horizon - lat - start) // n
    k = avail if num_blocks is None else min(num_blocks, avail)
    if k < 1:
        raise ValueError("horizon too short for one aligned block")
    xs = x[start : start + k * n]
    ys = y[start + lat : start + lat + k * n]
    per_letter = metric.table[xs.astype(np.int64), ys.astype(np.int64)]
    return per_letter.reshape(k, n, traj.lanes).mean(axis=1).reshape(-1)


@dataclass(frozen=True)
class GuaranteeReport:
    """Measured excess-distortion guarantee for one pair.

    This is the empirical contract separation planning starts from: the
    system delivers the pair's source within ``level`` except with
    probability about ``epsilon_hat``.
    """

    pair: tuple
    level: float
    epsilon_hat: float
    half_width: float
    trials: int
    block_length: int
    exceed_count: int


def baseline_guarantee(
    system: NetworkSystem,
    budget: DistortionBudget,
    trials: int,
    seeds: RandomnessHandle,
    lanes: int | None = None,
    block_length: int | None = None,
) -> GuaranteeReport:
    """Monte Carlo estimate of the excess-distortion probability for the
    system's pair of interest."""
    if trials < 100:
        raise ValueError("need at least 100 trials for a meaningful estimate")
    pair = system.pair_of_interest
    n = int(block_length if block_length is not None else system.block_length)
    B = int(lanes) if lanes else min(trials, 4096)
    blocks = -(-trials // B)
    lat = system.latency_map[pair]
    T = system.warmup + blocks * n + lat + 1
    traj = rollout(system, seeds, lanes=B, horizon=T)
    avgs = block_average_distortions(
        traj, pair, budget.metric, n, start=system.warmup, num_blocks=blocks
    )[:trials]
    exceed = int((avgs > budget.level).sum())
    return GuaranteeReport(
        pair=pair,
        level=budget.level,
        epsilon_hat=exceed / trials,
        half_width=wilson_half_width(exceed, trials),
        trials=trials,
        block_length=n,
        exceed_count=exceed,
    )
