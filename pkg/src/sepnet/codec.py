"""Random-codebook codecs.

Two constructions share the Codebook type:

* channel embedding (c_e / c_d): codewords drawn i.i.d. from the source
  law, so a message-bearing codeword stream is statistically a source
  stream and the medium cannot tell the difference;
* lossy source coding (s_e / s_d): codewords drawn i.i.d. from the
  optimal reproduction marginal at the target level, encoder picks the
  closest row.

Codebooks are never serialized: encoder and decoder regenerate identical
entries from (pmf, n, cardinality, seed), which is exactly the shared
common-randomness contract.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .probcore import (
    Pmf,
    RandomnessHandle,
    Sequence,
    sample_iid_array,
    wilson_half_width,
)
from .ratedist import DistortionMetric, blahut_arimoto

__all__ = [
    "CHANNEL_EMBEDDING",
    "Codebook",
    "CodebookCapError",
    "DecodeFailure",
    "MbpReport",
    "MessageSet",
    "RatePlan",
    "RatePlanError",
    "SOURCE_COMPRESSION",
    "build_channel_codebook",
    "build_source_codebook",
    "channel_decode",
    "channel_encode",
    "mbp_estimate",
    "source_decode",
    "source_encode",
    "zipf_message_pmf",
]

DEFAULT_CARDINALITY_CAP = 1 << 20

CHANNEL_EMBEDDING = "channel-embedding"
SOURCE_COMPRESSION = "source-compression"


class CodebookCapError(MemoryError):
    """Codebook would exceed the desk-scale cardinality cap."""


class RatePlanError(ValueError):
    """Rate bookkeeping violates the construction's hypotheses."""


@dataclass(frozen=True)
class MessageSet:
    """Message set of cardinality ceil(2^(n*rate))."""

    rate: float
    block_length: int
    cardinality: int = field(init=False)

    def __post_init__(self):
        card = cardinality_for(self.rate, self.block_length)
        object.__setattr__(self, "cardinality", card)


def cardinality_for(rate: float, n: int) -> int:
    return max(1, math.ceil(2.0 ** (n * rate)))


@dataclass(frozen=True)
class RatePlan:
    """Rate bookkeeping tying the source coder to the embedding coder.

    ``channel_rate`` = R_X(D) - alpha and ``source_rate`` = R_X'(D') +
    psi/2. Validity requires psi > 0, the block-ratio condition
    n/n' > R_X'(D')/R_X(D) + psi, and that the source coder's message set
    fits inside the channel coder's (n*channel_rate >= n'*source_rate).
    """

    n: int
    n_prime: int
    level: float
    level_prime: float
    rate_at_level: float        # R_X(D)
    rate_at_level_prime: float  # R_X'(D')
    psi: float
    alpha: float
    channel_rate: float = field(init=False)
    source_rate: float = field(init=False)

    def __post_init__(self):
        if self.n < 1 or self.n_prime < 1:
            raise RatePlanError("block lengths must be >= 1")
        if self.psi <= 0:
            raise RatePlanError("psi must be > 0")
        if self.alpha <= 0:
            raise RatePlanError("alpha must be > 0")
        if self.rate_at_level <= 0:
            raise RatePlanError("R_X(D) must be > 0 for embedding to carry anything")
        ratio = self.rate_at_level_prime / self.rate_at_level
        if not self.n / self.n_prime > ratio + self.psi:
            raise RatePlanError(
                f"need n/n' > R'(D')/R(D) + psi: {self.n}/{self.n_prime} "
                f"= {self.n / self.n_prime:.6f} vs {ratio + self.psi:.6f}"
            )
        channel_rate = self.rate_at_level - self.alpha
        source_rate = self.rate_at_level_prime + self.psi / 2
        if channel_rate <= 0:
            raise RatePlanError("alpha too large: channel rate must stay positive")
        if self.n * channel_rate < self.n_prime * source_rate:
            raise RatePlanError(
                "source message set does not fit inside the channel message set: "
                f"{self.n} * {channel_rate:.6f} < {self.n_prime} * {source_rate:.6f}"
            )
        object.__setattr__(self, "channel_rate", channel_rate)
        object.__setattr__(self, "source_rate", source_rate)

    @staticmethod
    def default_psi(rate_at_level: float, rate_at_level_prime: float) -> float:
        """Slack choice for the equal-block-length specialization."""
        return 0.5 * (rate_at_level - rate_at_level_prime) / rate_at_level

    @staticmethod
    def default_alpha(rate_at_level: float, psi: float) -> float:
        """Rate back-off implied by psi in the equal-block construction."""
        return rate_at_level / (rate_at_level + psi) * (psi / 2)

    @classmethod
    def make(
        cls,
        n: int,
        level: float,
        level_prime: float,
        rate_at_level: float,
        rate_at_level_prime: float,
        n_prime: int | None = None,
        psi: float | None = None,
        alpha: float | None = None,
    ) -> "RatePlan":
        n_prime = n if n_prime is None else n_prime
        if psi is None:
            if n_prime != n:
                raise RatePlanError("psi has no default for unequal block lengths")
            psi = cls.default_psi(rate_at_level, rate_at_level_prime)
        if alpha is None:
            alpha = cls.default_alpha(rate_at_level, psi)
        return cls(
            n=n,
            n_prime=n_prime,
            level=level,
            level_prime=level_prime,
            rate_at_level=rate_at_level,
            rate_at_level_prime=rate_at_level_prime,
            psi=psi,
            alpha=alpha,
        )

    @property
    def channel_cardinality(self) -> int:
        return cardinality_for(self.channel_rate, self.n)

    @property
    def source_cardinality(self) -> int:
        return cardinality_for(self.source_rate, self.n_prime)


@dataclass(frozen=True, eq=False)
class Codebook:
    """cardinality x n symbol table regenerable from its generation spec."""

    kind: str
    n: int
    cardinality: int
    gen_pmf: Pmf
    common_seed: RandomnessHandle
    entries: np.ndarray = field(repr=False)

    @classmethod
    def generate(
        cls,
        kind: str,
        gen_pmf: Pmf,
        n: int,
        cardinality: int,
        common_seed: RandomnessHandle,
        cap: int = DEFAULT_CARDINALITY_CAP,
    ) -> "Codebook":
        if cardinality < 1:
            raise ValueError("cardinality must be >= 1")
        if cardinality > cap:
            raise CodebookCapError(
                f"cardinality {cardinality} exceeds cap {cap}; use a smaller "
                f"n * rate product (or raise the cap explicitly)"
            )
        entries = sample_iid_array(
            gen_pmf, n * cardinality, common_seed.generator()
        ).reshape(cardinality, n)
        entries.flags.writeable = False
        return cls(kind, n, cardinality, gen_pmf, common_seed, entries)

    def spec(self) -> dict:
        """Everything needed to regenerate the entries bit-exactly."""
        return {
            "kind": self.kind,
            "n": self.n,
            "cardinality": self.cardinality,
            "gen_probs": [float(v) for v in self.gen_pmf.probs],
            "seed": self.common_seed.seed,
            "stream_id": self.common_seed.stream_id,
        }

    @classmethod
    def from_spec(cls, spec: dict, cap: int = DEFAULT_CARDINALITY_CAP) -> "Codebook":
        return cls.generate(
            spec["kind"],
            Pmf.from_probs(spec["gen_probs"]),
            spec["n"],
            spec["cardinality"],
            RandomnessHandle(spec["seed"], spec["stream_id"]),
            cap=cap,
        )

    def packed(self) -> np.ndarray | None:
        """Bit-packed rows for the binary fast path (None if not binary)."""
        cached = getattr(self, "_packed_cache", None)
        if cached is not None:
            return cached
        packed = _pack_bits(self.entries) if _packable(self.entries, self.n) else None
        object.__setattr__(self, "_packed_cache", packed)
        return packed


def _packable(arr: np.ndarray, n: int) -> bool:
    return n <= 64 and arr.size > 0 and arr.max(initial=0) <= 1


def _pack_bits(arr: np.ndarray) -> np.ndarray:
    """Pack (rows, n<=64) binary symbols into one uint64 word per row."""
    rows, n = arr.shape
    padded = np.zeros((rows, 64), dtype=np.uint8)
    padded[:, :n] = arr
    return np.ascontiguousarray(
        np.packbits(padded, axis=1).view(">u8").reshape(rows).astype(np.uint64)
    )


def _hamming_scale(metric: DistortionMetric) -> float | None:
    """If the metric is c * Hamming on matched binary alphabets, return c."""
    t = metric.table
    if t.shape != (2, 2):
        return None
    c = t[0, 1]
    if c > 0 and abs(t[1, 0] - c) < 1e-15 and t[0, 0] == 0 and t[1, 1] == 0:
        return float(c)
    return None


def _avg_distortions_to_rows(
    entries: np.ndarray, packed, block: np.ndarray, metric: DistortionMetric
) -> np.ndarray:
    """Average distortion from every codebook row to one block, (rows,)."""
    scale = _hamming_scale(metric)
    n = entries.shape[1]
    if packed is not None and scale is not None:
        word = _pack_bits(block.reshape(1, -1))[0]
        return np.bitwise_count(packed ^ word) * (scale / n)
    per = metric.table[entries.astype(np.int64), block.astype(np.int64)[None, :]]
    return per.mean(axis=1)


def batch_min_distortion_rows(
    codebook: Codebook, blocks: np.ndarray, metric: DistortionMetric
) -> tuple[np.ndarray, np.ndarray]:
    """Row index and average distortion of the closest codeword per block.

    ``blocks`` is (batch, n); ties pick the lowest row index. Uses the
    bit-packed Hamming path when available, otherwise a chunked gather.
    """
    scale = _hamming_scale(metric)
    packed = codebook.packed()
    m, n = codebook.entries.shape
    batch = blocks.shape[0]
    if packed is not None and scale is not None:
        words = _pack_bits(blocks)
        best_idx = np.empty(batch, dtype=np.int64)
        best_avg = np.empty(batch, dtype=np.float64)
        if m >= 65536:
            # one flat (m,) pass per lane: contiguous and cache-friendly,
            # and large enough to amortize the per-call overhead
            for i in range(batch):
                dist = np.bitwise_count(packed ^ words[i])
                j = int(dist.argmin())
                best_idx[i] = j
                best_avg[i] = dist[j] * (scale / n)
            return best_idx, best_avg
        chunk = max(1, min(batch, int(4e6 // max(m, 1)) or 1))
        for a in range(0, batch, chunk):
            b = min(a + chunk, batch)
            dist = np.bitwise_count(packed[:, None] ^ words[None, a:b])
            idx = dist.argmin(axis=0)
            best_idx[a:b] = idx
            best_avg[a:b] = dist[idx, np.arange(b - a)] * (scale / n)
        return best_idx, best_avg
    best_idx = np.empty(batch, dtype=np.int64)
    best_avg = np.empty(batch, dtype=np.float64)
    entries64 = codebook.entries.astype(np.int64)
    for i in range(batch):
        avg = metric.table[entries64, blocks[i].astype(np.int64)[None, :]].mean(axis=1)
        best_idx[i] = int(avg.argmin())
        best_avg[i] = avg[best_idx[i]]
    return best_idx, best_avg


NONE_WITHIN = -1
AMBIGUOUS = -2


def batch_unique_within_decode(
    codebook: Codebook,
    blocks: np.ndarray,
    metric: DistortionMetric,
    level: float,
    restrict: int | None = None,
) -> np.ndarray:
    """Unique-within-D decode per block: the message index, or NONE_WITHIN /
    AMBIGUOUS codes. ``restrict`` limits the scan to the first rows."""
    m = codebook.cardinality if restrict is None else min(restrict, codebook.cardinality)
    entries = codebook.entries[:m]
    scale = _hamming_scale(metric)
    packed = codebook.packed()
    n = codebook.n
    batch = blocks.shape[0]
    out = np.empty(batch, dtype=np.int64)
    if packed is not None and scale is not None:
        packed = packed[:m]
        words = _pack_bits(blocks)
        thresh = math.floor(level * n / scale + 1e-12)
        if m >= 65536:
            for i in range(batch):
                within = np.bitwise_count(packed ^ words[i]) <= thresh
                count = int(within.sum())
                if count == 1:
                    out[i] = int(within.argmax())
                else:
                    out[i] = NONE_WITHIN if count == 0 else AMBIGUOUS
            return out
        chunk = max(1, min(batch, int(4e6 // max(m, 1)) or 1))
        for a in range(0, batch, chunk):
            b = min(a + chunk, batch)
            dist = np.bitwise_count(packed[:, None] ^ words[None, a:b])
            within = dist <= thresh
            counts = within.sum(axis=0)
            first = within.argmax(axis=0)
            seg = np.where(counts == 1, first, np.where(counts == 0, NONE_WITHIN, AMBIGUOUS))
            out[a:b] = seg
        return out
    entries64 = entries.astype(np.int64)
    for i in range(batch):
        avg = metric.table[entries64, blocks[i].astype(np.int64)[None, :]].mean(axis=1)
        hits = np.flatnonzero(avg <= level + 0.0)
        if len(hits) == 1:
            out[i] = hits[0]
        else:
            out[i] = NONE_WITHIN if len(hits) == 0 else AMBIGUOUS
    return out


@dataclass(frozen=True)
class DecodeFailure:
    """Channel decoding failed: either no codeword within the level, or
    more than one qualified."""

    reason: str  # "none_within_D" | "ambiguous"


def build_channel_codebook(
    plan: RatePlan,
    p_x: Pmf,
    c_seed: RandomnessHandle,
    cap: int = DEFAULT_CARDINALITY_CAP,
) -> Codebook:
    """Embedding codebook: codewords i.i.d. from the source law itself."""
    return Codebook.generate(
        CHANNEL_EMBEDDING, p_x, plan.n, plan.channel_cardinality, c_seed, cap=cap
    )


def channel_encode(codebook: Codebook, message: int) -> Sequence:
    """Codeword row for a message; this block is fed to the unchanged modem
    in place of a real source block."""
    if not 0 <= message < codebook.cardinality:
        raise ValueError(f"message {message} out of range [0, {codebook.cardinality})")
    return Sequence(codebook.gen_pmf.alphabet, codebook.entries[message])


def channel_decode(
    codebook: Codebook,
    received: Sequence,
    metric: DistortionMetric,
    budget_level: float,
    rule: str = "within_d",
    restrict: int | None = None,
):
    """Decode one received block.

    ``within_d`` returns the unique codeword with average distortion <= D,
    or a DecodeFailure when zero or several qualify. ``argmin`` returns the
    closest codeword unconditionally.
    """
    if len(received) != codebook.n:
        raise ValueError(f"received length {len(received)} != n {codebook.n}")
    block = received.values[None, :]
    if rule == "argmin":
        idx, _ = batch_min_distortion_rows(
            codebook if restrict is None else _restricted(codebook, restrict),
            block,
            metric,
        )
        return int(idx[0])
    if rule != "within_d":
        raise ValueError(f"unknown decode rule {rule!r}")
    code = int(
        batch_unique_within_decode(codebook, block, metric, budget_level, restrict)[0]
    )
    if code == NONE_WITHIN:
        return DecodeFailure("none_within_D")
    if code == AMBIGUOUS:
        return DecodeFailure("ambiguous")
    return code


def _restricted(codebook: Codebook, m: int) -> Codebook:
    return Codebook(
        codebook.kind,
        codebook.n,
        min(m, codebook.cardinality),
        codebook.gen_pmf,
        codebook.common_seed,
        codebook.entries[: min(m, codebook.cardinality)],
    )


def build_source_codebook(
    plan: RatePlan,
    x_pmf: Pmf,
    metric: DistortionMetric,
    level_prime: float,
    c_seed: RandomnessHandle,
    cap: int = DEFAULT_CARDINALITY_CAP,
) -> Codebook:
    """Lossy source codebook: rows i.i.d. from the optimal reproduction
    marginal q* of the rate-distortion solution at the target level."""
    point = blahut_arimoto(x_pmf, metric, level_prime, tol=1e-9)
    q_star = Pmf(metric.repro_alphabet, point.repro_marginal)
    return Codebook.generate(
        SOURCE_COMPRESSION, q_star, plan.n_prime, plan.source_cardinality, c_seed, cap=cap
    )


def source_encode(codebook: Codebook, x: Sequence, metric: DistortionMetric) -> int:
    """Index of the minimum-distortion codeword; ties break to the lowest."""
    if len(x) != codebook.n:
        raise ValueError(f"block length {len(x)} != n' {codebook.n}")
    idx, _ = batch_min_distortion_rows(codebook, x.values[None, :], metric)
    return int(idx[0])


def source_decode(codebook: Codebook, message: int) -> Sequence:
    """Reproduction block for a source-coder message."""
    if not 0 <= message < codebook.cardinality:
        raise ValueError(f"message {message} out of range [0, {codebook.cardinality})")
    return Sequence(codebook.gen_pmf.alphabet, codebook.entries[message])


@dataclass(frozen=True, eq=False)
class MbpReport:
    """Per-message error rates with the worst case highlighted.

    The maximal error always dominates the average; ``sup_half_width`` is
    the Wilson half-width of the worst message's estimate.
    """

    per_message: np.ndarray
    sup: float
    sup_half_width: float
    average: float
    trials_per_message: int
    rule: str


def _apply_dmc(blocks: np.ndarray, matrix: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    cum = np.cumsum(np.asarray(matrix, dtype=np.float64), axis=1)
    cum[:, -1] = 1.0
    rows = cum[blocks.reshape(-1).astype(np.int64)]
    u = gen.random(rows.shape[0])
    out = np.minimum((rows <= u[:, None]).sum(axis=1), cum.shape[1] - 1)
    return out.reshape(blocks.shape).astype(blocks.dtype)


def mbp_estimate(
    codebook: Codebook,
    channel,
    trials_per_message: int,
    metric: DistortionMetric,
    budget_level: float,
    seeds: RandomnessHandle,
    rule: str = "within_d",
    messages: np.ndarray | None = None,
    restrict: int | None = None,
) -> MbpReport:
    """Monte Carlo per-message error rates under the maximal-error criterion.

    ``channel`` is either a per-symbol stochastic matrix or a callable
    mapping (batch, n) codeword blocks to received blocks (a network
    adapter fits here). Every message gets ``trials_per_message``
    independent transmissions.
    """
    if trials_per_message < 100:
        raise ValueError("need >= 100 trials per message")
    msg_list = (
        np.arange(codebook.cardinality) if messages is None else np.asarray(messages)
    )
    gen = seeds.derive("mbp").generator()
    errors = np.zeros(len(msg_list), dtype=np.int64)
    for k, m in enumerate(msg_list):
        sent = np.repeat(codebook.entries[int(m)][None, :], trials_per_message, axis=0)
        if callable(channel):
            received = channel(sent, gen)
        else:
            received = _apply_dmc(sent, channel, gen)
        if rule == "argmin":
            decoded, _ = batch_min_distortion_rows(
                codebook if restrict is None else _restricted(codebook, restrict),
                received,
                metric,
            )
        else:
            decoded = batch_unique_within_decode(
                codebook, received, metric, budget_level, restrict
            )
        errors[k] = int((decoded != int(m)).sum())
    rates = errors / trials_per_message
    worst = int(rates.argmax())
    return MbpReport(
        per_message=rates,
        sup=float(rates[worst]),
        sup_half_width=wilson_half_width(int(errors[worst]), trials_per_message),
        average=float(rates.mean()),
        trials_per_message=trials_per_message,
        rule=rule,
    )


def zipf_message_pmf(cardinality: int, exponent: float) -> Pmf:
    """Zipf-skewed message distribution over a message set."""
    weights = (1.0 + np.arange(cardinality)) ** (-exponent)
    return Pmf.from_probs(weights / weights.sum())
