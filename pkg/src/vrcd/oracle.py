"""Seeded synthetic source of decoding states with plantable redundancy.

The oracle fabricates a full decoding run without any model: image tokens
are partitioned into regions, every text position attends to one region,
and confidences follow a peaked single-token distribution so margin and
entropy have closed forms.  Redundancy among top candidates is planted by
boosting the confidence of every position that shares the top position's
region (`overlap_pressure`); committing positions whose regions were not
yet covered lifts all remaining confidences (`coverage_boost`).

Region assignment is stratified by confidence rank: position with base
rank r gets region (r-1) mod G, so members of one region sit G ranks
apart.  Unboosted runs therefore never see two same-region candidates in
one selection window, which makes the zero-pressure control behave
identically under every policy instead of merely similarly.  The
`independent_assignment` flag restores unstratified random assignment,
at the cost of that exactness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .states import (
    CandidatePrediction,
    CommitRecord,
    DecodingState,
    SourceExhaustedError,
)


class OracleConfigError(ValueError):
    """The oracle configuration is internally inconsistent."""


class AdvanceContractError(ValueError):
    """A commit fed back to the oracle does not match its current state."""


@dataclass(frozen=True)
class OracleConfig:
    """Generation knobs for one synthetic run.

    region_noise (epsilon) mixes uniform attention into every row;
    overlap_pressure (beta) pushes the top region's confidences toward 1;
    coverage_boost (delta) multiplies remaining confidences per newly
    covered region.  conf_shape_a/b parameterize the Beta base draw.
    """

    length: int = 192
    num_image_tokens: int = 96
    vocab_size: int = 1000
    num_regions: int = 48
    region_noise: float = 0.1
    overlap_pressure: float = 0.0
    coverage_boost: float = 0.0
    conf_shape_a: float = 8.0
    conf_shape_b: float = 4.0
    seed: int = 0
    shuffle_regions: bool = False
    independent_assignment: bool = False
    base_confidence_cap: float = 0.95
    confidence_clamp: float = 0.999

    def __post_init__(self) -> None:
        if self.length < 1:
            raise OracleConfigError(f"length must be positive, got {self.length}")
        if self.num_image_tokens < 1:
            raise OracleConfigError("num_image_tokens must be positive")
        if self.vocab_size < 2:
            raise OracleConfigError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if not 1 <= self.num_regions <= self.num_image_tokens:
            raise OracleConfigError(
                f"num_regions must be in [1, {self.num_image_tokens}], got {self.num_regions}"
            )
        if not 0.0 <= self.region_noise <= 1.0:
            raise OracleConfigError("region_noise must be in [0, 1]")
        if not 0.0 <= self.overlap_pressure <= 1.0:
            raise OracleConfigError("overlap_pressure must be in [0, 1]")
        if self.coverage_boost < 0.0:
            raise OracleConfigError("coverage_boost must be nonnegative")
        if self.conf_shape_a <= 0 or self.conf_shape_b <= 0:
            raise OracleConfigError("confidence shape parameters must be positive")
        if not 1.0 / self.vocab_size < self.base_confidence_cap <= self.confidence_clamp < 1.0:
            raise OracleConfigError(
                "need 1/V < base_confidence_cap <= confidence_clamp < 1"
            )


def peaked_margin(confidence: float, vocab_size: int) -> float:
    """Top-two gap of the distribution with mass c on one token, rest uniform."""
    return confidence - (1.0 - confidence) / (vocab_size - 1)


def peaked_entropy(confidence: float, vocab_size: int) -> float:
    """Normalized entropy of the same peaked distribution, 1 at uniform."""
    c = confidence
    rest = (1.0 - c) / (vocab_size - 1)
    if rest <= 0.0:
        return 0.0 if c >= 1.0 else -(c * math.log(c)) / math.log(vocab_size)
    return -(c * math.log(c) + (1.0 - c) * math.log(rest)) / math.log(vocab_size)


class SyntheticOracle:
    """StateSource that replays a fabricated run for one seed.

    All randomness is consumed at construction; advance() is a pure
    function of the commits seen so far, so identical seeds plus identical
    commit sequences give bit-identical states.
    """

    def __init__(self, config: OracleConfig) -> None:
        self.config = config
        cfg = config
        rng = np.random.default_rng(cfg.seed)

        token_ids = np.arange(cfg.num_image_tokens)
        if cfg.shuffle_regions:
            token_ids = rng.permutation(token_ids)
        self._region_tokens = [
            np.sort(chunk) for chunk in np.array_split(token_ids, cfg.num_regions)
        ]

        base = rng.beta(cfg.conf_shape_a, cfg.conf_shape_b, size=cfg.length)
        base = np.clip(base, 1.0 / cfg.vocab_size, cfg.base_confidence_cap)
        # rank 0 = highest base confidence; stable sort keeps position order on ties
        order = np.argsort(-base, kind="stable")

        region_of = np.empty(cfg.length, dtype=int)
        if cfg.independent_assignment:
            region_of[:] = rng.integers(0, cfg.num_regions, size=cfg.length)
        else:
            region_of[order] = np.arange(cfg.length) % cfg.num_regions

        top_region = int(region_of[order[0]])
        boosted = base.copy()
        if cfg.overlap_pressure > 0.0:
            members = region_of == top_region
            boosted[members] = base[members] + cfg.overlap_pressure * (1.0 - base[members])

        self._base_confidence = boosted
        self._region_of = region_of
        self._planted_region = top_region
        self._tokens = rng.integers(0, cfg.vocab_size, size=cfg.length)

        eps = cfg.region_noise
        n = cfg.num_image_tokens
        self._attention_rows = []
        for tokens in self._region_tokens:
            row = np.full(n, eps / n)
            row[tokens] += (1.0 - eps) / len(tokens)
            row.flags.writeable = False
            self._attention_rows.append(row)

        self._masked: tuple[int, ...] = tuple(range(cfg.length))
        self._covered: set[int] = set()
        self._step_index = 0

    def _current_confidence(self, position: int) -> float:
        cfg = self.config
        c = self._base_confidence[position] * (1.0 + cfg.coverage_boost) ** len(self._covered)
        return min(cfg.confidence_clamp, float(c))

    def _build_state(self) -> DecodingState:
        cfg = self.config
        candidates = {}
        for p in self._masked:
            c = self._current_confidence(p)
            candidates[p] = CandidatePrediction(
                position=p,
                predicted_token=int(self._tokens[p]),
                confidence=c,
                margin=peaked_margin(c, cfg.vocab_size),
                entropy_norm=peaked_entropy(c, cfg.vocab_size),
                attention=self._attention_rows[self._region_of[p]],
            )
        return DecodingState(
            step_index=self._step_index,
            length=cfg.length,
            num_image_tokens=cfg.num_image_tokens,
            masked_positions=self._masked,
            candidates=candidates,
        )

    def initial_state(self) -> DecodingState:
        if self._step_index != 0:
            raise AdvanceContractError("initial_state() after the run has advanced")
        return self._build_state()

    def advance(self, commit: CommitRecord) -> DecodingState:
        if not self._masked:
            raise SourceExhaustedError("run already complete")
        if commit.step_index != self._step_index:
            raise AdvanceContractError(
                f"commit for step {commit.step_index}, oracle at step {self._step_index}"
            )
        masked = set(self._masked)
        for p in commit.committed_positions:
            if p not in masked:
                raise AdvanceContractError(f"position {p} is not masked")
        self._masked = tuple(p for p in self._masked if p not in set(commit.committed_positions))
        self._covered.update(int(self._region_of[p]) for p in commit.committed_positions)
        self._step_index += 1
        if not self._masked:
            raise SourceExhaustedError("all positions committed; no further states")
        return self._build_state()

    @property
    def planted_region(self) -> int:
        return self._planted_region

    def region_of(self, position: int) -> int:
        return int(self._region_of[position])


def init_run(config: OracleConfig) -> SyntheticOracle:
    return SyntheticOracle(config)
