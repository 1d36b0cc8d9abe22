"""Per-block limited-feedback protocol and the episode / training loops.

Each coherence block runs four steps: sound every codeword, pick the best
measured rate at the BS, feed back the index (plus direction indices for
DPIC-managed codewords), then update the codebook for the next block.

Codeword slots ``0 .. M_DPIC-1`` are DPIC-managed; the remaining slots are
RA-updated around the selected codeword.  The RVQ baseline redraws the whole
codebook every block.

Random streams
--------------
Every episode draws from four independent generators spawned from
``SeedSequence([seed, tag, episode])``: ``channel`` (environment init and
evolution), ``codebook`` (initial codebook, RA perturbations, RVQ draws),
``exploration`` (behavior noise and replay sampling) and ``measurement``
(pilot noise).  Run-level objects (agent weights, direction codebook) come
from ``SeedSequence([seed, RUN_TAG])``.  Because the channel stream is
separate, every strategy sees the same channel trajectory for a given
(seed, episode).
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import channel as ch
from .codebook import (
    C_MAX,
    C_MIN,
    GroupMap,
    direction_codebook,
    dpic_update,
    ra_update,
    rvq_generate,
    select_codeword,
)
from .drl import (
    Agent,
    AgentConfig,
    TrainingDivergence,
    allocate_agents,
    behavior_train,
    behavior_util,
    epsilon_schedule,
    reward,
    save_checkpoint,
    scale_state,
)
from .reflection import CircuitParamTable, default_table
from .system import (
    BlockReport,
    LinkBudget,
    data_rate,
    effective_channels_grouped,
    effective_rate,
    feedback_bits,
    measure_effective_channel,
    time_overhead,
)

log = logging.getLogger(__name__)

KINDS = ("RVQ", "RA", "SDPIC", "MDPIC", "RA_SDPIC", "RA_MDPIC")
DPIC_KINDS = KINDS[2:]
PHASES = ("training", "utilization")
RUN_TAG = 7919


class EpisodeAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class StrategyConfig:
    kind: str
    M: int
    M_A: int = 0
    M_DPIC: int = 0
    phase: str = "utilization"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown strategy {self.kind!r}")
        if self.phase not in PHASES:
            raise ValueError(f"unknown phase {self.phase!r}")
        if self.M < 1:
            raise ValueError("codebook size M must be at least 1")
        if self.kind in ("RVQ", "RA"):
            if self.M_A or self.M_DPIC:
                raise ValueError(f"{self.kind} uses no agents")
            return
        if self.kind in ("SDPIC", "RA_SDPIC") and self.M_A != 1:
            raise ValueError(f"{self.kind} needs exactly one agent")
        if self.kind in ("MDPIC", "RA_MDPIC") and self.M_A < 2:
            raise ValueError(f"{self.kind} needs more than one agent")
        if not 1 <= self.M_DPIC <= self.M:
            raise ValueError(f"M_DPIC={self.M_DPIC} must lie in [1, M={self.M}]")
        if self.phase == "training" and self.M_DPIC != self.M_A:
            raise ValueError("during training each agent manages exactly one codeword (M_DPIC == M_A)")

    @classmethod
    def preset(cls, kind: str, M: int, phase: str = "utilization", M_A: int | None = None) -> "StrategyConfig":
        """Strategy with the reference agent counts.

        Utilization: SDPIC (1 agent, all slots), MDPIC (8 agents, all slots),
        RA+SDPIC (1 agent, 1 slot), RA+MDPIC (4 agents, min(M, 4) slots).
        Training: one slot per agent, the rest RA-updated.
        """
        if kind in ("RVQ", "RA"):
            return cls(kind, M, phase=phase)
        default_agents = {"SDPIC": 1, "RA_SDPIC": 1, "MDPIC": 8, "RA_MDPIC": 4}
        n = default_agents[kind] if M_A is None else M_A
        if phase == "training":
            if kind == "MDPIC" and M_A is None:
                n = M
            n = min(n, M) if kind in ("MDPIC", "RA_MDPIC") else n
            return cls(kind, M, M_A=n, M_DPIC=n, phase=phase)
        if kind in ("SDPIC", "MDPIC"):
            return cls(kind, M, M_A=n, M_DPIC=M, phase=phase)
        if kind == "RA_SDPIC":
            return cls(kind, M, M_A=n, M_DPIC=1, phase=phase)
        return cls(kind, M, M_A=n, M_DPIC=min(M, n), phase=phase)

    @property
    def is_dpic(self) -> bool:
        return self.kind in DPIC_KINDS

    @property
    def M_RA(self) -> int:
        return 0 if self.kind == "RVQ" else self.M - self.M_DPIC

    @property
    def n_directions(self) -> int:
        """Direction indices fed back per block."""
        if not self.is_dpic:
            return 0
        return self.M_A if self.phase == "training" else self.M_DPIC

    def slot_rules(self) -> list[str]:
        if self.kind == "RVQ":
            return ["RVQ"] * self.M
        return ["DPIC"] * self.M_DPIC + ["RA"] * self.M_RA


@dataclass
class SimConfig:
    """Every physical and algorithmic constant a simulation needs."""

    env: ch.EnvConfig = field(default_factory=ch.EnvConfig)
    budget: LinkBudget = field(default_factory=LinkBudget)
    table: CircuitParamTable = field(default_factory=default_table)
    N_G: int = 10
    K: int = 2048
    C_min: float = C_MIN
    C_max: float = C_MAX
    delta_RA: float | None = None
    agent: AgentConfig | None = None

    def __post_init__(self):
        if self.delta_RA is None:
            self.delta_RA = (self.C_max - self.C_min) / 5.0
        if self.agent is None:
            self.agent = AgentConfig(
                n_state=2 * self.env.N_BS + self.N_G, n_action=self.N_G, delta=(self.C_max - self.C_min) / 4.0
            )
        if self.budget.T_c != self.env.T_c:
            raise ValueError("link budget and environment disagree on T_c")
        GroupMap(self.N_G, self.env.N_IRS_w, self.env.N_IRS_h)

    @property
    def gmap(self) -> GroupMap:
        return GroupMap(self.N_G, self.env.N_IRS_w, self.env.N_IRS_h)

    @property
    def epsilon0(self) -> float:
        from .drl import ACTION_UNIT

        return (self.C_max - self.C_min) * ACTION_UNIT / 5.0


@dataclass
class EpisodeRngs:
    channel: np.random.Generator
    codebook: np.random.Generator
    exploration: np.random.Generator
    measurement: np.random.Generator


def episode_rngs(seed: int, episode: int, tag: int = 0) -> EpisodeRngs:
    kids = np.random.SeedSequence([int(seed), int(tag), int(episode)]).spawn(4)
    return EpisodeRngs(*(np.random.default_rng(k) for k in kids))


def run_rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """(agent initialization, direction codebook) generators for a run."""
    a, d = np.random.SeedSequence([int(seed), RUN_TAG]).spawn(2)
    return np.random.default_rng(a), np.random.default_rng(d)


@dataclass
class ProtocolState:
    codebook: np.ndarray
    t: int = 0
    q_star: np.ndarray | None = None
    # slot -> (state, scaled action, clip count) awaiting next block's reward
    pending: dict = field(default_factory=dict)


def run_block(state: ProtocolState, channels: ch.Channels, strategy: StrategyConfig, sim: SimConfig,
              rngs: EpisodeRngs, agents=(), D=None, epsilon: float = 0.0):
    """Execute the four protocol steps for one coherence block."""
    Q = state.codebook
    M = strategy.M
    if Q.shape != (M, sim.N_G):
        raise ValueError(f"codebook shape {Q.shape} does not match M={M}, N_G={sim.N_G}")
    budget, env = sim.budget, sim.env
    training = strategy.phase == "training"

    # Step 1: sound every codeword; the BS sees noisy single-pilot estimates
    H = effective_channels_grouped(channels, Q, sim.gmap.size, sim.table)
    H_meas = measure_effective_channel(H, budget.P, budget.sigma2, rngs.measurement)
    rates_meas = data_rate(H_meas, budget.P, budget.sigma2)

    # Step 2: selection and per-slot inference
    m_star = select_codeword(rates_meas)
    directions = {}
    pending = {}
    if strategy.is_dpic:
        if D is None or len(agents) < min(strategy.M_A, strategy.M_DPIC):
            raise ValueError("DPIC strategies need agents and a direction codebook")
        owner = allocate_agents(strategy.M_DPIC, strategy.M_A)
        for m in range(strategy.M_DPIC):
            agent = agents[owner[m]]
            s = scale_state(H_meas[m], Q[m], budget.P, budget.sigma2, env.N_BS, sim.N_G)
            if training:
                prev = state.pending.get(m)
                if prev is not None:
                    s_prev, a_prev, n_clip = prev
                    agent.buffer.push(s_prev, a_prev, reward(rates_meas[m], n_clip), s)
                a, k = behavior_train(agent, s, D, epsilon, rngs.exploration)
                pending[m] = (s, a)
            else:
                k = behavior_util(agent, s, D)
            directions[m] = k

    # Step 3: feedback and final configuration
    B = feedback_bits(strategy.kind, M, sim.K, strategy.n_directions, budget)
    T_p = time_overhead(M, budget.T_reconf, B, budget.R_feedback, m_star == M - 1, budget.T_c)
    rate_true = float(data_rate(H[m_star], budget.P, budget.sigma2))
    rate_eff = effective_rate(rate_true, T_p, budget.T_c)
    q_star = Q[m_star].copy()
    if not (math.isfinite(rate_true) and math.isfinite(rates_meas[m_star])):
        raise EpisodeAborted(f"non-finite rate at block {state.t}: true={rate_true}, measured={rates_meas[m_star]}")

    # Step 4: codebook update (and agent training)
    if strategy.kind == "RVQ":
        Q_next = rvq_generate(M, sim.N_G, sim.C_min, sim.C_max, rngs.codebook)
    else:
        Q_next = np.empty_like(Q)
        for m, k in directions.items():
            Q_next[m], n_clip = dpic_update(Q[m], D[k], sim.C_min, sim.C_max)
            if m in pending:
                pending[m] = (*pending[m], n_clip)
        if strategy.M_RA:
            Q_next[strategy.M_DPIC :] = ra_update(q_star, strategy.M_RA, sim.delta_RA, rngs.codebook, sim.C_min, sim.C_max)
    if training:
        for agent in agents[: strategy.M_A]:
            agent.train_step(rngs.exploration)

    report = BlockReport(
        t=state.t,
        m_star=m_star,
        rate_true=rate_true,
        rate_measured=float(rates_meas[m_star]),
        T_p=T_p,
        rate_effective=rate_eff,
        feedback_bits=B,
    )
    return ProtocolState(codebook=Q_next, t=state.t + 1, q_star=q_star, pending=pending), report


def run_episode(scenario: str, strategy: StrategyConfig, sim: SimConfig, n_blocks: int, rngs: EpisodeRngs,
                agents=(), D=None, epsilon: float = 0.0) -> list[BlockReport]:
    if n_blocks < 1:
        raise ValueError("an episode needs at least one block")
    geom, chan = ch.init_environment(sim.env, scenario, rngs.channel)
    state = ProtocolState(codebook=rvq_generate(strategy.M, sim.N_G, sim.C_min, sim.C_max, rngs.codebook))
    reports = []
    for _ in range(n_blocks):
        channels = ch.realize(chan, geom, sim.env)
        state, rep = run_block(state, channels, strategy, sim, rngs, agents, D, epsilon)
        reports.append(rep)
        geom, chan = ch.step_environment(geom, chan, scenario, sim.env, rngs.channel)
    return reports


def make_agents(sim: SimConfig, n_agents: int, seed: int):
    """Fresh agents and the run's direction codebook."""
    agent_rng, dir_rng = run_rngs(seed)
    agents = [Agent.create(sim.agent, agent_rng) for _ in range(n_agents)]
    D = direction_codebook(sim.K, sim.N_G, sim.agent.delta, dir_rng)
    return agents, D


@dataclass
class TrainingResult:
    agents: list
    D: np.ndarray
    episode_rate: list = field(default_factory=list)
    episode_effective_rate: list = field(default_factory=list)
    epsilons: list = field(default_factory=list)
    losses: list = field(default_factory=list)


def run_training(scenario: str, strategy: StrategyConfig, sim: SimConfig, n_episodes: int, n_blocks: int,
                 seed: int, checkpoint=None, agents=None, D=None, tag: int = 1) -> TrainingResult:
    """Train ``strategy.M_A`` agents over ``n_episodes`` fresh episodes.

    Agents and replay buffers persist across episodes; codebook and channels
    are reset.  The exploration variance decays per episode.  On divergence
    the last completed episode's agents are written to ``checkpoint`` (when
    given) before the error propagates.
    """
    if strategy.phase != "training" or not strategy.is_dpic:
        raise ValueError("run_training needs a DPIC strategy in the training phase")
    if agents is None:
        agents, D = make_agents(sim, strategy.M_A, seed)
    result = TrainingResult(agents=agents, D=D)
    last_good = copy.deepcopy(agents) if checkpoint is not None else None
    for e in range(n_episodes):
        eps = epsilon_schedule(e, sim.epsilon0)
        rngs = episode_rngs(seed, e, tag)
        try:
            reports = run_episode(scenario, strategy, sim, n_blocks, rngs, agents, D, eps)
        except (TrainingDivergence, EpisodeAborted) as exc:
            if checkpoint is not None:
                save_checkpoint(checkpoint, last_good, D)
                log.error("episode %d aborted (%s); last good agents written to %s", e, exc, checkpoint)
            raise
        result.epsilons.append(eps)
        result.episode_rate.append(float(np.mean([r.rate_true for r in reports])))
        result.episode_effective_rate.append(float(np.mean([r.rate_effective for r in reports])))
        if checkpoint is not None:
            last_good = [_frozen_copy(a) for a in agents]
        log.info("episode %d: eps=%.4g mean effective rate %.4f", e, eps, result.episode_effective_rate[-1])
    if checkpoint is not None:
        save_checkpoint(checkpoint, agents, D)
    return result


def _frozen_copy(agent: Agent) -> Agent:
    # the replay buffer is not checkpointed, so skip copying it
    buf = agent.buffer
    agent.buffer = None
    try:
        dup = copy.deepcopy(agent)
    finally:
        agent.buffer = buf
    return dup
