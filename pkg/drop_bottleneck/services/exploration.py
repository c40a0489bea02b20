"""
탐험 모듈
에피소드 메모리, 판별자 기반 내적 보상, 보상 정규화, PPO 에이전트와 롤아웃
"""
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.distributions import Categorical

from drop_bottleneck.core.exceptions import DropBottleneckError, EmptyBatchError, RolloutError
from drop_bottleneck.core.logging import CustomLogger
from drop_bottleneck.models.domain import EpisodeStats, Transition
from drop_bottleneck.models.experiment import PPOConfig
from drop_bottleneck.services.curiosity import CuriosityModel
from drop_bottleneck.services.ib_training import InfomaxModel
from drop_bottleneck.services.mutual_information import Discriminator

logger = CustomLogger(__name__)

# 학습되지 않은 판별자(T ≡ 0)에서의 값: 2·ζ(0) = 2·log 2
R_MAX = 2.0 * math.log(2.0)
NORMALIZER_EPS = 1e-8


@dataclass
class EpisodicMemory:
    """현재 에피소드의 결정적 압축 임베딩 목록"""
    entries: List[torch.Tensor] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def clear(self):
        self.entries.clear()

    def stacked(self) -> torch.Tensor:
        return torch.stack(self.entries)


def _as_batch(state, dtype: torch.dtype) -> torch.Tensor:
    x = torch.as_tensor(np.asarray(state), dtype=dtype)
    return x.unsqueeze(0) if x.dim() == 1 else x


def embed_observation(model: InfomaxModel, state) -> torch.Tensor:
    """Z̄(s) = 결정적 압축(f_φ(s))"""
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        return model.embed(_as_batch(state, dtype))[0]


def memory_append(memory: EpisodicMemory, state, model: InfomaxModel) -> EpisodicMemory:
    memory.entries.append(embed_observation(model, state))
    return memory


def intrinsic_reward_from_embedding(embedding: torch.Tensor, memory: EpisodicMemory,
                                    discriminator: Discriminator, r_max: float = R_MAX) -> float:
    """(1/|M|) Σ_j [ζ(−T(e, m_j)) + ζ(−T(m_j, e))]"""
    if len(memory) == 0:
        return float(r_max)
    stored = memory.stacked()
    current = embedding.unsqueeze(0).expand(stored.shape[0], -1)
    with torch.no_grad():
        forward = F.softplus(-discriminator(current, stored))
        backward = F.softplus(-discriminator(stored, current))
    return float((forward + backward).mean())


def intrinsic_reward(state, memory: EpisodicMemory, model: InfomaxModel, r_max: float = R_MAX) -> float:
    """새 관측 하나만 임베딩하고 메모리 항목은 저장된 벡터를 그대로 쓴다"""
    if len(memory) == 0:
        return float(r_max)
    return intrinsic_reward_from_embedding(embed_observation(model, state), memory, model.discriminator, r_max)


class RewardNormalizer:
    """내적 보상의 이동 평균/분산 (Welford, 초기값 mean 0, var 1)

    normalize는 현재 통계로 먼저 정규화한 뒤 r로 통계를 갱신한다.
    """

    def __init__(self, eps: float = NORMALIZER_EPS):
        self.mean = 0.0
        self.m2 = 0.0
        self.count = 0
        self.eps = eps

    @property
    def var(self) -> float:
        return self.m2 / self.count if self.count > 0 else 1.0

    def update(self, value: float):
        self.count += 1
        delta = value - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (value - self.mean)

    def update_batch(self, values: Sequence[float]):
        """Chan 병렬 병합 (스트리밍 update와 같은 결과)"""
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if values.size == 0:
            return
        batch_count = int(values.size)
        batch_mean = float(values.mean())
        batch_m2 = float(((values - batch_mean) ** 2).sum())
        total = self.count + batch_count
        delta = batch_mean - self.mean
        self.mean += delta * batch_count / total
        self.m2 += batch_m2 + delta ** 2 * self.count * batch_count / total
        self.count = total

    def normalize(self, value: float) -> float:
        normalized = (value - self.mean) / math.sqrt(self.var + self.eps)
        self.update(value)
        return normalized


def normalize(normalizer: RewardNormalizer, value: float) -> float:
    return normalizer.normalize(value)


def combined_reward(task_reward: float, intrinsic: float, scale: float, task_scale: float = 1.0) -> float:
    """task_scale·r_task + scale·r_intrinsic (정규화된 값)"""
    if scale < 0:
        raise DropBottleneckError(f"intrinsic scale must be >= 0, got {scale}")
    return task_scale * task_reward + scale * intrinsic


def _mlp(input_dim: int, hidden: int, output_dim: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Linear(input_dim, hidden), nn.Tanh(),
        nn.Linear(hidden, hidden), nn.Tanh(),
        nn.Linear(hidden, output_dim),
    )


class PolicyAgent(nn.Module):
    """분리된 정책/가치 MLP와 PPO 하이퍼파라미터"""

    def __init__(self, observation_dim: int, n_actions: int, cfg: Optional[PPOConfig] = None,
                 rng: Optional[torch.Generator] = None):
        super().__init__()
        self.cfg = cfg or PPOConfig()
        seed = int(torch.randint(0, 2 ** 62, (1,), generator=rng)) if rng is not None else None
        with torch.random.fork_rng(enabled=seed is not None):
            if seed is not None:
                torch.manual_seed(seed)
            self.policy = _mlp(observation_dim, self.cfg.hidden, n_actions)
            self.value = _mlp(observation_dim, self.cfg.hidden, 1)
        self.optimizer = torch.optim.Adam(self.parameters(), lr=self.cfg.learning_rate, eps=1e-5)

    def distribution(self, observations: torch.Tensor) -> Categorical:
        return Categorical(logits=self.policy(observations))

    def action_probabilities(self, observations: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.policy(observations), dim=-1)

    def values(self, observations: torch.Tensor) -> torch.Tensor:
        return self.value(observations).squeeze(-1)

    def act(self, observation: np.ndarray, rng: Optional[torch.Generator] = None) -> Tuple[int, float, float]:
        """(행동, log π(a|s), V(s))"""
        with torch.no_grad():
            obs = _as_batch(observation, torch.float32)
            probs = self.action_probabilities(obs)[0]
            action = int(torch.multinomial(probs, 1, generator=rng))
            log_prob = float(torch.log(probs[action]))
            value = float(self.values(obs)[0])
        return action, log_prob, value


def compute_gae(rewards: Sequence[float], values: Sequence[float], dones: Sequence[bool],
                last_value: float, gamma: float, lam: float) -> Tuple[np.ndarray, np.ndarray]:
    """GAE 이점과 리턴 (dones[t]면 t 다음 상태 가치를 끊음)"""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    advantages = np.zeros_like(rewards)
    running = 0.0
    for t in reversed(range(len(rewards))):
        next_value = last_value if t == len(rewards) - 1 else values[t + 1]
        alive = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * alive - values[t]
        running = delta + gamma * lam * alive * running
        advantages[t] = running
    return advantages, advantages + values


@dataclass
class PPOBatch:
    observations: torch.Tensor
    actions: torch.Tensor
    log_probs: torch.Tensor
    advantages: torch.Tensor
    returns: torch.Tensor

    def __len__(self) -> int:
        return int(self.actions.shape[0])


@dataclass
class PPOLosses:
    """업데이트 평균 손실"""
    policy_loss: float
    value_loss: float
    entropy: float
    surrogate: float
    clip_fraction: float
    approx_kl: float


def clipped_surrogate(log_probs: torch.Tensor, old_log_probs: torch.Tensor, advantages: torch.Tensor,
                      clip_ratio: float) -> torch.Tensor:
    """표본별 min(rA, clip(r)A), 비율이 [1−ε, 1+ε] 밖이면 그 표본의 그래디언트는 0"""
    ratio = torch.exp(log_probs - old_log_probs)
    clipped = torch.clamp(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio)
    surrogate = torch.min(ratio * advantages, clipped * advantages)
    inside = (ratio >= 1.0 - clip_ratio) & (ratio <= 1.0 + clip_ratio)
    return torch.where(inside, surrogate, surrogate.detach())


def ppo_update(agent: PolicyAgent, batch: PPOBatch, rng: Optional[torch.Generator] = None) -> PPOLosses:
    """클립 대리목적 + 가치 손실 + 엔트로피 보너스"""
    if len(batch) == 0:
        raise EmptyBatchError("ppo_update needs a non-empty batch")
    cfg = agent.cfg
    sums = np.zeros(6)
    updates = 0
    for _ in range(cfg.epochs):
        order = torch.randperm(len(batch), generator=rng)
        for start in range(0, len(batch), cfg.minibatch_size):
            index = order[start:start + cfg.minibatch_size]
            advantages = batch.advantages[index]
            if cfg.normalize_advantages and len(index) > 1:
                advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)
            dist = agent.distribution(batch.observations[index])
            log_probs = dist.log_prob(batch.actions[index])
            surrogate = clipped_surrogate(log_probs, batch.log_probs[index], advantages, cfg.clip_ratio)
            policy_loss = -surrogate.mean()
            value_loss = 0.5 * (batch.returns[index] - agent.values(batch.observations[index])).pow(2).mean()
            entropy = dist.entropy().mean()
            loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy

            agent.optimizer.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(agent.parameters(), cfg.max_grad_norm)
            agent.optimizer.step()

            with torch.no_grad():
                log_ratio = log_probs - batch.log_probs[index]
                clip_fraction = ((log_ratio.exp() - 1.0).abs() > cfg.clip_ratio).float().mean()
                approx_kl = ((log_ratio.exp() - 1.0) - log_ratio).mean()
            sums += [float(policy_loss), float(value_loss), float(entropy), float(surrogate.mean()),
                     float(clip_fraction), float(approx_kl)]
            updates += 1
    return PPOLosses(*(sums / max(updates, 1)).tolist())


@dataclass
class RolloutResult:
    """한 수집 구간의 결과"""
    transitions: List[Transition] = field(default_factory=list)
    observations: List[np.ndarray] = field(default_factory=list)
    actions: List[int] = field(default_factory=list)
    log_probs: List[float] = field(default_factory=list)
    values: List[float] = field(default_factory=list)
    intrinsic_rewards: List[float] = field(default_factory=list)
    normalized_intrinsic: List[float] = field(default_factory=list)
    rewards: List[float] = field(default_factory=list)
    dones: List[bool] = field(default_factory=list)
    memory_sizes: List[int] = field(default_factory=list)
    episodes: List[EpisodeStats] = field(default_factory=list)
    last_value: float = 0.0

    def __len__(self) -> int:
        return len(self.transitions)

    def to_batch(self, gamma: float, lam: float) -> PPOBatch:
        if not self.transitions:
            raise EmptyBatchError("rollout produced no transitions")
        advantages, returns = compute_gae(self.rewards, self.values, self.dones, self.last_value, gamma, lam)
        return PPOBatch(
            observations=torch.as_tensor(np.stack(self.observations), dtype=torch.float32),
            actions=torch.as_tensor(self.actions, dtype=torch.int64),
            log_probs=torch.as_tensor(self.log_probs, dtype=torch.float32),
            advantages=torch.as_tensor(advantages, dtype=torch.float32),
            returns=torch.as_tensor(returns, dtype=torch.float32),
        )


class RolloutWorker:
    """환경 하나와 그 에피소드 메모리/보상 정규화 상태를 수집 구간 사이에 유지"""

    def __init__(self, env, env_rng: np.random.Generator, policy_rng: Optional[torch.Generator] = None,
                 intrinsic_scale: float = 0.0, task_scale: float = 1.0, r_max: float = R_MAX):
        self.env = env
        self.env_rng = env_rng
        self.policy_rng = policy_rng
        self.intrinsic_scale = intrinsic_scale
        self.task_scale = task_scale
        self.r_max = r_max
        self.memory = EpisodicMemory()
        self.normalizer = RewardNormalizer()
        self.episode_index = 0
        self.total_steps = 0
        self._episode_return = 0.0
        self._episode_intrinsic = 0.0
        self._episode_length = 0
        self.observation = self._reset()

    def _reset(self) -> np.ndarray:
        try:
            return self.env.reset(self.env_rng)
        except Exception as e:
            raise RolloutError(f"environment reset failed: {e}") from e

    def collect(self, agent: PolicyAgent, model: Optional[Union[InfomaxModel, CuriosityModel]],
                steps: int) -> RolloutResult:
        """steps 스텝 수집 (model은 구간 동안 고정된 스냅샷, None이면 내적 보상 없음)

        CuriosityModel이면 에피소드 메모리 없이 순모델 예측 오차를 내적 보상으로 쓴다.
        """
        result = RolloutResult()
        episodic = isinstance(model, InfomaxModel)
        for _ in range(steps):
            if episodic and len(self.memory) == 0:
                memory_append(self.memory, self.observation, model)

            action, log_prob, value = agent.act(self.observation, self.policy_rng)
            try:
                outcome = self.env.step(action, self.env_rng)
            except Exception as e:
                raise RolloutError(f"environment step failed: {e}") from e

            intrinsic = normalized = 0.0
            if episodic:
                intrinsic = intrinsic_reward(outcome.observation, self.memory, model, self.r_max)
                memory_append(self.memory, outcome.observation, model)
                normalized = self.normalizer.normalize(intrinsic)
            elif model is not None:
                intrinsic = model.reward(self.observation, action, outcome.observation)
                normalized = self.normalizer.normalize(intrinsic)
            reward = combined_reward(outcome.reward, normalized, self.intrinsic_scale, self.task_scale)

            result.transitions.append(Transition(
                state=self.observation, action=action, task_reward=outcome.reward,
                next_state=outcome.observation, done=outcome.done,
            ))
            result.observations.append(self.observation)
            result.actions.append(action)
            result.log_probs.append(log_prob)
            result.values.append(value)
            result.intrinsic_rewards.append(intrinsic)
            result.normalized_intrinsic.append(normalized)
            result.rewards.append(reward)
            result.dones.append(outcome.done)

            self._episode_return += outcome.reward
            self._episode_intrinsic += intrinsic
            self._episode_length += 1
            self.total_steps += 1

            if outcome.done:
                result.episodes.append(EpisodeStats(
                    episode=self.episode_index,
                    step=self.total_steps,
                    episode_return=self._episode_return,
                    intrinsic_sum=self._episode_intrinsic,
                    length=self._episode_length,
                    success=bool(outcome.success),
                ))
                self.episode_index += 1
                self._episode_return = self._episode_intrinsic = 0.0
                self._episode_length = 0
                self.memory.clear()
                self.observation = self._reset()
            else:
                self.observation = outcome.observation
            result.memory_sizes.append(len(self.memory))

        if steps > 0:
            with torch.no_grad():
                result.last_value = float(agent.values(_as_batch(self.observation, torch.float32))[0])
        logger.debug("Rollout collected", steps=steps, episodes=len(result.episodes),
                     memory_size=len(self.memory), normalizer_count=self.normalizer.count)
        return result


def rollout(env, agent: PolicyAgent, model: Optional[Union[InfomaxModel, CuriosityModel]], steps: int,
            env_rng: np.random.Generator, policy_rng: Optional[torch.Generator] = None,
            intrinsic_scale: float = 0.0, task_scale: float = 1.0) -> RolloutResult:
    """새 작업자로 한 번 수집"""
    worker = RolloutWorker(env, env_rng, policy_rng, intrinsic_scale=intrinsic_scale, task_scale=task_scale)
    return worker.collect(agent, model, steps)
