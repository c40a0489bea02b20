"""
호기심 기반 내적 보상 (역/순방향 동역학 모델)
φ(s)로 행동을 맞히는 역모델과 φ(s′)를 예측하는 순모델, 보상 = 순모델 예측 오차
"""
import copy
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from pydantic import BaseModel, Field

from drop_bottleneck.core.exceptions import EmptyBufferError
from drop_bottleneck.core.logging import CustomLogger
from drop_bottleneck.services.ib_training import FeatureExtractor

logger = CustomLogger(__name__)


class CuriosityConfig(BaseModel):
    """역/순방향 모델 설정"""
    d: int = Field(default=128, ge=1, description="인코딩 차원")
    hidden: int = Field(default=128, ge=1)
    forward_weight: float = Field(default=0.2, ge=0, le=1, description="순모델 손실 비중 (나머지는 역모델)")
    reward_strength: float = Field(default=1.0, ge=0, description="예측 오차 보상 계수 η")
    learning_rate: float = Field(default=1e-4, gt=0)
    batch_size: int = Field(default=128, ge=1)
    epochs: int = Field(default=4, ge=0)


@dataclass
class CuriosityLosses:
    inverse_loss: float
    forward_loss: float


class CuriosityModel(nn.Module):
    """φ, 역모델 g(φ(s), φ(s′)) → a, 순모델 h(φ(s), a) → φ(s′)"""

    def __init__(self, observation_dim: int, n_actions: int, cfg: CuriosityConfig):
        super().__init__()
        self.n_actions = n_actions
        self.cfg = cfg
        self.encoder = FeatureExtractor(observation_dim, cfg.d, cfg.hidden)
        self.inverse = nn.Sequential(
            nn.Linear(2 * cfg.d, cfg.hidden), nn.ReLU(),
            nn.Linear(cfg.hidden, n_actions),
        )
        self.forward_model = nn.Sequential(
            nn.Linear(cfg.d + n_actions, cfg.hidden), nn.ReLU(),
            nn.Linear(cfg.hidden, cfg.d),
        )

    def _predict_next(self, encoded: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
        one_hot = F.one_hot(actions, self.n_actions).to(encoded.dtype)
        return self.forward_model(torch.cat([encoded, one_hot], dim=-1))

    def losses(self, states: torch.Tensor, actions: torch.Tensor,
               next_states: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """(역모델 CE, 순모델 MSE), 순모델의 목표 φ(s′)는 상수"""
        encoded, encoded_next = self.encoder(states), self.encoder(next_states)
        logits = self.inverse(torch.cat([encoded, encoded_next], dim=-1))
        inverse_loss = F.cross_entropy(logits, actions)
        predicted = self._predict_next(encoded, actions)
        forward_loss = 0.5 * (predicted - encoded_next.detach()).pow(2).sum(dim=-1).mean()
        return inverse_loss, forward_loss

    def rewards(self, states: torch.Tensor, actions: torch.Tensor, next_states: torch.Tensor) -> torch.Tensor:
        """η/2 · ||h(φ(s), a) − φ(s′)||²"""
        with torch.no_grad():
            predicted = self._predict_next(self.encoder(states), actions)
            error = (predicted - self.encoder(next_states)).pow(2).sum(dim=-1)
        return 0.5 * self.cfg.reward_strength * error

    def reward(self, state, action: int, next_state) -> float:
        dtype = next(self.parameters()).dtype
        states = torch.as_tensor(np.asarray(state), dtype=dtype).reshape(1, -1)
        next_states = torch.as_tensor(np.asarray(next_state), dtype=dtype).reshape(1, -1)
        return float(self.rewards(states, torch.tensor([int(action)]), next_states)[0])

    def snapshot(self) -> "CuriosityModel":
        frozen = copy.deepcopy(self)
        frozen.eval()
        for parameter in frozen.parameters():
            parameter.requires_grad_(False)
        return frozen


def build_curiosity_model(observation_dim: int, n_actions: int, cfg: CuriosityConfig,
                          rng: Optional[torch.Generator] = None) -> CuriosityModel:
    seed = int(torch.randint(0, 2 ** 62, (1,), generator=rng)) if rng is not None else None
    with torch.random.fork_rng(enabled=seed is not None):
        if seed is not None:
            torch.manual_seed(seed)
        return CuriosityModel(observation_dim, n_actions, cfg)


class CuriosityTrainer:
    """수집 구간마다 (1 − w)·역모델 + w·순모델 손실로 학습"""

    def __init__(self, model: CuriosityModel):
        self.model = model
        self.optimizer = torch.optim.Adam(model.parameters(), lr=model.cfg.learning_rate)
        self.rounds = 0

    def train(self, transitions: Sequence, rng: Optional[torch.Generator] = None) -> List[CuriosityLosses]:
        if not transitions:
            raise EmptyBufferError("curiosity buffer is empty")
        cfg = self.model.cfg
        dtype = next(self.model.parameters()).dtype
        states = torch.as_tensor(np.stack([t.state for t in transitions]), dtype=dtype)
        next_states = torch.as_tensor(np.stack([t.next_state for t in transitions]), dtype=dtype)
        actions = torch.as_tensor([t.action for t in transitions], dtype=torch.int64)

        trace: List[CuriosityLosses] = []
        self.model.train()
        for _ in range(cfg.epochs):
            order = torch.randperm(len(transitions), generator=rng)
            for start in range(0, len(transitions), cfg.batch_size):
                index = order[start:start + cfg.batch_size]
                inverse_loss, forward_loss = self.model.losses(states[index], actions[index], next_states[index])
                loss = (1.0 - cfg.forward_weight) * inverse_loss + cfg.forward_weight * forward_loss
                self.optimizer.zero_grad()
                loss.backward()
                self.optimizer.step()
                trace.append(CuriosityLosses(float(inverse_loss), float(forward_loss)))

        self.rounds += 1
        if trace:
            logger.debug("Curiosity training round finished", round=self.rounds, samples=len(transitions),
                         inverse_loss=trace[-1].inverse_loss, forward_loss=trace[-1].forward_loss)
        return trace
