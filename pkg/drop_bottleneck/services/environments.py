"""
Noisy-TV 그리드월드
벽/목표 지도, 미로 생성, 시작 위치 정책(dense/sparse/very_sparse), TV 채널 손상 모드
"""
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from drop_bottleneck.core.exceptions import InvalidActionError, InvalidMapError, RolloutError
from drop_bottleneck.core.logging import CustomLogger
from drop_bottleneck.models.domain import NoiseMode, SpawnPolicy

logger = CustomLogger(__name__)

Cell = Tuple[int, int]

UP, DOWN, LEFT, RIGHT, TV_TOGGLE = range(5)
ACTION_NAMES = ("up", "down", "left", "right", "tv_toggle")
N_ACTIONS = len(ACTION_NAMES)
MOVES = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1)}

WALL, FREE, GOAL = "#", ".", "G"
UNREACHABLE = -1


@dataclass
class GridMap:
    """벽 격자(True = 벽)와 목표 칸들"""
    walls: np.ndarray
    goals: List[Cell]

    def __post_init__(self):
        self.walls = np.asarray(self.walls, dtype=bool)
        if self.walls.ndim != 2:
            raise InvalidMapError("wall grid must be 2-dimensional")
        if not self.goals:
            raise InvalidMapError("map has no goal cell")
        for cell in self.goals:
            if not self.is_free(cell):
                raise InvalidMapError(f"goal {cell} is not on a free cell")

    @property
    def height(self) -> int:
        return int(self.walls.shape[0])

    @property
    def width(self) -> int:
        return int(self.walls.shape[1])

    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.height and 0 <= cell[1] < self.width

    def is_free(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and not self.walls[cell]

    def free_cells(self) -> List[Cell]:
        return [(int(r), int(c)) for r, c in zip(*np.nonzero(~self.walls))]

    def goal_distances(self) -> np.ndarray:
        """목표 칸들로부터의 최단 경로(BFS) 거리, 도달 불가는 -1"""
        distances = np.full(self.walls.shape, UNREACHABLE, dtype=np.int64)
        queue = deque()
        for cell in self.goals:
            distances[cell] = 0
            queue.append(cell)
        while queue:
            row, col = queue.popleft()
            for dr, dc in MOVES.values():
                nxt = (row + dr, col + dc)
                if self.is_free(nxt) and distances[nxt] == UNREACHABLE:
                    distances[nxt] = distances[row, col] + 1
                    queue.append(nxt)
        return distances

    def manhattan_to_goal(self, cell: Cell) -> int:
        return min(abs(cell[0] - g[0]) + abs(cell[1] - g[1]) for g in self.goals)

    def render(self) -> str:
        goals = set(self.goals)
        lines = []
        for row in range(self.height):
            line = []
            for col in range(self.width):
                if (row, col) in goals:
                    line.append(GOAL)
                else:
                    line.append(WALL if self.walls[row, col] else FREE)
            lines.append("".join(line))
        return "\n".join(lines)


def parse_map(text: str) -> GridMap:
    """'#' 벽, '.' 빈칸, 'G' 목표 영역"""
    rows = [line.rstrip("\r") for line in text.splitlines() if line.strip()]
    if not rows:
        raise InvalidMapError("map is empty")
    width = len(rows[0])
    if any(len(row) != width for row in rows):
        raise InvalidMapError("map rows must all have the same width")
    walls = np.zeros((len(rows), width), dtype=bool)
    goals: List[Cell] = []
    for r, row in enumerate(rows):
        for c, char in enumerate(row):
            if char == WALL:
                walls[r, c] = True
            elif char == GOAL:
                goals.append((r, c))
            elif char != FREE:
                raise InvalidMapError(f"unknown map character '{char}' at ({r}, {c})")
    return GridMap(walls=walls, goals=goals)


def load_map(path: Union[str, Path]) -> GridMap:
    """텍스트 지도 파일 로드"""
    path = Path(path)
    if not path.exists():
        raise InvalidMapError(f"map file not found: {path}")
    return parse_map(path.read_text(encoding="utf-8"))


def generate_maze(width: int, height: int, rng: np.random.Generator) -> GridMap:
    """재귀적 백트래커 미로 (홀수 크기), 목표는 임의의 빈칸"""
    if width < 3 or height < 3 or width % 2 == 0 or height % 2 == 0:
        raise InvalidMapError(f"maze size must be odd and >= 3, got {width}x{height}")
    walls = np.ones((height, width), dtype=bool)
    start = (1, 1)
    walls[start] = False
    stack = [start]
    while stack:
        row, col = stack[-1]
        neighbours = []
        for dr, dc in MOVES.values():
            nr, nc = row + 2 * dr, col + 2 * dc
            if 0 < nr < height - 1 and 0 < nc < width - 1 and walls[nr, nc]:
                neighbours.append((nr, nc, dr, dc))
        if not neighbours:
            stack.pop()
            continue
        nr, nc, dr, dc = neighbours[int(rng.integers(len(neighbours)))]
        walls[row + dr, col + dc] = False
        walls[nr, nc] = False
        stack.append((nr, nc))
    free = [(int(r), int(c)) for r, c in zip(*np.nonzero(~walls))]
    goal = free[int(rng.integers(len(free)))]
    return GridMap(walls=walls, goals=[goal])


@dataclass
class RelevancePartition:
    """관측 인덱스 분할: 전이에 관련된 상태 차원과 TV 차원"""
    state_dims: List[int]
    tv_dims: List[int]

    @property
    def size(self) -> int:
        return len(self.state_dims) + len(self.tv_dims)

    def relevance_mask(self) -> np.ndarray:
        mask = np.zeros(self.size, dtype=bool)
        mask[self.state_dims] = True
        return mask


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    success: bool = False


@dataclass
class GridWorld:
    """관측 = [위치 원-핫 (height·width) | TV 채널 (tv_dim)]"""
    grid_map: GridMap
    noise_mode: NoiseMode = NoiseMode.ORIGINAL
    spawn_policy: SpawnPolicy = SpawnPolicy.DENSE
    max_steps: int = 300
    tv_dim: int = 16
    n_patterns: int = 30
    d_near: int = 3
    d_far: int = 20
    procedural: bool = False
    pattern_seed: int = 0
    patterns: np.ndarray = field(init=False, repr=False)
    position: Optional[Cell] = field(default=None, init=False)
    tv: Optional[np.ndarray] = field(default=None, init=False, repr=False)
    steps: int = field(default=0, init=False)
    done: bool = field(default=True, init=False)
    _candidates: Optional[List[Cell]] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.noise_mode = NoiseMode(self.noise_mode)
        self.spawn_policy = SpawnPolicy(self.spawn_policy)
        if self.max_steps < 1:
            raise InvalidMapError(f"max_steps must be >= 1, got {self.max_steps}")
        # 실행마다 한 번 생성되고 고정되는 TV 패턴
        self.patterns = np.random.default_rng(self.pattern_seed).standard_normal(
            (self.n_patterns, self.tv_dim)
        ).astype(np.float32)
        self._width = self.grid_map.width
        self._height = self.grid_map.height

    @classmethod
    def from_config(cls, env_cfg, rng: Optional[np.random.Generator] = None,
                    pattern_seed: int = 0) -> "GridWorld":
        """EnvSection 설정으로 환경 구성"""
        if env_cfg.map_path:
            grid_map = load_map(env_cfg.map_path)
        else:
            grid_map = generate_maze(env_cfg.width, env_cfg.height, rng or np.random.default_rng(pattern_seed))
        return cls(
            grid_map=grid_map,
            noise_mode=env_cfg.noise_mode,
            spawn_policy=env_cfg.spawn_policy,
            max_steps=env_cfg.max_episode_steps,
            tv_dim=env_cfg.tv_dim,
            n_patterns=env_cfg.n_patterns,
            d_near=env_cfg.d_near,
            d_far=env_cfg.d_far,
            procedural=env_cfg.procedural,
            pattern_seed=pattern_seed,
        )

    @property
    def state_dim(self) -> int:
        return self._width * self._height

    @property
    def observation_dim(self) -> int:
        return self.state_dim + self.tv_dim

    @property
    def n_actions(self) -> int:
        return N_ACTIONS

    def ground_truth_relevance(self) -> RelevancePartition:
        return RelevancePartition(
            state_dims=list(range(self.state_dim)),
            tv_dims=list(range(self.state_dim, self.observation_dim)),
        )

    def spawn_candidates(self) -> List[Cell]:
        """시작 위치 정책을 만족하는 칸 (목표 칸 제외)"""
        goals = set(self.grid_map.goals)
        distances = self.grid_map.goal_distances()
        candidates = []
        for cell in self.grid_map.free_cells():
            if cell in goals or distances[cell] == UNREACHABLE:
                continue
            if self.spawn_policy == SpawnPolicy.DENSE:
                ok = self.grid_map.manhattan_to_goal(cell) <= self.d_near
            elif self.spawn_policy == SpawnPolicy.SPARSE:
                ok = self.d_near < distances[cell] < self.d_far
            else:
                ok = distances[cell] >= self.d_far
            if ok:
                candidates.append(cell)
        return candidates

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        """지도(절차적이면 새 미로), 시작 위치, TV 채널 초기화"""
        if self.procedural:
            self.grid_map = generate_maze(self._width, self._height, rng)
        if self.procedural or self._candidates is None:
            self._candidates = self.spawn_candidates()
            logger.debug("Spawn candidates computed", policy=self.spawn_policy.value,
                         count=len(self._candidates), procedural=self.procedural)
        candidates = self._candidates
        if not candidates:
            raise InvalidMapError(
                f"no free cell satisfies the {self.spawn_policy.value} spawn policy "
                f"(d_near={self.d_near}, d_far={self.d_far})"
            )
        self.position = candidates[int(rng.integers(len(candidates)))]
        self.steps = 0
        self.done = False
        if self.noise_mode == NoiseMode.ORIGINAL:
            self.tv = np.zeros(self.tv_dim, dtype=np.float32)
        elif self.noise_mode == NoiseMode.IMAGE_ACTION:
            self.tv = self._random_pattern(rng)
        else:
            self.tv = self._fresh_noise(rng)
        return self.observation()

    def step(self, action: int, rng: np.random.Generator) -> StepResult:
        """이동은 벽에 막히고, 목표 도달 시 보상 1과 종료"""
        if self.done or self.position is None:
            raise RolloutError("episode has finished; call reset() first")
        if not isinstance(action, (int, np.integer)) or not 0 <= int(action) < N_ACTIONS:
            raise InvalidActionError(f"action must be in [0, {N_ACTIONS}), got {action}")
        action = int(action)
        if action in MOVES:
            dr, dc = MOVES[action]
            target = (self.position[0] + dr, self.position[1] + dc)
            if self.grid_map.is_free(target):
                self.position = target
        self._update_tv(action, rng)
        self.steps += 1

        success = self.position in self.grid_map.goals
        self.done = success or self.steps >= self.max_steps
        return StepResult(observation=self.observation(), reward=1.0 if success else 0.0,
                          done=self.done, success=success)

    def observation(self) -> np.ndarray:
        state = np.zeros(self.state_dim, dtype=np.float32)
        state[self.position[0] * self._width + self.position[1]] = 1.0
        return np.concatenate([state, self.tv])

    def _update_tv(self, action: int, rng: np.random.Generator):
        if self.noise_mode == NoiseMode.NOISE:
            self.tv = self._fresh_noise(rng)
        elif action == TV_TOGGLE:
            if self.noise_mode == NoiseMode.IMAGE_ACTION:
                self.tv = self._random_pattern(rng)
            elif self.noise_mode == NoiseMode.NOISE_ACTION:
                self.tv = self._fresh_noise(rng)

    def _random_pattern(self, rng: np.random.Generator) -> np.ndarray:
        return self.patterns[int(rng.integers(self.n_patterns))].copy()

    def _fresh_noise(self, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal(self.tv_dim).astype(np.float32)
