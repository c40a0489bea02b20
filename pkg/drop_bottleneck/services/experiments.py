"""
실험 스위트
특징 식별, 지도학습 β 스윕, kNN-MI 특징 선택 기준선, 방해 레이블 프로브, Noisy-TV 탐험, 체크포인트 평가, 스윕 실행
"""
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch
import torch.nn as nn
import torch.nn.functional as F

from drop_bottleneck.core.checkpoint import CheckpointStore
from drop_bottleneck.core.config import settings
from drop_bottleneck.core.exceptions import (
    ConfigError, ConfigMismatchError, MissingRunError,
)
from drop_bottleneck.core.logging import CustomLogger, log_context
from drop_bottleneck.core.random import configure_torch, make_streams
from drop_bottleneck.models.domain import MaskMode, RepresentationVariant, VIBMode
from drop_bottleneck.models.experiment import (
    ExperimentConfig, ExperimentKind, ExplorationMethod, config_from_dict,
)
from drop_bottleneck.services.bottleneck import (
    compress_stochastic, deterministic_or_zero, drop_probabilities, init_drop_params,
)
from drop_bottleneck.services.datasets import (
    SyntheticDataset, make_nuisance_dataset, make_relevance_dataset, train_test_split,
)
from drop_bottleneck.services.curiosity import CuriosityConfig, CuriosityTrainer, build_curiosity_model
from drop_bottleneck.services.environments import N_ACTIONS, GridWorld
from drop_bottleneck.services.exploration import PolicyAgent, RolloutWorker, ppo_update
from drop_bottleneck.services.ib_training import (
    DBTrainer, FeatureExtractor, IBObjectiveConfig, InfomaxModel, TransitionBuffer, VIBLayer,
    build_infomax_model, train_db_supervised, train_vib_supervised, vib_forward,
)
from drop_bottleneck.services.monitoring import MetricsWriter, resource_snapshot, write_metrics
from drop_bottleneck.services.mutual_information import knn_mi_scores, select_top_features

logger = CustomLogger(__name__)

CONFIG_ECHO = "config.json"
REPORT_NAME = "report.json"
CHECKPOINT_DIR = "checkpoint"
CI_Z = 1.96

METHOD_VARIANTS = {
    ExplorationMethod.PPO: None,
    ExplorationMethod.PPO_DB: RepresentationVariant.DB,
    ExplorationMethod.PPO_VIB: RepresentationVariant.VIB,
    ExplorationMethod.PPO_NO_DROP: RepresentationVariant.NO_DROP,
    ExplorationMethod.PPO_ICM: None,
}

# β 그리드를 내부에서 소비하는 실험 (sweep은 시드만 나눈다)
GRID_KINDS = {ExperimentKind.SUPERVISED_SWEEP, ExperimentKind.NUISANCE_PROBE, ExperimentKind.FEATURE_SELECTION}


def ib_config(cfg: ExperimentConfig, beta: Optional[float] = None) -> IBObjectiveConfig:
    """실험 설정 → IB 목적함수 설정"""
    model, train = cfg.model, cfg.train
    return IBObjectiveConfig(
        beta=model.beta if beta is None else beta,
        vib_beta=model.vib_beta,
        n_dup=model.n_dup,
        temperature=model.temperature,
        detach_scale=model.detach_scale,
        learning_rate=train.learning_rate,
        adam_beta1=train.adam_beta1,
        batch_size=train.batch_size,
        epochs=train.epochs,
        discriminator_epochs=train.discriminator_epochs,
        bin_count=model.bin_count,
        init_low=model.init_low,
        init_high=model.init_high,
        d=model.d,
        hidden=model.hidden,
    )


def curiosity_config(cfg: ExperimentConfig) -> CuriosityConfig:
    model, train = cfg.model, cfg.train
    return CuriosityConfig(
        d=model.d,
        hidden=model.hidden,
        forward_weight=model.icm_forward_weight,
        reward_strength=model.icm_reward_strength,
        learning_rate=train.learning_rate,
        batch_size=train.batch_size,
        epochs=train.epochs,
    )


def prepare_run(cfg: ExperimentConfig, run_dir: Union[str, Path]) -> Path:
    """출력 디렉터리 생성, 설정 사본 기록, torch 전역 설정"""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / CONFIG_ECHO).write_text(json.dumps(cfg.echo(), indent=2, sort_keys=True), encoding="utf-8")
    configure_torch(settings.torch_num_threads, settings.deterministic_algorithms)
    return run_dir


def write_report(run_dir: Path, report: Dict[str, Any]) -> Dict[str, Any]:
    (run_dir / REPORT_NAME).write_text(json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")
    return report


def read_report(run_dir: Union[str, Path]) -> Dict[str, Any]:
    path = Path(run_dir) / REPORT_NAME
    if not path.exists():
        raise MissingRunError(f"no completed run at {run_dir} ({REPORT_NAME} missing)")
    return json.loads(path.read_text(encoding="utf-8"))


def read_config_echo(run_dir: Union[str, Path]) -> Dict[str, Any]:
    path = Path(run_dir) / CONFIG_ECHO
    if not path.exists():
        raise MissingRunError(f"no config echo at {run_dir}")
    return json.loads(path.read_text(encoding="utf-8"))


def beta_grid(cfg: ExperimentConfig) -> List[float]:
    return list(cfg.experiment.beta_grid) or [cfg.model.beta]


# --- 공통: 분류기와 프로브 ---

def make_classifier(input_dim: int, n_classes: int, hidden: int = 0) -> nn.Module:
    if hidden <= 0:
        return nn.Linear(input_dim, n_classes)
    return nn.Sequential(nn.Linear(input_dim, hidden), nn.ReLU(), nn.Linear(hidden, n_classes))


def _seeded(rng: torch.Generator, build):
    """rng에서 뽑은 시드로 모듈 초기화 (전역 생성기 상태는 보존)"""
    seed = int(torch.randint(0, 2 ** 62, (1,), generator=rng))
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return build()


def accuracy(classifier: nn.Module, z: torch.Tensor, labels: torch.Tensor) -> float:
    with torch.no_grad():
        return float((classifier(z).argmax(dim=-1) == labels).float().mean())


def train_probe(z: torch.Tensor, labels: torch.Tensor, n_classes: int, epochs: int, lr: float,
                batch_size: int, rng: torch.Generator) -> nn.Module:
    """고정 표현 위 로지스틱 분류기"""
    probe = _seeded(rng, lambda: nn.Linear(z.shape[1], n_classes))
    optimizer = torch.optim.Adam(probe.parameters(), lr=lr)
    z = z.detach()
    for _ in range(epochs):
        order = torch.randperm(z.shape[0], generator=rng)
        for start in range(0, z.shape[0], batch_size):
            index = order[start:start + batch_size]
            loss = F.cross_entropy(probe(z[index]), labels[index])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
    return probe


def hard_stochastic(features: torch.Tensor, params, rng: torch.Generator) -> torch.Tensor:
    with torch.no_grad():
        return compress_stochastic(features, params, MaskMode.HARD, rng).values


def probability_histogram(p: np.ndarray, bins: int) -> np.ndarray:
    counts, _ = np.histogram(p, bins=bins, range=(0.0, 1.0))
    return counts


# --- 특징 식별 ---

def run_feature_identification(cfg: ExperimentConfig, run_dir: Union[str, Path]) -> Dict[str, Any]:
    """관련/잡음 차원이 섞인 합성 데이터에서 DB(추출기 없음)를 학습하고 p를 0.5로 잘라 관련성 판별"""
    run_dir = prepare_run(cfg, run_dir)
    seed = cfg.experiment.seed
    streams = make_streams(seed)
    synthetic = cfg.env.synthetic
    data = make_relevance_dataset(synthetic.n_train, synthetic.d, synthetic.k_relevant, synthetic.n_classes,
                                  streams.numpy_rng("data"), synthetic.separation, synthetic.noise_std)
    ib = ib_config(cfg)
    model = build_infomax_model(RepresentationVariant.DB, data.d, ib, rng=streams.torch_rng("init"),
                                target_dim=data.n_classes, use_extractor=False, compress_target=False)
    trainer = DBTrainer(model, ib)
    buffer = TransitionBuffer.from_arrays(data.X, data.one_hot_labels())
    bins = cfg.output.histogram_bins
    logger.info("Feature identification started", seed=seed, d=data.d, k=synthetic.k_relevant,
                beta=ib.beta, **resource_snapshot())

    metrics = MetricsWriter(run_dir / "metrics.csv",
                            ["step", "loss", "mi_estimate", "compression", "mean_p", "discriminator_mi"])
    histograms = MetricsWriter(run_dir / "p_histogram.csv",
                               ["step", "optimizer_step", "mean_p_relevant", "mean_p_noise", "relevance_accuracy"]
                               + [f"bin_{i}" for i in range(bins)])

    def relevance_row(round_index: int) -> Dict[str, Any]:
        p = drop_probabilities(model.params).detach().cpu().numpy().astype(np.float64)
        row = {"step": round_index, "optimizer_step": trainer.global_step,
               "mean_p_relevant": _masked_mean(p, data.relevant),
               "mean_p_noise": _masked_mean(p, ~data.relevant),
               "relevance_accuracy": float(np.mean((p < 0.5) == data.relevant))}
        row.update({f"bin_{i}": int(c) for i, c in enumerate(probability_histogram(p, bins))})
        return row

    histograms.append(relevance_row(0))
    for round_index in range(1, cfg.train.rounds + 1):
        result = trainer.train(buffer, streams.torch_rng("mask"))
        metrics.extend(asdict(step) for step in result.trace)
        histograms.append(relevance_row(round_index))
        if cfg.train.max_steps is not None and trainer.global_step >= cfg.train.max_steps:
            break
    metrics.flush()
    histograms.flush()

    final = histograms.rows[-1]
    if cfg.output.checkpoint:
        CheckpointStore(run_dir / CHECKPOINT_DIR).save(
            {"model": model},
            {"joint": trainer.optimizer, "discriminator": trainer.discriminator_optimizer},
            config=cfg.echo(),
            extra={"kind": cfg.experiment.kind.value, "relevant": data.relevant.astype(int).tolist()},
        )
    summary = {
        "relevance_accuracy": final["relevance_accuracy"],
        "mean_p_relevant": final["mean_p_relevant"],
        "mean_p_noise": final["mean_p_noise"],
        "retained_dims": model.params.retained_dims(),
        "steps": trainer.global_step,
    }
    logger.info("Feature identification finished", seed=seed, **summary, **resource_snapshot())
    return write_report(run_dir, _report(cfg, summary))


def _masked_mean(values: np.ndarray, mask: np.ndarray) -> float:
    return float(values[mask].mean()) if mask.any() else float("nan")


def _report(cfg: ExperimentConfig, summary: Dict[str, Any], **details) -> Dict[str, Any]:
    report = {"kind": cfg.experiment.kind.value, "name": cfg.experiment.name, "seed": cfg.experiment.seed,
              "d": cfg.env.synthetic.d if cfg.experiment.kind != ExperimentKind.EXPLORATION else cfg.model.d,
              "beta": cfg.model.beta, "summary": summary}
    report.update(details)
    return report


# --- 지도학습 β 스윕 ---

def _supervised_data(cfg: ExperimentConfig, seed: int) -> Tuple[SyntheticDataset, SyntheticDataset]:
    synthetic = cfg.env.synthetic
    rng = make_streams(seed).numpy_rng("data")
    data = make_relevance_dataset(synthetic.n_train + synthetic.n_test, synthetic.d, synthetic.k_relevant,
                                  synthetic.n_classes, rng, synthetic.separation, synthetic.noise_std)
    return train_test_split(data, synthetic.n_test, rng)


def run_supervised_sweep(cfg: ExperimentConfig, run_dir: Union[str, Path]) -> Dict[str, Any]:
    """β마다 DB(추출기 없음) + 선형 분류기, 확률적/결정적 정확도와 남는 차원 수"""
    run_dir = prepare_run(cfg, run_dir)
    seed = cfg.experiment.seed
    train, test = _supervised_data(cfg, seed)
    X_train, y_train = train.tensors()
    X_test, y_test = test.tensors()
    rows = []
    modules: Dict[str, nn.Module] = {}
    logger.info("Supervised sweep started", seed=seed, d=train.d, betas=beta_grid(cfg), **resource_snapshot())
    for index, beta in enumerate(beta_grid(cfg)):
        # β마다 같은 초기값과 같은 마스크 스트림
        streams = make_streams(seed)
        ib = ib_config(cfg, beta)
        params = init_drop_params(train.d, ib.init_low, ib.init_high, streams.torch_rng("init"),
                                  temperature=ib.temperature, detach_scale=ib.detach_scale)
        classifier = _seeded(streams.torch_rng("init"),
                             lambda: make_classifier(train.d, train.n_classes, cfg.model.classifier_hidden))
        result = train_db_supervised(X_train, y_train, ib, classifier, params, None,
                                     rng=streams.torch_rng("mask"), steps=cfg.train.max_steps)
        z_stochastic = hard_stochastic(X_test, params, streams.torch_rng("probe"))
        with torch.no_grad():
            z_deterministic = deterministic_or_zero(X_test, params)
        p = drop_probabilities(params).detach().numpy()
        row = {
            "beta": beta,
            "stochastic_accuracy": accuracy(classifier, z_stochastic, y_test),
            "deterministic_accuracy": accuracy(classifier, z_deterministic, y_test),
            "retained_dims": params.retained_dims(),
            "relevant_retained": int(((p < 0.5) & test.relevant).sum()),
            "steps": len(result.trace),
        }
        rows.append(row)
        modules[f"beta_{index}.params"] = params
        modules[f"beta_{index}.classifier"] = classifier
        logger.info("Supervised sweep point finished", seed=seed, **row)

    write_metrics(run_dir / "sweep.csv", pd.DataFrame(rows))
    if cfg.output.checkpoint:
        CheckpointStore(run_dir / CHECKPOINT_DIR).save(
            modules, config=cfg.echo(),
            extra={"kind": cfg.experiment.kind.value, "betas": beta_grid(cfg),
                   "relevant": train.relevant.astype(int).tolist()},
        )
    best = max(rows, key=lambda row: row["deterministic_accuracy"])
    summary = {"best_beta": best["beta"], "best_deterministic_accuracy": best["deterministic_accuracy"],
               "max_parity_gap": max(abs(r["stochastic_accuracy"] - r["deterministic_accuracy"]) for r in rows)}
    return write_report(run_dir, _report(cfg, summary, rows=rows))


# --- kNN-MI 특징 선택 기준선 ---

def run_feature_selection_baseline(cfg: ExperimentConfig, run_dir: Union[str, Path]) -> Dict[str, Any]:
    """참조 DB 스윕의 결정적 차원 수 m에 맞춰 kNN-MI 상위 m개 특징으로 재학습"""
    if cfg.output.reference_run is None:
        raise ConfigError("output.reference_run must point to a completed supervised sweep")
    reference = read_report(cfg.output.reference_run)
    reference_cfg = config_from_dict(read_config_echo(cfg.output.reference_run))
    if reference.get("kind") != ExperimentKind.SUPERVISED_SWEEP.value:
        raise MissingRunError(f"reference run {cfg.output.reference_run} is not a supervised sweep")
    if reference_cfg.env.synthetic != cfg.env.synthetic:
        raise ConfigMismatchError(
            f"reference run uses d={reference_cfg.env.synthetic.d} and a different synthetic task; "
            f"this run uses d={cfg.env.synthetic.d}"
        )
    if cfg.experiment.beta_grid and list(cfg.experiment.beta_grid) != [row["beta"] for row in reference["rows"]]:
        raise ConfigMismatchError("beta grid differs from the reference run")

    run_dir = prepare_run(cfg, run_dir)
    seed = int(reference["seed"])
    train, test = _supervised_data(reference_cfg, seed)
    X_train, y_train = train.tensors()
    X_test, y_test = test.tensors()
    scores = knn_mi_scores(train.X, train.labels, random_state=seed)
    streams = make_streams(seed)
    rows = []
    for ref in reference["rows"]:
        m = int(ref["retained_dims"])
        if m == 0:
            continue
        selected = select_top_features(scores, m)
        probe = train_probe(X_train[:, selected], y_train, train.n_classes, cfg.train.probe_epochs,
                            cfg.train.probe_learning_rate, cfg.train.batch_size, streams.torch_rng("probe"))
        rows.append({
            "beta": ref["beta"],
            "m": m,
            "db_deterministic_accuracy": ref["deterministic_accuracy"],
            "mi_selection_accuracy": accuracy(probe, X_test[:, selected], y_test),
            "relevant_selected": int(train.relevant[selected].sum()),
        })
    write_metrics(run_dir / "selection.csv",
                  pd.DataFrame(rows, columns=["beta", "m", "db_deterministic_accuracy",
                                              "mi_selection_accuracy", "relevant_selected"]))
    summary = {"points": len(rows),
               "db_wins": sum(r["db_deterministic_accuracy"] >= r["mi_selection_accuracy"] for r in rows)}
    logger.info("Feature selection baseline finished", seed=seed, **summary)
    return write_report(run_dir, _report(cfg, summary, rows=rows, reference_run=cfg.output.reference_run))


# --- 방해 레이블 프로브 ---

def run_nuisance_probe(cfg: ExperimentConfig, run_dir: Union[str, Path]) -> Dict[str, Any]:
    """1단계: 추출기+압축+주 분류기 학습, 2단계: 고정 표현 위 방해 레이블 로지스틱 프로브"""
    run_dir = prepare_run(cfg, run_dir)
    seed = cfg.experiment.seed
    synthetic = cfg.env.synthetic
    d_noise = synthetic.d - synthetic.k_relevant - synthetic.d_nuisance
    if d_noise < 0:
        raise ConfigError("env.synthetic.d must cover k_relevant + d_nuisance dimensions")
    data_rng = make_streams(seed).numpy_rng("data")
    data = make_nuisance_dataset(synthetic.n_train + synthetic.n_test, synthetic.k_relevant,
                                 synthetic.d_nuisance, d_noise, synthetic.n_classes,
                                 synthetic.n_nuisance_classes, data_rng, synthetic.separation,
                                 synthetic.noise_std)
    train, test = train_test_split(data, synthetic.n_test, data_rng)
    X_train, y_train = train.tensors()
    X_test, y_test = test.tensors()
    u_train = torch.as_tensor(train.nuisance_labels, dtype=torch.int64)
    u_test = torch.as_tensor(test.nuisance_labels, dtype=torch.int64)

    methods = ["db"] + (["vib"] if cfg.experiment.include_vib else [])
    rows = []
    logger.info("Nuisance probe started", seed=seed, betas=beta_grid(cfg), methods=methods, **resource_snapshot())
    for method in methods:
        for beta in beta_grid(cfg):
            streams = make_streams(seed)
            ib = ib_config(cfg, beta)
            init = streams.torch_rng("init")
            extractor = _seeded(init, lambda: FeatureExtractor(train.d, ib.d, ib.hidden))
            classifier = _seeded(init, lambda: make_classifier(ib.d, train.n_classes, cfg.model.classifier_hidden))
            probe_rng = streams.torch_rng("probe")
            if method == "db":
                params = init_drop_params(ib.d, ib.init_low, ib.init_high, init,
                                          temperature=ib.temperature, detach_scale=ib.detach_scale)
                train_db_supervised(X_train, y_train, ib, classifier, params, extractor,
                                    rng=streams.torch_rng("mask"), steps=cfg.train.max_steps)
                with torch.no_grad():
                    f_train, f_test = extractor(X_train), extractor(X_test)
                    stochastic = (hard_stochastic(f_train, params, probe_rng), hard_stochastic(f_test, params, probe_rng))
                    deterministic = (deterministic_or_zero(f_train, params), deterministic_or_zero(f_test, params))
                retained = params.retained_dims()
            else:
                vib = _seeded(init, lambda: VIBLayer(ib.d, ib.d))
                train_vib_supervised(X_train, y_train, ib, classifier, vib, beta, extractor,
                                     rng=streams.torch_rng("mask"))
                with torch.no_grad():
                    f_train, f_test = extractor(X_train), extractor(X_test)
                    stochastic = (vib_forward(vib, f_train, probe_rng), vib_forward(vib, f_test, probe_rng))
                    deterministic = (vib_forward(vib, f_train, mode=VIBMode.MODE),
                                     vib_forward(vib, f_test, mode=VIBMode.MODE))
                retained = ib.d

            def probe_error(pair) -> float:
                probe = train_probe(pair[0], u_train, synthetic.n_nuisance_classes, cfg.train.probe_epochs,
                                    cfg.train.probe_learning_rate, cfg.train.batch_size, probe_rng)
                return 1.0 - accuracy(probe, pair[1], u_test)

            row = {
                "method": method,
                "beta": beta,
                "primary_error": 1.0 - accuracy(classifier, stochastic[1], y_test),
                "primary_error_deterministic": 1.0 - accuracy(classifier, deterministic[1], y_test),
                "nuisance_error": probe_error(stochastic),
                "nuisance_error_deterministic": probe_error(deterministic),
                "retained_dims": retained,
            }
            rows.append(row)
            logger.info("Nuisance probe point finished", seed=seed, **row)

    write_metrics(run_dir / "nuisance.csv", pd.DataFrame(rows))
    chance = 1.0 - 1.0 / synthetic.n_nuisance_classes
    db_rows = [row for row in rows if row["method"] == "db"]
    summary = {"nuisance_chance_error": chance,
               "max_nuisance_error": max(row["nuisance_error"] for row in db_rows),
               "min_nuisance_error": min(row["nuisance_error"] for row in db_rows)}
    return write_report(run_dir, _report(cfg, summary, rows=rows))


# --- Noisy-TV 탐험 ---

def _exploration_seed(cfg: ExperimentConfig, method: ExplorationMethod, seed: int,
                      curves: MetricsWriter, episodes: MetricsWriter,
                      modules: Dict[str, nn.Module]) -> Dict[str, float]:
    streams = make_streams(seed)
    env = GridWorld.from_config(cfg.env, rng=streams.numpy_rng("env"), pattern_seed=seed)
    agent = PolicyAgent(env.observation_dim, N_ACTIONS, cfg.train.ppo, rng=streams.torch_rng("init"))
    variant = METHOD_VARIANTS[method]
    model = trainer = None
    if variant is not None:
        ib = ib_config(cfg)
        model = build_infomax_model(variant, env.observation_dim, ib, rng=streams.torch_rng("init"),
                                    use_extractor=cfg.model.use_extractor)
        trainer = DBTrainer(model, ib)
    elif method == ExplorationMethod.PPO_ICM:
        model = build_curiosity_model(env.observation_dim, N_ACTIONS, curiosity_config(cfg),
                                      rng=streams.torch_rng("init"))
        trainer = CuriosityTrainer(model)
    worker = RolloutWorker(env, streams.numpy_rng("env"), streams.torch_rng("policy"),
                           intrinsic_scale=cfg.train.intrinsic_scale if model is not None else 0.0,
                           task_scale=cfg.train.task_reward_scale)
    period = cfg.train.training_period
    collected = 0
    windows = []
    while collected < cfg.train.total_env_steps:
        steps = min(period, cfg.train.total_env_steps - collected)
        snapshot = model.snapshot() if model is not None else None
        result = worker.collect(agent, snapshot, steps)
        collected += steps
        losses = ppo_update(agent, result.to_batch(cfg.train.ppo.gamma, cfg.train.ppo.gae_lambda),
                            streams.torch_rng("shuffle"))
        if isinstance(trainer, CuriosityTrainer):
            trainer.train(result.transitions, streams.torch_rng("mask"))
        elif trainer is not None:
            trainer.train(TransitionBuffer().extend_transitions(result.transitions), streams.torch_rng("mask"))

        finished = result.episodes
        success_rate = float(np.mean([e.success for e in finished])) if finished else 0.0
        row = {
            "method": method.value, "seed": seed, "step": collected,
            "episodes": len(finished),
            "success_rate": success_rate,
            "mean_return": float(np.mean([e.episode_return for e in finished])) if finished else 0.0,
            "mean_intrinsic": float(np.mean(result.intrinsic_rewards)),
            "policy_loss": losses.policy_loss,
            "value_loss": losses.value_loss,
            "mean_p": model.mean_drop_probability() if isinstance(model, InfomaxModel) else float("nan"),
        }
        curves.append(row)
        windows.append(success_rate)
        episodes.extend({"method": method.value, "seed": seed, **asdict(stats)} for stats in finished)
        curves.stream()
        episodes.stream()
        logger.debug("Exploration window finished", **row)

    prefix = f"{method.value}.seed{seed}"
    modules[f"{prefix}.agent"] = agent
    if model is not None:
        modules[f"{prefix}.model"] = model
    tail = windows[-max(1, len(windows) // 10):] if windows else [0.0]
    return {"final_success_rate": float(np.mean(tail))}


def _ci(values: Sequence[float]) -> Tuple[float, float]:
    values = np.asarray(values, dtype=np.float64)
    mean = float(values.mean())
    if values.size < 2:
        return mean, 0.0
    return mean, CI_Z * float(values.std(ddof=1) / math.sqrt(values.size))


def run_exploration(cfg: ExperimentConfig, run_dir: Union[str, Path]) -> Dict[str, Any]:
    """방법 × 시드마다 PPO(+표현) 학습, 평가 구간별 성공률/리턴 곡선"""
    run_dir = prepare_run(cfg, run_dir)
    curves = MetricsWriter(run_dir / "curves.csv",
                           ["method", "seed", "step", "episodes", "success_rate", "mean_return",
                            "mean_intrinsic", "policy_loss", "value_loss", "mean_p"],
                           group_by=["method", "seed"])
    episodes = MetricsWriter(run_dir / "episodes.csv",
                             ["method", "seed", "step", "episode", "episode_return", "intrinsic_sum",
                              "length", "success"],
                             group_by=["method", "seed"])
    modules: Dict[str, nn.Module] = {}
    summary: Dict[str, Any] = {}
    for method in cfg.experiment.methods:
        finals = []
        for seed in cfg.experiment.seed_list():
            logger.info("Exploration run started", method=method.value, seed=seed,
                        noise_mode=cfg.env.noise_mode.value, spawn=cfg.env.spawn_policy.value,
                        **resource_snapshot())
            outcome = _exploration_seed(cfg, method, seed, curves, episodes, modules)
            finals.append(outcome["final_success_rate"])
            logger.info("Exploration run finished", method=method.value, seed=seed, **outcome)
        mean, half_width = _ci(finals)
        summary[f"{method.value}_success_rate"] = mean
        summary[f"{method.value}_success_ci"] = half_width

    curves.flush()
    episodes.flush()
    if cfg.output.checkpoint:
        state_dim = cfg.env.width * cfg.env.height
        CheckpointStore(run_dir / CHECKPOINT_DIR).save(
            modules, config=cfg.echo(),
            extra={"kind": cfg.experiment.kind.value, "state_dim": state_dim,
                   "observation_dim": state_dim + cfg.env.tv_dim},
        )
    return write_report(run_dir, _report(cfg, summary, seeds=cfg.experiment.seed_list()))


# --- 실행/평가/스윕 ---

RUNNERS = {
    ExperimentKind.FEATURE_IDENTIFICATION: run_feature_identification,
    ExperimentKind.SUPERVISED_SWEEP: run_supervised_sweep,
    ExperimentKind.FEATURE_SELECTION: run_feature_selection_baseline,
    ExperimentKind.NUISANCE_PROBE: run_nuisance_probe,
    ExperimentKind.EXPLORATION: run_exploration,
}


def run_experiment(cfg: ExperimentConfig, run_dir: Union[str, Path]) -> Dict[str, Any]:
    with log_context(run=cfg.experiment.name, kind=cfg.experiment.kind.value, seed=cfg.experiment.seed,
                     run_dir=str(run_dir)):
        return RUNNERS[cfg.experiment.kind](cfg, run_dir)


def evaluate_checkpoint(run_dir: Union[str, Path]) -> Dict[str, Any]:
    """체크포인트의 드롭 확률, 남는 차원 수, (있으면) 관련성 정확도"""
    run_dir = Path(run_dir)
    store = CheckpointStore(run_dir / CHECKPOINT_DIR)
    if not store.exists():
        raise MissingRunError(f"no checkpoint under {run_dir}")
    manifest = store.manifest()
    extra = manifest.get("extra", {})
    relevant = np.asarray(extra["relevant"], dtype=bool) if "relevant" in extra else None
    entries = {}
    for name, tensor in store.tensors().items():
        if not name.endswith("params.logits"):
            continue
        p = torch.sigmoid(tensor.to(torch.float64)).numpy()
        entry = {
            "drop_probabilities": [round(float(v), 6) for v in p],
            "retained_dims": int((p < 0.5).sum()),
            "mean_p": float(p.mean()),
        }
        if relevant is not None and relevant.shape == p.shape:
            entry["relevance_accuracy"] = float(np.mean((p < 0.5) == relevant))
        entries[name[:-len(".logits")]] = entry
    report = {"run_dir": str(run_dir), "kind": extra.get("kind"), "drop_params": entries}
    (run_dir / "eval.json").write_text(json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")
    logger.info("Checkpoint evaluated", run_dir=str(run_dir), params=len(entries))
    return report


def _format_beta(beta: float) -> str:
    return f"{beta:g}"


def sweep_points(cfg: ExperimentConfig) -> List[Tuple[Optional[float], int]]:
    """(β, seed) 목록; 그리드를 내부에서 쓰는 실험은 β=None"""
    seeds = cfg.experiment.seed_list()
    if cfg.experiment.kind in GRID_KINDS:
        return [(None, seed) for seed in seeds]
    return [(beta, seed) for beta in beta_grid(cfg) for seed in seeds]


def _subrun(config_data: Dict[str, Any], run_dir: str) -> Dict[str, Any]:
    cfg = ExperimentConfig.model_validate(config_data)
    return run_experiment(cfg, run_dir)


def run_sweep(cfg: ExperimentConfig, out_dir: Union[str, Path], workers: int = 1) -> Dict[str, Any]:
    """OUT/beta=<β>/seed=<n> 하위 실행, workers > 1 이면 프로세스 병렬"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = []
    for beta, seed in sweep_points(cfg):
        data = cfg.echo()
        data["experiment"].update({"seed": seed, "seeds": []})
        run_dir = out_dir / f"seed={seed}"
        if beta is not None:
            data["model"]["beta"] = beta
            data["experiment"]["beta_grid"] = []
            run_dir = out_dir / f"beta={_format_beta(beta)}" / f"seed={seed}"
        jobs.append((data, str(run_dir)))

    logger.info("Sweep started", runs=len(jobs), workers=workers, out=str(out_dir))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_subrun, *zip(*jobs)))
    else:
        reports = [_subrun(data, run_dir) for data, run_dir in jobs]
    return aggregate_sweep(out_dir, reports)


def discover_runs(out_dir: Union[str, Path]) -> List[Path]:
    out_dir = Path(out_dir)
    return sorted(path.parent for path in out_dir.glob("**/" + REPORT_NAME) if path.parent != out_dir)


def aggregate_sweep(out_dir: Union[str, Path], reports: Optional[List[Dict[str, Any]]] = None) -> Dict[str, Any]:
    """하위 실행 요약을 sweep_summary.csv로 (d가 다르거나 β가 디렉터리와 다르면 거부)"""
    out_dir = Path(out_dir)
    if reports is None:
        reports = []
        for run in discover_runs(out_dir):
            report = read_report(run)
            for part in run.relative_to(out_dir).parts:
                if part.startswith("beta=") and part != f"beta={_format_beta(report['beta'])}":
                    raise ConfigMismatchError(f"run {run} reports beta={report['beta']} under {part}")
            reports.append(report)
    if not reports:
        raise MissingRunError(f"no completed runs under {out_dir}")
    dims = {report["d"] for report in reports}
    kinds = {report["kind"] for report in reports}
    if len(dims) > 1 or len(kinds) > 1:
        raise ConfigMismatchError(f"cannot mix runs with d={sorted(dims)} / kinds={sorted(kinds)}")
    rows = []
    for report in reports:
        row = {"beta": report["beta"], "seed": report["seed"]}
        row.update({key: value for key, value in report["summary"].items() if np.isscalar(value)})
        rows.append(row)
    frame = pd.DataFrame(rows).sort_values(["beta", "seed"], kind="stable").reset_index(drop=True)
    write_metrics(out_dir / "sweep_summary.csv", frame)
    summary = {"runs": len(rows), "kind": kinds.pop(), "d": dims.pop()}
    logger.info("Sweep aggregated", out=str(out_dir), **summary)
    return summary
