"""
实验管理器
负责运行单次实验、展开 sweep 网格并行执行，以及跨运行的性质验证
"""
import json
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd

from config.experiment import ExperimentConfig, dump_config, parse_config
from config.settings import Settings
from experiment_engine.artifacts import CLASSIFIER_FILE, REPORT_FILE, TEST_CSV, VERDICT_FILE
from experiment_engine.graph_builder import GraphBuilder
from experiment_engine.state import ExperimentState
from services.data.datasets import load_dataset_csv
from services.networks.classifier import load_classifier
from services.networks.heads import DependencyMode
from services.oracle.verifier import (
    VerificationVerdict,
    load_verdict,
    save_verdict,
    verify_propositions,
    verify_radius_monotonicity,
)
from services.perturbation.rng import derive_seed
from services.robustness.report import load_report
from services.robustness.types import RobustnessReport
from services.run_log_service import RunLogService
from utils.errors import VerificationError
from utils.logger import logger

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_STAGE_FAILED = 2

SWEEP_SUMMARY = "sweep_summary.csv"
SWEEP_VERDICT = "sweep_verdict.json"
CROSS_VERDICT = "cross_verdict.json"

METRIC_COLUMNS = [
    "nppr_test",
    "nppr_train",
    "pr_uniform",
    "pr_gaussian",
    "ar_pgd",
    "ar_cw",
    "entropy_ratio",
    "clean_accuracy",
]
SUMMARY_COLUMNS = ["run", "mode", "K", "epsilon", "replicate", "seed", "status", "failed_stage", *METRIC_COLUMNS, "verified"]


@dataclass
class RunResult:
    run_dir: Path
    status: str  # 'completed' | 'failed'
    failed_stage: Optional[str] = None
    error: Optional[str] = None
    report: Optional[RobustnessReport] = None
    verdict: Optional[VerificationVerdict] = None

    @property
    def exit_code(self) -> int:
        if self.status != "completed":
            return EXIT_STAGE_FAILED
        if self.verdict is not None and not self.verdict.passed:
            return EXIT_VERIFY_FAILED
        return EXIT_OK


@dataclass
class SweepRun:
    tag: str
    mode: DependencyMode
    K: int
    epsilon: str
    replicate: int
    config: ExperimentConfig


@dataclass
class SweepResult:
    root: Path
    runs: List[Tuple[SweepRun, RunResult]] = field(default_factory=list)
    verdicts: Dict[str, VerificationVerdict] = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        codes = [result.exit_code for _, result in self.runs]
        if EXIT_STAGE_FAILED in codes:
            return EXIT_STAGE_FAILED
        if EXIT_VERIFY_FAILED in codes or any(not v.passed for v in self.verdicts.values()):
            return EXIT_VERIFY_FAILED
        return EXIT_OK


def _epsilon_tag(epsilon: str) -> str:
    return epsilon.replace("/", "-").replace(".", "p")


def expand_sweep(cfg: ExperimentConfig) -> List[SweepRun]:
    """
    展开 sweep 网格：modes × mixture_counts × epsilons × replicates

    同一 replicate 内所有运行共用一个派生种子，因此数据集与分类器相同，报告可以互相比较
    """
    sweep = cfg.sweep
    modes = sweep.modes or [cfg.gmm.mode]
    counts = sweep.mixture_counts or [cfg.gmm.modes]
    epsilons = sweep.epsilons or [cfg.budget.epsilon]
    runs = []
    for replicate in range(sweep.replicates):
        seed = cfg.seed if sweep.replicates == 1 else derive_seed(cfg.seed, replicate)
        for epsilon in epsilons:
            for K in counts:
                for mode in modes:
                    tag = f"{mode.value}_K{K}_eps{_epsilon_tag(epsilon)}_r{replicate}"
                    variant = cfg.variant(**{
                        "name": f"{cfg.name}/{tag}",
                        "seed": seed,
                        "gmm.mode": mode,
                        "gmm.modes": K,
                        "budget.epsilon": epsilon,
                    })
                    runs.append(SweepRun(tag=tag, mode=mode, K=K, epsilon=epsilon, replicate=replicate, config=variant))
    return runs


def _sweep_worker(payload: Tuple[str, str, Optional[str], Optional[str]]) -> Dict[str, Any]:
    """子进程入口：只传可序列化的 YAML 文本和路径"""
    config_text, run_dir, output_root, database_url = payload
    cfg = parse_config(config_text)
    settings = Settings(output_root=output_root, database_url=database_url) if output_root else None
    result = ExperimentManager(settings).run(cfg, command="train", out=run_dir)
    return {
        "run_dir": str(result.run_dir),
        "status": result.status,
        "failed_stage": result.failed_stage,
        "error": result.error,
    }


class ExperimentManager:
    def __init__(self, settings: Optional[Settings] = None):
        self.settings = settings
        self.run_log = RunLogService(settings) if settings is not None else None

    def resolve_run_dir(self, cfg: ExperimentConfig, out: Optional[Union[str, Path]] = None) -> Path:
        """--out > 配置 output_dir > 环境默认输出目录 / name"""
        if out is not None:
            return Path(out)
        if cfg.output_dir:
            return Path(cfg.output_dir)
        root = self.settings.output_root if self.settings is not None else Path("./runs")
        return root / cfg.name

    def run(
        self,
        cfg: ExperimentConfig,
        command: str = "train",
        out: Optional[Union[str, Path]] = None,
        resume: bool = False,
    ) -> RunResult:
        """
        执行一次实验流水线

        Args:
            cfg: 实验配置
            command: 'train' | 'evaluate' | 'export-samples'
            out: 运行目录
            resume: train 时复用运行目录中的分类器和最新 checkpoint

        Returns:
            RunResult，阶段失败时已写出的产物保留在运行目录中
        """
        run_dir = self.resolve_run_dir(cfg, out)
        run_dir.mkdir(parents=True, exist_ok=True)
        run_id = self.run_log.start_run(cfg, command, str(run_dir)) if self.run_log is not None else None
        logger.info(f"🚀 运行实验 {cfg.name} ({command}) → {run_dir}")

        graph = GraphBuilder(self.run_log).build_graph()
        state = ExperimentState(
            config=cfg,
            command=command,
            run_dir=str(run_dir),
            run_id=run_id,
            resume=resume,
            report=None,
            verdict=None,
            artifacts={},
            completed_stages=[],
            failed_stage=None,
            error=None,
        )
        final_state = graph.invoke(state)
        failed_stage = final_state.get("failed_stage")
        return RunResult(
            run_dir=run_dir,
            status="failed" if failed_stage else "completed",
            failed_stage=failed_stage,
            error=final_state.get("error"),
            report=final_state.get("report"),
            verdict=final_state.get("verdict"),
        )

    def sweep(self, cfg: ExperimentConfig, out: Optional[Union[str, Path]] = None) -> SweepResult:
        """按 sweep 网格执行独立运行，结束后做跨模式与跨半径的验证"""
        root = self.resolve_run_dir(cfg, out)
        root.mkdir(parents=True, exist_ok=True)
        plan = expand_sweep(cfg)
        logger.info(f"📋 sweep 共 {len(plan)} 个运行, workers={cfg.sweep.workers}")

        result = SweepResult(root=root)
        if cfg.sweep.workers > 1:
            output_root = str(self.settings.output_root) if self.settings is not None else None
            database_url = self.settings.db_url if self.settings is not None else None
            payloads = [(dump_config(item.config), str(root / item.tag), output_root, database_url) for item in plan]
            with ProcessPoolExecutor(max_workers=cfg.sweep.workers) as pool:
                outcomes = list(pool.map(_sweep_worker, payloads))
            for item, outcome in zip(plan, outcomes):
                result.runs.append((item, self._collect(Path(outcome["run_dir"]), outcome)))
        else:
            for item in plan:
                result.runs.append((item, self.run(item.config, command="train", out=root / item.tag)))

        result.verdicts = self._cross_verify(result.runs)
        verdict_payload = {name: verdict.to_dict() for name, verdict in result.verdicts.items()}
        (root / SWEEP_VERDICT).write_text(json.dumps(verdict_payload, indent=2, sort_keys=True), encoding="utf-8")
        write_sweep_summary(result.runs, root / SWEEP_SUMMARY)

        failed = [item.tag for item, run in result.runs if run.status != "completed"]
        if failed:
            logger.error(f"❌ {len(failed)} 个运行失败: {failed}")
        logger.info(f"✅ sweep 完成, 退出码 {result.exit_code}, 汇总见 {root / SWEEP_SUMMARY}")
        return result

    @staticmethod
    def _collect(run_dir: Path, outcome: Dict[str, Any]) -> RunResult:
        """子进程运行结束后从运行目录读回报告与验证结果"""
        report = load_report(run_dir / REPORT_FILE) if (run_dir / REPORT_FILE).exists() else None
        verdict = load_verdict(run_dir / VERDICT_FILE) if (run_dir / VERDICT_FILE).exists() else None
        return RunResult(
            run_dir=run_dir,
            status=outcome["status"],
            failed_stage=outcome["failed_stage"],
            error=outcome["error"],
            report=report,
            verdict=verdict,
        )

    @staticmethod
    def _cross_verify(runs: Sequence[Tuple[SweepRun, RunResult]]) -> Dict[str, VerificationVerdict]:
        """
        跨运行验证：
        - 同一 (ε, replicate) 下各依赖模式的排序（条件模式 ≤ 独立模式，按 K 分组）
        - 同一 (mode, K, replicate) 下各指标随半径不增
        """
        by_budget: Dict[Tuple[str, int], List[RobustnessReport]] = defaultdict(list)
        by_setting: Dict[Tuple[str, int, int], List[RobustnessReport]] = defaultdict(list)
        for item, run in runs:
            if run.report is None:
                continue
            by_budget[(item.epsilon, item.replicate)].append(run.report)
            by_setting[(item.mode.value, item.K, item.replicate)].append(run.report)

        verdicts: Dict[str, VerificationVerdict] = {}
        for (epsilon, replicate), reports in by_budget.items():
            if len({r.mode for r in reports}) < 2:
                continue
            name = f"modes[eps={epsilon},r{replicate}]"
            try:
                verdicts[name] = verify_propositions(reports)
            except VerificationError as e:
                logger.error(f"❌ {name}: {e}")
        for (mode, K, replicate), reports in by_setting.items():
            if len(reports) < 2:
                continue
            name = f"radius[{mode},K={K},r{replicate}]"
            try:
                verdicts[name] = verify_radius_monotonicity(reports)
            except VerificationError as e:
                logger.error(f"❌ {name}: {e}")
        return verdicts

    def verify(self, run_dirs: Sequence[Union[str, Path]], out: Optional[Union[str, Path]] = None) -> VerificationVerdict:
        """
        对已完成运行的 report.json 做验证

        Args:
            run_dirs: 运行目录（或其上级目录，自动收集其中含 report.json 的子目录）
            out: 写出 cross_verdict.json 的目录，默认为第一个运行目录

        Returns:
            VerificationVerdict；报告来自不同实验时抛出 VerificationError
        """
        dirs = collect_run_dirs(run_dirs)
        if not dirs:
            raise VerificationError(f"no {REPORT_FILE} found under {list(map(str, run_dirs))}")
        reports = [load_report(d / REPORT_FILE) for d in dirs]
        first = dirs[0]
        clf = dataset = None
        if (first / CLASSIFIER_FILE).exists() and (first / TEST_CSV).exists():
            clf = load_classifier(first / CLASSIFIER_FILE)
            dataset = load_dataset_csv(first / TEST_CSV, num_classes=clf.num_classes, image_shape=clf.image_shape)
        verdict = verify_propositions(reports, clf=clf, dataset=dataset)
        save_verdict(verdict, Path(out if out is not None else first) / CROSS_VERDICT)
        return verdict


def collect_run_dirs(paths: Sequence[Union[str, Path]]) -> List[Path]:
    dirs: List[Path] = []
    for path in map(Path, paths):
        if (path / REPORT_FILE).exists():
            dirs.append(path)
        elif path.is_dir():
            dirs.extend(sorted(p.parent for p in path.glob(f"*/{REPORT_FILE}")))
    return dirs


def write_sweep_summary(runs: Sequence[Tuple[SweepRun, RunResult]], path: Union[str, Path]) -> Path:
    rows = []
    for item, run in runs:
        report = run.report
        row = {
            "run": item.tag,
            "mode": item.mode.value,
            "K": item.K,
            "epsilon": item.epsilon,
            "replicate": item.replicate,
            "seed": item.config.seed,
            "status": run.status,
            "failed_stage": run.failed_stage,
            "verified": run.verdict.passed if run.verdict is not None else None,
        }
        for column in METRIC_COLUMNS:
            row[column] = getattr(report, column) if report is not None else None
        rows.append(row)
    path = Path(path)
    pd.DataFrame(rows, columns=SUMMARY_COLUMNS).to_csv(path, index=False, float_format="%.10g")
    return path


def run_experiment(
    cfg: ExperimentConfig,
    command: str = "train",
    out: Optional[Union[str, Path]] = None,
    settings: Optional[Settings] = None,
    resume: bool = False,
) -> RunResult:
    return ExperimentManager(settings).run(cfg, command=command, out=out, resume=resume)
