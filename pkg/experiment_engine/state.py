from typing import Dict, List, Optional, TypedDict

from config.experiment import ExperimentConfig
from services.data.datasets import LabeledDataset
from services.generator_trainer import TrainingOutcome
from services.networks.classifier import MLPClassifier
from services.oracle.verifier import VerificationVerdict
from services.perturbation.generator import PerturbationGenerator
from services.robustness.types import RobustnessReport


class ExperimentState(TypedDict, total=False):
    #运行信息
    config: ExperimentConfig
    command: str  # 'train' | 'evaluate' | 'export-samples'
    run_dir: str
    run_id: Optional[str]  # 登记库中的运行 ID，登记失败时为 None
    resume: bool  # 从 run_dir 中已有的 checkpoint 继续训练

    #数据与模型
    train: LabeledDataset
    test: LabeledDataset
    classifier: MLPClassifier
    classifier_accuracy: Optional[float]
    generator: PerturbationGenerator
    outcome: Optional[TrainingOutcome]

    #评估结果
    report: Optional[RobustnessReport]
    verdict: Optional[VerificationVerdict]

    #产物与阶段记录（写入 manifest.json）
    artifacts: Dict[str, str]  # 产物名 → 文件名
    completed_stages: List[str]
    failed_stage: Optional[str]
    error: Optional[str]
