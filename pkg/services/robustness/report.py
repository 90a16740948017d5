"""
汇总评估：在 train / test 上计算 NPPR、PR 基线、AR 基线与混合权重统计，输出 RobustnessReport
"""
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Union

from services.data.datasets import LabeledDataset
from services.networks.classifier import MLPClassifier
from services.perturbation.generator import PerturbationGenerator
from services.robustness.attacks import ar_cw, ar_pgd
from services.robustness.entropy import mixture_statistics
from services.robustness.estimators import clean_accuracy, nppr_estimate, pr_estimate
from services.robustness.types import DrawCounts, ExperimentKey, PerturbationLaw, RobustnessReport
from utils.logger import logger


@dataclass
class EvaluationSettings:
    samples_per_input: int = 500
    pr_samples_per_input: int = 500
    pgd_steps: int = 20
    cw_steps: int = 20
    gaussian_sigma_rule: float = 1.0 / 3.0
    kappa: float = 1.0


def experiment_key(dataset: LabeledDataset, clf: MLPClassifier, gamma: float) -> ExperimentKey:
    return ExperimentKey(dataset=dataset.fingerprint(), classifier=clf.fingerprint(), gamma=float(gamma))


def evaluate_robustness(
    clf: MLPClassifier,
    generator: PerturbationGenerator,
    train: LabeledDataset,
    test: LabeledDataset,
    settings: EvaluationSettings,
    seed: int = 0,
) -> RobustnessReport:
    """
    计算完整的 RobustnessReport

    Args:
        clf: 冻结的分类器
        generator: 训练好的（或任意 checkpoint 的）扰动生成器
        train: 训练集（报告 nppr_train）
        test: 测试集（其余所有指标）
        settings: 各估计量的样本数与攻击参数
        seed: 评估子流种子

    Returns:
        RobustnessReport（原始精度；百分比格式只出现在 summary）
    """
    gamma = generator.gamma
    M = settings.samples_per_input
    logger.info(f"📋 开始评估: mode={generator.mode.value}, K={generator.head_cfg.K}, γ={gamma:.6g}, M={M}")

    nppr_test = nppr_estimate(clf, generator, test, M, seed=seed)
    nppr_train = nppr_estimate(clf, generator, train, M, seed=seed)
    pr_uniform = pr_estimate(clf, test, PerturbationLaw.uniform(), gamma, settings.pr_samples_per_input, seed=seed)
    pr_gaussian = pr_estimate(
        clf,
        test,
        PerturbationLaw.clipped_gaussian(sigma_rule=settings.gaussian_sigma_rule),
        gamma,
        settings.pr_samples_per_input,
        seed=seed,
    )
    adv_pgd = ar_pgd(clf, test, gamma, steps=settings.pgd_steps, seed=seed)
    adv_cw = ar_cw(clf, test, gamma, steps=settings.cw_steps, kappa=settings.kappa, seed=seed)
    stats = mixture_statistics(generator.mixture_weights(clf, test.x, test.y))

    report = RobustnessReport(
        nppr_test=nppr_test,
        nppr_train=nppr_train,
        pr_gaussian=pr_gaussian,
        pr_uniform=pr_uniform,
        ar_pgd=adv_pgd,
        ar_cw=adv_cw,
        entropy_ratio=stats.entropy_ratio,
        pi_max=stats.pi_max,
        pi_min=stats.pi_min,
        pi_std=stats.pi_std,
        clean_accuracy=clean_accuracy(clf, test),
        key=experiment_key(test, clf, gamma),
        mode=generator.mode.value,
        K=generator.head_cfg.K,
        draws=DrawCounts(
            n_train=len(train),
            n_test=len(test),
            nppr_samples=M,
            pr_samples=settings.pr_samples_per_input,
        ),
        seed=seed,
        input_dim=test.input_dim,
    )
    summary = report.summary()
    logger.info(
        f"✅ 评估完成: NPPR(test)={summary['nppr_test']}, PR(uniform)={summary['pr_uniform']}, "
        f"PR(gauss)={summary['pr_gaussian']}, AR(PGD)={summary['ar_pgd']}, AR(CW)={summary['ar_cw']}, "
        f"ER={report.entropy_ratio:.4f}"
    )
    return report


def save_report(report: RobustnessReport, path: Union[str, Path]) -> Path:
    """report.json：原始字段 + summary（两位小数百分比）"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = report.to_dict()
    payload["summary"] = report.summary()
    path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    return path


def load_report(path: Union[str, Path]) -> RobustnessReport:
    return RobustnessReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
