"""
排序性质验证：AR ≤ NPPR ≤ PR(uniform / gaussian)，条件模式 NPPR ≤ 独立模式 NPPR
每条不等式带 3σ MC 半宽；低维时附加网格 oracle 的 Dirac 下界检查
"""
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

from services.data.datasets import LabeledDataset
from services.networks.classifier import MLPClassifier
from services.oracle.grid import MAX_EXHAUSTIVE_DIMS, GridSpec, robust_fraction
from services.robustness.estimators import combined_half_width, mc_half_width
from services.robustness.types import ExperimentKey, RobustnessReport
from utils.errors import VerificationError
from utils.logger import logger


@dataclass
class InequalityResult:
    name: str
    lhs: float
    rhs: float
    half_width: float
    margin: float
    passed: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "half_width": self.half_width,
            "margin": self.margin,
            "pass": self.passed,
        }


@dataclass
class VerificationVerdict:
    key: Optional[ExperimentKey]
    results: List[InequalityResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def failures(self) -> List[InequalityResult]:
        return [r for r in self.results if not r.passed]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "key": asdict(self.key) if self.key else None,
            "passed": self.passed,
            "results": [r.to_dict() for r in self.results],
        }


def check_inequality(name: str, lhs: float, rhs: float, half_width: float) -> InequalityResult:
    """lhs ≤ rhs + half_width 视为通过；margin = rhs − lhs"""
    return InequalityResult(
        name=name,
        lhs=float(lhs),
        rhs=float(rhs),
        half_width=float(half_width),
        margin=float(rhs - lhs),
        passed=bool(lhs <= rhs + half_width),
    )


def _label(report: RobustnessReport) -> str:
    return f"{report.mode},K={report.K}"


def verify_propositions(
    reports: Sequence[RobustnessReport],
    clf: Optional[MLPClassifier] = None,
    dataset: Optional[LabeledDataset] = None,
    grid_points: int = 21,
) -> VerificationVerdict:
    """
    Args:
        reports: 同一 (数据集, 分类器, γ) 下的报告集合
        clf: 提供且输入维度 ≤ 3 时附加 Dirac 下界检查
        dataset: 与报告对应的测试集
        grid_points: Dirac 检查的每维网格点数

    Returns:
        VerificationVerdict，每条不等式给出 lhs / rhs / 半宽 / 是否通过
    """
    reports = list(reports)
    if not reports:
        raise VerificationError("no reports to verify")
    key = reports[0].key
    for report in reports[1:]:
        if not key.matches(report.key):
            raise VerificationError(f"reports come from different experiments: {key} vs {report.key}")

    verdict = VerificationVerdict(key=key)
    for report in reports:
        n_nppr = report.draws.nppr_test_draws
        n_pr = report.draws.pr_draws
        label = _label(report)
        verdict.results.append(check_inequality(
            f"ar_pgd<=nppr[{label}]", report.ar_pgd, report.nppr_test, mc_half_width(report.nppr_test, n_nppr)
        ))
        verdict.results.append(check_inequality(
            f"nppr<=pr_uniform[{label}]", report.nppr_test, report.pr_uniform,
            combined_half_width(report.nppr_test, n_nppr, report.pr_uniform, n_pr),
        ))
        verdict.results.append(check_inequality(
            f"nppr<=pr_gaussian[{label}]", report.nppr_test, report.pr_gaussian,
            combined_half_width(report.nppr_test, n_nppr, report.pr_gaussian, n_pr),
        ))

    independent = {}
    for report in reports:
        if report.mode == "independent":
            independent.setdefault(report.K, report)
    for report in reports:
        baseline = independent.get(report.K)
        if report.mode == "independent" or baseline is None:
            continue
        verdict.results.append(check_inequality(
            f"nppr[{_label(report)}]<=nppr[{_label(baseline)}]",
            report.nppr_test,
            baseline.nppr_test,
            combined_half_width(
                report.nppr_test, report.draws.nppr_test_draws, baseline.nppr_test, baseline.draws.nppr_test_draws
            ),
        ))

    if clf is not None and dataset is not None and dataset.input_dim <= MAX_EXHAUSTIVE_DIMS:
        if dataset.fingerprint() != key.dataset:
            raise VerificationError("dataset does not match the reports' experiment key")
        grid = GridSpec(dims=dataset.input_dim, points_per_dim=grid_points, gamma=key.gamma)
        lower = robust_fraction(clf, dataset.x, dataset.y, grid)
        for report in reports:
            verdict.results.append(check_inequality(
                f"dirac_bound<=nppr[{_label(report)}]", lower, report.nppr_test,
                mc_half_width(report.nppr_test, report.draws.nppr_test_draws),
            ))

    for failure in verdict.failures:
        logger.warning(f"⚠️ 不等式不成立: {failure.name}: {failure.lhs:.4f} > {failure.rhs:.4f} + {failure.half_width:.4f}")
    if verdict.passed:
        logger.info(f"✅ 全部 {len(verdict.results)} 条不等式通过")
    return verdict


MONOTONE_FIELDS = ("nppr_test", "pr_uniform", "pr_gaussian", "ar_pgd")


def _draws_for(report: RobustnessReport, name: str) -> int:
    if name == "nppr_test":
        return report.draws.nppr_test_draws
    if name.startswith("pr_"):
        return report.draws.pr_draws
    return report.draws.n_test


def verify_radius_monotonicity(reports: Sequence[RobustnessReport]) -> VerificationVerdict:
    """
    同一数据集 / 分类器 / 模式 / K 下，各指标随 γ 增大不增（容差为一个 MC 半宽）
    """
    reports = sorted(reports, key=lambda r: r.key.gamma)
    if len(reports) < 2:
        raise VerificationError("radius monotonicity needs at least two budgets")
    first = reports[0]
    for report in reports[1:]:
        same = (report.key.dataset, report.key.classifier, report.mode, report.K)
        if same != (first.key.dataset, first.key.classifier, first.mode, first.K):
            raise VerificationError("radius sweep mixes datasets, classifiers or generator settings")

    verdict = VerificationVerdict(key=None)
    for small, large in zip(reports, reports[1:]):
        for name in MONOTONE_FIELDS:
            hw = mc_half_width(getattr(small, name), _draws_for(small, name))
            verdict.results.append(check_inequality(
                f"{name}[γ={large.key.gamma:.6g}]<={name}[γ={small.key.gamma:.6g}]",
                getattr(large, name),
                getattr(small, name),
                hw,
            ))
    for failure in verdict.failures:
        logger.warning(f"⚠️ 半径单调性不成立: {failure.name}: {failure.lhs:.4f} > {failure.rhs:.4f} + {failure.half_width:.4f}")
    return verdict


def save_verdict(verdict: VerificationVerdict, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(verdict.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
    return path


def load_verdict(path: Union[str, Path]) -> VerificationVerdict:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return VerificationVerdict(
        key=ExperimentKey(**payload["key"]) if payload.get("key") else None,
        results=[
            InequalityResult(
                name=r["name"],
                lhs=r["lhs"],
                rhs=r["rhs"],
                half_width=r["half_width"],
                margin=r["margin"],
                passed=r["pass"],
            )
            for r in payload.get("results", [])
        ],
    )
