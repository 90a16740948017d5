from sqlmodel import Field, Column
from sqlalchemy import JSON
from typing import Optional, Dict, Any
from models.base import BaseModel

class ExperimentRun(BaseModel, table=True):
    """实验运行登记表（run manifest 的数据库副本）"""
    __tablename__ = "experiment_runs"
    
    name: str = Field(max_length=255, index=True)
    command: str = Field(max_length=50)  # 'train', 'evaluate', 'sweep', ...
    output_dir: str = Field(default="")
    mode: str = Field(max_length=20, index=True)  # 'independent', 'label', 'input', 'joint'
    mixture_count: int = Field(default=7)
    gamma: float = Field(default=0.0)
    seed: int = Field(default=0)
    status: str = Field(default="running", max_length=20, index=True)  # 'running', 'completed', 'failed'
    failed_stage: Optional[str] = Field(default=None, max_length=50)
    error: Optional[str] = None
    config_yaml: str = Field(default="")
    
    # 主要指标（便于查询，完整报告见 report）
    nppr_test: Optional[float] = None
    pr_uniform: Optional[float] = None
    ar_pgd: Optional[float] = None
    report: Optional[Dict[str, Any]] = Field(default=None, sa_column=Column(JSON))
