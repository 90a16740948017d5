from sqlmodel import Field
from models.base import BaseModel

class EpochLog(BaseModel, table=True):
    """生成器训练的逐 epoch 记录"""
    __tablename__ = "epoch_logs"
    
    run_id: str = Field(foreign_key="experiment_runs.id", index=True)
    epoch: int = Field(index=True)
    train_loss: float
    nppr_running: float
    entropy_ratio: float
    pi_max: float
    pi_min: float
    pi_std: float
    tau_gumbel: float
    t_pi: float
    t_mu: float
    t_sigma: float
    status: str = Field(default="ok", max_length=20)  # 'ok', 'nan_abort'
