from datetime import datetime
import uuid

from sqlmodel import SQLModel, Field


def new_run_id() -> str:
    return str(uuid.uuid4())


class BaseModel(SQLModel):
    """登记库表的公共字段：字符串 uuid 主键与创建 / 更新时间"""
    id: str = Field(default_factory=new_run_id, primary_key=True)
    created_at: datetime = Field(default_factory=datetime.now, nullable=False)
    updated_at: datetime = Field(default_factory=datetime.now, nullable=False)

    def touch(self) -> None:
        """状态变化时刷新 updated_at"""
        self.updated_at = datetime.now()
