import os
from pathlib import Path
from typing import Optional
from dotenv import load_dotenv
from contextlib import contextmanager
from sqlmodel import SQLModel, Session, create_engine


load_dotenv()

class Settings:
    def __init__(self, output_root: Optional[str] = None, database_url: Optional[str] = None):
        #默认输出目录，CLI 的 --out 未给出时使用
        self.output_root = Path(output_root or os.getenv("NPPR_OUTPUT_ROOT", "./runs"))
        self.output_root.mkdir(parents=True, exist_ok=True)
        self.log_dir = Path(os.getenv("NPPR_LOG_DIR", "./logs"))
        #实验登记库，默认放在输出目录下的 SQLite 文件
        self.db_url = database_url or os.getenv("NPPR_DATABASE_URL") or f"sqlite:///{self.output_root / 'runs.db'}"
        connect_args = {"check_same_thread": False} if self.db_url.startswith("sqlite") else {}
        self.engine = create_engine(self.db_url, echo=False, connect_args=connect_args)
        # 导入表定义后建表
        import models  # noqa: F401
        SQLModel.metadata.create_all(self.engine)
    
    @contextmanager
    def get_session(self):
        session = Session(self.engine)
        try:
            yield session
            session.commit()
        except Exception:
            session.rollback()
            raise
        finally:
            session.close()
