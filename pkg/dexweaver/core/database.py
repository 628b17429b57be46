"""基准测试历史数据库"""

from pathlib import Path
from typing import List, Optional

from sqlalchemy import create_engine
from sqlalchemy.orm import Session, selectinload, sessionmaker
from sqlalchemy.pool import StaticPool

from .config import get_config
from .models import Base, BenchRun, StageSample


class DatabaseManager:
    """数据库管理器"""

    def __init__(self, base_dir: str = None):
        """初始化数据库管理器

        Args:
            base_dir: 工作目录，如果为None则使用配置中的目录
        """
        base_dir = Path(base_dir or get_config().base_dir)
        base_dir.mkdir(parents=True, exist_ok=True)

        # 数据库文件路径
        self.db_path = base_dir / "dexweaver.db"

        self.engine = create_engine(
            f"sqlite:///{self.db_path}",
            poolclass=StaticPool,
            connect_args={"check_same_thread": False, "timeout": 20},
            echo=False,
        )
        self.SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=self.engine)
        self.create_tables()

    def create_tables(self):
        """创建数据库表"""
        Base.metadata.create_all(bind=self.engine)

    def get_session(self) -> Session:
        return self.SessionLocal()

    def store(self, records, budget_mib: Optional[float] = None) -> int:
        """保存一批BenchRecord

        Returns:
            写入的运行数
        """
        session = self.get_session()
        try:
            for record in records:
                run = BenchRun(
                    app=record.app,
                    dex_size_kib=record.dex_size_kib,
                    budget_mib=budget_mib,
                    peak_rss_mib=record.peak_rss_mib,
                    outcome=record.failed_outcome or "ok",
                )
                for stage in record.stages:
                    run.stages.append(StageSample(stage=stage.stage, seconds=stage.seconds, outcome=stage.outcome))
                session.add(run)
            session.commit()
            return len(records)
        except Exception:
            session.rollback()
            raise
        finally:
            session.close()

    def history(self, limit: int = 50) -> List[BenchRun]:
        """最近的运行，按时间倒序"""
        session = self.get_session()
        try:
            return (
                session.query(BenchRun)
                .options(selectinload(BenchRun.stages))
                .order_by(BenchRun.id.desc())
                .limit(limit)
                .all()
            )
        finally:
            session.close()

    def close(self):
        """关闭数据库连接"""
        self.engine.dispose()


def init_database(base_dir: str = None) -> DatabaseManager:
    """打开（必要时创建）基准测试历史数据库

    Args:
        base_dir: 数据库所在目录，默认取配置中的 base_dir
    """
    return DatabaseManager(base_dir)
