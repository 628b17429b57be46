"""基准测试历史的数据库模型"""

from datetime import datetime

from sqlalchemy import Column, DateTime, Float, ForeignKey, Integer, String
from sqlalchemy.orm import declarative_base, relationship

Base = declarative_base()


class BenchRun(Base):
    """一次流水线运行（一个应用）"""

    __tablename__ = "bench_runs"

    id = Column(Integer, primary_key=True, index=True)
    app = Column(String(255), index=True, nullable=False)
    dex_size_kib = Column(Float, nullable=False)
    budget_mib = Column(Float, nullable=True)  # 为空表示不限内存
    peak_rss_mib = Column(Float, nullable=True)
    outcome = Column(String(100), nullable=False, default="ok")  # ok 或失败阶段的错误名
    created_at = Column(DateTime, default=datetime.utcnow)

    # 关联关系
    stages = relationship("StageSample", back_populates="run", cascade="all, delete-orphan")

    def __repr__(self):
        return f"<BenchRun(id={self.id}, app='{self.app}', outcome='{self.outcome}')>"


class StageSample(Base):
    """单个阶段的耗时与结果"""

    __tablename__ = "stage_samples"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(Integer, ForeignKey("bench_runs.id"), nullable=False)
    stage = Column(String(50), nullable=False)  # parse, instrument, write, repack, sign
    seconds = Column(Float, nullable=True)
    outcome = Column(String(100), nullable=False)

    run = relationship("BenchRun", back_populates="stages")

    def __repr__(self):
        return f"<StageSample(run_id={self.run_id}, stage='{self.stage}', outcome='{self.outcome}')>"
