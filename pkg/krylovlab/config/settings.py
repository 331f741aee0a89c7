from pydantic_settings import BaseSettings
from typing import List, Optional
from pathlib import Path


class Settings(BaseSettings):
    """
    应用配置管理类
    使用 pydantic 的 BaseSettings 自动从环境变量和 .env 加载配置

    数值容差不在这里配置，它们是各核心模块的常量，可按调用覆盖
    """

    # 应用基础配置
    app_name: str = "KrylovLab"
    version: str = "v0.1"   # 写入每个结果表格的元数据
    debug: bool = False
    host: str = "127.0.0.1"
    port: int = 8000

    # 输出配置
    output_dir: str = "outputs"

    # 实验默认值
    default_seed: int = 0
    default_eps: List[float] = [1e-2, 1e-3, 1e-5, 1e-7]
    default_max_steps: int = 200
    ritz_table_stride: int = 10     # ritz-table 每隔多少步输出一行
    max_workers: int = 4            # 独立试验的线程数

    # 校验套件规模
    lemma_cases: int = 500
    adversary_cases: int = 200
    witness_attempts: int = 40      # 排序见证搜索的最大尝试次数

    # 日志配置
    log_level: str = "INFO"
    log_file: Optional[str] = "krylovlab.log"

    class Config:
        """
        Pydantic配置类
        """
        env_file = ".env"
        env_file_encoding = "utf-8"
        case_sensitive = False

    @property
    def output_path(self) -> Path:
        """
        获取输出目录的Path对象（按需创建，不在导入时创建）
        """
        return Path(self.output_dir)

    def ensure_output_dir(self) -> Path:
        """
        确保输出目录存在

        Returns:
            Path: 输出目录
        """
        self.output_path.mkdir(parents=True, exist_ok=True)
        return self.output_path


# 创建全局配置实例
settings = Settings()
