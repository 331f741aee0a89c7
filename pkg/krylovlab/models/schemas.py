import math
from datetime import datetime
from enum import Enum
from typing import Dict, List, Optional, Union

from pydantic import BaseModel, Field, field_validator, model_validator


class MatrixKind(str, Enum):
    """矩阵配方类型"""
    RANDOM_TRIDIAG = "random_tridiag"              # 元素均匀取自 [-1/3, 1/3] 的随机三对角
    SCOTT_LIKE = "scott_like_201"                  # 零对角、次对角 ∝ √i，e1 起步时 Ritz 残差停滞
    INCREASING_OFFDIAG = "increasing_offdiag_501"  # 零对角、次对角 i/n 单调递增
    FTILDE_RHO_MEMBER = "ftilde_rho_member"        # A = I - B, ‖B‖ ≤ ρ，端点特征值 1±ρ 取到
    EXPLICIT_FILE = "explicit_file"                # 从矩阵文件读取


class StartKind(str, Enum):
    """起始向量类型"""
    E1 = "e1"
    RANDOM_UNIT = "random_unit"
    A_TIMES_RANDOM = "A_times_random"
    EXTREMAL = "extremal"          # 最小、最大特征值对应特征向量的等权组合


class ExperimentKind(str, Enum):
    """实验类型"""
    RITZ_TABLE = "ritz-table"
    EIG_RACE = "eig-race"
    EIG_BATCH = "eig-batch"
    LINEAR_RACE = "linear-race"
    VERIFY_LEMMAS = "verify-lemmas"
    WORST_START = "worst-start"


DEFAULT_ORDERS = {
    MatrixKind.RANDOM_TRIDIAG: 100,
    MatrixKind.SCOTT_LIKE: 201,
    MatrixKind.INCREASING_OFFDIAG: 501,
    MatrixKind.FTILDE_RHO_MEMBER: 40,
}


class ToleranceSpec(BaseModel):
    """
    残差准则 ‖A^p(x - A^{-1}b)‖ < ε‖A^{p-1}b‖
    """
    epsilon: float = Field(..., ge=0.0, lt=1.0, description="容差 ε ∈ [0, 1)")
    p: float = Field(1.0, description="范数阶 p ∈ {0, 1/2, 1}")

    @field_validator("p")
    @classmethod
    def check_p(cls, v: float) -> float:
        if v not in (0.0, 0.5, 1.0):
            raise ValueError(f"p 只能取 0、1/2 或 1，实际为 {v}")
        return v


class ChebyshevParams(BaseModel):
    """Chebyshev 迭代参数，谱包含于 [1-ρ, 1+ρ]"""
    rho: float = Field(..., gt=0.0, lt=1.0, description="‖B‖ 的上界 ρ ∈ (0, 1)")


class MatrixRecipe(BaseModel):
    """
    矩阵配方
    同一配方和种子总是生成同一矩阵
    """
    kind: MatrixKind = Field(..., description="矩阵类型")
    n: Optional[int] = Field(None, ge=1, description="阶数（缺省时按类型取默认值）")
    seed: int = Field(0, ge=0, description="随机种子")
    rho: Optional[float] = Field(None, ge=0.0, lt=1.0, description="F̃_ρ 的 ρ")
    scaling: float = Field(1.0, gt=0.0, description="整体缩放")
    spacing: str = Field("random", description="F̃_ρ 内部特征值分布 (random/chebyshev)")
    path: Optional[str] = Field(None, description="explicit_file 的矩阵文件路径")

    @model_validator(mode="after")
    def fill_defaults(self) -> "MatrixRecipe":
        if self.kind == MatrixKind.EXPLICIT_FILE:
            if not self.path:
                raise ValueError("explicit_file 配方需要 path")
            return self
        if self.n is None:
            self.n = DEFAULT_ORDERS[self.kind]
        if self.kind == MatrixKind.FTILDE_RHO_MEMBER:
            if self.rho is None:
                raise ValueError("ftilde_rho_member 配方需要 rho")
            if self.n < 2 and self.rho > 0:
                raise ValueError("ftilde_rho_member 需要 n ≥ 2 才能同时取到 1±ρ")
        if self.spacing not in ("random", "chebyshev"):
            raise ValueError(f"不支持的 spacing: {self.spacing}")
        return self

    def label(self) -> str:
        """紧凑的配方描述，写入表格元数据"""
        parts = [f"n={self.n}", f"seed={self.seed}"]
        if self.rho is not None:
            parts.append(f"rho={self.rho}")
        if self.scaling != 1.0:
            parts.append(f"scaling={self.scaling}")
        if self.kind == MatrixKind.FTILDE_RHO_MEMBER:
            parts.append(f"spacing={self.spacing}")
        if self.path:
            parts.append(f"path={self.path}")
        return f"{self.kind.value}:" + ",".join(parts)


class StartVectorRecipe(BaseModel):
    """起始向量配方，输出总是单位向量"""
    kind: StartKind = Field(StartKind.A_TIMES_RANDOM, description="起始向量类型")
    seed: int = Field(0, ge=0, description="随机种子")


class ExperimentSpec(BaseModel):
    """
    声明式实验配置
    所有字段在任何计算开始之前完成校验
    """
    kind: ExperimentKind = Field(..., description="实验类型")
    recipe: Optional[MatrixRecipe] = Field(None, description="矩阵配方")
    start: StartVectorRecipe = Field(default_factory=StartVectorRecipe, description="起始向量配方")
    eps: List[float] = Field(default_factory=lambda: [1e-2, 1e-3, 1e-5, 1e-7], description="容差列表")
    max_steps: int = Field(200, ge=1, description="最大步数")
    seed: int = Field(0, ge=0, description="实验级随机种子")
    trials: int = Field(1, ge=1, description="独立重复次数（eig-batch / worst-start），verify-lemmas 中为投影引理用例数")
    steps: int = Field(2, ge=1, description="worst-start 的 Krylov 步数 j")
    budget: int = Field(8, ge=1, description="worst-start 的随机重启次数")
    stride: int = Field(10, ge=1, description="ritz-table 的行间隔")
    adversary_cases: Optional[int] = Field(None, ge=0, description="verify-lemmas 的对手证书用例数（缺省取配置）")
    output_path: Optional[str] = Field(None, description="输出文件路径")

    @field_validator("eps")
    @classmethod
    def check_eps(cls, v: List[float]) -> List[float]:
        if not v:
            raise ValueError("eps 列表不能为空")
        for e in v:
            if not 0.0 <= e < 1.0:
                raise ValueError(f"eps 必须位于 [0, 1)，实际为 {e}")
        return v

    @model_validator(mode="after")
    def check_recipe(self) -> "ExperimentSpec":
        if self.kind != ExperimentKind.VERIFY_LEMMAS and self.recipe is None:
            raise ValueError(f"{self.kind.value} 实验需要矩阵配方")
        if self.kind == ExperimentKind.LINEAR_RACE and self.recipe is not None:
            if self.recipe.kind != MatrixKind.FTILDE_RHO_MEMBER or not self.recipe.rho:
                raise ValueError("linear-race 需要 ρ > 0 的 ftilde_rho_member 配方")
        return self


Cell = Optional[Union[int, float, str]]


class ResultTable(BaseModel):
    """
    CSV 形状的实验结果
    """
    columns: List[str] = Field(..., description="列名")
    rows: List[List[Cell]] = Field(default_factory=list, description="数据行")
    metadata: Dict[str, str] = Field(default_factory=dict, description="元数据（种子、配方、版本等）")

    @model_validator(mode="after")
    def check_cells(self) -> "ResultTable":
        width = len(self.columns)
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise ValueError(f"第 {i} 行有 {len(row)} 个单元格，应为 {width}")
            for cell in row:
                if isinstance(cell, float) and not math.isfinite(cell):
                    raise ValueError(f"第 {i} 行含非有限数值: {cell}")
        return self

    def column(self, name: str) -> List[Cell]:
        idx = self.columns.index(name)
        return [row[idx] for row in self.rows]


class LemmaVerdict(BaseModel):
    """
    投影引理单次校验结果
    假设不成立时 hypothesis_holds 为 False，此时不算失败
    """
    n: int = Field(..., description="矩阵阶数")
    j: int = Field(..., description="不可区分度 j")
    epsilon: float = Field(..., description="容差 ε")
    residual_y: float = Field(..., description="‖b - Ay‖")
    residual_twin: float = Field(..., description="‖b - Ây‖")
    residual_z: float = Field(..., description="‖b - Az‖")
    hypothesis_holds: bool = Field(..., description="两个假设残差都不超过 ε‖b‖")
    conclusion_holds: bool = Field(..., description="‖b - Az‖ ≤ ε‖b‖ + 容差")
    norm_identity_holds: bool = Field(..., description="‖Ây - b‖ = ‖Az - b - Aw‖")
    agreement_next_degree: Optional[bool] = Field(None, description="V̂(N_{j+1}) 中的补全在 z 上与 A 一致")
    agreement_same_degree: Optional[bool] = Field(None, description="V̂(N_j) 中的随机补全在 z 上与 A 一致（仅记录）")

    @property
    def passed(self) -> bool:
        return (not self.hypothesis_holds) or self.conclusion_holds


class HealthResponse(BaseModel):
    """
    健康检查响应模型
    """
    status: str = Field(..., description="服务状态")
    version: str = Field(..., description="版本号")
    timestamp: datetime = Field(..., description="检查时间")
    config: Dict[str, Union[str, int, bool]] = Field(default_factory=dict, description="配置状态")


class ExperimentKindsResponse(BaseModel):
    """可用实验与矩阵配方"""
    experiments: List[str] = Field(..., description="实验类型")
    matrices: List[str] = Field(..., description="矩阵配方类型")
    start_vectors: List[str] = Field(..., description="起始向量类型")


class MatrixTextResponse(BaseModel):
    """矩阵文件文本"""
    recipe: str = Field(..., description="配方描述")
    n: int = Field(..., description="阶数")
    text: str = Field(..., description="矩阵文件内容")
