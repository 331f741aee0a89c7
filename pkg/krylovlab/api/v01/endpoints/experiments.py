from fastapi import APIRouter, HTTPException
from fastapi.concurrency import run_in_threadpool
import logging

from krylovlab.config.settings import settings
from krylovlab.core.errors import KrylovLabError
from krylovlab.models.schemas import (
    ExperimentKind, ExperimentKindsResponse, ExperimentSpec,
    MatrixKind, MatrixRecipe, MatrixTextResponse, ResultTable, StartKind
)
from krylovlab.services.experiment_service import experiment_service
from krylovlab.services.generators import generate_matrix
from krylovlab.services.io_service import confine_path, matrix_to_text

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/experiments", tags=["实验"])


def _confined_recipe(recipe: MatrixRecipe) -> MatrixRecipe:
    """explicit_file 的矩阵文件只能从输出目录读取"""
    if recipe.path is None:
        return recipe
    return recipe.model_copy(update={"path": str(confine_path(recipe.path, settings.output_dir))})


def _confined_spec(spec: ExperimentSpec) -> ExperimentSpec:
    """请求中的读写路径一律按输出目录解析"""
    update = {}
    if spec.recipe is not None:
        update["recipe"] = _confined_recipe(spec.recipe)
    if spec.output_path:
        update["output_path"] = str(confine_path(spec.output_path, settings.output_dir))
    return spec.model_copy(update=update)


@router.get("/kinds", response_model=ExperimentKindsResponse)
async def list_kinds():
    """
    列出可用的实验类型、矩阵配方和起始向量类型
    """
    return ExperimentKindsResponse(
        experiments=[k.value for k in ExperimentKind],
        matrices=[k.value for k in MatrixKind],
        start_vectors=[k.value for k in StartKind]
    )


@router.post("/run", response_model=ResultTable)
async def run_experiment(spec: ExperimentSpec):
    """
    同步执行实验

    Args:
        spec: 实验配置（请求体校验失败时 FastAPI 返回 422）；
            recipe.path 与 output_path 相对输出目录解析，不能越出输出目录

    Returns:
        ResultTable: 结果表格；output_path 非空时同时写出文件
    """
    try:
        logger.info(f"收到实验请求: {spec.kind.value}")
        spec = _confined_spec(spec)
        return await run_in_threadpool(experiment_service.run_experiment, spec)
    except KrylovLabError as e:
        logger.error(f"实验参数错误: {str(e)}")
        raise HTTPException(status_code=422, detail=str(e))
    except OSError as e:
        logger.error(f"文件读写失败: {str(e)}")
        raise HTTPException(status_code=422, detail="文件读写失败")
    except Exception as e:
        logger.error(f"实验执行失败: {str(e)}")
        raise HTTPException(status_code=500, detail=f"实验执行失败: {str(e)}")


@router.post("/matrix", response_model=MatrixTextResponse)
async def generate_matrix_text(recipe: MatrixRecipe):
    """
    按配方生成矩阵，返回矩阵文件文本
    """
    try:
        matrix = generate_matrix(_confined_recipe(recipe))
        return MatrixTextResponse(recipe=recipe.label(), n=matrix.n, text=matrix_to_text(matrix))
    except KrylovLabError as e:
        logger.error(f"矩阵配方错误: {str(e)}")
        raise HTTPException(status_code=422, detail=str(e))
    except OSError as e:
        logger.error(f"读取矩阵文件失败: {str(e)}")
        raise HTTPException(status_code=422, detail="读取矩阵文件失败")
