from fastapi import APIRouter, HTTPException
import logging
import os
from datetime import datetime

from krylovlab.config.settings import settings
from krylovlab.models.schemas import HealthResponse

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/health", tags=["健康检查"])


@router.get("/", response_model=HealthResponse)
async def health_check():
    """
    系统健康检查

    Returns:
        HealthResponse: 系统健康状态
    """
    try:
        output_dir_exists = os.path.exists(settings.output_dir)
        config_status = {
            "output_dir": settings.output_dir,
            "output_dir_exists": output_dir_exists,
            "default_seed": settings.default_seed,
            "default_max_steps": settings.default_max_steps,
            "max_workers": settings.max_workers,
        }
        return HealthResponse(
            status="healthy",
            timestamp=datetime.now(),
            version=settings.version,
            config=config_status
        )
    except Exception as e:
        logger.error(f"健康检查失败: {str(e)}")
        raise HTTPException(
            status_code=500,
            detail=f"健康检查失败: {str(e)}"
        )
