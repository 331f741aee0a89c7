import logging
import uvicorn
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from contextlib import asynccontextmanager

from krylovlab.config.settings import settings
from krylovlab.api.v01.router import api_router
from krylovlab.core.errors import KrylovLabError

# 配置日志
handlers = [logging.StreamHandler()]
if settings.log_file:
    handlers.append(logging.FileHandler(settings.log_file, encoding='utf-8'))
logging.basicConfig(
    level=getattr(logging, settings.log_level.upper(), logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=handlers
)

logger = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    """
    应用生命周期管理
    """
    logger.info("应用启动中...")
    settings.ensure_output_dir()
    logger.info(f"输出目录: {settings.output_dir}")
    logger.info(f"默认种子: {settings.default_seed}，默认容差: {settings.default_eps}")
    logger.info("应用启动完成")

    yield

    logger.info("应用已关闭")


# 创建 FastAPI 应用实例
app = FastAPI(
    title=settings.app_name,
    description="Krylov 子空间算法与信息复杂度对手构造的实验 API",
    version=settings.version,
    docs_url="/docs",
    redoc_url="/redoc",
    lifespan=lifespan
)

# 配置 CORS 中间件
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


@app.exception_handler(KrylovLabError)
async def krylovlab_exception_handler(request: Request, exc: KrylovLabError):
    """
    领域错误统一返回 422
    """
    logger.error(f"请求参数错误: {str(exc)}")
    return JSONResponse(
        status_code=422,
        content={"error": type(exc).__name__, "message": str(exc)}
    )


# 全局异常处理器
@app.exception_handler(Exception)
async def global_exception_handler(request: Request, exc: Exception):
    """
    全局异常处理器
    捕获未处理的异常并返回统一的错误响应
    """
    logger.error(f"未处理的异常: {str(exc)}", exc_info=True)
    return JSONResponse(
        status_code=500,
        content={
            "error": "内部服务器错误",
            "message": "服务器遇到了一个错误，请稍后重试",
            "detail": str(exc) if settings.debug else None
        }
    )


# 注册 API 路由
app.include_router(api_router, prefix="/api")


@app.get("/")
async def root():
    """
    根路径，返回 API 基本信息
    """
    return {
        "message": settings.app_name,
        "version": settings.version,
        "docs": "/docs",
        "health": "/api/v01/health"
    }


if __name__ == "__main__":
    uvicorn.run(
        "main:app",
        host=settings.host,
        port=settings.port,
        reload=settings.debug,
        log_level="info"
    )
