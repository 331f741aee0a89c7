from fastapi import APIRouter

from krylovlab.api.v01.endpoints import experiments, health

# 创建 v01 版本的主路由
api_router = APIRouter(prefix="/v01")

# 注册各个端点路由
api_router.include_router(experiments.router)
api_router.include_router(health.router)
