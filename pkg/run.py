#!/usr/bin/env python3
"""
命令行入口
生成矩阵文件、运行实验、执行校验套件、启动 API 服务器

    python run.py gen --recipe random_tridiag:n=100 --seed 1 --out m.txt
    python run.py run eig-race --recipe increasing_offdiag_501 --start e1 --eps 1e-3
    python run.py verify lemmas --seed 0
    python run.py serve --port 8000
"""

import argparse
import logging
import sys
import os
from typing import Dict, List, Optional

# 添加项目根目录到 Python 路径
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from pydantic import ValidationError

from krylovlab.config.settings import settings
from krylovlab.core.errors import KrylovLabError
from krylovlab.models.schemas import (
    ExperimentKind, ExperimentSpec, MatrixKind, MatrixRecipe, StartKind, StartVectorRecipe
)

logger = logging.getLogger("krylovlab.cli")

EXIT_OK = 0
EXIT_VERIFICATION_FAILED = 1
EXIT_INVALID_INPUT = 2

# 未给出 --recipe 时各实验使用的配方
DEFAULT_RECIPES: Dict[ExperimentKind, str] = {
    ExperimentKind.RITZ_TABLE: "scott_like_201",
    ExperimentKind.EIG_RACE: "increasing_offdiag_501",
    ExperimentKind.EIG_BATCH: "random_tridiag:n=100",
    ExperimentKind.LINEAR_RACE: "ftilde_rho_member:n=40,rho=0.5",
    ExperimentKind.WORST_START: "random_tridiag:n=8",
}

RUN_KINDS = [k.value for k in ExperimentKind if k != ExperimentKind.VERIFY_LEMMAS]


def setup_logging(level: Optional[str] = None):
    """
    配置日志：控制台 + 文件
    """
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if settings.log_file:
        handlers.append(logging.FileHandler(settings.log_file, encoding='utf-8'))
    logging.basicConfig(
        level=getattr(logging, (level or settings.log_level).upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers
    )


def parse_recipe(text: str, seed: Optional[int] = None, rho: Optional[float] = None) -> MatrixRecipe:
    """
    解析 `kind:key=value,key=value` 形式的矩阵配方

    Args:
        text: 配方字符串，例如 `ftilde_rho_member:n=40,rho=0.5,spacing=chebyshev`
        seed: 配方未写 seed 时使用的种子
        rho: 非空时覆盖配方中的 ρ

    Returns:
        MatrixRecipe: 已校验的配方
    """
    kind, _, params = text.partition(":")
    fields: Dict[str, str] = {}
    for item in filter(None, params.split(",")):
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"配方参数应为 key=value 形式: {item}")
        fields[key.strip()] = value.strip()
    if seed is not None:
        fields.setdefault("seed", str(seed))
    if rho is not None:
        fields["rho"] = str(rho)
    return MatrixRecipe(kind=MatrixKind(kind.strip()), **fields)


def parse_eps(text: Optional[str]) -> List[float]:
    if not text:
        return list(settings.default_eps)
    return [float(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    """
    构造命令行解析器
    """
    parser = argparse.ArgumentParser(description=f"{settings.app_name} 命令行工具")
    parser.add_argument(
        "--log-level",
        choices=["debug", "info", "warning", "error"],
        default=None,
        help=f"日志级别 (默认: {settings.log_level.lower()})"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="按配方生成矩阵文件")
    gen.add_argument("--recipe", required=True, help="矩阵配方 kind:key=value,...")
    gen.add_argument("--seed", type=int, default=settings.default_seed, help="随机种子")
    gen.add_argument("--out", required=True, help="输出路径")

    run = sub.add_parser("run", help="运行实验")
    run.add_argument("kind", choices=RUN_KINDS, help="实验类型")
    run.add_argument("--recipe", default=None, help="矩阵配方（缺省按实验类型选择）")
    run.add_argument("--start", choices=[k.value for k in StartKind], default=None,
                     help="起始向量类型 (默认: linear-race 为 extremal，其余为 A_times_random)")
    run.add_argument("--seed", type=int, default=settings.default_seed, help="随机种子")
    run.add_argument("--eps", default=None, help="逗号分隔的容差列表")
    run.add_argument("--max-steps", type=int, default=settings.default_max_steps, help="最大步数")
    run.add_argument("--out", default=None, help="输出路径（.csv 或 .xlsx）")
    run.add_argument("--trials", type=int, default=None, help="重复次数（eig-batch 默认 20，worst-start 默认 20）")
    run.add_argument("--rho", type=float, default=None, help="linear-race 的 ρ")
    run.add_argument("--steps", type=int, default=2, help="worst-start 的步数 j")
    run.add_argument("--budget", type=int, default=8, help="worst-start 的随机重启次数")
    run.add_argument("--stride", type=int, default=settings.ritz_table_stride, help="ritz-table 的行间隔")

    verify = sub.add_parser("verify", help="校验套件")
    verify.add_argument("suite", choices=["lemmas"], help="套件名称")
    verify.add_argument("--seed", type=int, default=settings.default_seed, help="随机种子")
    verify.add_argument("--cases", type=int, default=settings.lemma_cases, help="投影引理用例数")
    verify.add_argument("--adversary-cases", type=int, default=settings.adversary_cases, help="对手证书用例数")
    verify.add_argument("--out", default=None, help="输出路径")

    serve = sub.add_parser("serve", help="启动 API 服务器")
    serve.add_argument("--host", default=settings.host, help=f"服务器主机地址 (默认: {settings.host})")
    serve.add_argument("--port", type=int, default=settings.port, help=f"服务器端口 (默认: {settings.port})")
    serve.add_argument("--reload", action="store_true", default=settings.debug, help="启用自动重载 (开发模式)")
    serve.add_argument("--workers", type=int, default=1, help="工作进程数量 (生产模式)")
    return parser


def build_spec(args: argparse.Namespace) -> ExperimentSpec:
    """
    把 `run` 子命令的参数转换为 ExperimentSpec
    """
    kind = ExperimentKind(args.kind)
    recipe = parse_recipe(args.recipe or DEFAULT_RECIPES[kind], seed=args.seed, rho=args.rho)
    start_kind = args.start or (StartKind.EXTREMAL.value if kind == ExperimentKind.LINEAR_RACE
                                else StartKind.A_TIMES_RANDOM.value)
    trials = args.trials
    if trials is None:
        trials = 20 if kind in (ExperimentKind.EIG_BATCH, ExperimentKind.WORST_START) else 1
    return ExperimentSpec(
        kind=kind,
        recipe=recipe,
        start=StartVectorRecipe(kind=StartKind(start_kind), seed=args.seed),
        eps=parse_eps(args.eps),
        max_steps=args.max_steps,
        seed=args.seed,
        trials=trials,
        steps=args.steps,
        budget=args.budget,
        stride=args.stride,
        output_path=args.out,
    )


def emit(table, out: Optional[str]):
    """未指定输出路径时把 CSV 打印到标准输出"""
    from krylovlab.services.io_service import format_table

    if not out:
        sys.stdout.write(format_table(table))


def command_gen(args: argparse.Namespace) -> int:
    from krylovlab.services.generators import generate_matrix
    from krylovlab.services.io_service import write_matrix

    recipe = parse_recipe(args.recipe, seed=args.seed)
    path = write_matrix(generate_matrix(recipe), args.out)
    print(f"矩阵已写出: {path}（{recipe.label()}）")
    return EXIT_OK


def command_run(args: argparse.Namespace) -> int:
    from krylovlab.services.experiment_service import experiment_service

    table = experiment_service.run_experiment(build_spec(args))
    emit(table, args.out)
    return EXIT_OK


def command_verify(args: argparse.Namespace) -> int:
    from krylovlab.services.experiment_service import experiment_service

    spec = ExperimentSpec(
        kind=ExperimentKind.VERIFY_LEMMAS,
        seed=args.seed,
        trials=max(args.cases, 1),
        adversary_cases=args.adversary_cases,
        output_path=args.out,
    )
    table = experiment_service.run_experiment(spec)
    emit(table, args.out)
    failures = int(table.metadata.get("failures", "0"))
    if failures:
        logger.error(f"校验失败 {failures} 项")
        return EXIT_VERIFICATION_FAILED
    return EXIT_OK


def command_serve(args: argparse.Namespace) -> int:
    import uvicorn

    print(f"启动 {settings.app_name} API 服务器...")
    print(f"主机: {args.host}")
    print(f"端口: {args.port}")
    print(f"调试模式: {args.reload}")
    print(f"文档地址: http://{args.host}:{args.port}/docs")
    print("-" * 50)

    uvicorn.run(
        "main:app",
        host=args.host,
        port=args.port,
        reload=args.reload,
        workers=args.workers if not args.reload else 1,
        log_level="info"
    )
    return EXIT_OK


COMMANDS = {
    "gen": command_gen,
    "run": command_run,
    "verify": command_verify,
    "serve": command_serve,
}


def main(argv: Optional[List[str]] = None) -> int:
    """
    主函数，解析命令行参数并分派子命令

    Returns:
        int: 退出码（0 成功，1 校验失败，2 输入无效）
    """
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except (KrylovLabError, ValidationError, ValueError) as e:
        logger.error(f"输入无效: {str(e)}")
        return EXIT_INVALID_INPUT
    except OSError as e:
        logger.error(f"文件读写失败: {str(e)}")
        return EXIT_INVALID_INPUT


if __name__ == "__main__":
    sys.exit(main())
