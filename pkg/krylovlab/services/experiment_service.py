import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.stats import ortho_group
from tenacity import retry, retry_if_exception_type, stop_after_attempt

from krylovlab.config.settings import settings
from krylovlab.core.errors import (
    BreakdownError,
    CertificateError,
    NoAdversaryError,
    WitnessNotFoundError,
)
from krylovlab.core.krylov import LinearOperator, lanczos_factorize
from krylovlab.core.linalg import DenseSymmetric, Matrix, normalize
from krylovlab.models.schemas import (
    Cell,
    ExperimentKind,
    ExperimentSpec,
    MatrixKind,
    MatrixRecipe,
    ResultTable,
    StartKind,
    StartVectorRecipe,
)
from krylovlab.services.adversary import (
    adversarial_blowup,
    distinguished_form,
    projection_lemma_check,
    reflect_twin,
    worst_start_search,
)
from krylovlab.services.eigen_solvers import count_good_ritz, eig_race
from krylovlab.services.generators import generate_matrix, generate_start_vector
from krylovlab.services.io_service import write_table
from krylovlab.services.linear_solvers import chebyshev_run, mr_run, mr_step, ordering_check, q_epsilon

logger = logging.getLogger(__name__)

LEMMA_COLUMNS = ["check", "cases", "applicable", "passed", "failed"]


def _eps_key(eps: float) -> str:
    return format(eps, "g")


def _spd_matrix(rng: np.random.Generator, n: int) -> np.ndarray:
    """特征值均匀取自 [0.1, 2] 的随机 SPD 矩阵"""
    V = ortho_group.rvs(n, random_state=rng)
    values = rng.uniform(0.1, 2.0, n)
    M = (V * values) @ V.T
    return 0.5 * (M + M.T)


class ExperimentService:
    """
    实验服务
    把声明式的 ExperimentSpec 变成 ResultTable，同一 spec 与种子总是得到相同的行
    """

    def __init__(self, max_workers: Optional[int] = None):
        """初始化实验服务"""
        self.max_workers = max_workers or settings.max_workers
        self._runners: Dict[ExperimentKind, Callable[[ExperimentSpec], ResultTable]] = {
            ExperimentKind.RITZ_TABLE: self.run_ritz_table,
            ExperimentKind.EIG_RACE: self.run_eig_race,
            ExperimentKind.EIG_BATCH: self.run_eig_batch,
            ExperimentKind.LINEAR_RACE: self.run_linear_race,
            ExperimentKind.VERIFY_LEMMAS: self.run_verify_lemmas,
            ExperimentKind.WORST_START: self.run_worst_start,
        }

    def run_experiment(self, spec: ExperimentSpec) -> ResultTable:
        """
        执行实验

        Args:
            spec: 已校验的实验配置

        Returns:
            ResultTable: 结果表格；spec.output_path 非空时同时写出文件
        """
        logger.info(f"开始实验 {spec.kind.value}，种子 {spec.seed}")
        table = self._runners[spec.kind](spec)
        table.metadata.update(self._metadata(spec))
        logger.info(f"实验 {spec.kind.value} 完成，共 {len(table.rows)} 行")
        if spec.output_path:
            write_table(table, spec.output_path)
        return table

    def _metadata(self, spec: ExperimentSpec) -> Dict[str, str]:
        meta = {
            "experiment": spec.kind.value,
            "seed": str(spec.seed),
            "version": settings.version,
            "generated_at": datetime.now().isoformat(timespec="seconds"),
        }
        if spec.recipe is not None:
            meta["recipe"] = spec.recipe.label()
            meta["start"] = f"{spec.start.kind.value}:seed={spec.start.seed}"
        return meta

    def _problem(self, recipe: MatrixRecipe, start: StartVectorRecipe) -> Tuple[Matrix, LinearOperator, np.ndarray]:
        A = generate_matrix(recipe)
        return A, LinearOperator.from_matrix(A), generate_start_vector(A, start)

    def _map(self, fn, items: List) -> List:
        """在线程池中按顺序映射，结果顺序与输入一致"""
        if self.max_workers <= 1 or len(items) <= 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            return list(executor.map(fn, items))

    def run_ritz_table(self, spec: ExperimentSpec) -> ResultTable:
        """
        每隔 stride 步统计好 Ritz 值个数（最后一步总是输出），每个 (步数, ε) 一行
        """
        A, op, b = self._problem(spec.recipe, spec.start)
        max_steps = min(spec.max_steps, A.n)
        fact = lanczos_factorize(op, b, max_steps)
        steps = list(range(spec.stride, fact.j + 1, spec.stride))
        if not steps or steps[-1] != fact.j:
            steps.append(fact.j)
        eigenvalues = np.linalg.eigvalsh(A.to_dense())

        per_eps = {eps: count_good_ritz(fact, steps, eps, eigenvalues) for eps in spec.eps}
        rows: List[List[Cell]] = []
        for i, step in enumerate(steps):
            for eps in spec.eps:
                rows.append([step, eps, per_eps[eps][i]])
        return ResultTable(columns=["step", "epsilon", "good_ritz"], rows=rows)

    def run_eig_race(self, spec: ExperimentSpec) -> ResultTable:
        """
        r^L_j 与 r^G_j 的逐步比较；GMR 的 ρ 附上最近特征值的序号（1 起，升序），停止步写入元数据
        """
        A, op, b = self._problem(spec.recipe, spec.start)
        trace = eig_race(op, b, spec.eps, spec.max_steps)
        eigenvalues = np.linalg.eigvalsh(A.to_dense())

        rows: List[List[Cell]] = []
        for j in range(trace.steps):
            rho = float(trace.gmr_rhos[j])
            nearest = int(np.argmin(np.abs(eigenvalues - rho))) + 1
            rows.append([j + 1, float(trace.lanczos_residuals[j]), float(trace.gmr_residuals[j]), rho, nearest])

        metadata = {}
        for eps in trace.eps:
            lanczos, gmr = trace.lanczos_stops[eps], trace.gmr_stops[eps]
            metadata[f"lanczos_stop_{_eps_key(eps)}"] = "" if lanczos is None else str(lanczos)
            metadata[f"gmr_stop_{_eps_key(eps)}"] = "" if gmr is None else str(gmr)
        return ResultTable(
            columns=["step", "lanczos_residual", "gmr_residual", "gmr_rho", "rho_eigen_index"],
            rows=rows,
            metadata=metadata,
        )

    def run_eig_batch(self, spec: ExperimentSpec) -> ResultTable:
        """
        多个随机矩阵上 GMR 与 Lanczos 停止步的一致性

        第 t 次试验的矩阵种子为 recipe.seed + t，起始向量种子为 spec.seed + t。
        """
        def one_trial(t: int) -> List[List[Cell]]:
            recipe = spec.recipe.model_copy(update={"seed": spec.recipe.seed + t})
            start = spec.start.model_copy(update={"seed": spec.seed + t})
            _, op, b = self._problem(recipe, start)
            trace = eig_race(op, b, spec.eps, spec.max_steps)
            out = []
            for eps in trace.eps:
                lanczos, gmr = trace.lanczos_stops[eps], trace.gmr_stops[eps]
                diff = None if lanczos is None or gmr is None else lanczos - gmr
                out.append([t, recipe.seed, eps, lanczos, gmr, diff])
            logger.debug(f"eig-batch 试验 {t} 完成")
            return out

        rows = [row for block in self._map(one_trial, list(range(spec.trials))) for row in block]
        metadata = {}
        for eps in spec.eps:
            same = sum(1 for r in rows if r[2] == eps and r[5] == 0)
            metadata[f"agree_{_eps_key(eps)}"] = f"{same}/{spec.trials}"
        return ResultTable(
            columns=["trial", "matrix_seed", "epsilon", "lanczos_stop", "gmr_stop", "difference"],
            rows=rows,
            metadata=metadata,
        )

    def run_linear_race(self, spec: ExperimentSpec) -> ResultTable:
        """
        F̃_ρ 上 MR 与 Chebyshev 的比较，每个 ε 一行

        stop_cost 为停止迭代所消耗的信息单位；MR 的代价 k 给出
        矩阵指标的区间 k - 1 ≤ k(A) ≤ k。
        """
        rho = spec.recipe.rho
        A, op, b = self._problem(spec.recipe, spec.start)
        rows: List[List[Cell]] = []
        for eps in spec.eps:
            q = q_epsilon(eps, rho) if eps > 0.0 else None
            cheb = chebyshev_run(op, b, rho, eps, spec.max_steps)
            mr = mr_run(op, b, eps, min(spec.max_steps, A.n))
            cheb_res = float(cheb.residual_norms[cheb.stop_step]) if cheb.stop_step is not None else None
            mr_res = float(mr.residual_norms[mr.stop_step]) if mr.stop_step is not None else None
            mr_cost = mr.stop_cost
            rows.append([
                eps,
                q,
                cheb.stop_step,
                cheb.stop_cost,
                cheb_res,
                mr.stop_step,
                mr_cost,
                mr_res,
                None if mr_cost is None else max(mr_cost - 1, 0),
                mr_cost,
            ])
            logger.debug(f"linear-race ε = {eps}: q = {q}, Chebyshev 代价 {cheb.stop_cost}, MR 代价 {mr_cost}")
        return ResultTable(
            columns=[
                "epsilon", "q_epsilon",
                "chebyshev_stop_step", "chebyshev_stop_cost", "chebyshev_residual",
                "mr_stop_step", "mr_stop_cost", "mr_residual",
                "index_lower", "index_upper",
            ],
            rows=rows,
        )

    def run_worst_start(self, spec: ExperimentSpec) -> ResultTable:
        """
        最坏起始向量搜索，并与 [‖A‖/(2j), ‖A‖/j] 对照
        """
        j = spec.steps

        def one_trial(t: int) -> List[Cell]:
            recipe = spec.recipe.model_copy(update={"seed": spec.recipe.seed + t})
            A = DenseSymmetric(generate_matrix(recipe).to_dense())
            _, value = worst_start_search(A, j, spec.budget, seed=spec.seed + t)
            norm = A.norm2()
            lower, upper = norm / (2 * j), norm / j
            inside = int(lower - 0.05 * norm <= value <= upper + 1e-6) if j < A.n else int(value == 0.0)
            return [t, A.n, j, value, lower, upper, inside]

        rows = self._map(one_trial, list(range(spec.trials)))
        return ResultTable(
            columns=["trial", "n", "j", "value", "lower", "upper", "within_bracket"],
            rows=rows,
        )

    def run_verify_lemmas(self, spec: ExperimentSpec) -> ResultTable:
        """
        随机化校验套件：投影引理、反射孪生的范数恒等式、补全一致性、
        对手证书，以及排序见证搜索

        表格元数据中的 failures 为失败总数；次数 j 的补全一致性只记录不计入失败。
        """
        lemma_cases = spec.trials
        adversary_cases = settings.adversary_cases if spec.adversary_cases is None else spec.adversary_cases

        verdicts = self._map(lambda i: self._lemma_case(spec.seed, i), list(range(lemma_cases)))
        outcomes = self._map(lambda i: self._adversary_case(spec.seed, i), list(range(adversary_cases)))

        held = [v for v in verdicts if v.hypothesis_holds]
        lemma_failed = sum(1 for v in verdicts if not v.passed)
        identity_failed = sum(1 for v in verdicts if not v.norm_identity_holds)
        next_checked = [v.agreement_next_degree for v in verdicts if v.agreement_next_degree is not None]
        same_checked = [v.agreement_same_degree for v in verdicts if v.agreement_same_degree is not None]
        adversary_applicable = [o for o in outcomes if o is not None]

        try:
            witness = self.find_ordering_witness(spec.seed)
            witness_row = ["ordering_witness", 1, 1, 1, 0]
            logger.info(f"找到排序见证: {witness}")
        except WitnessNotFoundError as e:
            witness_row = ["ordering_witness", 1, 1, 0, 1]
            logger.error(f"未找到排序见证: {str(e)}")

        rows: List[List[Cell]] = [
            ["projection_lemma", lemma_cases, len(held), len(held) - lemma_failed, lemma_failed],
            ["norm_identity", lemma_cases, lemma_cases, lemma_cases - identity_failed, identity_failed],
            ["agreement_degree_j_plus_1", lemma_cases, len(next_checked), sum(next_checked),
             len(next_checked) - sum(next_checked)],
            ["agreement_degree_j", lemma_cases, len(same_checked), sum(same_checked),
             len(same_checked) - sum(same_checked)],
            ["adversary_certificate", adversary_cases, len(adversary_applicable), sum(adversary_applicable),
             len(adversary_applicable) - sum(adversary_applicable)],
            witness_row,
        ]
        failures = sum(row[4] for row in rows if row[0] != "agreement_degree_j")
        if failures:
            logger.error(f"校验失败 {failures} 项")
        else:
            logger.info("全部校验通过")
        return ResultTable(columns=LEMMA_COLUMNS, rows=rows, metadata={"failures": str(failures)})

    def _lemma_case(self, seed: int, index: int):
        """
        第 index 个投影引理用例

        y 为第 j+1 步的 MR 迭代加上与 K^{j+1} 正交的扰动；
        ε 取两个假设残差的较大者乘以 [0.8, 1.5) 中的因子，因此部分用例假设不成立。
        """
        rng = np.random.default_rng([seed, 1, index])
        n = int(rng.integers(4, 21))
        j = int(rng.integers(1, n - 1))
        op = LinearOperator.from_matrix(_spd_matrix(rng, n))
        b = normalize(rng.standard_normal(n))

        fact = lanczos_factorize(op, b, j + 1)
        y = mr_step(fact, b)
        perturb = rng.standard_normal(n)
        perturb -= fact.Q @ (fact.Q.T @ perturb)
        if np.linalg.norm(perturb) > 0.0:
            y = y + 10.0 ** rng.uniform(-3, 0) * normalize(perturb)

        twin = reflect_twin(op, b, j, y)
        eps = max(twin.norms[0], twin.norms[1]) * rng.uniform(0.8, 1.5)
        return projection_lemma_check(op, b, j, eps, y, seed=int(rng.integers(2**31)))

    def _adversary_case(self, seed: int, index: int) -> Optional[bool]:
        """第 index 个对手证书用例；v ∈ K^j 或 breakdown 时返回 None（不适用）"""
        rng = np.random.default_rng([seed, 2, index])
        n = int(rng.integers(3, 13))
        j = int(rng.integers(1, n))
        op = LinearOperator.from_matrix(_spd_matrix(rng, n))
        b = normalize(rng.standard_normal(n))
        v = normalize(rng.standard_normal(n))
        target = float(10.0 ** rng.uniform(0, 3))
        try:
            cert = adversarial_blowup(distinguished_form(op, b, j), v, target)
        except (NoAdversaryError, BreakdownError) as e:
            logger.warning(f"对手用例 {index} 不适用: {str(e)}")
            return None
        except CertificateError as e:
            logger.error(f"对手用例 {index} 失败: {str(e)}")
            return False
        return not cert.verify() and cert.residual > target

    def find_ordering_witness(self, seed: int = 0) -> Dict[str, Cell]:
        """
        搜索 ‖b - A·MR(N_q)‖ > ‖b - A·Cheb(N_q)‖ > ‖b - A·MR(N_{q+1})‖ 的实例

        每次尝试按 (seed, 尝试序号) 确定性地抽取 n、ρ、ε 与起始向量，
        矩阵取 Chebyshev 分布的 F̃_ρ 成员；失败时由 tenacity 重试。

        Raises:
            WitnessNotFoundError: 全部尝试都失败
        """
        counter = itertools.count()

        @retry(
            stop=stop_after_attempt(settings.witness_attempts),
            retry=retry_if_exception_type(WitnessNotFoundError),
            reraise=True,
        )
        def attempt() -> Dict[str, Cell]:
            k = next(counter)
            rng = np.random.default_rng([seed, 3, k])
            rho = float(rng.uniform(0.3, 0.9))
            eps = float(10.0 ** rng.uniform(-6, -2))
            n = int(rng.integers(40, 81))
            recipe = MatrixRecipe(
                kind=MatrixKind.FTILDE_RHO_MEMBER, n=n, seed=int(rng.integers(2**31)), rho=rho, spacing="chebyshev"
            )
            start = StartVectorRecipe(kind=StartKind.RANDOM_UNIT, seed=int(rng.integers(2**31)))
            _, op, b = self._problem(recipe, start)
            check = ordering_check(op, b, rho, eps)
            if check is None or not check.holds:
                raise WitnessNotFoundError(f"第 {k + 1} 次尝试未找到见证（n = {n}, ρ = {rho:.3f}, ε = {eps:.2e}）")
            return {
                "recipe": recipe.label(),
                "start_seed": start.seed,
                "epsilon": eps,
                "q": check.q,
                "mr_q": check.mr_q,
                "chebyshev_q": check.cheb_q,
                "mr_q_plus_1": check.mr_q_plus_1,
            }

        return attempt()


# 全局实验服务实例
experiment_service = ExperimentService()
