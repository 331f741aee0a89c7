"""
文件读写：结果表格（CSV / Excel）、矩阵文件与证书文本

浮点数一律以 17 位有效数字写出，读回后逐位相同。
"""

import logging
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from krylovlab.core.errors import InvalidInputError, MatrixParseError
from krylovlab.core.linalg import DenseSymmetric, Matrix, SymTridiagonal, as_vector, make_reflector
from krylovlab.models.schemas import Cell, ResultTable
from krylovlab.services.adversary import AdversaryCertificate, TwinCertificate

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
METADATA_PREFIX = "# "
MATRIX_KINDS = ("tridiagonal", "dense")

Certificate = Union[AdversaryCertificate, TwinCertificate]


def confine_path(path: Union[str, Path], root: Union[str, Path]) -> Path:
    """
    把请求给出的路径限制在 root 目录之内

    相对路径按 root 解析，绝对路径原样解析；解析结果（含 `..` 与符号链接）
    不在 root 之内时拒绝。

    Raises:
        InvalidInputError: 路径越出 root
    """
    base = Path(root).resolve()
    target = (base / Path(path)).resolve()
    if not target.is_relative_to(base):
        raise InvalidInputError(f"路径必须位于输出目录 {root} 之内: {path}")
    return target


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _fmt_row(values: Sequence[float]) -> str:
    return " ".join(_fmt(x) for x in values)


def _to_frame(table: ResultTable) -> pd.DataFrame:
    return pd.DataFrame(table.rows, columns=table.columns)


def format_table(table: ResultTable) -> str:
    """CSV 文本：`# key=value` 元数据行、表头、数据行"""
    meta = "".join(f"{METADATA_PREFIX}{key}={value}\n" for key, value in sorted(table.metadata.items()))
    body = _to_frame(table).to_csv(index=False, float_format=FLOAT_FORMAT, na_rep="", lineterminator="\n")
    return meta + body


def write_table(table: ResultTable, path: Union[str, Path]) -> Path:
    """
    写出结果表格

    .xlsx 后缀写 Excel 工作簿（results 与 metadata 两个工作表），
    其余写 CSV：先是 `# key=value` 元数据行，然后是表头和数据，
    逗号分隔、不加引号，“从未停止”写为空单元格。

    Args:
        table: 结果表格
        path: 输出路径，父目录不存在时自动创建

    Returns:
        Path: 实际写出的路径
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        if path.suffix.lower() == ".xlsx":
            meta = pd.DataFrame(sorted(table.metadata.items()), columns=["key", "value"])
            with pd.ExcelWriter(path, engine="openpyxl") as writer:
                _to_frame(table).to_excel(writer, sheet_name="results", index=False)
                meta.to_excel(writer, sheet_name="metadata", index=False)
        else:
            with open(path, "w", newline="", encoding="utf-8") as f:
                f.write(format_table(table))
    except OSError as e:
        logger.error(f"写出表格失败 {path}: {str(e)}")
        raise

    logger.info(f"表格已写出: {path}（{len(table.rows)} 行）")
    return path


def _cell(value) -> Cell:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return None
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


def read_table(path: Union[str, Path]) -> ResultTable:
    """
    读回 write_table 写出的表格（空单元格读为 None）

    含空单元格的整数列在 CSV 中会被推断为浮点列；非空值全为整数的这类列还原为整数。
    """
    path = Path(path)
    if path.suffix.lower() == ".xlsx":
        sheets = pd.read_excel(path, sheet_name=None, engine="openpyxl")
        df = sheets["results"]
        metadata = {str(k): str(v) for k, v in zip(sheets["metadata"]["key"], sheets["metadata"]["value"])}
    else:
        metadata = {}
        with open(path, "r", encoding="utf-8") as f:
            for line in f:
                if not line.startswith("#"):
                    break
                key, _, value = line[1:].strip().partition("=")
                metadata[key] = value
        df = pd.read_csv(path, comment="#")

    for name in df.columns:
        column = df[name]
        if column.dtype.kind == "f" and column.isna().any():
            present = column.dropna()
            if len(present) and bool((present == present.round()).all()):
                df[name] = column.astype("Int64")

    df = df.astype(object).where(pd.notna(df), None)
    rows = [[_cell(v) for v in row] for row in df.itertuples(index=False, name=None)]
    return ResultTable(columns=[str(c) for c in df.columns], rows=rows, metadata=metadata)


def matrix_to_text(A: Matrix) -> str:
    """
    矩阵文件格式：首行 `n kind`；
    tridiagonal 其后为对角线一行、次对角线一行，dense 其后为 n 行
    """
    if isinstance(A, SymTridiagonal):
        lines = [f"{A.n} tridiagonal", _fmt_row(A.diag), _fmt_row(A.offdiag)]
    else:
        lines = [f"{A.n} dense"] + [_fmt_row(row) for row in A.entries]
    return "\n".join(lines) + "\n"


def _parse_floats(line: str, lineno: int, expected: int) -> np.ndarray:
    tokens = line.split()
    if len(tokens) != expected:
        raise MatrixParseError(f"应有 {expected} 个数，实际为 {len(tokens)}", line=lineno)
    try:
        return np.array([float(t) for t in tokens], dtype=np.float64)
    except ValueError:
        raise MatrixParseError("存在无法解析的数值", line=lineno)


def matrix_from_text(text: str) -> Matrix:
    """
    解析矩阵文件内容

    Raises:
        MatrixParseError: 格式错误，带行号（空文件为第 1 行）
    """
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise MatrixParseError("缺少头部 `n kind`", line=1)
    header = lines[0].split()
    if len(header) != 2 or header[1] not in MATRIX_KINDS:
        raise MatrixParseError(f"头部应为 `n kind`（kind ∈ {MATRIX_KINDS}）", line=1)
    try:
        n = int(header[0])
    except ValueError:
        raise MatrixParseError("阶数不是整数", line=1)
    if n < 1:
        raise MatrixParseError(f"阶数必须为正: {n}", line=1)

    def line_at(i: int) -> str:
        if i >= len(lines):
            raise MatrixParseError("文件提前结束", line=i + 1)
        return lines[i]

    if header[1] == "tridiagonal":
        diag = _parse_floats(line_at(1), 2, n)
        # n = 1 时次对角线行可以为空或省略
        off_line = line_at(2) if n > 1 else (lines[2] if len(lines) > 2 else "")
        offdiag = _parse_floats(off_line, 3, n - 1)
        extra = 3
        matrix: Matrix = SymTridiagonal(diag, offdiag)
    else:
        rows = [_parse_floats(line_at(i), i + 1, n) for i in range(1, n + 1)]
        extra = n + 1
        try:
            matrix = DenseSymmetric(np.vstack(rows))
        except InvalidInputError as e:
            raise MatrixParseError(str(e), line=2)

    for i in range(extra, len(lines)):
        if lines[i].strip():
            raise MatrixParseError("矩阵数据之后有多余内容", line=i + 1)
    return matrix


def write_matrix(A: Matrix, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(matrix_to_text(A), encoding="utf-8")
    logger.info(f"矩阵已写出: {path}（n = {A.n}）")
    return path


def read_matrix(path: Union[str, Path]) -> Matrix:
    """
    读取矩阵文件

    Raises:
        MatrixParseError: 格式错误
        OSError: 文件不可读
    """
    path = Path(path)
    return matrix_from_text(path.read_text(encoding="utf-8"))


def certificate_to_text(cert: Certificate) -> str:
    """
    证书的纯文本记录：每行 `key v1 v2 ...`，矩阵按行重复同一个 key，17 位有效数字
    """
    if isinstance(cert, AdversaryCertificate):
        lines = [
            "certificate adversary",
            f"n {cert.A_tilde.n}",
            f"j {cert.indist_degree}",
            f"residual {_fmt(cert.residual)}",
            f"scale {_fmt(cert.scale)}",
            f"b {_fmt_row(cert.b)}",
            f"v {_fmt_row(cert.v)}",
        ]
        lines += [f"power {_fmt_row(row)}" for row in cert.powers]
        lines += [f"A_tilde {_fmt_row(row)}" for row in cert.A_tilde.entries]
    elif isinstance(cert, TwinCertificate):
        axis = "" if cert.H is None else " " + _fmt_row(cert.H.axis)
        lines = [
            "certificate twin",
            f"n {cert.A.n}",
            f"j {cert.j}",
            f"norms {_fmt_row(cert.norms)}",
            f"axis{axis}",
            f"b {_fmt_row(cert.b)}",
            f"y {_fmt_row(cert.y)}",
            f"z {_fmt_row(cert.z)}",
            f"w {_fmt_row(cert.w)}",
        ]
        lines += [f"A {_fmt_row(row)}" for row in cert.A.entries]
        lines += [f"A_hat {_fmt_row(row)}" for row in cert.A_hat.entries]
    else:
        raise InvalidInputError(f"不支持的证书类型: {type(cert).__name__}")
    return "\n".join(lines) + "\n"


def _records(text: str) -> Tuple[Dict[str, List[np.ndarray]], Dict[str, int]]:
    records: Dict[str, List[np.ndarray]] = {}
    first_line: Dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines()[1:], start=2):
        if not line.strip():
            continue
        key, *tokens = line.split()
        try:
            values = np.array([float(t) for t in tokens], dtype=np.float64)
        except ValueError:
            raise MatrixParseError("存在无法解析的数值", line=lineno)
        records.setdefault(key, []).append(values)
        first_line.setdefault(key, lineno)
    return records, first_line


def certificate_from_text(text: str) -> Certificate:
    """
    解析 certificate_to_text 的输出；解析出的证书可直接调用 verify() 重新校验

    Raises:
        MatrixParseError: 格式错误，带行号
    """
    lines = text.splitlines()
    if not lines or lines[0].split()[:1] != ["certificate"] or len(lines[0].split()) != 2:
        raise MatrixParseError("缺少头部 `certificate kind`", line=1)
    kind = lines[0].split()[1]
    records, first_line = _records(text)

    def scalar(key: str) -> float:
        if key not in records or records[key][0].size != 1:
            raise MatrixParseError(f"缺少或错误的字段 {key}", line=first_line.get(key, len(lines) + 1))
        return float(records[key][0][0])

    def vector(key: str, size: int) -> np.ndarray:
        if key not in records or records[key][0].size != size:
            raise MatrixParseError(f"缺少或错误的字段 {key}", line=first_line.get(key, len(lines) + 1))
        return as_vector(records[key][0])

    def matrix(key: str, rows: int, cols: int) -> np.ndarray:
        block = records.get(key, [])
        if len(block) != rows or any(r.size != cols for r in block):
            raise MatrixParseError(f"字段 {key} 应为 {rows}×{cols}", line=first_line.get(key, len(lines) + 1))
        return np.vstack(block)

    n = int(scalar("n"))
    j = int(scalar("j"))
    if kind == "adversary":
        return AdversaryCertificate(
            A_tilde=DenseSymmetric(matrix("A_tilde", n, n)),
            v=vector("v", n),
            residual=scalar("residual"),
            indist_degree=j,
            b=vector("b", n),
            powers=matrix("power", j + 1, n),
            scale=scalar("scale"),
        )
    if kind == "twin":
        norms = vector("norms", 3)
        axis = records.get("axis", [np.array([])])[0]
        return TwinCertificate(
            H=make_reflector(axis) if axis.size else None,
            A=DenseSymmetric(matrix("A", n, n)),
            A_hat=DenseSymmetric(matrix("A_hat", n, n)),
            b=vector("b", n),
            j=j,
            y=vector("y", n),
            z=vector("z", n),
            w=vector("w", n),
            norms=(float(norms[0]), float(norms[1]), float(norms[2])),
        )
    raise MatrixParseError(f"未知的证书类型: {kind}", line=1)
