import csv
import io

import numpy as np
import pytest
from numpy.testing import assert_allclose
from pydantic import ValidationError

import run
from krylovlab.core.errors import InvalidInputError, MatrixParseError
from krylovlab.core.linalg import DenseSymmetric, SymTridiagonal
from krylovlab.models.schemas import (
    ExperimentKind,
    ExperimentSpec,
    MatrixKind,
    MatrixRecipe,
    ResultTable,
    StartKind,
    StartVectorRecipe,
)
from krylovlab.services.experiment_service import ExperimentService
from krylovlab.services.generators import RANDOM_ENTRY_BOUND, generate_matrix, generate_start_vector
from krylovlab.services.io_service import (
    confine_path,
    format_table,
    matrix_from_text,
    matrix_to_text,
    read_matrix,
    read_table,
    write_matrix,
    write_table,
)
from krylovlab.services.linear_solvers import q_epsilon


@pytest.fixture
def service():
    return ExperimentService(max_workers=2)


def without_timestamp(table: ResultTable) -> dict:
    return {k: v for k, v in table.metadata.items() if k != "generated_at"}


class TestGenerators:
    def test_ftilde_with_zero_rho_is_identity(self):
        A = generate_matrix(MatrixRecipe(kind=MatrixKind.FTILDE_RHO_MEMBER, n=5, rho=0.0))
        assert np.array_equal(A.to_dense(), np.eye(5))

    def test_deterministic_for_fixed_seed(self):
        recipe = MatrixRecipe(kind=MatrixKind.RANDOM_TRIDIAG, n=30, seed=9)
        first, second = generate_matrix(recipe), generate_matrix(recipe)
        assert np.array_equal(first.diag, second.diag)
        assert np.array_equal(first.offdiag, second.offdiag)
        other = generate_matrix(recipe.model_copy(update={"seed": 10}))
        assert not np.array_equal(first.diag, other.diag)

    def test_random_entries_within_bounds(self):
        A = generate_matrix(MatrixRecipe(kind=MatrixKind.RANDOM_TRIDIAG, n=100, seed=1))
        assert isinstance(A, SymTridiagonal)
        assert np.all(np.abs(A.diag) <= RANDOM_ENTRY_BOUND)
        assert np.all(np.abs(A.offdiag) <= RANDOM_ENTRY_BOUND)
        assert np.all(A.offdiag != 0.0)

    def test_increasing_offdiag_analog(self):
        A = generate_matrix(MatrixRecipe(kind=MatrixKind.INCREASING_OFFDIAG, n=51))
        assert np.all(A.diag == 0.0)
        assert np.all(np.diff(A.offdiag) > 0.0)
        assert A.offdiag[0] == pytest.approx(1.0 / 51)

    def test_scott_like_default_order(self):
        A = generate_matrix(MatrixRecipe(kind=MatrixKind.SCOTT_LIKE))
        assert A.n == 201
        assert np.all(A.diag == 0.0)

    @pytest.mark.parametrize("spacing", ["random", "chebyshev"])
    def test_ftilde_spectrum_attains_endpoints(self, spacing):
        A = generate_matrix(
            MatrixRecipe(kind=MatrixKind.FTILDE_RHO_MEMBER, n=12, rho=0.6, seed=2, spacing=spacing)
        )
        values = np.linalg.eigvalsh(A.to_dense())
        assert values[0] == pytest.approx(0.4, abs=1e-12)
        assert values[-1] == pytest.approx(1.6, abs=1e-12)
        assert np.all((values >= 0.4 - 1e-12) & (values <= 1.6 + 1e-12))
        if spacing == "chebyshev":
            expected = np.sort(1.0 - 0.6 * np.cos(np.pi * np.arange(12) / 11))
            assert_allclose(values, expected, atol=1e-12)

    @pytest.mark.parametrize("kind", list(StartKind))
    def test_start_vectors_are_unit(self, kind):
        A = generate_matrix(MatrixRecipe(kind=MatrixKind.RANDOM_TRIDIAG, n=15, seed=4))
        b = generate_start_vector(A, StartVectorRecipe(kind=kind, seed=3))
        assert np.linalg.norm(b) == pytest.approx(1.0, abs=1e-14)

    def test_extremal_start_mixes_end_eigenvectors(self):
        A = generate_matrix(MatrixRecipe(kind=MatrixKind.FTILDE_RHO_MEMBER, n=10, rho=0.5, seed=1))
        b = generate_start_vector(A, StartVectorRecipe(kind=StartKind.EXTREMAL))
        values, vectors = np.linalg.eigh(A.to_dense())
        weights = (vectors.T @ b) ** 2
        assert weights[0] == pytest.approx(0.5, abs=1e-12)
        assert weights[-1] == pytest.approx(0.5, abs=1e-12)

    def test_recipe_validation(self):
        with pytest.raises(ValidationError):
            MatrixRecipe(kind=MatrixKind.FTILDE_RHO_MEMBER, n=10)
        with pytest.raises(ValidationError):
            MatrixRecipe(kind=MatrixKind.EXPLICIT_FILE)
        with pytest.raises(ValidationError):
            MatrixRecipe(kind=MatrixKind.RANDOM_TRIDIAG, n=0)


class TestMatrixFiles:
    @pytest.mark.parametrize(
        "text",
        [
            "3 tridiagonal\n0.25 -1 3.5\n0.10000000000000001 2\n",
            "2 dense\n1 0.5\n0.5 -2\n",
            "1 tridiagonal\n3.5\n\n",
        ],
    )
    def test_text_is_stable(self, text):
        assert matrix_to_text(matrix_from_text(text)) == text

    def test_generated_matrix_round_trips_exactly(self, tmp_path):
        A = generate_matrix(MatrixRecipe(kind=MatrixKind.FTILDE_RHO_MEMBER, n=6, rho=0.3, seed=5))
        path = tmp_path / "m.txt"
        again = tmp_path / "again.txt"
        write_matrix(A, path)
        B = read_matrix(path)
        assert isinstance(B, DenseSymmetric)
        assert np.array_equal(A.entries, B.entries)
        write_matrix(B, again)
        assert path.read_text() == again.read_text()

    @pytest.mark.parametrize(
        "text,line",
        [
            ("", 1),
            ("3 banded\n1 2 3\n", 1),
            ("x tridiagonal\n", 1),
            ("3 tridiagonal\n1 2\n1 1\n", 2),
            ("3 tridiagonal\n1 2 3\n1 abc\n", 3),
            ("2 dense\n1 2\n0 1\n", 2),
            ("2 dense\n1 0\n", 3),
            ("2 tridiagonal\n1 2\n0.5\nextra\n", 4),
        ],
    )
    def test_parse_errors_carry_line(self, text, line):
        with pytest.raises(MatrixParseError) as info:
            matrix_from_text(text)
        assert info.value.line == line

    def test_confine_path(self, tmp_path):
        root = tmp_path / "outputs"
        root.mkdir()
        assert confine_path("a/b.csv", root) == (root / "a" / "b.csv").resolve()
        assert confine_path(root / "m.txt", root) == (root / "m.txt").resolve()
        for outside in ("../b.csv", tmp_path / "b.csv", "/etc/passwd"):
            with pytest.raises(InvalidInputError):
                confine_path(outside, root)


class TestResultTables:
    def table(self):
        return ResultTable(
            columns=["step", "epsilon", "stop"],
            rows=[[1, 0.001, 4], [2, 1e-05, None]],
            metadata={"seed": "3", "experiment": "eig-batch"},
        )

    def test_csv_is_plain(self):
        text = format_table(self.table())
        assert '"' not in text
        lines = text.splitlines()
        assert lines[:2] == ["# experiment=eig-batch", "# seed=3"]
        rows = list(csv.reader(io.StringIO("\n".join(lines[2:]))))
        assert rows[0] == ["step", "epsilon", "stop"]
        assert rows[2] == ["2", "1.0000000000000001e-05", ""]

    @pytest.mark.parametrize("suffix", [".csv", ".xlsx"])
    def test_write_then_read(self, tmp_path, suffix):
        path = write_table(self.table(), tmp_path / "nested" / f"out{suffix}")
        back = read_table(path)
        assert back.columns == ["step", "epsilon", "stop"]
        assert back.metadata == {"seed": "3", "experiment": "eig-batch"}
        assert back.rows[0][1] == 0.001
        assert back.rows[1][2] is None
        assert back.rows[0][2] == 4 and isinstance(back.rows[0][2], int)
        assert isinstance(back.rows[0][0], int)

    def test_rejects_ragged_rows(self):
        with pytest.raises(ValidationError):
            ResultTable(columns=["a", "b"], rows=[[1]])


class TestExperimentService:
    def test_ritz_table_rows(self, service):
        spec = ExperimentSpec(
            kind=ExperimentKind.RITZ_TABLE,
            recipe=MatrixRecipe(kind=MatrixKind.SCOTT_LIKE, n=30),
            eps=[1e-2, 1e-5],
            max_steps=30,
            stride=10,
        )
        table = service.run_experiment(spec)
        assert table.columns == ["step", "epsilon", "good_ritz"]
        assert table.column("step") == [10, 10, 20, 20, 30, 30]
        counts = table.column("good_ritz")
        assert all(c <= s for c, s in zip(counts, table.column("step")))
        assert table.metadata["experiment"] == "ritz-table"

    def test_ritz_table_keeps_final_step(self, service):
        spec = ExperimentSpec(
            kind=ExperimentKind.RITZ_TABLE,
            recipe=MatrixRecipe(kind=MatrixKind.SCOTT_LIKE, n=25),
            eps=[1e-2],
            max_steps=25,
            stride=10,
        )
        assert service.run_experiment(spec).column("step") == [10, 20, 25]

    def test_eig_race_is_deterministic(self, service):
        spec = ExperimentSpec(
            kind=ExperimentKind.EIG_RACE,
            recipe=MatrixRecipe(kind=MatrixKind.RANDOM_TRIDIAG, n=20, seed=2),
            start=StartVectorRecipe(kind=StartKind.A_TIMES_RANDOM, seed=5),
            eps=[1e-3],
            max_steps=20,
        )
        first = service.run_experiment(spec)
        second = service.run_experiment(spec)
        assert first.rows == second.rows
        assert without_timestamp(first) == without_timestamp(second)
        assert "lanczos_stop_0.001" in first.metadata and "gmr_stop_0.001" in first.metadata
        for row in first.rows:
            assert row[2] <= row[1]
            assert 1 <= row[4] <= 20

    def test_eig_batch(self, service):
        spec = ExperimentSpec(
            kind=ExperimentKind.EIG_BATCH,
            recipe=MatrixRecipe(kind=MatrixKind.RANDOM_TRIDIAG, n=30, seed=0),
            eps=[1e-6],
            max_steps=30,
            trials=3,
        )
        table = service.run_experiment(spec)
        assert table.column("trial") == [0, 1, 2]
        assert table.column("matrix_seed") == [0, 1, 2]
        assert table.metadata["agree_1e-06"].endswith("/3")

    def test_linear_race_worst_case(self, service):
        spec = ExperimentSpec(
            kind=ExperimentKind.LINEAR_RACE,
            recipe=MatrixRecipe(kind=MatrixKind.FTILDE_RHO_MEMBER, n=30, rho=0.5, seed=3),
            start=StartVectorRecipe(kind=StartKind.EXTREMAL),
            eps=[1e-2, 1e-5],
            max_steps=100,
        )
        table = service.run_experiment(spec)
        assert table.column("q_epsilon") == [q_epsilon(1e-2, 0.5), q_epsilon(1e-5, 0.5)]
        assert table.column("chebyshev_stop_cost") == table.column("q_epsilon")
        for lower, upper, cost in zip(table.column("index_lower"), table.column("index_upper"),
                                      table.column("mr_stop_cost")):
            assert cost <= 2 and lower == cost - 1 and upper == cost

    def test_linear_race_requires_ftilde(self):
        with pytest.raises(ValidationError):
            ExperimentSpec(kind=ExperimentKind.LINEAR_RACE, recipe=MatrixRecipe(kind=MatrixKind.SCOTT_LIKE))

    def test_worst_start(self, service):
        spec = ExperimentSpec(
            kind=ExperimentKind.WORST_START,
            recipe=MatrixRecipe(kind=MatrixKind.RANDOM_TRIDIAG, n=5, seed=1),
            steps=1,
            trials=2,
            budget=1,
        )
        table = service.run_experiment(spec)
        assert table.columns == ["trial", "n", "j", "value", "lower", "upper", "within_bracket"]
        for row in table.rows:
            assert row[3] <= row[5] + 1e-6

    def test_verify_lemmas_small_suite(self, service, tmp_path):
        spec = ExperimentSpec(
            kind=ExperimentKind.VERIFY_LEMMAS,
            trials=30,
            adversary_cases=10,
            output_path=str(tmp_path / "lemmas.csv"),
        )
        table = service.run_experiment(spec)
        assert table.metadata["failures"] == "0"
        assert table.column("check")[0] == "projection_lemma"
        assert (tmp_path / "lemmas.csv").exists()
        assert read_table(tmp_path / "lemmas.csv").metadata["failures"] == "0"

    def test_ordering_witness(self, service):
        witness = service.find_ordering_witness(seed=0)
        assert witness["mr_q"] > witness["chebyshev_q"] > witness["mr_q_plus_1"]
        assert witness["q"] >= 1


@pytest.mark.slow
class TestAcceptanceScale:
    def test_eig_batch_agreement(self, service):
        spec = ExperimentSpec(
            kind=ExperimentKind.EIG_BATCH,
            recipe=MatrixRecipe(kind=MatrixKind.RANDOM_TRIDIAG, n=100, seed=0),
            eps=[1e-6],
            max_steps=100,
            trials=20,
        )
        table = service.run_experiment(spec)
        agreed, total = table.metadata["agree_1e-06"].split("/")
        assert int(total) == 20 and int(agreed) >= 15
        differences = table.column("difference")
        assert None not in differences
        assert max(abs(d) for d in differences) <= 2

    def test_verify_lemmas_full_suite(self, service):
        spec = ExperimentSpec(kind=ExperimentKind.VERIFY_LEMMAS, trials=500, adversary_cases=200)
        table = service.run_experiment(spec)
        assert table.metadata["failures"] == "0"
        assert table.column("cases")[0] == 500

    def test_worst_start_within_bracket(self, service):
        rows = []
        for j, n in [(1, 6), (2, 8), (3, 9), (4, 10)]:
            spec = ExperimentSpec(
                kind=ExperimentKind.WORST_START,
                recipe=MatrixRecipe(kind=MatrixKind.RANDOM_TRIDIAG, n=n, seed=10 * j),
                steps=j,
                trials=5,
            )
            rows += service.run_experiment(spec).rows
        assert len(rows) == 20
        assert [row[6] for row in rows] == [1] * 20


class TestCommandLine:
    def test_parse_recipe(self):
        recipe = run.parse_recipe("ftilde_rho_member:n=40,rho=0.5,spacing=chebyshev", seed=7)
        assert recipe.n == 40 and recipe.rho == 0.5 and recipe.seed == 7
        assert recipe.spacing == "chebyshev"
        assert run.parse_recipe("ftilde_rho_member:n=40,rho=0.5,seed=1", seed=7, rho=0.8).seed == 1
        assert run.parse_recipe("ftilde_rho_member:n=40,rho=0.5", rho=0.8).rho == 0.8
        with pytest.raises(ValueError):
            run.parse_recipe("random_tridiag:n")

    def test_gen_writes_matrix(self, tmp_path):
        out = tmp_path / "m.txt"
        assert run.main(["gen", "--recipe", "random_tridiag:n=6", "--seed", "3", "--out", str(out)]) == run.EXIT_OK
        assert read_matrix(out).n == 6

    def test_run_prints_csv(self, capsys):
        code = run.main(["run", "linear-race", "--recipe", "ftilde_rho_member:n=20,rho=0.5", "--eps", "1e-3"])
        assert code == run.EXIT_OK
        out = capsys.readouterr().out
        assert "# experiment=linear-race" in out
        assert "chebyshev_stop_cost" in out

    def test_run_writes_file(self, tmp_path):
        out = tmp_path / "race.csv"
        code = run.main(["run", "eig-race", "--recipe", "random_tridiag:n=15", "--eps", "1e-3", "--out", str(out)])
        assert code == run.EXIT_OK
        assert read_table(out).columns[0] == "step"

    @pytest.mark.parametrize(
        "argv",
        [
            ["run", "eig-race", "--recipe", "banded:n=5"],
            ["run", "eig-race", "--recipe", "random_tridiag:n=5", "--eps", "1.5"],
            ["run", "eig-race", "--recipe", "explicit_file:path=/nonexistent/matrix.txt"],
            ["run", "linear-race", "--recipe", "scott_like_201:n=10"],
        ],
    )
    def test_invalid_input_exit_code(self, argv):
        assert run.main(argv) == run.EXIT_INVALID_INPUT

    def test_verify_lemmas_exit_code(self, tmp_path):
        out = tmp_path / "v.csv"
        argv = ["verify", "lemmas", "--cases", "10", "--adversary-cases", "4", "--out", str(out)]
        assert run.main(argv) == run.EXIT_OK
