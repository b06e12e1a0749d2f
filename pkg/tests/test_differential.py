"""Differential runner: what counts as agreement between two programs."""
from aggify.interp import run_differential
from aggify.parser import parse_program
from aggify.values import dec_from_string as d

from helpers import catalog_of, table


def prog(stmts, returns="INT", name="f"):
    return parse_program(
        f"CREATE FUNCTION {name}()\nRETURNS {returns}\nAS\nBEGIN\n"
        f"{stmts}\nEND", allow_persistent_dml=True)


def cat():
    return catalog_of(t=table([("v", "INT")], [(3,), (1,), (2,)]))


SUM_LOOP = ("DECLARE @v INT; DECLARE @s INT = 0;\n"
            "DECLARE c CURSOR FOR SELECT v FROM t;\n"
            "OPEN c; FETCH NEXT FROM c INTO @v;\n"
            "WHILE @@FETCH_STATUS = 0 BEGIN\n"
            "    SET @s = @s + @v;\n"
            "    FETCH NEXT FROM c INTO @v;\n"
            "END\n"
            "CLOSE c; DEALLOCATE c;\nRETURN @s;")


class TestAgreement:
    def test_identical_programs_agree(self):
        res = run_differential(prog(SUM_LOOP), prog(SUM_LOOP), cat())
        assert res.equal and res.mismatches == []

    def test_return_mismatch_reported(self):
        res = run_differential(prog("RETURN 1;"), prog("RETURN 2;"), cat())
        assert not res.equal
        assert any(m.startswith("return:") for m in res.mismatches)

    def test_value_comparison_is_type_strict(self):
        # INT 1 and DECIMAL 1.0 are not the same observable
        res = run_differential(prog("RETURN 1;"),
                               prog("RETURN 1;", returns="DECIMAL"), cat())
        assert not res.equal

    def test_shared_variable_mismatch(self):
        left = prog("DECLARE @x INT = 1; RETURN 0;")
        right = prog("DECLARE @x INT = 2; RETURN 0;")
        res = run_differential(left, right, cat())
        assert not res.equal
        assert any(m.startswith("@x:") for m in res.mismatches)

    def test_ignore_vars_suppresses(self):
        left = prog("DECLARE @x INT = 1; RETURN 0;")
        right = prog("DECLARE @x INT = 2; RETURN 0;")
        res = run_differential(left, right, cat(), ignore_vars={"x"})
        assert res.equal

    def test_unshared_variables_not_compared(self):
        left = prog("DECLARE @only_left INT = 1; RETURN 0;")
        right = prog("DECLARE @only_right INT = 2; RETURN 0;")
        assert run_differential(left, right, cat()).equal


class TestErrorAgreement:
    def test_same_error_class_is_agreement(self):
        src = "DECLARE @x INT = 1; SET @x = @x / 0; RETURN @x;"
        res = run_differential(prog(src), prog(src), cat())
        assert res.equal
        assert res.left.error == "CslRuntimeError"

    def test_error_vs_success_disagrees(self):
        res = run_differential(prog("RETURN 1 / 0;"), prog("RETURN 0;"), cat())
        assert not res.equal
        assert any(m.startswith("error:") for m in res.mismatches)

    def test_error_short_circuits_value_checks(self):
        left = prog("DECLARE @x INT = 9; RETURN 1 / 0;")
        right = prog("DECLARE @x INT = 5; RETURN 1 / 0;")
        res = run_differential(left, right, cat())
        assert res.equal  # same failure class; states may differ


class TestTables:
    def test_local_tables_compared_as_multisets(self):
        left = prog("DECLARE @t TABLE(x INT);\n"
                    "INSERT INTO @t VALUES(1); INSERT INTO @t VALUES(2);\n"
                    "RETURN 0;")
        right = prog("DECLARE @t TABLE(x INT);\n"
                     "INSERT INTO @t VALUES(2); INSERT INTO @t VALUES(1);\n"
                     "RETURN 0;")
        assert run_differential(left, right, cat()).equal

    def test_local_table_contents_checked(self):
        left = prog("DECLARE @t TABLE(x INT); INSERT INTO @t VALUES(1); "
                    "RETURN 0;")
        right = prog("DECLARE @t TABLE(x INT); INSERT INTO @t VALUES(9); "
                     "RETURN 0;")
        res = run_differential(left, right, cat())
        assert not res.equal
        assert any("row multisets differ" in m for m in res.mismatches)

    def test_table_set_mismatch(self):
        left = prog("DECLARE @t1 TABLE(x INT); RETURN 0;")
        right = prog("DECLARE @t2 TABLE(x INT); RETURN 0;")
        res = run_differential(left, right, cat())
        assert not res.equal
        assert any("table sets differ" in m for m in res.mismatches)

    def test_persistent_divergence(self):
        left = prog("INSERT INTO t VALUES(7); RETURN 0;")
        right = prog("RETURN 0;")
        res = run_differential(left, right, cat())
        assert not res.equal
        assert any(m.startswith("persistent t:") for m in res.mismatches)

    def test_matching_persistent_writes_agree(self):
        src = "INSERT INTO t VALUES(7); RETURN 0;"
        assert run_differential(prog(src), prog(src), cat()).equal

    def test_runs_do_not_share_catalog(self):
        # each side mutates its own copy; the caller's stays intact
        c = cat()
        src = "DELETE FROM t WHERE v > 0; RETURN 0;"
        res = run_differential(prog(src), prog(src), c)
        assert res.equal
        assert len(c["t"].rows) == 3


class TestShuffle:
    CONCAT = ("DECLARE @s VARCHAR; DECLARE @acc VARCHAR = '';\n"
              "DECLARE c CURSOR FOR SELECT s FROM names;\n"
              "OPEN c; FETCH NEXT FROM c INTO @s;\n"
              "WHILE @@FETCH_STATUS = 0 BEGIN\n"
              "    SET @acc = concat(@acc, @s);\n"
              "    FETCH NEXT FROM c INTO @s;\n"
              "END\n"
              "CLOSE c; DEALLOCATE c;\nRETURN @acc;")

    def names_cat(self):
        return catalog_of(names=table([("s", "VARCHAR")],
                                      [("a",), ("b",), ("c",)]))

    def test_both_sides_see_same_shuffle(self):
        # order-sensitive program still agrees with itself under a seed
        p = prog(self.CONCAT, returns="VARCHAR")
        res = run_differential(p, p, self.names_cat(), shuffle_seed=5)
        assert res.equal
        assert res.left.error is None
        assert sorted(res.left.value) == ["a", "b", "c"]

    def test_shuffle_changes_the_input(self):
        p = prog(self.CONCAT, returns="VARCHAR")
        outs = {run_differential(p, p, self.names_cat(),
                                 shuffle_seed=s).left.value
                for s in range(8)}
        assert len(outs) > 1

    def test_insensitive_program_ignores_shuffle(self):
        p = prog(SUM_LOOP)
        for s in range(5):
            res = run_differential(p, p, cat(), shuffle_seed=s)
            assert res.equal and res.left.value == 6
