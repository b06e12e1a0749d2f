"""The rewrite itself: applicability gate coverage, shape of the emitted
query, bookkeeping fields, and do-no-harm guarantees."""
import pytest

from aggify import parse_program, print_program, transform_program
from aggify.printer import print_query

from helpers import load_fixture


def transform_src(body, params="", returns="INT", allow_dml=False, **flags):
    src = (f"CREATE FUNCTION t({params}) RETURNS {returns} AS "
           f"BEGIN {body} END")
    prog = parse_program(src, allow_persistent_dml=allow_dml)
    return prog, transform_program(prog, **flags)


LOOP = """
    DECLARE @v INT;
    DECLARE @s INT = 0;
    DECLARE c CURSOR FOR SELECT v FROM t0;
    OPEN c;
    FETCH NEXT FROM c INTO @v;
    WHILE @@FETCH_STATUS = 0
    BEGIN
        SET @s = @s + @v;
        FETCH NEXT FROM c INTO @v;
    END
    CLOSE c;
    DEALLOCATE c;
    RETURN @s;
"""


class TestRejections:
    def reason_of(self, res):
        assert not res.plans
        assert len(res.rejections) == 1
        return res.rejections[0].reason

    def test_persistent_dml(self):
        body = LOOP.replace("SET @s = @s + @v;",
                            "SET @s = @s + @v; INSERT INTO audit VALUES (1);")
        _, res = transform_src(body, allow_dml=True)
        assert self.reason_of(res) == "persistent-dml"
        assert "audit" in res.rejections[0].detail

    def test_return_inside_loop(self):
        body = LOOP.replace("SET @s = @s + @v;",
                            "IF (@v > 9) RETURN @v; SET @s = @s + @v;")
        _, res = transform_src(body)
        assert self.reason_of(res) == "unsupported-stmt"

    def test_priming_and_tail_fetch_differ(self):
        body = LOOP.replace("BEGIN\n        SET @s = @s + @v;\n        "
                            "FETCH NEXT FROM c INTO @v;",
                            "BEGIN\n        SET @s = @s + @v;\n        "
                            "FETCH NEXT FROM c INTO @w;")
        body = "DECLARE @w INT;" + body
        _, res = transform_src(body)
        assert self.reason_of(res) == "unsupported-stmt"
        assert "target different" in res.rejections[0].detail

    def test_star_projection(self):
        body = LOOP.replace("SELECT v FROM t0", "SELECT * FROM t0")
        _, res = transform_src(body)
        assert self.reason_of(res) == "unsupported-stmt"

    def test_fetch_var_live_after_loop(self):
        body = LOOP.replace("RETURN @s;", "RETURN @s + @v;")
        _, res = transform_src(body)
        assert self.reason_of(res) == "fetch-var-live"
        assert "@v" in res.rejections[0].detail

    def test_empty_terminate(self):
        body = LOOP.replace("RETURN @s;", "RETURN 0;")
        _, res = transform_src(body)
        assert self.reason_of(res) == "empty-terminate"

    def test_preloop_value_live(self):
        body = """
        DECLARE @v INT;
        DECLARE @best INT;
        SET @best = 5;
        DECLARE c CURSOR FOR SELECT v FROM t0;
        OPEN c;
        FETCH NEXT FROM c INTO @v;
        WHILE @@FETCH_STATUS = 0
        BEGIN
            IF (@v > 3) SET @best = @v;
            FETCH NEXT FROM c INTO @v;
        END
        RETURN @best;
        """
        _, res = transform_src(body)
        assert self.reason_of(res) == "preloop-value-live"

    def test_bare_declare_before_loop_is_harmless(self):
        # same shape but the only pre-loop def is an uninitialized DECLARE
        body = """
        DECLARE @v INT;
        DECLARE @best INT;
        DECLARE c CURSOR FOR SELECT v FROM t0;
        OPEN c;
        FETCH NEXT FROM c INTO @v;
        WHILE @@FETCH_STATUS = 0
        BEGIN
            IF (@v > 3) SET @best = @v;
            FETCH NEXT FROM c INTO @v;
        END
        RETURN @best;
        """
        _, res = transform_src(body)
        assert len(res.plans) == 1

    def test_gap_write_feeding_query(self):
        body = """
        DECLARE @v INT;
        DECLARE @s INT = 0;
        DECLARE @x INT = 0;
        DECLARE c CURSOR FOR SELECT v FROM t0 WHERE v > @x;
        OPEN c;
        SET @x = 1;
        FETCH NEXT FROM c INTO @v;
        WHILE @@FETCH_STATUS = 0
        BEGIN
            SET @s = @s + @v;
            FETCH NEXT FROM c INTO @v;
        END
        RETURN @s;
        """
        _, res = transform_src(body)
        assert self.reason_of(res) == "gap-interference"

    def test_gap_read_of_result(self):
        body = """
        DECLARE @v INT;
        DECLARE @s INT = 0;
        DECLARE @peek INT;
        DECLARE c CURSOR FOR SELECT v FROM t0;
        OPEN c;
        SET @peek = @s;
        FETCH NEXT FROM c INTO @v;
        WHILE @@FETCH_STATUS = 0
        BEGIN
            SET @s = @s + @v;
            FETCH NEXT FROM c INTO @v;
        END
        RETURN @s + @peek;
        """
        _, res = transform_src(body)
        assert self.reason_of(res) == "gap-interference"

    def test_gap_write_of_outer_source(self):
        body = """
        DECLARE @v INT;
        DECLARE @s INT = 0;
        DECLARE @floor INT = 0;
        DECLARE c CURSOR FOR SELECT v FROM t0;
        OPEN c;
        SET @floor = 3;
        FETCH NEXT FROM c INTO @v;
        WHILE @@FETCH_STATUS = 0
        BEGIN
            IF (@v > @floor) SET @s = @s + @v;
            FETCH NEXT FROM c INTO @v;
        END
        RETURN @s;
        """
        _, res = transform_src(body)
        assert self.reason_of(res) == "gap-interference"

    def test_gap_insert_into_query_local_table(self):
        body = """
        DECLARE @t TABLE (v INT);
        DECLARE @v INT;
        DECLARE @s INT = 0;
        DECLARE c CURSOR FOR SELECT v FROM @t;
        OPEN c;
        INSERT INTO @t VALUES (1);
        FETCH NEXT FROM c INTO @v;
        WHILE @@FETCH_STATUS = 0
        BEGIN
            SET @s = @s + @v;
            FETCH NEXT FROM c INTO @v;
        END
        RETURN @s;
        """
        _, res = transform_src(body)
        assert self.reason_of(res) == "gap-interference"

    def test_every_reason_is_catalogued(self):
        from aggify.transform import REJECTION_REASONS
        seen = {
            "persistent-dml", "unsupported-stmt", "fetch-var-live",
            "empty-terminate", "preloop-value-live", "gap-interference",
        }
        assert seen == set(REJECTION_REASONS)


class TestRewriteShape:
    def test_simple_sum(self):
        prog, res = transform_src(LOOP)
        (plan,) = res.plans
        assert plan.cursor == "c"
        assert plan.aggregate.name == "t_1_agg"
        assert plan.result_bindings == [("s", "aggVal")]
        assert plan.removed_declarations == ["v"]
        text = print_program(res.program)
        assert "CURSOR" not in text
        assert "SELECT @s = t_1_agg(@s, v) FROM (SELECT v FROM t0) AS sub;" \
            in text
        # the dead fetch-variable declaration is gone
        assert "DECLARE @v INT;" not in text

    def test_order_by_becomes_outer_sorted_by(self):
        body = LOOP.replace("SELECT v FROM t0", "SELECT v FROM t0 ORDER BY v")
        _, res = transform_src(body)
        q = print_query(res.plans[0].rewritten_query)
        assert "SORTED BY" in q
        assert "ORDER BY" not in q  # folded into the outer pre-sort

    def test_top_keeps_inner_order_by(self):
        body = LOOP.replace("SELECT v FROM t0",
                            "SELECT TOP 2 v FROM t0 ORDER BY v DESC")
        _, res = transform_src(body)
        q = print_query(res.plans[0].rewritten_query)
        assert "ORDER BY" in q and "SORTED BY" in q

    def test_multi_member_result_uses_alias_list(self):
        prog, argsets, flags = load_fixture("argmax_pair")
        res = transform_program(prog, **flags)
        (plan,) = res.plans
        assert len(plan.aggregate.terminate_set) > 1
        q = print_query(plan.rewritten_query)
        assert "AS (" in q
        assert [m for _, m in plan.result_bindings] == \
            plan.aggregate.terminate_set

    def test_duplicate_projection_names_get_aliases(self):
        body = LOOP.replace("DECLARE @v INT;", "DECLARE @v INT; DECLARE @w INT;") \
                   .replace("SELECT v FROM t0", "SELECT v, v FROM t0") \
                   .replace("INTO @v;", "INTO @v, @w;") \
                   .replace("SET @s = @s + @v;", "SET @s = @s + @v + @w;")
        _, res = transform_src(body)
        q = print_query(res.plans[0].rewritten_query)
        assert "AS c2" in q

    def test_stale_vars_listed(self):
        # accumulator kept only for its side on @s; @n ends up unread
        body = """
        DECLARE @v INT;
        DECLARE @s INT = 0;
        DECLARE @n INT = 0;
        DECLARE c CURSOR FOR SELECT v FROM t0;
        OPEN c;
        FETCH NEXT FROM c INTO @v;
        WHILE @@FETCH_STATUS = 0
        BEGIN
            SET @s = @s + @v;
            SET @n = @n + 1;
            FETCH NEXT FROM c INTO @v;
        END
        RETURN @s;
        """
        _, res = transform_src(body)
        (plan,) = res.plans
        assert "n" in plan.stale_vars and "v" in plan.stale_vars
        assert "s" not in plan.stale_vars


class TestDoNoHarm:
    def test_input_program_is_not_mutated(self):
        prog, _, flags = load_fixture("mincostsupp")
        before = print_program(prog)
        transform_program(prog, **flags)
        assert print_program(prog) == before

    def test_idempotent(self):
        _, res = transform_src(LOOP)
        again = transform_program(res.program)
        assert again.plans == [] and again.rejections == []
        assert print_program(again.program) == print_program(res.program)

    def test_statements_outside_region_unchanged(self):
        prog, _, flags = load_fixture("mincostsupp")
        res = transform_program(prog, **flags)
        before = print_program(prog).splitlines()
        after = print_program(res.program).splitlines()
        # the IF block ahead of the loop and the RETURN after it survive
        for line in before:
            if "@lb = 10" in line or "RETURN" in line:
                assert line in after

    def test_rejected_loop_stays_byte_identical(self):
        body = LOOP.replace("SET @s = @s + @v;",
                            "SET @s = @s + @v; INSERT INTO audit VALUES (1);")
        prog, res = transform_src(body, allow_dml=True)
        assert print_program(res.program) == print_program(prog)

    def test_rejections_and_plans_can_coexist(self):
        prog, _, flags = load_fixture("dml_corpus")
        res = transform_program(prog, **flags)
        assert len(res.plans) == 2
        assert sorted(r.reason for r in res.rejections) == \
            ["persistent-dml", "persistent-dml"]
