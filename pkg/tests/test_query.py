"""Query engine semantics: joins, predicates, aggregation, ordering, CTEs."""
import pytest

from aggify.aggregates import AggregateParam, AggregateSpec
from aggify.astnodes import ScalarType
from aggify.errors import (
    CslRuntimeError, CslTypeError, DepthExceeded, UnknownAggregate,
)
from aggify.parser import parse_query
from aggify.query import EngineContext, eval_query
from aggify.values import dec_from_string as d

from helpers import catalog_of, table


def run(sql, variables=None, tables=None, ctx=None, **named):
    """Evaluate one query against ad-hoc tables; returns the Relation."""
    if ctx is None:
        ctx = EngineContext(catalog=catalog_of(**named))
        if tables:
            ctx.tables = tables
    vals = variables or {}
    return eval_query(parse_query(sql), vals.get, ctx)


def rows(sql, **kw):
    return run(sql, **kw).rows


NUMS = table([("v", "INT")], [(3,), (1,), (2,)])


class TestFromAndWhere:
    def test_cross_join_is_nested_loop_order(self):
        got = rows("SELECT a, b FROM t1, t2",
                   t1=table([("a", "INT")], [(1,), (2,)]),
                   t2=table([("b", "INT")], [(10,), (20,)]))
        assert got == [(1, 10), (1, 20), (2, 10), (2, 20)]

    def test_where_drops_unknown(self):
        # NULL > 5 is unknown, not false-but-kept
        got = rows("SELECT v FROM t WHERE v > 1",
                   t=table([("v", "INT")], [(3,), (None,), (2,), (0,)]))
        assert got == [(3,), (2,)]

    def test_where_requires_boolean_true(self):
        # a non-boolean predicate never passes the filter
        got = rows("SELECT v FROM t WHERE v", t=NUMS)
        assert got == []

    def test_join_filter_across_sources(self):
        got = rows("SELECT a, b FROM t1, t2 WHERE a = b",
                   t1=table([("a", "INT")], [(1,), (2,)]),
                   t2=table([("b", "INT")], [(2,), (3,)]))
        assert got == [(2, 2)]

    def test_duplicate_alias_rejected(self):
        with pytest.raises(CslTypeError, match="duplicate table alias"):
            rows("SELECT v FROM t AS x, t AS x", t=NUMS)

    def test_unknown_table(self):
        with pytest.raises(CslRuntimeError, match="unknown table nope"):
            rows("SELECT v FROM nope", t=NUMS)

    def test_unknown_local_table(self):
        with pytest.raises(CslRuntimeError, match="unknown table variable @tmp"):
            rows("SELECT v FROM @tmp", t=NUMS)

    def test_local_table_read(self):
        got = rows("SELECT v FROM @tmp", tables={"tmp": NUMS})
        assert got == [(3,), (1,), (2,)]

    def test_no_from_single_row(self):
        assert rows("SELECT 1 + 2") == [(3,)]

    def test_variables_visible(self):
        assert rows("SELECT @x * v FROM t", variables={"x": 10}, t=NUMS) \
            == [(30,), (10,), (20,)]


class TestNameResolution:
    TWO = dict(t1=table([("k", "INT"), ("v", "INT")], [(1, 10)]),
               t2=table([("k", "INT"), ("w", "INT")], [(1, 20)]))

    def test_qualified_beats_ambiguity(self):
        got = rows("SELECT t1.k, t2.k FROM t1, t2", **self.TWO)
        assert got == [(1, 1)]

    def test_bare_ambiguous_rejected(self):
        with pytest.raises(CslTypeError, match="ambiguous column k"):
            rows("SELECT k FROM t1, t2", **self.TWO)

    def test_bare_unique_ok(self):
        assert rows("SELECT v, w FROM t1, t2", **self.TWO) == [(10, 20)]

    def test_unknown_column(self):
        with pytest.raises(CslTypeError, match="unknown column zz"):
            rows("SELECT zz FROM t1", **self.TWO)

    def test_unknown_qualified_column(self):
        with pytest.raises(CslTypeError, match="unknown column t2.v"):
            rows("SELECT t2.v FROM t1, t2", **self.TWO)

    def test_output_names(self):
        rel = run("SELECT v, v AS x, v + 1 FROM t", t=NUMS)
        assert [c.name for c in rel.columns] == ["v", "x", "col3"]

    def test_star_expands_in_from_order(self):
        rel = run("SELECT * FROM t1, t2", **self.TWO)
        assert [c.name for c in rel.columns] == ["k", "v", "k", "w"]
        assert rel.rows == [(1, 10, 1, 20)]

    def test_star_cannot_mix_with_aggregates(self):
        with pytest.raises(CslTypeError, match="cannot mix"):
            rows("SELECT *, count(*) FROM t1", **self.TWO)


class TestScalarSubquery:
    def test_value(self):
        got = rows("SELECT v FROM t WHERE v > (SELECT min(v) FROM t)", t=NUMS)
        assert got == [(3,), (2,)]

    def test_zero_rows_is_null(self):
        got = rows("SELECT (SELECT v FROM t WHERE v > 99) FROM t", t=NUMS)
        assert got == [(None,), (None,), (None,)]

    def test_multiple_rows_rejected(self):
        with pytest.raises(CslRuntimeError, match="more than one row"):
            rows("SELECT (SELECT v FROM t) FROM t", t=NUMS)

    def test_wrong_arity_rejected(self):
        with pytest.raises(CslTypeError, match="one column"):
            rows("SELECT (SELECT v, v FROM t WHERE v = 1) FROM t", t=NUMS)

    def test_sees_variables(self):
        got = rows("SELECT (SELECT sum(v) FROM t WHERE v < @cap)",
                   variables={"cap": 3}, t=NUMS)
        assert got == [(3,)]


class TestBuiltinAggregates:
    NULLY = table([("v", "INT")], [(2,), (None,), (4,), (None,)])

    def test_count_star_counts_rows(self):
        assert rows("SELECT count(*) FROM t", t=self.NULLY) == [(4,)]

    def test_count_column_skips_nulls(self):
        assert rows("SELECT count(v) FROM t", t=self.NULLY) == [(2,)]

    def test_sum_skips_nulls(self):
        assert rows("SELECT sum(v) FROM t", t=self.NULLY) == [(6,)]

    def test_min_max(self):
        assert rows("SELECT min(v), max(v) FROM t", t=self.NULLY) == [(2, 4)]

    def test_all_null_input_yields_null(self):
        t = table([("v", "INT")], [(None,), (None,)])
        assert rows("SELECT sum(v), min(v), max(v), avg(v), count(v) FROM t",
                    t=t) == [(None, None, None, None, 0)]

    def test_empty_input_still_emits_one_row(self):
        t = table([("v", "INT")], [])
        assert rows("SELECT count(*), sum(v) FROM t", t=t) == [(0, None)]

    def test_avg_integer_truncates(self):
        t = table([("v", "INT")], [(1,), (2,), (2,)])
        assert rows("SELECT avg(v) FROM t", t=t) == [(1,)]

    def test_avg_decimal_exact(self):
        t = table([("v", "DECIMAL")], [(d("1.5"),), (d("2.5"),)])
        assert rows("SELECT avg(v) FROM t", t=t) == [(d("2.0"),)]

    def test_min_max_strings(self):
        t = table([("s", "VARCHAR")], [("pear",), ("apple",), ("plum",)])
        assert rows("SELECT min(s), max(s) FROM t", t=t) == [("apple", "plum")]

    def test_count_star_default_name(self):
        rel = run("SELECT count(*) FROM t", t=NUMS)
        assert rel.columns[0].name == "cnt"

    def test_unknown_aggregate(self):
        with pytest.raises(UnknownAggregate, match="unknown aggregate weird"):
            rows("SELECT weird(v) FROM t", t=NUMS)


class TestGrouping:
    SALES = table([("d", "VARCHAR"), ("v", "INT")],
                  [("b", 1), ("a", 2), ("b", 3), ("c", 4), ("a", 5)])

    def test_first_appearance_order(self):
        got = rows("SELECT d, sum(v) AS s FROM t GROUP BY d", t=self.SALES)
        assert got == [("b", 4), ("a", 7), ("c", 4)]

    def test_group_by_expression(self):
        t = table([("v", "INT")], [(10,), (25,), (17,), (31,)])
        got = rows("SELECT count(*) FROM t GROUP BY v / 10", t=t)
        assert got == [(2,), (1,), (1,)]

    def test_plain_column_takes_group_representative(self):
        # declaration order within the group: its first row wins
        got = rows("SELECT d, v FROM t GROUP BY d", t=self.SALES)
        assert got == [("b", 1), ("a", 2), ("c", 4)]

    def test_order_by_on_aggregated_output(self):
        got = rows("SELECT d, sum(v) AS s FROM t GROUP BY d ORDER BY s DESC",
                   t=self.SALES)
        assert got == [("a", 7), ("b", 4), ("c", 4)]

    def test_grouped_empty_input_no_rows(self):
        t = table([("d", "VARCHAR"), ("v", "INT")], [])
        assert rows("SELECT d, sum(v) FROM t GROUP BY d", t=t) == []


def sum_spec(**kw):
    args = dict(
        name="folded_sum",
        fields=[("s", ScalarType.INT), ("isInitialized", ScalarType.BOOL)],
        init_flag="isInitialized",
        params=[AggregateParam("x", ScalarType.INT, "query-attribute", "v")],
        init_set=[],
        accumulate_body=[],
        terminate_set=["s"],
        order_sensitive=False,
    )
    args.update(kw)
    return AggregateSpec(**args)


def ctx_with(spec, accumulate, **named):
    ctx = EngineContext(catalog=catalog_of(**named), registry={spec.name: spec})
    ctx.run_accumulate = accumulate
    return ctx


def add_into_s(spec, state, pvals):
    state["s"] = (state["s"] or 0) + pvals["x"]


class TestCustomAggregates:
    def test_fold_over_rows(self):
        ctx = ctx_with(sum_spec(), add_into_s, t=NUMS)
        assert rows("SELECT folded_sum(v) FROM t", ctx=ctx) == [(6,)]
        assert ctx.stats.accumulate_calls == 3

    def test_empty_input_yields_no_rows(self):
        ctx = ctx_with(sum_spec(), add_into_s, t=table([("v", "INT")], []))
        assert rows("SELECT folded_sum(v) FROM t", ctx=ctx) == []
        assert ctx.stats.accumulate_calls == 0

    def test_init_set_copies_first_row(self):
        spec = sum_spec(name="running_max",
                        fields=[("m", ScalarType.INT),
                                ("isInitialized", ScalarType.BOOL)],
                        init_set=[("m", "x")], terminate_set=["m"])

        def accumulate(sp, state, pvals):
            # relies on the engine having seeded m before the first call
            if pvals["x"] > state["m"]:
                state["m"] = pvals["x"]

        ctx = ctx_with(spec, accumulate, t=NUMS)
        assert rows("SELECT running_max(v) FROM t", ctx=ctx) == [(3,)]

    def test_result_coerced_to_field_type(self):
        spec = sum_spec(fields=[("s", ScalarType.DECIMAL),
                                ("isInitialized", ScalarType.BOOL)])
        ctx = ctx_with(spec, add_into_s, t=NUMS)
        assert rows("SELECT folded_sum(v) FROM t", ctx=ctx) == [(d("6.0"),)]

    def test_param_coerced_per_row(self):
        spec = sum_spec(params=[AggregateParam("x", ScalarType.DECIMAL,
                                               "query-attribute", "v")])
        seen = []
        ctx = ctx_with(spec, lambda sp, st, pv: seen.append(pv["x"]), t=NUMS)
        rows("SELECT folded_sum(v) FROM t", ctx=ctx)
        assert seen == [d("3.0"), d("1.0"), d("2.0")]

    def test_order_sensitive_needs_sorted_feed(self):
        ctx = ctx_with(sum_spec(order_sensitive=True), add_into_s, t=NUMS)
        with pytest.raises(CslRuntimeError, match="SORTED BY"):
            rows("SELECT folded_sum(v) FROM t", ctx=ctx)

    def test_sorted_feed_drives_fold_order(self):
        spec = sum_spec(order_sensitive=True)
        seen = []
        ctx = ctx_with(spec, lambda sp, st, pv: seen.append(pv["x"]), t=NUMS)
        rows("SELECT folded_sum(v) FROM t SORTED BY (v DESC)", ctx=ctx)
        assert seen == [3, 2, 1]

    def test_argument_count_checked(self):
        ctx = ctx_with(sum_spec(), add_into_s, t=NUMS)
        with pytest.raises(CslTypeError, match="takes 1 arguments, got 2"):
            rows("SELECT folded_sum(v, v) FROM t", ctx=ctx)

    def test_member_count_checked(self):
        ctx = ctx_with(sum_spec(), add_into_s, t=NUMS)
        with pytest.raises(CslTypeError, match="produces 1 members"):
            rows("SELECT folded_sum(v) AS (a, b) FROM t", ctx=ctx)

    def test_multi_member_result(self):
        spec = sum_spec(
            name="span_of",
            fields=[("lo", ScalarType.INT), ("hi", ScalarType.INT),
                    ("isInitialized", ScalarType.BOOL)],
            init_set=[("lo", "x"), ("hi", "x")],
            terminate_set=["lo", "hi"])

        def accumulate(sp, state, pvals):
            state["lo"] = min(state["lo"], pvals["x"])
            state["hi"] = max(state["hi"], pvals["x"])

        ctx = ctx_with(spec, accumulate, t=NUMS)
        rel = run("SELECT span_of(v) AS (lo, hi) FROM t", ctx=ctx)
        assert [c.name for c in rel.columns] == ["lo", "hi"]
        assert rel.rows == [(1, 3)]

    def test_custom_beside_builtin(self):
        ctx = ctx_with(sum_spec(), add_into_s, t=NUMS)
        got = rows("SELECT count(*), folded_sum(v), max(v) FROM t", ctx=ctx)
        assert got == [(3, 6, 3)]

    def test_grouped_custom_fold(self):
        spec = sum_spec()
        t = table([("d", "VARCHAR"), ("v", "INT")],
                  [("b", 1), ("a", 2), ("b", 3)])
        ctx = ctx_with(spec, add_into_s, t=t)
        got = rows("SELECT d, folded_sum(v) FROM t GROUP BY d", ctx=ctx)
        assert got == [("b", 4), ("a", 2)]

    def test_needs_interpreter_callback(self):
        ctx = ctx_with(sum_spec(), None, t=NUMS)
        with pytest.raises(CslRuntimeError, match="statement interpreter"):
            rows("SELECT folded_sum(v) FROM t", ctx=ctx)


class TestOrdering:
    TIES = table([("k", "INT"), ("x", "INT")],
                 [(2, 10), (1, 11), (None, 12), (2, 13), (1, 14)])

    def test_sort_is_stable(self):
        got = rows("SELECT k, x FROM t ORDER BY k", t=self.TIES)
        assert got == [(None, 12), (1, 11), (1, 14), (2, 10), (2, 13)]

    def test_null_sorts_lowest(self):
        got = rows("SELECT k FROM t ORDER BY k DESC", t=self.TIES)
        assert got[-1] == (None,)

    def test_multi_key(self):
        got = rows("SELECT k, x FROM t ORDER BY k DESC, x DESC", t=self.TIES)
        assert got == [(2, 13), (2, 10), (1, 14), (1, 11), (None, 12)]

    def test_top_after_order(self):
        got = rows("SELECT TOP 2 k, x FROM t ORDER BY k DESC", t=self.TIES)
        assert got == [(2, 10), (2, 13)]

    def test_top_without_order_takes_leading_rows(self):
        assert rows("SELECT TOP 2 v FROM t", t=NUMS) == [(3,), (1,)]

    def test_top_larger_than_input(self):
        assert len(rows("SELECT TOP 99 v FROM t", t=NUMS)) == 3

    def test_pre_sort_orders_plain_output(self):
        got = rows("SELECT v FROM t SORTED BY (v)", t=NUMS)
        assert got == [(1,), (2,), (3,)]


class TestCte:
    def test_counts_to_bound(self):
        got = rows("WITH r AS (SELECT 0 AS n UNION ALL "
                   "SELECT n + 1 AS n FROM r WHERE n + 1 <= 5) "
                   "SELECT count(*) FROM r")
        assert got == [(6,)]

    def test_level_rows_accumulate(self):
        got = rows("WITH r AS (SELECT 1 AS n UNION ALL "
                   "SELECT n * 2 AS n FROM r WHERE n * 2 < 20) "
                   "SELECT n FROM r")
        assert got == [(1,), (2,), (4,), (8,), (16,)]

    def test_depth_cap(self):
        ctx = EngineContext(catalog=catalog_of())
        ctx.depth_cap = 10
        with pytest.raises(DepthExceeded, match="exceeded 10 iterations"):
            rows("WITH r AS (SELECT 0 AS n UNION ALL SELECT n AS n FROM r) "
                 "SELECT count(*) FROM r", ctx=ctx)

    def test_arity_mismatch(self):
        with pytest.raises(CslTypeError, match="recursive arm"):
            rows("WITH r AS (SELECT 0 AS n UNION ALL "
                 "SELECT n, n FROM r WHERE n < 1) SELECT count(*) FROM r")

    def test_cte_joins_with_catalog_table(self):
        got = rows("WITH r AS (SELECT 1 AS n UNION ALL "
                   "SELECT n + 1 AS n FROM r WHERE n + 1 <= 2) "
                   "SELECT n, v FROM r, t WHERE n = v", t=NUMS)
        assert got == [(1, 1), (2, 2)]
