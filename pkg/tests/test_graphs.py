"""Control-flow graph construction, cursor-region recognition, and the
three dependence-edge kinds."""
import pytest

from aggify import parse_program
from aggify.errors import MalformedCursorUse
from aggify.graphs import build_cfg, build_ddg, find_cursor_loops


def cfg_of(body, params="", returns="INT"):
    prog = parse_program(
        f"CREATE FUNCTION t({params}) RETURNS {returns} AS BEGIN {body} END")
    return prog, build_cfg(prog)


def edge_labels(cfg):
    return {(e.src, e.dst): e.label for e in cfg.edges}


CURSOR_BODY = """
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


class TestCfgShape:
    def test_linear_chain(self):
        _, cfg = cfg_of("DECLARE @a INT = 1; SET @a = 2; RETURN @a;")
        # entry -> declare -> set -> return -> exit
        assert len(cfg.nodes) == 5
        labels = set(edge_labels(cfg).values())
        assert labels == {"fall"}

    def test_if_diamond(self):
        prog, cfg = cfg_of(
            "DECLARE @a INT = 0; IF (@a > 0) SET @a = 1; ELSE SET @a = 2; "
            "RETURN @a;")
        cond = cfg.stmt_node[id(prog.body[1])]
        out = {e.label for e in cfg.succ[cond]}
        assert out == {"true", "false"}

    def test_while_loop_back_edge(self):
        prog, cfg = cfg_of(
            "DECLARE @a INT = 0; WHILE (@a < 3) SET @a = @a + 1; RETURN @a;")
        cond = cfg.stmt_node[id(prog.body[1])]
        body = next(e.dst for e in cfg.succ[cond] if e.label == "true")
        assert edge_labels(cfg)[(body, cond)] == "loop-back"

    def test_empty_while_self_loop(self):
        prog, cfg = cfg_of(
            "DECLARE @a INT = 0; WHILE (@a > 0) BEGIN END RETURN @a;")
        cond = cfg.stmt_node[id(prog.body[1])]
        assert edge_labels(cfg)[(cond, cond)] == "loop-back"

    def test_for_contributes_three_header_nodes(self):
        prog, cfg = cfg_of(
            "DECLARE @i INT; DECLARE @s INT = 0; "
            "FOR (@i = 0; @i < 3; @i = @i + 1) SET @s = @s + @i; RETURN @s;")
        roles = sorted(n.role for n in cfg.nodes.values())
        for role in ("for-init", "for-cond", "for-incr"):
            assert role in roles
        incr = next(n.id for n in cfg.nodes.values() if n.role == "for-incr")
        cond = next(n.id for n in cfg.nodes.values() if n.role == "for-cond")
        assert edge_labels(cfg)[(incr, cond)] == "loop-back"

    def test_code_after_return_is_pruned(self):
        _, cfg = cfg_of("DECLARE @a INT = 1; RETURN @a; SET @a = 2;")
        texts = [n.label() for n in cfg.nodes.values()]
        assert not any("@a = 2" in t for t in texts)

    def test_cond_nodes_define_nothing(self):
        prog, cfg = cfg_of(
            "DECLARE @a INT = 0; WHILE (@a < 3) SET @a = @a + 1; RETURN @a;")
        cond = cfg.stmt_node[id(prog.body[1])]
        assert cfg.node_defs(cond) == []
        assert cfg.node_uses(cond) == ["a"]

    def test_dot_output_mentions_every_node(self):
        _, cfg = cfg_of("DECLARE @a INT = 1; RETURN @a;")
        dot = cfg.to_dot(build_ddg(cfg))
        for nid in cfg.nodes:
            assert f"n{nid} " in dot or f"n{nid} ->" in dot


class TestDependenceEdges:
    def test_flow_anti_output(self):
        prog, cfg = cfg_of(
            "DECLARE @a INT = 1; DECLARE @b INT; "
            "SET @b = @a + 1; SET @a = 2; RETURN @b;")
        kinds = {(e.kind, e.var) for e in build_ddg(cfg)}
        assert ("flow", "a") in kinds      # DECLARE @a feeds SET @b
        assert ("anti", "a") in kinds      # read of @a before its overwrite
        assert ("output", "a") in kinds    # two writes to @a in sequence

    def test_self_anti_on_read_modify_write(self):
        prog, cfg = cfg_of("DECLARE @a INT = 1; SET @a = @a + 1; RETURN @a;")
        rmw = cfg.stmt_node[id(prog.body[1])]
        assert any(e.src == rmw and e.dst == rmw and e.kind == "anti"
                   for e in build_ddg(cfg))

    def test_entry_definitions_make_no_edges(self):
        prog, cfg = cfg_of("RETURN @p;", params="@p INT")
        assert all(e.src != cfg.entry for e in build_ddg(cfg))


class TestRegionRecognition:
    def test_basic_idiom(self):
        prog, cfg = cfg_of(CURSOR_BODY)
        (region,) = find_cursor_loops(prog, cfg)
        assert region.cursor_name == "c"
        assert region.fetch_vars == ["v"]
        assert len(region.delta) == 1
        assert region.close_stmt is not None
        assert region.dealloc_stmt is not None
        assert region.gap_stmts == []
        assert region.depth == 0

    def test_gap_statements_collected(self):
        body = CURSOR_BODY.replace("OPEN c;", "OPEN c;\nSET @s = 0;")
        prog, cfg = cfg_of(body)
        (region,) = find_cursor_loops(prog, cfg)
        assert len(region.gap_stmts) == 1

    def test_nested_regions_innermost_first(self):
        body = """
        DECLARE @k INT; DECLARE @x INT; DECLARE @total INT = 0;
        DECLARE co CURSOR FOR SELECT k FROM t0;
        OPEN co;
        FETCH NEXT FROM co INTO @k;
        WHILE @@FETCH_STATUS = 0
        BEGIN
            DECLARE @inner INT;
            SET @inner = 0;
            DECLARE ci CURSOR FOR SELECT x FROM t1 WHERE j = @k;
            OPEN ci;
            FETCH NEXT FROM ci INTO @x;
            WHILE @@FETCH_STATUS = 0
            BEGIN
                SET @inner = @inner + @x;
                FETCH NEXT FROM ci INTO @x;
            END
            CLOSE ci;
            DEALLOCATE ci;
            SET @total = @total + @inner;
            FETCH NEXT FROM co INTO @k;
        END
        CLOSE co;
        DEALLOCATE co;
        RETURN @total;
        """
        prog, cfg = cfg_of(body)
        regions = find_cursor_loops(prog, cfg)
        assert [r.cursor_name for r in regions] == ["ci", "co"]
        assert regions[0].enclosing is regions[1]
        assert regions[0].depth == 1

    def test_loop_after_return_is_skipped(self):
        body = "RETURN 0;" + CURSOR_BODY
        prog, cfg = cfg_of(body)
        assert find_cursor_loops(prog, cfg) == []


class TestMalformedIdioms:
    def cases(self):
        return [
            ("DECLARE @v INT; DECLARE c CURSOR FOR SELECT v FROM t0; "
             "RETURN 0;", "never opened"),
            ("DECLARE @v INT; DECLARE c CURSOR FOR SELECT v FROM t0; "
             "FETCH NEXT FROM c INTO @v; OPEN c; RETURN 0;", "before OPEN"),
            ("DECLARE @v INT; DECLARE c CURSOR FOR SELECT v FROM t0; "
             "OPEN c; RETURN 0;", "never fetched"),
            ("DECLARE @v INT; DECLARE c CURSOR FOR SELECT v FROM t0; "
             "OPEN c; FETCH NEXT FROM c INTO @v; RETURN 0;",
             "not followed by a WHILE"),
            ("DECLARE @v INT; DECLARE c CURSOR FOR SELECT v FROM t0; "
             "OPEN c; FETCH NEXT FROM c INTO @v; "
             "WHILE @@FETCH_STATUS = 0 BEGIN SET @v = 1; END RETURN 0;",
             "advancing fetch"),
            ("DECLARE @v INT; DECLARE c CURSOR FOR SELECT v FROM t0; "
             "OPEN c; FETCH NEXT FROM c INTO @v; "
             "WHILE @@FETCH_STATUS = 0 BEGIN OPEN c; "
             "FETCH NEXT FROM c INTO @v; END RETURN 0;",
             "inside its own loop body"),
        ]

    def test_each_malformation_is_reported(self):
        for body, needle in self.cases():
            prog = parse_program(
                f"CREATE FUNCTION t() RETURNS INT AS BEGIN {body} END")
            cfg = build_cfg(prog)
            with pytest.raises(MalformedCursorUse, match=needle):
                find_cursor_loops(prog, cfg)

    def test_fetch_of_other_cursor_between_open_and_priming(self):
        body = """
        DECLARE @v INT; DECLARE @w INT;
        DECLARE c1 CURSOR FOR SELECT v FROM t0;
        DECLARE c2 CURSOR FOR SELECT v FROM t0;
        OPEN c2;
        OPEN c1;
        FETCH NEXT FROM c2 INTO @w;
        FETCH NEXT FROM c1 INTO @v;
        WHILE @@FETCH_STATUS = 0
        BEGIN
            FETCH NEXT FROM c1 INTO @v;
        END
        RETURN 0;
        """
        prog, cfg = cfg_of(body)
        with pytest.raises(MalformedCursorUse):
            find_cursor_loops(prog, cfg)
