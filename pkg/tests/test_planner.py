import pytest

from hymat.engine import execute
from hymat.exec_classic import PlanError
from hymat.planner import (DENSE, ORDERED, STRICT, UNORDERED, MaterializationSchedule, Strategy,
                           build_plan, check_schedule, count_nodes, default_hybrid_schedule,
                           merge_schedule, plan_signature, point_name, point_ordinal,
                           position_order)
from hymat.storage import BufferPool
from hymat.workload import TPCH, builtin_queries, parse_query

Q = builtin_queries()


def _points(name):
    return default_hybrid_schedule(Q[name], TPCH).points


def test_q5_schedule():
    pts = _points("q5mod")
    assert pts["customer.c_name"] == "before_join(1)"
    for a in ("orders.o_totalprice", "orders.o_shippriority", "lineitem.l_orderkey",
              "lineitem.l_extendedprice", "lineitem.l_discount"):
        assert pts[a] == "at_top"


def test_q5_without_cname_schedule_is_all_top():
    pts = _points("q5mod_nocname")
    assert "customer.c_name" not in pts
    assert {p for a, p in pts.items() if a.split(".")[0] in ("orders", "lineitem")
            and a != "orders.o_orderkey"} == {"at_top"}


def test_q9_schedule():
    pts = _points("q9mod")
    assert pts["partsupp.ps_supplycost"] == "before_join(2)"
    assert pts["nation.n_name"] == "before_join(4)"
    assert pts["orders.o_totalprice"] == "at_top"
    assert pts["lineitem.l_extendedprice"] == pts["lineitem.l_quantity"] == "at_top"


def test_single_table_query_schedules_everything_at_top():
    q = parse_query("query one\ntable nation n\nbase n\nfilter n: n.n_regionkey = 1\n"
                    "select name = n.n_name\nselect k = n.n_nationkey\n")
    assert set(default_hybrid_schedule(q, TPCH).points.values()) == {"at_top"}


def test_position_order_q5():
    order = position_order(Q["q5mod"], TPCH)
    assert order["nation"][-1] == STRICT
    assert order["customer"][1] == DENSE
    # customer is the build side of the next join and loses its order there
    assert order["customer"][3] == UNORDERED
    assert order["lineitem"][4] in (DENSE, STRICT, ORDERED)


@pytest.mark.parametrize("ordinal,point", [(-2, "at_source"), (-1, "after_filter(n)"),
                                           (2, "before_join(2)"), (4, "at_top")])
def test_point_names_round_trip(ordinal, point):
    assert point_name(ordinal, 3, "n") == point
    assert point_ordinal(point, 3) == ordinal


def test_bad_point():
    with pytest.raises(PlanError, match="bad schedule point"):
        point_ordinal("sometime", 3)


def test_schedule_parse_and_render():
    text = "# comment\norders.o_totalprice  at_top\n\ncustomer.c_name before_join(1)  # cached\n"
    s = MaterializationSchedule.parse(text)
    assert s.points == {"orders.o_totalprice": "at_top", "customer.c_name": "before_join(1)"}
    assert MaterializationSchedule.parse(s.render()) == s
    with pytest.raises(PlanError, match="twice"):
        MaterializationSchedule.parse("a.b at_top\na.b at_top\n")
    with pytest.raises(PlanError):
        MaterializationSchedule.parse("a.b\n")


def _with(name, **changes):
    q = Q[name]
    pts = dict(default_hybrid_schedule(q, TPCH).points)
    pts.update({k.replace("__", "."): v for k, v in changes.items()})
    return q, MaterializationSchedule(pts)


def test_dominance_before_entry():
    q, s = _with("q5mod", lineitem__l_discount="before_join(1)")
    with pytest.raises(PlanError, match="dominance"):
        check_schedule(q, s)


def test_dominance_after_first_use():
    q, s = _with("q5mod", customer__c_custkey="at_top")
    with pytest.raises(PlanError, match="dominance"):
        check_schedule(q, s)


def test_after_filter_needs_that_tables_filter():
    q, s = _with("q5mod", customer__c_name="after_filter(customer)")
    with pytest.raises(PlanError, match="dominance"):
        check_schedule(q, s)
    q, s = _with("q5mod", customer__c_name="after_filter(nation)")
    with pytest.raises(PlanError, match="dominance"):
        check_schedule(q, s)


def test_schedule_extra_attribute():
    q, s = _with("q5mod", part__p_name="at_top")
    with pytest.raises(PlanError, match="does not need"):
        check_schedule(q, s)


def test_user_schedule_must_cover_select():
    q = Q["q5mod"]
    default = default_hybrid_schedule(q, TPCH)
    with pytest.raises(PlanError, match="select attributes"):
        merge_schedule(q, default, MaterializationSchedule({"customer.c_name": "at_top"}))


def test_unknown_strategy_and_bad_ir():
    with pytest.raises(PlanError):
        Strategy("eager")
    with pytest.raises(PlanError, match="unknown table"):
        build_plan(parse_query("query x\ntable nope\nbase nope\nselect a = nope.a\n"), "late", TPCH)
    with pytest.raises(PlanError, match="unknown column"):
        build_plan(parse_query("query x\ntable nation\nbase nation\nselect a = nation.zz\n"),
                   "late", TPCH)


@pytest.mark.parametrize("name", sorted(Q))
@pytest.mark.parametrize("strategy", ["early", "late", "ultralate", "hybrid"])
def test_signature_is_deterministic(name, strategy):
    assert plan_signature(build_plan(Q[name], strategy, TPCH)) == \
        plan_signature(build_plan(Q[name], strategy, TPCH))


def test_late_and_ultralate_differ_in_materialize_placement():
    late = build_plan(Q["q5mod"], "late", TPCH)
    ultra = build_plan(Q["q5mod"], "ultralate", TPCH)
    assert count_nodes(late, "Materialize") == 4 and count_nodes(ultra, "Materialize") == 1
    assert count_nodes(late, "TupleHashJoin") == 3 and count_nodes(ultra, "PosHashJoin") == 3
    assert count_nodes(late, "PosFilter") == count_nodes(ultra, "PosFilter") == 1


def test_early_filters_tuples():
    early = build_plan(Q["q5mod"], "early", TPCH)
    assert count_nodes(early, "TupleFilter") == 1 and count_nodes(early, "PosFilter") == 0


def test_hybrid_signature_shows_cname_in_combine():
    sig = plan_signature(build_plan(Q["q5mod"], "hybrid", TPCH))
    assert "HYHashJoin [hashjoin_combine]" in sig
    combine_lines = [l for l in sig.splitlines() if "Combine:" in l and "customer.c_name" in l]
    assert combine_lines


def test_all_top_hybrid_emulates_ultralate(sf001_catalog):
    q = Q["q5mod"]
    sched = MaterializationSchedule({r.name: "at_top" for r in q.select_refs()})
    hy = execute(build_plan(q, Strategy("hybrid", sched), sf001_catalog), sf001_catalog,
                 BufferPool(8), cold=True)
    ul = execute(build_plan(q, "ultralate", sf001_catalog), sf001_catalog, BufferPool(8), cold=True)
    assert hy.canonical() == ul.canonical()
    assert (hy.metrics.pages_seq, hy.metrics.pages_rand) == (ul.metrics.pages_seq, ul.metrics.pages_rand)
