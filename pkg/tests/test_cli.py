import csv
import io
import shutil
import subprocess
import sys

import pytest

from hymat import cli
from hymat.cli import CSV_FIELDS, main


def _run(argv):
    out = io.StringIO()
    code = main(argv, out)
    return code, out.getvalue()


def test_gen_prints_cardinalities(tmp_path):
    code, text = _run(["gen", "--sf", "0.01", "--seed", "1", "--out", str(tmp_path / "d")])
    assert code == 0 and "lineitem\t60000" in text
    assert (tmp_path / "d" / "catalog.tsv").is_file()


def test_gen_rejects_non_positive_sf(tmp_path, capsys):
    code, _ = _run(["gen", "--sf", "0", "--out", str(tmp_path)])
    assert code == 2 and "sf must be positive" in capsys.readouterr().err


def test_run_appends_csv_with_one_header(sf001, tmp_path):
    path = tmp_path / "r.csv"
    for strategy in ("late", "hybrid"):
        code, text = _run(["run", "--data", str(sf001), "--query", "q5mod", "--strategy", strategy,
                           "--pool-pages", "16", "--cold", "--csv", str(path)])
        assert code == 0 and "pages_seq=" in text
    rows = list(csv.reader(path.open()))
    assert rows[0] == CSV_FIELDS and len(rows) == 3
    assert [r[1] for r in rows[1:]] == ["late", "hybrid"]


def test_run_without_cname_picks_variant(sf001, tmp_path):
    path = tmp_path / "r.csv"
    _run(["run", "--data", str(sf001), "--query", "q5mod", "--strategy", "late", "--without-cname",
          "--csv", str(path)])
    assert list(csv.DictReader(path.open()))[0]["query"] == "q5mod_nocname"


def test_run_with_schedule_file(sf001, tmp_path):
    sched = tmp_path / "s.txt"
    sched.write_text("customer.c_name at_top\norders.o_totalprice at_top\norders.o_shippriority at_top\n"
                     "lineitem.l_orderkey at_top\nlineitem.l_extendedprice at_top\nlineitem.l_discount at_top\n")
    code, _ = _run(["run", "--data", str(sf001), "--query", "q5mod", "--strategy", "hybrid",
                    "--schedule", str(sched)])
    assert code == 0
    code, _ = _run(["run", "--data", str(sf001), "--query", "q5mod", "--strategy", "late",
                    "--schedule", str(sched)])
    assert code == 2


def test_verify_ok(sf001):
    code, text = _run(["verify", "--data", str(sf001), "--query", "q9mod"])
    assert code == 0 and "4 strategies == oracle: OK" in text


def test_verify_corrupted_column_is_io_error(sf001, tmp_path, capsys):
    bad = tmp_path / "bad"
    shutil.copytree(sf001, bad)
    f = bad / "orders.o_totalprice.col"
    f.write_bytes(f.read_bytes()[:-10])
    code, _ = _run(["verify", "--data", str(bad), "--query", "q5mod"])
    assert code == 3 and "orders.o_totalprice" in capsys.readouterr().err


def test_explain_without_data():
    code, text = _run(["explain", "--query", "q5mod", "--strategy", "ultralate"])
    assert code == 0 and text.count("Materialize") == 1 and "PosHashJoin" in text


def test_unknown_query_is_usage_error(sf001):
    code, _ = _run(["run", "--data", str(sf001), "--query", "q77", "--strategy", "late"])
    assert code == 2


def test_argparse_rejects_bad_strategy():
    with pytest.raises(SystemExit) as e:
        main(["explain", "--query", "q5mod", "--strategy", "eager"])
    assert e.value.code == 2


def test_bench_matrix(tmp_path):
    out_csv = tmp_path / "b.csv"
    code, text = _run(["bench", "--data-root", str(tmp_path / "data"), "--sfs", "0.01",
                       "--queries", "q5mod,q5mod_nocname,q9mod", "--strategies", "late,ultralate,hybrid",
                       "--csv", str(out_csv), "--repeat", "2", "--seed", "7"])
    assert code == 0 and len(text.splitlines()) == 9
    rows = list(csv.DictReader(out_csv.open()))
    assert len(rows) == 9 and {r["sf"] for r in rows} == {"0.01"}


def test_bench_nondeterminism_exit(tmp_path, monkeypatch, sf001):
    real = cli.run_once
    calls = {"n": 0}

    def flaky(q, strategy, catalog, pool, cold):
        calls["n"] += 1
        if calls["n"] == 2:
            pool.clear()
            pool.reset_counters()
            real(q, strategy, catalog, pool, cold)  # warm the pool so the next run sees hits
            return real(q, strategy, catalog, pool, False)
        return real(q, strategy, catalog, pool, cold)

    monkeypatch.setattr(cli, "run_once", flaky)
    data = tmp_path / "data" / "sf0.01"
    shutil.copytree(sf001, data)
    code, _ = _run(["bench", "--data-root", str(tmp_path / "data"), "--sfs", "0.01", "--queries", "q5mod",
                    "--strategies", "hybrid", "--csv", str(tmp_path / "x.csv"), "--repeat", "2"])
    assert code == 1


def test_bench_rejects_unknown_strategy(tmp_path):
    code, _ = _run(["bench", "--data-root", str(tmp_path), "--sfs", "0.01", "--queries", "q5mod",
                    "--strategies", "eager", "--csv", str(tmp_path / "x.csv")])
    assert code == 2


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "hymat", "explain", "--query", "q9mod", "--strategy", "hybrid"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "HYToTuple" in r.stdout


def test_verify_unknown_column_is_plan_error(sf001, tmp_path):
    q = tmp_path / "bad.txt"
    q.write_text("query x\ntable nation n\nbase n\nselect a = n.zz\n")
    code, _ = _run(["verify", "--data", str(sf001), "--query", str(q)])
    assert code == 2
