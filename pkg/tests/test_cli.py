import csv
import io
import json

import pytest

from hyshuffle.cli import main, parse_int_list, parse_size


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_parsers():
    assert parse_size("512K") == 512 * 1024 and parse_size("64MiB") == 64 * 2**20 and parse_size("4096") == 4096
    assert parse_int_list("2-4,8") == [2, 3, 4, 8]


def test_analyze_defaults(capsys):
    code, out, _ = run(capsys, "analyze")
    assert code == 0
    got = {r["model"]: r for r in rows(out)}
    assert (got["classic_exchange"]["connections"], got["classic_exchange"]["buffers"],
            got["classic_exchange"]["threshold"]) == ("57560", "239", "239")
    assert (got["hybrid"]["connections"], got["hybrid"]["buffers"], got["hybrid"]["threshold"]) == ("30", "5", "5")


def test_analyze_single_server_is_zero(capsys):
    _, out, _ = run(capsys, "analyze", "--servers", "1", "--workers", "1")
    for r in rows(out):
        assert (r["connections"], r["buffers"], r["threshold"]) == ("0", "0", "0")


def test_analyze_sensitivity(capsys):
    _, out, _ = run(capsys, "analyze", "--sensitivity")
    parts = {r["partitions"] for r in rows(out)}
    assert parts == {"6", "240"}


def test_output_is_byte_identical(capsys, tmp_path):
    args = ["bench-schedule", "--servers", "2-3", "--messages", "64", "--message-size", "64K"]
    _, a, _ = run(capsys, *args)
    _, b, _ = run(capsys, *args)
    assert a == b and len(rows(a)) == 2
    run(capsys, *args, "--out", str(tmp_path / "x.csv"))
    assert (tmp_path / "x.csv").read_text() == a


def test_config_file_and_flag_precedence(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"servers": "3", "messages": 32, "message-size": "8K"}))
    _, out, _ = run(capsys, "bench-schedule", "--config", str(cfg))
    r = rows(out)
    assert [x["n"] for x in r] == ["3"] and r[0]["message_size"] == "8192"
    _, out, _ = run(capsys, "bench-schedule", "--config", str(cfg), "--servers", "2")
    assert [x["n"] for x in rows(out)] == ["2"]


def test_bench_msgsize(capsys):
    _, out, _ = run(capsys, "bench-msgsize", "--servers", "3", "--message-size", "1K,512K")
    r = rows(out)
    assert [x["message_size"] for x in r] == ["1024", "524288"]
    assert float(r[1]["capacity_fraction"]) > 0.99


def test_query_and_gen_data(capsys, tmp_path):
    code, out, _ = run(capsys, "gen-data", str(tmp_path), "--sf", "0.0005")
    assert code == 0 and (tmp_path / "lineitem.tbl").exists()
    assert {r["table"] for r in rows(out)} >= {"lineitem", "orders", "part"}
    code, out, err = run(capsys, "query", "join_hash", "--data", str(tmp_path), "--servers", "1,2",
                         "--workers", "2", "--message-size", "8K", "--transport", "inprocess")
    assert code == 0, err
    r = rows(out)
    assert len(r) == 2 and all(x["matches_oracle"] == "1" for x in r)


def test_query_on_simulated_transport_reports_time(capsys):
    code, out, _ = run(capsys, "query", "q6_global", "--sf", "0.0003", "--servers", "2", "--schedule", "off")
    assert code == 0
    assert int(rows(out)[0]["simulated_time_ns"]) > 0


def test_spec_errors_exit_two(capsys, tmp_path):
    code, _, err = run(capsys, "query", "no_such_plan")
    assert code == 2 and "error" in err
    bad = tmp_path / "bad.json"
    bad.write_text('{"root": {"op": "scan", "table": "nowhere"}}')
    code, _, err = run(capsys, "query", str(bad), "--sf", "0.0003")
    assert code == 2 and "nowhere" in err
    code, _, _ = run(capsys, "bench-schedule", "--servers", "1")
    assert code == 2


def test_oracle_mismatch_exits_one(capsys, monkeypatch):
    import hyshuffle.experiments as ex
    real = ex.multiset

    def broken(rows):
        m = real(rows)
        broken.calls += 1
        if broken.calls > 1:  # corrupt every engine result, never the oracle
            m[("bogus",)] += 1
        return m

    broken.calls = 0
    monkeypatch.setattr(ex, "multiset", broken)
    code, _, err = run(capsys, "query", "q6_global", "--sf", "0.0003", "--servers", "1", "--transport", "inprocess")
    assert code == 1 and "mismatch" in err and "bogus" in err


def test_sim_command(capsys, tmp_path):
    wl = tmp_path / "w.csv"
    wl.write_text("0,1,4,65536\n1,0,4,65536\n")
    code, out, _ = run(capsys, "sim", str(wl))
    assert code == 0 and out.splitlines()[0].count(",") >= 3
    code, out, _ = run(capsys, "sim", str(wl), "--summary", "--schedule", "off")
    assert code == 0 and len(rows(out)) >= 1
