import json
import shutil
import threading

import pytest

from carebot.catalog import Catalog
from carebot.cli import main
from carebot.context import dump_event_log, render_transcript, parse_event_log
from carebot.resources import seed_catalog_text

from conftest import scenario_path, write_seed


def run_cli(*argv):
    return main(list(argv))


def test_run_juice_scenario(capsys):
    code = run_cli("run", scenario_path("juice_learning.scenario.json"))
    out = capsys.readouterr().out
    assert code == 0
    assert "all expectations passed" in out
    assert out.count("PASS") >= 4 and "FAIL" not in out


def test_run_tea_scenario(capsys):
    assert run_cli("run", scenario_path("tea_attributes.scenario.json")) == 0


def test_run_coffee_scenario(capsys):
    assert run_cli("run", scenario_path("coffee_availability.scenario.json")) == 0


def test_run_is_reproducible(tmp_path, capsys):
    script = scenario_path("juice_learning.scenario.json")
    log_a, log_b = tmp_path / "a.ndjson", tmp_path / "b.ndjson"
    assert run_cli("run", script, "--dump-events", str(log_a)) == 0
    assert run_cli("run", script, "--dump-events", str(log_b)) == 0
    capsys.readouterr()

    def strip_wall_time(path):
        rows = [json.loads(line) for line in path.read_text().splitlines()]
        for row in rows:
            row.pop("wall_time")
        return rows

    assert strip_wall_time(log_a) == strip_wall_time(log_b)


def test_run_persists_catalog_for_followup(tmp_path, capsys):
    catalog_path = write_seed(tmp_path / "cat.json")
    assert run_cli("run", scenario_path("juice_learning.scenario.json"), "--catalog", catalog_path) == 0
    assert run_cli("run", scenario_path("juice_immediate.scenario.json"), "--catalog", catalog_path) == 0


def test_run_failing_expectation_names_it(tmp_path, capsys):
    script = {
        "name": "impossible",
        "steps": [{"actor": "senior", "text": "Bring me water, please."}],
        "expectations": [
            {"kind": "event", "description": "unicorn event",
             "event": "IntentLearned", "payload_equals": {"intent": "bring_unicorn"}}
        ],
    }
    path = tmp_path / "impossible.json"
    path.write_text(json.dumps(script), encoding="utf-8")
    code = run_cli("run", str(path))
    out = capsys.readouterr().out
    assert code == 1
    assert "FAIL 1: unicorn event" in out


def test_run_invalid_script_is_config_error(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{not json", encoding="utf-8")
    assert run_cli("run", str(path)) == 2
    path.write_text(json.dumps({"steps": []}), encoding="utf-8")
    assert run_cli("run", str(path)) == 2
    assert run_cli("run", str(tmp_path / "missing.json")) == 2


def test_replay_matches_live_transcript(tmp_path, capsys, service):
    session = service.create_session()
    service.post_utterance(session.id, "senior", "Bring me juice, please.")
    events = service.events(session.id)
    log_path = tmp_path / "events.ndjson"
    log_path.write_text(dump_event_log(events), encoding="utf-8")
    assert run_cli("replay", str(log_path)) == 0
    out = capsys.readouterr().out
    assert out == render_transcript(events, max_events=len(events)) + "\n"


def test_replay_empty_file(tmp_path, capsys):
    path = tmp_path / "empty.ndjson"
    path.write_text("", encoding="utf-8")
    assert run_cli("replay", str(path)) == 0
    assert capsys.readouterr().out == ""


def test_replay_corrupt_line(tmp_path, capsys):
    path = tmp_path / "bad.ndjson"
    good = dump_event_log(parse_event_log(""))  # empty
    path.write_text('{"seq": 1, "wall_time": 0, "actor": "senior", "kind": "Heard", "payload": {"text": "x"}}\nnot json\n', encoding="utf-8")
    assert run_cli("replay", str(path)) == 2
    err = capsys.readouterr().err
    assert "line 2" in err


def test_dump_catalog_seed_bytes(tmp_path, capsys):
    path = write_seed(tmp_path / "cat.json")
    assert run_cli("dump-catalog", "--file", path) == 0
    out = capsys.readouterr().out
    assert out == seed_catalog_text()
    assert out == Catalog.load(path).dumps()


def test_dump_catalog_shows_learned_entries(tmp_path, capsys):
    catalog_path = write_seed(tmp_path / "cat.json")
    run_cli("run", scenario_path("juice_learning.scenario.json"), "--catalog", catalog_path)
    capsys.readouterr()
    assert run_cli("dump-catalog", "--file", catalog_path) == 0
    out = capsys.readouterr().out
    assert '"bring_juice"' in out and '"which"' in out


def test_dump_diff_shows_only_additions(tmp_path, capsys):
    import difflib

    catalog_path = write_seed(tmp_path / "cat.json")
    before = seed_catalog_text().splitlines()
    run_cli("run", scenario_path("juice_learning.scenario.json"), "--catalog", catalog_path)
    capsys.readouterr()
    run_cli("dump-catalog", "--file", catalog_path)
    after = capsys.readouterr().out.splitlines()
    removals = [
        line for line in difflib.unified_diff(before, after, lineterm="", n=0)
        if line.startswith("-") and not line.startswith("---")
        and line.strip("- ") not in ("{", "}", "[", "]")
    ]
    # learning only adds (allow reflowed punctuation like a comma on next_seq bump)
    meaningful = [l for l in removals if '"next_seq"' not in l and not l.strip("-").strip().startswith(("]", "}"))]
    assert meaningful == [], meaningful


def test_run_against_http_gateway(tmp_path, capsys, seed_store):
    import uvicorn

    from carebot.gateway import GatewayService
    from carebot.server import create_app

    service = GatewayService(catalog_store=seed_store)
    config = uvicorn.Config(create_app(service), host="127.0.0.1", port=0, log_level="error")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    while not server.started:
        pass
    port = server.servers[0].sockets[0].getsockname()[1]
    try:
        code = run_cli(
            "run", scenario_path("juice_learning.scenario.json"),
            "--connect", f"http://127.0.0.1:{port}",
        )
        out = capsys.readouterr().out
        assert code == 0, out
        assert run_cli("dump-catalog", "--connect", f"http://127.0.0.1:{port}") == 0
        dumped = capsys.readouterr().out
        assert '"bring_juice"' in dumped
    finally:
        server.should_exit = True
        thread.join(timeout=5)
