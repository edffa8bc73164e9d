"""Operator tooling: run scripted scenarios, replay logs, dump catalogs, serve.

Exit codes are a stable contract for CI: 0 all expectations pass, 1 an
expectation failed, 2 configuration or script error.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
import tempfile

import httpx

from .backends import ScriptedBackend
from .catalog import Catalog, CatalogStore
from .context import ContextEvent, dump_event_log, parse_event_log, render_transcript
from .errors import CarebotError, InvalidScript
from .gateway import GatewayService
from .resources import seed_catalog_text
from .world import default_world_config, load_world_config

EXIT_OK = 0
EXIT_EXPECTATION_FAILED = 1
EXIT_CONFIG_ERROR = 2


# --- scenario scripts -----------------------------------------------------------


def load_script(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            script = json.load(handle)
    except OSError as exc:
        raise InvalidScript(f"cannot read script {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidScript(f"script {path} is not valid JSON: {exc}") from exc
    if not isinstance(script, dict):
        raise InvalidScript("script top level must be an object")
    steps = script.get("steps")
    if not isinstance(steps, list) or not steps:
        raise InvalidScript("script needs a non-empty 'steps' array")
    for step in steps:
        if not isinstance(step, dict) or "actor" not in step or "text" not in step:
            raise InvalidScript(f"bad step: {step!r}")
    for exp in script.get("expectations", []):
        if not isinstance(exp, dict) or "kind" not in exp:
            raise InvalidScript(f"bad expectation: {exp!r}")
        if exp["kind"] not in ("event", "never", "before", "sequence", "catalog"):
            raise InvalidScript(f"unknown expectation kind {exp['kind']!r}")
    return script


def match_event(event: ContextEvent, matcher: dict) -> bool:
    if "event" in matcher and event.kind.value != matcher["event"]:
        return False
    if "actor" in matcher and event.actor.value != matcher["actor"]:
        return False
    for key, fragment in (matcher.get("payload_contains") or {}).items():
        value = event.payload.get(key, "")
        if str(fragment).casefold() not in value.casefold():
            return False
    for key, exact in (matcher.get("payload_equals") or {}).items():
        if event.payload.get(key) != str(exact):
            return False
    return True


def find_event(events: list[ContextEvent], matcher: dict, start: int = 0) -> int:
    for index in range(start, len(events)):
        if match_event(events[index], matcher):
            return index
    return -1


def describe(matcher: dict) -> str:
    parts = [matcher.get("event", "*")]
    if "actor" in matcher:
        parts.append(f"actor={matcher['actor']}")
    for key, val in (matcher.get("payload_contains") or {}).items():
        parts.append(f"{key}~{val!r}")
    for key, val in (matcher.get("payload_equals") or {}).items():
        parts.append(f"{key}={val!r}")
    return " ".join(parts)


def evaluate_expectation(exp: dict, events: list[ContextEvent], catalog_doc: dict) -> str | None:
    """None when satisfied, else a human-readable failure description."""
    kind = exp["kind"]
    if kind == "event":
        if find_event(events, exp.get("event_matcher") or exp.get("match") or exp) == -1:
            return f"no event matching {describe(exp)}"
        return None
    if kind == "never":
        index = find_event(events, exp.get("event_matcher") or exp.get("match") or exp)
        if index != -1:
            return f"forbidden event occurred at seq {events[index].seq}: {describe(exp)}"
        return None
    if kind == "before":
        first = find_event(events, exp["first"])
        if first == -1:
            return f"no event matching {describe(exp['first'])}"
        then = find_event(events, exp["then"], first + 1)
        if then == -1:
            return f"{describe(exp['then'])} does not occur after {describe(exp['first'])}"
        return None
    if kind == "sequence":
        position = 0
        for matcher in exp["events"]:
            index = find_event(events, matcher, position)
            if index == -1:
                return f"sequence broken at {describe(matcher)}"
            position = index + 1
        return None
    if kind == "catalog":
        intents = {i["name"]: i for i in catalog_doc.get("intents", [])}
        intent = intents.get(exp["intent"])
        if exp.get("absent"):
            return None if intent is None else f"intent {exp['intent']} unexpectedly present"
        if intent is None:
            return f"catalog lacks intent {exp['intent']}"
        if "slot" in exp:
            slots = {s["name"]: s for s in intent.get("slots", [])}
            slot = slots.get(exp["slot"])
            if slot is None:
                return f"intent {exp['intent']} lacks slot {exp['slot']}"
            if "options" in exp and sorted(slot.get("options", [])) != sorted(exp["options"]):
                return (
                    f"slot {exp['intent']}.{exp['slot']} options "
                    f"{slot.get('options')} != {exp['options']}"
                )
        if "slots" in exp:
            have = [s["name"] for s in intent.get("slots", [])]
            missing = [s for s in exp["slots"] if s not in have]
            if missing:
                return f"intent {exp['intent']} is missing slots {missing}"
        return None
    return f"unknown expectation kind {kind!r}"


class LocalClient:
    """Drives an in-process gateway."""

    def __init__(self, service: GatewayService, mode: str, backend) -> None:
        self.service = service
        self.session = service.create_session(mode=mode, backend=backend)

    def post(self, actor: str, text: str) -> list[dict]:
        return [e.to_json_obj() for e in self.service.post_utterance(self.session.id, actor, text)]

    def catalog(self) -> dict:
        return self.service.get_catalog_snapshot()


class HttpClient:
    """Drives a remote gateway over its HTTP API."""

    def __init__(self, base_url: str, mode: str, backend_name: str) -> None:
        self.base_url = base_url.rstrip("/")
        self.http = httpx.Client(timeout=30.0)
        response = self.http.post(
            f"{self.base_url}/sessions", json={"mode": mode, "backend": backend_name}
        )
        response.raise_for_status()
        self.session_id = response.json()["session_id"]

    def post(self, actor: str, text: str) -> list[dict]:
        response = self.http.post(
            f"{self.base_url}/sessions/{self.session_id}/utterances",
            json={"actor": actor, "text": text},
        )
        response.raise_for_status()
        return response.json()["events"]

    def catalog(self) -> dict:
        response = self.http.get(f"{self.base_url}/catalog")
        response.raise_for_status()
        return response.json()


def _materialize_seed(seed_path: str | None) -> str:
    """Copy the seed catalog to a temp file so runs stay isolated."""
    handle, path = tempfile.mkstemp(prefix="carebot-catalog-", suffix=".json")
    os.close(handle)
    if seed_path:
        shutil.copyfile(seed_path, path)
    else:
        with open(path, "w", encoding="utf-8") as out:
            out.write(seed_catalog_text())
    return path


def run_scenario(args: argparse.Namespace) -> int:
    script = load_script(args.script)
    mode = script.get("mode", "scripted_keeper")
    backend_name = script.get("backend", "scripted")

    if args.connect:
        client = HttpClient(args.connect, mode, backend_name)
    else:
        catalog_path = args.catalog or _materialize_seed(args.seed_catalog)
        store = CatalogStore.open(catalog_path)
        world_path = args.world or script.get("world")
        world = load_world_config(world_path) if world_path else default_world_config()
        rules_path = args.rules or script.get("rules")
        if backend_name == "scripted":
            backend = ScriptedBackend.from_file(rules_path) if rules_path else ScriptedBackend.default()
        else:
            backend = backend_name
        service = GatewayService(catalog_store=store, world_config=world)
        client = LocalClient(service, mode, backend)

    events_raw: list[dict] = []
    for step in script["steps"]:
        events_raw.extend(client.post(step["actor"], step["text"]))
    events = [ContextEvent.from_json_obj(obj) for obj in events_raw]
    catalog_doc = client.catalog()

    failures = 0
    for number, exp in enumerate(script.get("expectations", []), start=1):
        problem = evaluate_expectation(exp, events, catalog_doc)
        label = exp.get("description") or exp["kind"]
        if problem is None:
            print(f"PASS {number}: {label}")
        else:
            failures += 1
            print(f"FAIL {number}: {label} -- {problem}")
            if args.fail_fast:
                break
    name = script.get("name", os.path.basename(args.script))
    if failures:
        print(f"{name}: {failures} expectation(s) failed")
        return EXIT_EXPECTATION_FAILED
    print(f"{name}: all expectations passed ({len(events)} events)")
    if args.dump_events:
        with open(args.dump_events, "w", encoding="utf-8") as out:
            out.write(dump_event_log(events))
    return EXIT_OK


def replay(args: argparse.Namespace) -> int:
    with open(args.log, "r", encoding="utf-8") as handle:
        events = parse_event_log(handle.read())
    transcript = render_transcript(events, max_events=max(len(events), 1))
    if transcript:
        print(transcript)
    return EXIT_OK


def dump_catalog(args: argparse.Namespace) -> int:
    if args.connect:
        response = httpx.get(f"{args.connect.rstrip('/')}/catalog", timeout=30.0)
        response.raise_for_status()
        catalog = Catalog.from_document(response.json())
    else:
        catalog = Catalog.load(args.file)
    sys.stdout.write(catalog.dumps())
    return EXIT_OK


def serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .server import create_app

    catalog_path = args.catalog or _materialize_seed(None)
    if not os.path.exists(catalog_path):
        with open(catalog_path, "w", encoding="utf-8") as out:
            out.write(seed_catalog_text())
    store = CatalogStore.open(catalog_path)
    world = load_world_config(args.world) if args.world else default_world_config()
    backends = {}
    if args.rules:
        backends["scripted"] = ScriptedBackend.from_file(args.rules)
    service = GatewayService(catalog_store=store, world_config=world, backends=backends)
    app = create_app(service, ui_dir=args.ui)
    print(f"serving on port {args.port} (catalog: {catalog_path})")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="carebot")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a scenario script and check its expectations")
    run_p.add_argument("script")
    run_p.add_argument("--connect", help="drive a remote gateway at this base URL")
    run_p.add_argument("--catalog", help="catalog file to use and persist (default: temp copy of the seed)")
    run_p.add_argument("--seed-catalog", help="seed file to copy into the per-run temp catalog")
    run_p.add_argument("--world", help="world config path override")
    run_p.add_argument("--rules", help="scripted-backend rules path override")
    run_p.add_argument("--dump-events", help="write the run's event log (NDJSON) here")
    run_p.add_argument("--fail-fast", action="store_true")
    run_p.set_defaults(func=run_scenario)

    replay_p = sub.add_parser("replay", help="render an exported event log as a transcript")
    replay_p.add_argument("log")
    replay_p.set_defaults(func=replay)

    dump_p = sub.add_parser("dump-catalog", help="print a catalog in canonical form")
    group = dump_p.add_mutually_exclusive_group(required=True)
    group.add_argument("--file")
    group.add_argument("--connect")
    dump_p.set_defaults(func=dump_catalog)

    serve_p = sub.add_parser("serve", help="start the HTTP gateway")
    serve_p.add_argument("--host", default="127.0.0.1")
    serve_p.add_argument("--port", type=int, default=8008)
    serve_p.add_argument("--catalog")
    serve_p.add_argument("--world")
    serve_p.add_argument("--rules")
    serve_p.add_argument("--backend", default="scripted", choices=["scripted", "remote"])
    serve_p.add_argument("--ui", help="directory with the built console UI to serve")
    serve_p.set_defaults(func=serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CarebotError, OSError, httpx.HTTPError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
