"""HTTP oracle bridge: pending/answer lifecycle, timeout fallback, traces,
and the event stream."""

import json
import threading
import time
import urllib.error
import urllib.request

import pytest

from activekg.bridge import BridgeError, OracleBridge, _coerce_label
from activekg.oracle import OracleAnswer, OracleError, OracleQuery


def _get(url):
    with urllib.request.urlopen(url, timeout=5) as r:
        return r.status, json.loads(r.read())


def _post(url, body):
    req = urllib.request.Request(
        url, data=json.dumps(body).encode(), method="POST",
        headers={"Content-Type": "application/json"},
    )
    try:
        with urllib.request.urlopen(req, timeout=5) as r:
            return r.status, json.loads(r.read())
    except urllib.error.HTTPError as e:
        return e.code, json.loads(e.read())


def _fallback(q):
    return OracleAnswer(query_id=q.query_id, label=True, cost=0.3, source="simulated")


@pytest.fixture()
def bridge():
    with OracleBridge(timeout=0.4, fallback=_fallback) as b:
        yield b


def _rel_query(qid="q1"):
    return OracleQuery(
        query_id=qid, kind="relation_relevance",
        payload={"question_tokens": ["t"], "relation": 1}, issued_at=1,
    )


class TestLifecycle:
    def test_pending_empty_without_episode(self, bridge):
        st, body = _get(f"http://127.0.0.1:{bridge.port}/queries/pending")
        assert (st, body) == (200, [])

    def test_port_before_start_errors(self):
        with pytest.raises(BridgeError, match="not started"):
            OracleBridge().port

    def test_double_start_errors(self, bridge):
        with pytest.raises(BridgeError, match="already started"):
            bridge.start()

    def test_bad_timeout(self):
        with pytest.raises(BridgeError, match="timeout"):
            OracleBridge(timeout=0.0)


class TestAskAnswer:
    def test_http_answer_reaches_blocked_ask(self, bridge):
        base = f"http://127.0.0.1:{bridge.port}"
        out = {}
        t = threading.Thread(target=lambda: out.update(ans=bridge.ask(_rel_query())))
        t.start()
        deadline = time.time() + 3
        pend = []
        while time.time() < deadline and not pend:
            _, pend = _get(base + "/queries/pending")
        assert pend and pend[0]["query_id"] == "q1" and pend[0]["kind"] == "relation_relevance"
        st, ack = _post(base + "/queries/q1/answer", {"label": False})
        assert st == 200 and ack == {"query_id": "q1", "label": False, "source": "interactive"}
        t.join(timeout=3)
        assert out["ans"].label is False and out["ans"].source == "interactive"

    def test_answer_unknown_id_404(self, bridge):
        st, body = _post(f"http://127.0.0.1:{bridge.port}/queries/zzz/answer", {"label": True})
        assert st == 404 and "error" in body

    def test_bad_label_type_400(self, bridge):
        base = f"http://127.0.0.1:{bridge.port}"
        out = {}
        q = OracleQuery(query_id="h1", kind="hop_depth",
                        payload={"question_tokens": ["t"]}, issued_at=0)
        t = threading.Thread(target=lambda: out.update(ans=bridge.ask(q)))
        t.start()
        time.sleep(0.1)
        st, _ = _post(base + "/queries/h1/answer", {"label": True})
        assert st == 400
        st, _ = _post(base + "/queries/h1/answer", {"label": 2})
        assert st == 200
        t.join(timeout=3)
        assert out["ans"].label == 2

    def test_missing_label_key_400(self, bridge):
        base = f"http://127.0.0.1:{bridge.port}"
        out = {}
        t = threading.Thread(target=lambda: out.update(ans=bridge.ask(_rel_query("q9"))))
        t.start()
        time.sleep(0.1)
        st, _ = _post(base + "/queries/q9/answer", {"lab": 1})
        assert st == 400
        _post(base + "/queries/q9/answer", {"label": True})
        t.join(timeout=3)

    def test_timeout_falls_back_tagged(self, bridge):
        ans = bridge.ask(_rel_query("q2"))
        assert ans.source == "interactive-timeout"
        assert ans.label is True  # fallback's answer

    def test_timeout_without_fallback_raises(self):
        with OracleBridge(timeout=0.1) as b:
            with pytest.raises(BridgeError, match="timed out"):
                b.ask(_rel_query("q3"))


class TestTraceAndEvents:
    def test_trace_roundtrip_and_404(self, bridge):
        base = f"http://127.0.0.1:{bridge.port}"
        bridge.begin_episode("ep0")
        bridge.publish_trace("ep0", {"step": 1, "action": "rollout"})
        bridge.publish_trace("ep0", {"step": 1, "action": 3})
        with urllib.request.urlopen(base + "/episodes/ep0/trace", timeout=5) as r:
            lines = [json.loads(l) for l in r.read().decode().splitlines()]
        assert lines == [{"step": 1, "action": "rollout"}, {"step": 1, "action": 3}]
        with pytest.raises(urllib.error.HTTPError) as exc:
            urllib.request.urlopen(base + "/episodes/none/trace", timeout=5)
        assert exc.value.code == 404

    def test_unknown_path_404(self, bridge):
        with pytest.raises(urllib.error.HTTPError) as exc:
            urllib.request.urlopen(f"http://127.0.0.1:{bridge.port}/nope", timeout=5)
        assert exc.value.code == 404

    def test_sse_stream_delivers_events(self, bridge):
        base = f"http://127.0.0.1:{bridge.port}"
        events = []

        def read():
            with urllib.request.urlopen(base + "/events", timeout=5) as r:
                while len(events) < 2:
                    line = r.readline()
                    if line.startswith(b"data: "):
                        events.append(json.loads(line[6:]))

        t = threading.Thread(target=read, daemon=True)
        t.start()
        time.sleep(0.3)
        bridge.publish_trace("epX", {"a": 1})
        bridge.end_episode("epX", {"answer": "e1"})
        t.join(timeout=5)
        assert [e["event"] for e in events] == ["trace", "episode_end"]
        assert events[0]["record"] == {"a": 1}
        assert events[1]["answer"] == "e1"

    def test_query_lifecycle_events(self, bridge):
        sub = bridge.subscribe()
        bridge.ask(_rel_query("q7"))  # times out onto fallback
        kinds = [sub.get(timeout=2)["event"] for _ in range(2)]
        assert kinds == ["query", "answer"]
        bridge.unsubscribe(sub)


class TestLabelCoercion:
    def test_hop_depth_int_only(self):
        assert _coerce_label("hop_depth", 3) == 3
        with pytest.raises(OracleError):
            _coerce_label("hop_depth", True)
        with pytest.raises(OracleError):
            _coerce_label("hop_depth", 99)

    def test_boolean_kinds(self):
        assert _coerce_label("relation_relevance", True) is True
        with pytest.raises(OracleError):
            _coerce_label("path_validity", 1)
