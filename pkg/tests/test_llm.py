import re
import threading

import httpx
import pytest

from conftest import CONVERSION
from profilekt.analyst import NextQuestion, extract_kc_stats, teacher_annotate
from profilekt.llm import BackendConfig, BackendError, ChatClient, PredictionError, llm_generate_profile, llm_predict
from profilekt.llm.mock import MockChatServer
from profilekt.llm.prompts import analyst_messages, format_history, predictor_messages
from profilekt.profile_text import ProfileParseError, render_profile

NQ = NextQuestion((CONVERSION,), 0.16)


def cfg(server, **kw):
    return BackendConfig(base_url=server.base_url, backoff_base=0.001, timeout=5.0, **kw)


def test_history_format(case_history):
    text = format_history(case_history[:2])
    assert text == "(['Making a Table from an Equation'], 0.47, False), (['Making a Table from an Equation'], 0.64, False)"
    msgs = analyst_messages(case_history, NQ)
    assert msgs == analyst_messages(case_history, NQ)
    assert "historical response sequence" in msgs[1]["content"]
    assert f"Next Question: (['{CONVERSION}'], 0.16)" in msgs[1]["content"]
    assert "True or False" in predictor_messages(case_history, "profile", NQ)[0]["content"]


def test_config_defaults_and_validation():
    assert BackendConfig.analyst().temperature == 0.95
    assert BackendConfig.predictor().temperature == 0.0
    assert BackendConfig().top_p == 0.7
    with pytest.raises(ValueError):
        BackendConfig(max_in_flight=0)
    with pytest.raises(ValueError):
        BackendConfig(temperature=-0.1)


@pytest.mark.parametrize("reply, label", [("False", False), (" true\n", True), ("TRUE", True)])
def test_predict_parses_answer(case_history, reply, label):
    with MockChatServer(script=[reply]) as server:
        out = llm_predict(cfg(server), case_history, "some profile", NQ)
    assert out.label is label and out.probability == (1.0 if label else 0.0)


@pytest.mark.parametrize("reply", ["maybe", "True.", "I think False", ""])
def test_predict_rejects_other_answers(case_history, reply):
    with MockChatServer(script=[reply]) as server:
        with pytest.raises(PredictionError) as err:
            llm_predict(cfg(server), case_history, None, NQ)
    assert err.value.raw_text == reply


def test_request_body_and_auth(case_history, monkeypatch):
    monkeypatch.setenv("MOCK_KEY", "sekret")
    with MockChatServer(script=["False"]) as server:
        llm_predict(cfg(server, model="m1", api_key_env="MOCK_KEY"), case_history, None, NQ)
    body = server.requests[0]
    assert body["model"] == "m1" and body["temperature"] == 0.0 and body["top_p"] == 0.7
    assert [m["role"] for m in body["messages"]] == ["system", "user"]
    assert server.headers[0]["Authorization"] == "Bearer sekret"


def test_generated_profile_round_trips(case_history):
    stats = extract_kc_stats(case_history)
    truth = teacher_annotate(stats, NQ)
    with MockChatServer(script=[render_profile(truth)]) as server:
        prof = llm_generate_profile(cfg(server, temperature=0.95), case_history, NQ)
    assert prof.labels() == truth.labels()
    assert prof.text == render_profile(truth)
    assert prof.assessment(CONVERSION).stats == stats[2]
    assert server.requests[0]["temperature"] == 0.95


def test_garbage_profile_keeps_raw_text(case_history):
    with MockChatServer(script=["lorem ipsum dolor"]) as server:
        with pytest.raises(ProfileParseError) as err:
            llm_generate_profile(cfg(server), case_history, NQ)
    assert err.value.raw_text == "lorem ipsum dolor"


def test_retries_transient_errors():
    with MockChatServer(script=[(503, "busy"), (503, "busy"), "ok"]) as server:
        with ChatClient(cfg(server, max_attempts=3)) as client:
            done = client.complete([{"role": "user", "content": "hi"}])
    assert done.text == "ok" and done.retries == 2 and client.retries == 2
    assert len(server.requests) == 3


def test_gives_up_after_max_attempts():
    with MockChatServer(script=[(429, "slow down")] * 5) as server:
        with ChatClient(cfg(server, max_attempts=3)) as client:
            with pytest.raises(BackendError) as err:
                client.complete([{"role": "user", "content": "hi"}])
    assert err.value.attempts == 3 and len(server.requests) == 3


def test_client_errors_are_not_retried():
    with MockChatServer(script=[(400, "bad request"), "never"]) as server:
        with ChatClient(cfg(server, max_attempts=3)) as client:
            with pytest.raises(BackendError):
                client.complete([{"role": "user", "content": "hi"}])
    assert len(server.requests) == 1


def test_timeouts_are_retried():
    with MockChatServer(responder=lambda body: "late", delay=0.3) as server:
        config = BackendConfig(base_url=server.base_url, timeout=0.05, max_attempts=2, backoff_base=0.001)
        with ChatClient(config) as client:
            with pytest.raises(BackendError) as err:
                client.complete([{"role": "user", "content": "hi"}])
    assert err.value.attempts == 2


def test_connection_refused_is_retried_then_surfaced():
    config = BackendConfig(base_url="http://127.0.0.1:9/v1", max_attempts=2, backoff_base=0.001, timeout=1.0)
    with ChatClient(config) as client:
        with pytest.raises(BackendError) as err:
            client.complete([{"role": "user", "content": "hi"}])
    assert err.value.attempts == 2 and client.requests == 2


def echo(body):
    return "echo " + re.search(r"#(\d+)", body["messages"][-1]["content"]).group(1)


def test_bounded_concurrency_and_input_order():
    with MockChatServer(responder=echo, delay=0.02) as server:
        with ChatClient(cfg(server, max_in_flight=4)) as client:
            out = client.complete_many([[{"role": "user", "content": f"#{i}"}] for i in range(100)])
    assert [c.text for c in out] == [f"echo {i}" for i in range(100)]
    assert 1 <= server.max_in_flight <= 4


def test_shared_client_across_threads():
    with MockChatServer(responder=echo, delay=0.01) as server:
        with ChatClient(cfg(server, max_in_flight=3)) as client:
            results = {}

            def worker(i):
                results[i] = client.complete([{"role": "user", "content": f"#{i}"}]).text

            threads = [threading.Thread(target=worker, args=(i,)) for i in range(30)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
    assert results == {i: f"echo {i}" for i in range(30)}
    assert server.max_in_flight <= 3


def test_mock_rejects_unknown_path():
    with MockChatServer(script=["x"]) as server:
        r = httpx.post(server.base_url.replace("/v1", "/v2") + "/chat/completions", json={})
    assert r.status_code == 404
