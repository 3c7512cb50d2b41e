import json

import httpx
import pytest

from evoforge.errors import BackendUnavailable
from evoforge.judgment import RemoteJudge
from evoforge.remote import ENV_URL, ChatClient
from helpers import click, play


def _reply(content, status=200):
    return httpx.Response(status, json={"choices": [{"message": {"content": content}}]})


def _client(handler, **kw):
    return ChatClient("http://backend.test/v1", transport=httpx.MockTransport(handler), backoff=0, **kw)


def test_chat_posts_openai_payload():
    seen = {}

    def handler(request):
        seen["url"] = str(request.url)
        seen["body"] = json.loads(request.content)
        return _reply("hi")

    assert _client(handler, model="m").chat([{"role": "user", "content": "x"}]) == "hi"
    assert seen["url"] == "http://backend.test/v1/chat/completions"
    assert seen["body"] == {"model": "m", "messages": [{"role": "user", "content": "x"}], "temperature": 0.0}


def test_retries_server_errors():
    calls = []

    def handler(request):
        calls.append(1)
        return _reply("ok") if len(calls) == 3 else httpx.Response(503)

    assert _client(handler, retries=3).chat([]) == "ok"
    assert len(calls) == 3


def test_gives_up_after_retries():
    with pytest.raises(BackendUnavailable):
        _client(lambda r: httpx.Response(500), retries=2).chat([])
    with pytest.raises(BackendUnavailable):
        _client(lambda r: httpx.Response(200, text="not json"), retries=2).chat([])


def test_client_error_is_not_retried():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(401)

    with pytest.raises(BackendUnavailable):
        _client(handler, retries=3).chat([])
    assert len(calls) == 1


def test_missing_url(monkeypatch):
    monkeypatch.delenv(ENV_URL, raising=False)
    with pytest.raises(BackendUnavailable):
        ChatClient()


def test_remote_judge(paint):
    traj = play(paint, [click(paint, "canvas", "shapes"), click(paint, "shape_menu", "ellipse")], "rectangle")
    client = _client(lambda r: _reply('Step 0 opens the menu. {"Correctness": false, "FirstErrorStep": 1}'))
    j = RemoteJudge(client).judge(traj)
    assert (j.correctness, j.first_error_step) == (False, 1)
