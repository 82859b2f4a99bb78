# SPDX-License-Identifier: Apache-2.0
import json
import math
import os
import signal
import socket
import subprocess
import threading
import time
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

import tierguard as tg


def test_registry_and_prompt():
    ids = tg.category_ids()
    assert ids[0] == "sec" and len(ids) == 29
    prompt = tg.render_prompt("prompt", prompt="hello")
    assert prompt.endswith("---\n\nInput Text: hello") or prompt.endswith("Input Text: hello")
    assert "# Dynamic Policy" not in prompt


def test_policy_errors_and_exception():
    policy = {"rules": [{"op": "add_new", "category_id": "ab", "category_name": "X", "definitions": ["d"]}]}
    errors = tg.check_policy(policy)
    assert [(e["code"], e["rule_index"]) for e in errors] == [("IdNotSingleLetter", 0)]
    with pytest.raises(tg.TierguardError) as info:
        tg.render_prompt("prompt", prompt="x", policy=policy)
    assert info.value.args[0] == "PolicyInvalid"
    assert info.value.args[2][0]["code"] == "IdNotSingleLetter"


def test_renormalize_and_decide():
    scores = tg.renormalize({"pc": math.log(0.9)})
    assert abs(sum(scores.values()) - 1.0) < 1e-9
    assert abs(scores["pc"] - 0.9 / (0.9 + 28e-9)) < 1e-12
    assert tg.decide("dw", 0.5, "prompt") == "unsafe"
    assert tg.decide("dw", 0.79, "response") == "safe"
    assert tg.decide("sec", 1.0, "prompt", {"default_prompt": 0.0}) == "safe"


def test_signals():
    assert abs(tg.kl_forward([0.5, 0.5], [0.9, 0.1]) - 0.510826) < 1e-6
    assert abs(tg.combined_distill_loss([0.5, 0.5], [0.9, 0.1]) - 0.439445) < 1e-6
    assert tg.grpo_reward(True, "unsafe", "pc", True, "unsafe", "dw") == 0.5
    assert tg.grpo_reward(False, None, None, False, "unsafe", "dw") == -0.2
    assert tg.f1(8, 2, 2, 8) == pytest.approx((0.8, 0.8, 0.8), abs=1e-12)
    assert tg.parse_verifier_reply("DISAGREE: no") == "DISAGREE"
    with pytest.raises(tg.TierguardError):
        tg.kl_forward([1.0], [0.5, 0.5])


def test_classify_request_with_script():
    script = [{"first_token": "pc", "text": "pc", "top_logprobs": {"pc": math.log(0.9), "sec": math.log(0.1)}}]
    status, body = tg.classify_request({"kind": "response", "prompt": "...", "response": "..."}, script=script)
    assert status == 200
    assert (body["category"], body["decision"]) == ("pc", "unsafe")


class _Completions(BaseHTTPRequestHandler):
    seen = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        _Completions.seen.append(body)
        reply = {"choices": [{"text": "dw", "logprobs": {"tokens": ["dw"],
                 "top_logprobs": [{"dw": math.log(0.7), "sec": math.log(0.3)}]}}]}
        data = json.dumps(reply).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.mark.skipif(not os.environ.get("TIERGUARD_CLI"), reason="CLI binary not provided")
def test_serve_end_to_end(tmp_path):
    backend = ThreadingHTTPServer(("127.0.0.1", 0), _Completions)
    threading.Thread(target=backend.serve_forever, daemon=True).start()
    port = _free_port()
    config = tmp_path / "gateway.json"
    config.write_text(json.dumps({
        "listen_addr": f"127.0.0.1:{port}",
        "backend": {"base_url": f"http://127.0.0.1:{backend.server_address[1]}", "model_name": "guard"},
    }))
    proc = subprocess.Popen([os.environ["TIERGUARD_CLI"], "serve", "--config", str(config)],
                            stdout=subprocess.PIPE, stderr=subprocess.PIPE)
    try:
        base = f"http://127.0.0.1:{port}"
        for _ in range(100):
            try:
                with urllib.request.urlopen(base + "/healthz", timeout=1) as r:
                    assert json.loads(r.read()) == {"status": "ok"}
                break
            except OSError:
                time.sleep(0.05)
        else:
            pytest.fail("gateway did not come up")
        req = urllib.request.Request(base + "/v1/classify",
                                     data=json.dumps({"kind": "prompt", "prompt": "hi"}).encode(),
                                     headers={"Content-Type": "application/json"})
        with urllib.request.urlopen(req, timeout=5) as r:
            body = json.loads(r.read())
        assert (body["category"], body["decision"]) == ("dw", "unsafe")
        assert _Completions.seen[-1]["max_tokens"] == 1
    finally:
        proc.send_signal(signal.SIGTERM)
        assert proc.wait(timeout=10) == 0
        backend.shutdown()
