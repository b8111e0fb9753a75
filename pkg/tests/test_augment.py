import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import httpx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flap.audio import write_wav
from flap.augment import (
    AugmentedCaption,
    BandEnergyTagger,
    EndpointConfig,
    FileTagger,
    GenerationError,
    TaggingError,
    augment_manifest,
    build_prompt,
    generate_caption,
    merge_manifest,
    read_augmented,
    write_augmented,
)
from flap.manifest import LLM_AUGMENTED, ORIGINAL, CaptionRecord, Manifest, ManifestError
from flap.synthetic import tone

ENDPOINT = EndpointConfig(url="http://llm.test/generate", backoff=0.01)


def scripted(*responses):
    """Transport replying with the given (status, body) pairs in order, recording requests."""
    seen = []
    queue = list(responses)

    def handler(request):
        seen.append(json.loads(request.content))
        status, body = queue.pop(0)
        if isinstance(body, Exception):
            raise body
        return httpx.Response(status, json=body)

    return httpx.Client(transport=httpx.MockTransport(handler)), seen


class TestPrompt:
    def test_siren_example_byte_exact(self):
        expected = (
            "Describe a situation with siren sounds and combine it with the "
            "A loud siren whizzes past. together."
        )
        assert build_prompt(["siren"], "A loud siren whizzes past.") == expected

    def test_tag_join(self):
        assert "with wind, waves sounds" in build_prompt(["wind", "waves"], "x")

    def test_caps_at_five(self):
        prompt = build_prompt([f"t{i}" for i in range(8)], "x")
        assert "t4" in prompt and "t5" not in prompt

    def test_cleaned_variant(self):
        assert build_prompt(["dog"], "A dog.", cleaned=True).endswith("A dog.")

    def test_empty_inputs(self):
        with pytest.raises(ValueError):
            build_prompt([], "x")
        with pytest.raises(ValueError):
            build_prompt(["a"], "")


@given(st.lists(st.text(min_size=1), min_size=1, max_size=5), st.text(min_size=1))
@settings(max_examples=100, deadline=None)
def test_prompt_contains_all_inputs(tags, caption):
    prompt = build_prompt(tags, caption)
    assert caption in prompt
    assert all(t in prompt for t in tags)


class TestTaggers:
    def test_sidecar_directory(self, tmp_path):
        (tmp_path / "r1.json").write_text(json.dumps({"wind": 0.4, "dog bark": 0.9}))
        result = FileTagger(tmp_path).tag(CaptionRecord("r1", "r1.wav", ["c"]))
        assert result.tags == [("dog bark", 0.9), ("wind", 0.4)]

    def test_single_file_table(self, tmp_path):
        path = tmp_path / "tags.json"
        path.write_text(json.dumps({"r1": [["rain", 0.7]]}))
        assert FileTagger(path).tag(CaptionRecord("r1", "a", ["c"])).labels == ["rain"]

    def test_missing_sidecar_names_record(self, tmp_path):
        with pytest.raises(TaggingError, match="r9"):
            FileTagger(tmp_path).tag(CaptionRecord("r9", "a", ["c"]))

    def test_empty_sidecar(self, tmp_path):
        (tmp_path / "r1.json").write_text("[]")
        with pytest.raises(TaggingError):
            FileTagger(tmp_path).tag(CaptionRecord("r1", "a", ["c"]))

    @pytest.mark.parametrize("freq,label", [(80.0, "low rumble"), (500.0, "hum"), (2000.0, "tonal whistle"), (6000.0, "hiss")])
    def test_band_tagger(self, freq, label):
        result = BandEnergyTagger().tag_waveform("x", tone(freq, 0.5))
        assert result.labels[0] == label
        assert sum(s for _, s in result.tags) == pytest.approx(1.0)


class TestGenerate:
    def test_canned_text(self):
        client, seen = scripted((200, {"text": "  A siren wails.\n\nExtra paragraph."}))
        text, meta = generate_caption("p", ENDPOINT, client)
        assert text == "A siren wails."
        assert seen == [{"prompt": "p", "max_tokens": 128, "temperature": 0.7}]
        assert meta["attempts"] == 1

    def test_rate_limit_then_success(self):
        waits = []
        client, seen = scripted((429, {}), (200, {"text": "ok"}))
        text, meta = generate_caption("p", ENDPOINT, client, sleep=waits.append)
        assert text == "ok" and meta["attempts"] == 2 and len(seen) == 2
        assert waits == [0.01]

    def test_gives_up_after_three(self):
        waits = []
        client, seen = scripted((503, {}), (500, {}), (502, {}), (200, {"text": "late"}))
        with pytest.raises(GenerationError, match="3 attempts"):
            generate_caption("p", ENDPOINT, client, sleep=waits.append)
        assert len(seen) == 3 and waits == [0.01, 0.02]

    def test_network_error_retried(self):
        client, _ = scripted((0, httpx.ConnectError("down")), (200, {"text": "back"}))
        assert generate_caption("p", ENDPOINT, client, sleep=lambda s: None)[0] == "back"

    def test_whitespace_generation_rejected(self):
        client, _ = scripted((200, {"text": " \n "}))
        with pytest.raises(GenerationError, match="empty"):
            generate_caption("p", ENDPOINT, client)

    def test_client_error_not_retried(self):
        client, seen = scripted((400, {}), (200, {"text": "x"}))
        with pytest.raises(GenerationError):
            generate_caption("p", ENDPOINT, client)
        assert len(seen) == 1

    def test_auth_header_sent(self):
        captured = {}

        def handler(request):
            captured["auth"] = request.headers.get("authorization")
            return httpx.Response(200, json={"text": "t"})

        cfg = EndpointConfig(url="http://llm.test/", auth_header="Bearer abc")
        generate_caption("p", cfg, httpx.Client(transport=httpx.MockTransport(handler)))
        assert captured["auth"] == "Bearer abc"

    def test_env_config(self, monkeypatch):
        monkeypatch.setenv("FLAP_LLM_URL", "http://env.test/")
        monkeypatch.setenv("FLAP_LLM_AUTH", "Token z")
        cfg = EndpointConfig.from_env(timeout=3.0)
        assert (cfg.url, cfg.auth_header, cfg.timeout) == ("http://env.test/", "Token z", 3.0)


def manifest_of(n):
    return Manifest([CaptionRecord(f"r{i}", f"r{i}.wav", [f"caption {i}"]) for i in range(n)])


class TestMerge:
    def test_empty_is_identity(self):
        m = manifest_of(3)
        assert merge_manifest(m, []).records == m.records

    def test_doubles_single_caption_records_and_is_idempotent(self):
        m = manifest_of(3)
        gen = [AugmentedCaption(f"r{i}", f"caption {i}", f"generated {i}", "p") for i in range(3)]
        once = merge_manifest(m, gen)
        assert [len(r.captions) for r in once] == [2, 2, 2]
        assert once.records[0].caption_sources == [ORIGINAL, LLM_AUGMENTED]
        assert [r.captions for r in m] == [[f"caption {i}"] for i in range(3)]
        assert merge_manifest(once, gen).records == once.records

    def test_unknown_id(self):
        with pytest.raises(ManifestError):
            merge_manifest(manifest_of(1), [AugmentedCaption("zz", "a", "b", "p")])


def test_jsonl_round_trip(tmp_path):
    items = [AugmentedCaption("r1", "a", "b", "p", {"attempts": 1})]
    write_augmented(items, tmp_path / "aug.jsonl")
    assert read_augmented(tmp_path / "aug.jsonl") == items


class _EchoHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        reply = json.dumps({"text": "Generated: " + body["prompt"][-20:]}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(reply)))
        self.end_headers()
        self.wfile.write(reply)

    def log_message(self, *args):
        pass


@pytest.fixture
def local_endpoint():
    server = HTTPServer(("127.0.0.1", 0), _EchoHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield EndpointConfig(url=f"http://127.0.0.1:{server.server_port}/generate", timeout=5.0, max_in_flight=3)
    server.shutdown()


def test_pipeline_over_local_http(tmp_path, local_endpoint):
    records = []
    for i, freq in enumerate([90.0, 600.0, 3000.0]):
        write_wav(tmp_path / f"r{i}.wav", tone(freq, 0.3))
        records.append(CaptionRecord(f"r{i}", f"r{i}.wav", [f"caption {i}"]))
    manifest = Manifest(records, root=str(tmp_path))
    items = augment_manifest(manifest, BandEnergyTagger(), local_endpoint)
    assert [i.record_id for i in items] == ["r0", "r1", "r2"]
    assert items[0].prompt.startswith("Describe a situation with low rumble")
    assert all(i.generated.startswith("Generated:") for i in items)
    merged = merge_manifest(manifest, items)
    assert sum(len(r.captions) for r in merged) == 6


def test_pipeline_skips_failures(tmp_path, caplog):
    (tmp_path / "r0.json").write_text(json.dumps({"rain": 0.9}))
    (tmp_path / "r2.json").write_text(json.dumps({"wind": 0.9}))

    def handler(request):
        prompt = json.loads(request.content)["prompt"]
        return httpx.Response(200, json={"text": "" if "caption 2" in prompt else "fine"})

    client = httpx.Client(transport=httpx.MockTransport(handler))
    items = augment_manifest(manifest_of(3), FileTagger(tmp_path), ENDPOINT, client)
    assert [i.record_id for i in items] == ["r0"]
    assert "r1" in caplog.text and "r2" in caplog.text
