"""Config merging: file < environment < explicit overrides."""

from __future__ import annotations

import json

import pytest

from ktalk.agents import OllamaBackend, StubBackend
from ktalk.config import AppConfig, load_config, make_backend


def test_defaults():
    cfg = load_config(env={})
    assert cfg.backend_url == "http://localhost:11434"
    assert cfg.kb_dir == "./kb"
    assert cfg.port == 8000
    assert cfg.addrep.topk_per_query == 3
    assert cfg.addrep.m == 3
    assert cfg.addrep.distance_threshold == 0.5
    assert cfg.chunking.max_tokens == 512
    assert cfg.hnsw.M == 8 and cfg.hnsw.M0 == 16 and cfg.hnsw.l_max == 64


def test_file_values(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(
        json.dumps(
            {
                "backend_url": "http://file:1",
                "port": 9100,
                "chunking": {"max_tokens": 128, "overlap_fraction": 0.25},
                "addrep": {"m": 5},
            }
        ),
        "utf-8",
    )
    cfg = load_config(path, env={})
    assert cfg.backend_url == "http://file:1"
    assert cfg.port == 9100
    assert cfg.chunking.max_tokens == 128
    assert cfg.addrep.m == 5


def test_env_overrides_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"backend_url": "http://file:1", "port": 9100}), "utf-8")
    cfg = load_config(path, env={"KT_BACKEND_URL": "http://env:2", "KT_PORT": "9200"})
    assert cfg.backend_url == "http://env:2"
    assert cfg.port == 9200


def test_explicit_overrides_env(tmp_path):
    cfg = load_config(
        None,
        env={"KT_BACKEND_URL": "http://env:2", "KT_KB_DIR": "/env/kb"},
        backend_url="http://cli:3",
    )
    assert cfg.backend_url == "http://cli:3"
    assert cfg.kb_dir == "/env/kb"  # env still applies where no override given


def test_none_overrides_ignored():
    cfg = load_config(None, env={}, backend_url=None, port=None)
    assert cfg.backend_url == "http://localhost:11434"


def test_bad_config_file(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{oops", "utf-8")
    with pytest.raises(ValueError, match="config file"):
        load_config(path, env={})


def test_backend_selection():
    assert isinstance(make_backend(AppConfig(backend_url="stub")), StubBackend)
    assert isinstance(make_backend(AppConfig(backend_url="http://x:1")), OllamaBackend)
    stub = make_backend(AppConfig(backend_url="stub", stub_dim=48, stub_seed=9))
    assert stub.dim == 48 and stub.seed == 9
