"""Declarative pipeline configuration and per-command run manifests.

One JSON file drives every command; CLI flags override individual knobs.
Secrets never live in the config, only the names of environment variables
holding them.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .classifier import GbdtConfig
from .embeddings import FallbackEmbedder, RemoteEmbedder
from .errors import VeriCwetyError
from .labeling import MockProvider, load_provider_config

TOOL_VERSION = "0.1.0"


@dataclass
class SplitSettings:
    train_fraction: float = 0.8
    seed: int = 0
    module_strategy: str = "STRATIFIED_BY_LABEL"
    line_strategy: str = "GROUP_BY_DESIGN"


@dataclass
class PipelineConfig:
    corpus: str = ""
    taxonomy: object = "v2"  # "v1" | "v2" | explicit label list
    providers: dict = field(default_factory=dict)
    backend: dict = field(default_factory=lambda: {"type": "fallback", "dimension": 256, "ngram": 3})
    split: SplitSettings = field(default_factory=SplitSettings)
    gbdt: dict = field(default_factory=dict)  # overrides on GbdtConfig defaults
    threshold: float = 0.5
    out_dir: str = "out"
    workers: int = 4
    prompt_template: str = ""  # path; empty means the built-in template

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
        split = SplitSettings(**raw.pop("split", {}))
        known = {k: v for k, v in raw.items() if k in cls.__dataclass_fields__}
        unknown = set(raw) - set(known)
        if unknown:
            raise VeriCwetyError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(split=split, **known)
        if not cfg.corpus:
            raise VeriCwetyError("config must set 'corpus'")
        return cfg

    def gbdt_config(self, seed_override: int | None = None) -> GbdtConfig:
        cfg = GbdtConfig(**self.gbdt)
        if seed_override is not None:
            cfg.random_state = seed_override
        cfg.validate()
        return cfg

    def make_backend(self):
        kind = self.backend.get("type", "fallback")
        if kind == "fallback":
            return FallbackEmbedder(
                dimension=self.backend.get("dimension", 256),
                ngram=self.backend.get("ngram", 3),
            )
        if kind == "remote":
            missing = {"base_url", "dimension"} - set(self.backend)
            if missing:
                raise VeriCwetyError(f"remote backend config missing {sorted(missing)}")
            return RemoteEmbedder(
                base_url=self.backend["base_url"],
                dimension=self.backend["dimension"],
                backend_id=self.backend.get("backend_id", "remote"),
                api_key_env_var=self.backend.get("api_key_env_var", ""),
                timeout_s=self.backend.get("timeout_s", 120.0),
            )
        raise VeriCwetyError(f"unknown backend type {kind!r}")

    def make_providers(self) -> list:
        kind = self.providers.get("type", "mock")
        if kind == "mock":
            base = Path(self.corpus).parent
            if "fixtures" in self.providers:
                paths = self.providers["fixtures"]
                return [
                    MockProvider.from_fixture(f"mock-{i+1}", _resolve(p, base))
                    for i, p in enumerate(paths)
                ]
            fixture = self.providers.get("fixture")
            if not fixture:
                raise VeriCwetyError("mock providers need 'fixture' or 'fixtures'")
            count = int(self.providers.get("count", 3))
            return [
                MockProvider.from_fixture(f"mock-{i+1}", _resolve(fixture, base))
                for i in range(count)
            ]
        if kind == "http":
            return load_provider_config(self.providers["config"])
        raise VeriCwetyError(f"unknown provider type {kind!r}")

    def load_prompt_template(self) -> str | None:
        if not self.prompt_template:
            return None
        return Path(self.prompt_template).read_text(encoding="utf-8")

    def snapshot(self) -> dict:
        d = asdict(self)
        return d


def _resolve(p, base: Path) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def append_run_manifest(out_dir, command: str, config: PipelineConfig,
                        inputs: list, outputs: list) -> None:
    """One provenance entry per command: config snapshot plus artifact hashes."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entry = {
        "command": command,
        "config": config.snapshot(),
        "inputs": {str(p): file_sha256(p) for p in inputs if Path(p).is_file()},
        "outputs": {str(p): file_sha256(p) for p in outputs if Path(p).is_file()},
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "tool_version": TOOL_VERSION,
    }
    with open(out_dir / "run_manifest.jsonl", "a", encoding="utf-8") as f:
        f.write(json.dumps(entry, sort_keys=True) + "\n")
