"""CWE labeling via N independent label providers resolved by majority vote.

Each provider answers with a module-level CWE label plus the line numbers it
considers buggy. A label wins when at least ceil(N/2) providers agree;
otherwise the design is UNRESOLVED and excluded from datasets. Line flags use
the same majority rule and are zeroed when the module vote is NONE or
UNRESOLVED.
"""
from __future__ import annotations

import json
import logging
import math
import os
import re
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import requests

from .corpus import DesignUnit
from .errors import (
    AuthError,
    MalformedResponse,
    MissingVotes,
    MixedDesign,
    ProviderTimeout,
)

log = logging.getLogger(__name__)

NONE_LABEL = "NONE"
UNRESOLVED = "UNRESOLVED"
ABSTAIN = "ABSTAIN"

# Initial run: the eleven CWE ids the label providers are asked to choose from.
TAXONOMY_V1 = (
    "CWE-250",
    "CWE-269",
    "CWE-284",
    "CWE-310",
    "CWE-321",
    "CWE-506",
    "CWE-1198",
    "CWE-1244",
    "CWE-1245",
    "CWE-1260",
    "CWE-1271",
    NONE_LABEL,
)

# Refined run: generic access-control CWEs dropped, crypto issues split into
# scenario-specific composites.
TAXONOMY_V2 = (
    "CWE-1244",
    "CWE-1245",
    NONE_LABEL,
    "CWE-310-AES-LEAK",
    "CWE-321",
    "CWE-1271",
    "CWE-310-AES-DOS",
    "CWE-310-CSR-UNAUTH",
    "CWE-1260",
    "CWE-506",
    "CWE-1198",
)

_TAXONOMIES = {"v1": TAXONOMY_V1, "v2": TAXONOMY_V2}

DEFAULT_PROMPT_TEMPLATE = """You are a hardware security reviewer. Classify the Verilog module below.

Allowed labels: {taxonomy}
Answer NONE if the module is free of the listed weaknesses.

Reply with strict JSON, nothing else: {{"cwe": "<label>", "buggy_lines": [<1-based line numbers>]}}
Use an empty list for buggy_lines when the module is clean.

Module source (line-numbered):
{numbered_source}
"""


def taxonomy(version_or_labels) -> tuple[str, ...]:
    """Resolve 'v1'/'v2' or an explicit label list; NONE is always included."""
    if isinstance(version_or_labels, str):
        try:
            return _TAXONOMIES[version_or_labels]
        except KeyError:
            raise ValueError(f"unknown taxonomy version {version_or_labels!r}") from None
    labels = tuple(version_or_labels)
    if NONE_LABEL not in labels:
        labels = labels + (NONE_LABEL,)
    return labels


@dataclass(frozen=True)
class ProviderVerdict:
    provider_id: str
    design_id: str
    module_label: str  # taxonomy label, NONE, or ABSTAIN
    buggy_lines: frozenset[int]
    raw_response: str


@dataclass(frozen=True)
class VoteResult:
    design_id: str
    final_label: str
    line_flags: tuple[int, ...]
    verdicts: tuple[ProviderVerdict, ...]
    tally: dict[str, int]


def render_prompt(template: str, labels: tuple[str, ...], unit: DesignUnit) -> str:
    return template.format(taxonomy=", ".join(labels), numbered_source=unit.numbered_source())


_JSON_RE = re.compile(r"\{.*\}", re.DOTALL)


def parse_reply(raw: str) -> tuple[str, list[int]]:
    """Extract (label, line numbers) from a provider reply.

    Accepts strict JSON or JSON embedded in surrounding prose. Raises
    MalformedResponse when no usable object is present.
    """
    try:
        obj = json.loads(raw)
    except (json.JSONDecodeError, TypeError):
        m = _JSON_RE.search(raw or "")
        if not m:
            raise MalformedResponse(f"no JSON object in reply: {raw!r}")
        try:
            obj = json.loads(m.group(0))
        except json.JSONDecodeError:
            raise MalformedResponse(f"unparseable JSON in reply: {raw!r}") from None
    if not isinstance(obj, dict) or "cwe" not in obj:
        raise MalformedResponse(f"reply missing 'cwe' field: {raw!r}")
    label = obj["cwe"]
    if not isinstance(label, str):
        raise MalformedResponse(f"'cwe' is not a string: {raw!r}")
    lines = obj.get("buggy_lines", [])
    if not isinstance(lines, list) or any(not isinstance(x, int) or isinstance(x, bool) for x in lines):
        raise MalformedResponse(f"'buggy_lines' is not a list of ints: {raw!r}")
    return label, lines


class MockProvider:
    """Deterministic offline provider driven by a fixture table.

    The table maps design_id to {"cwe": label, "buggy_lines": [...]}. Special
    values "TIMEOUT" and "MALFORMED" in the "cwe" slot simulate transport
    failures. Designs absent from the table answer NONE.
    """

    def __init__(self, provider_id: str, table: dict | None = None):
        self.provider_id = provider_id
        self.table = dict(table or {})

    @classmethod
    def from_fixture(cls, provider_id: str, path) -> "MockProvider":
        with open(path, "r", encoding="utf-8") as f:
            return cls(provider_id, json.load(f))

    def respond(self, prompt: str, unit: DesignUnit) -> str:
        entry = self.table.get(unit.design_id)
        if entry is None:
            return json.dumps({"cwe": NONE_LABEL, "buggy_lines": []})
        if entry.get("cwe") == "TIMEOUT":
            raise ProviderTimeout(f"mock timeout for {unit.design_id}")
        if entry.get("cwe") == "MALFORMED":
            return "sorry, I cannot parse that module"
        return json.dumps({"cwe": entry["cwe"], "buggy_lines": list(entry.get("buggy_lines", []))})


class HttpProvider:
    """Chat-completion-style adapter; one endpoint shape covers every provider."""

    def __init__(
        self,
        provider_id: str,
        base_url: str,
        model_name: str,
        api_key_env_var: str = "",
        timeout_s: float = 60.0,
        max_retries: int = 2,
        session: requests.Session | None = None,
    ):
        self.provider_id = provider_id
        self.base_url = base_url.rstrip("/")
        self.model_name = model_name
        self.api_key_env_var = api_key_env_var
        self.timeout_s = timeout_s
        self.max_retries = max_retries
        self._session = session or requests.Session()

    def respond(self, prompt: str, unit: DesignUnit) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key_env_var:
            key = os.environ.get(self.api_key_env_var, "")
            if key:
                headers["Authorization"] = f"Bearer {key}"
        payload = {
            "model": self.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        }
        last_exc: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = self._session.post(
                    f"{self.base_url}/chat/completions",
                    json=payload,
                    headers=headers,
                    timeout=self.timeout_s,
                )
            except requests.Timeout as exc:
                last_exc = ProviderTimeout(f"{self.provider_id}: {exc}")
                continue
            except requests.RequestException as exc:
                last_exc = ProviderTimeout(f"{self.provider_id}: {exc}")
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"{self.provider_id}: HTTP {resp.status_code}")
            if resp.status_code >= 400:
                last_exc = MalformedResponse(f"{self.provider_id}: HTTP {resp.status_code}")
                continue
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise MalformedResponse(f"{self.provider_id}: unexpected body ({exc})")
        assert last_exc is not None
        raise last_exc


def query_provider(provider, unit: DesignUnit, labels: tuple[str, ...],
                   template: str = DEFAULT_PROMPT_TEMPLATE) -> ProviderVerdict:
    """Ask one provider about one design; failures become ABSTAIN verdicts.

    Out-of-taxonomy labels map to ABSTAIN with the raw reply preserved for the
    audit trail. Flagged line numbers outside [1, line_count] are dropped with
    a warning. AuthError propagates (configuration problem, not a non-vote).
    """
    prompt = render_prompt(template, labels, unit)
    try:
        raw = provider.respond(prompt, unit)
    except (ProviderTimeout, MalformedResponse) as exc:
        log.warning("provider %s abstains on %s: %s", provider.provider_id, unit.design_id, exc)
        return ProviderVerdict(provider.provider_id, unit.design_id, ABSTAIN, frozenset(), str(exc))
    try:
        label, lines = parse_reply(raw)
    except MalformedResponse as exc:
        log.warning("provider %s abstains on %s: %s", provider.provider_id, unit.design_id, exc)
        return ProviderVerdict(provider.provider_id, unit.design_id, ABSTAIN, frozenset(), raw)
    if label not in labels:
        log.warning(
            "provider %s returned out-of-taxonomy label %r for %s; counted as ABSTAIN",
            provider.provider_id, label, unit.design_id,
        )
        return ProviderVerdict(provider.provider_id, unit.design_id, ABSTAIN, frozenset(), raw)
    kept = []
    for n in lines:
        if 1 <= n <= unit.line_count:
            kept.append(n)
        else:
            log.warning(
                "provider %s flagged line %d outside 1..%d for %s; dropped",
                provider.provider_id, n, unit.line_count, unit.design_id,
            )
    return ProviderVerdict(provider.provider_id, unit.design_id, label, frozenset(kept), raw)


def _check_same_design(verdicts) -> str:
    ids = {v.design_id for v in verdicts}
    if len(ids) != 1:
        raise MixedDesign(f"verdicts reference multiple designs: {sorted(ids)}")
    return next(iter(ids))


def tally_verdicts(verdicts) -> dict[str, int]:
    return dict(Counter(v.module_label for v in verdicts if v.module_label != ABSTAIN))


def vote_module(verdicts: list[ProviderVerdict]) -> str:
    """Majority label: count >= ceil(N/2) wins; abstentions back nobody.

    Returns UNRESOLVED when no label reaches the threshold (or two labels tie
    at it, possible only for even N).
    """
    if len(verdicts) < 3:
        raise ValueError("majority vote needs at least 3 verdicts")
    _check_same_design(verdicts)
    tally = tally_verdicts(verdicts)
    if not tally:
        return UNRESOLVED
    threshold = math.ceil(len(verdicts) / 2)
    best = max(tally.values())
    if best < threshold:
        return UNRESOLVED
    winners = [label for label, c in tally.items() if c == best]
    if len(winners) > 1:
        return UNRESOLVED
    return winners[0]


def vote_lines(verdicts: list[ProviderVerdict], line_count: int) -> tuple[int, ...]:
    """Per-line majority flags; all zeros when the module vote is NONE/UNRESOLVED."""
    module = vote_module(verdicts)
    if module in (NONE_LABEL, UNRESOLVED):
        return (0,) * line_count
    threshold = math.ceil(len(verdicts) / 2)
    counts = Counter()
    for v in verdicts:
        counts.update(v.buggy_lines)
    return tuple(1 if counts[n] >= threshold else 0 for n in range(1, line_count + 1))


def vote_design(verdicts: list[ProviderVerdict], line_count: int) -> VoteResult:
    design_id = _check_same_design(verdicts)
    return VoteResult(
        design_id=design_id,
        final_label=vote_module(verdicts),
        line_flags=vote_lines(verdicts, line_count),
        verdicts=tuple(verdicts),
        tally=tally_verdicts(verdicts),
    )


@dataclass
class ModuleLabelSet:
    labels: dict[str, str]  # design_id -> label
    excluded_unresolved: int = 0


@dataclass
class LineLabelSet:
    labels: dict[tuple[str, int], int]  # (design_id, line_no) -> 0/1

    def positives(self) -> int:
        return sum(self.labels.values())


def build_label_dataset(units: list[DesignUnit], votes: list[VoteResult]):
    """Assemble the two training datasets from resolved votes.

    UNRESOLVED designs are excluded (and counted); every line of every included
    design gets a 0/1 row so line numbering stays aligned with the corpus.
    """
    by_id = {v.design_id: v for v in votes}
    missing = [u.design_id for u in units if u.design_id not in by_id]
    if missing:
        raise MissingVotes(missing)
    module_labels: dict[str, str] = {}
    line_labels: dict[tuple[str, int], int] = {}
    excluded = 0
    for unit in units:
        vote = by_id[unit.design_id]
        if vote.final_label == UNRESOLVED:
            excluded += 1
            continue
        module_labels[unit.design_id] = vote.final_label
        for ln in unit.lines:
            flag = vote.line_flags[ln.line_no - 1] if ln.line_no <= len(vote.line_flags) else 0
            line_labels[(unit.design_id, ln.line_no)] = flag
    return ModuleLabelSet(module_labels, excluded), LineLabelSet(line_labels)


def provider_agreement_report(verdicts: list[ProviderVerdict], gold: dict[str, str]) -> dict[str, dict]:
    """Per-provider mismatch counts against gold labels; ABSTAIN is a mismatch."""
    uncovered = {v.design_id for v in verdicts} - set(gold)
    if uncovered:
        raise MissingVotes(uncovered)
    report: dict[str, dict] = {}
    for v in verdicts:
        row = report.setdefault(v.provider_id, {"total": 0, "mismatches": 0})
        row["total"] += 1
        if v.module_label != gold[v.design_id]:
            row["mismatches"] += 1
    for row in report.values():
        row["correct_pct"] = 100.0 * (1.0 - row["mismatches"] / row["total"])
    return report


class _RateLimiter:
    """Serializes calls to one provider with a minimum spacing."""

    def __init__(self, min_interval_s: float):
        self.min_interval_s = min_interval_s
        self._lock = threading.Lock()
        self._last = 0.0

    def wait(self):
        if self.min_interval_s <= 0:
            return
        with self._lock:
            now = time.monotonic()
            delay = self._last + self.min_interval_s - now
            if delay > 0:
                time.sleep(delay)
            self._last = time.monotonic()


def label_corpus(
    providers: list,
    units: list[DesignUnit],
    labels: tuple[str, ...],
    template: str = DEFAULT_PROMPT_TEMPLATE,
    max_workers: int = 4,
    min_interval_s: float = 0.0,
) -> list[VoteResult]:
    """Query every provider about every design and resolve votes.

    Designs fan out across a bounded worker pool; each provider is throttled
    independently. Results come back sorted by design_id regardless of
    completion order.
    """
    limiters = {p.provider_id: _RateLimiter(min_interval_s) for p in providers}

    def one_design(unit: DesignUnit) -> VoteResult:
        verdicts = []
        for p in providers:
            limiters[p.provider_id].wait()
            verdicts.append(query_provider(p, unit, labels, template))
        return vote_design(verdicts, unit.line_count)

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        results = list(pool.map(one_design, units))
    return sorted(results, key=lambda r: r.design_id)


# --- on-disk formats (see FORMATS.md) ---

def save_vote_log(votes: list[VoteResult], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for v in votes:
            rec = {
                "design_id": v.design_id,
                "final_label": v.final_label,
                "line_flags": list(v.line_flags),
                "tally": dict(sorted(v.tally.items())),
                "verdicts": [
                    {
                        "provider_id": p.provider_id,
                        "module_label": p.module_label,
                        "buggy_lines": sorted(p.buggy_lines),
                        "raw_response": p.raw_response,
                    }
                    for p in v.verdicts
                ],
            }
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def load_vote_log(path) -> list[VoteResult]:
    votes = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            verdicts = tuple(
                ProviderVerdict(
                    p["provider_id"],
                    rec["design_id"],
                    p["module_label"],
                    frozenset(p["buggy_lines"]),
                    p["raw_response"],
                )
                for p in rec["verdicts"]
            )
            votes.append(
                VoteResult(
                    rec["design_id"],
                    rec["final_label"],
                    tuple(rec["line_flags"]),
                    verdicts,
                    rec["tally"],
                )
            )
    return votes


def save_module_labels(labels: ModuleLabelSet, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"excluded_unresolved": labels.excluded_unresolved}) + "\n")
        for design_id in sorted(labels.labels):
            f.write(json.dumps({"design_id": design_id, "label": labels.labels[design_id]}) + "\n")


def load_module_labels(path) -> ModuleLabelSet:
    with open(path, "r", encoding="utf-8") as f:
        header = json.loads(f.readline())
        labels = {}
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            labels[rec["design_id"]] = rec["label"]
    return ModuleLabelSet(labels, header.get("excluded_unresolved", 0))


def save_line_labels(labels: LineLabelSet, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for (design_id, line_no) in sorted(labels.labels):
            f.write(
                json.dumps(
                    {"design_id": design_id, "line_no": line_no,
                     "label": labels.labels[(design_id, line_no)]}
                )
                + "\n"
            )


def load_line_labels(path) -> LineLabelSet:
    labels = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            labels[(rec["design_id"], rec["line_no"])] = rec["label"]
    return LineLabelSet(labels)


def load_provider_config(path) -> list[HttpProvider]:
    """Provider config: JSON list of {provider_id, base_url, model_name, ...}."""
    with open(path, "r", encoding="utf-8") as f:
        rows = json.load(f)
    providers = []
    for row in rows:
        providers.append(
            HttpProvider(
                provider_id=row["provider_id"],
                base_url=row["base_url"],
                model_name=row["model_name"],
                api_key_env_var=row.get("api_key_env_var", ""),
                timeout_s=row.get("timeout_s", 60.0),
                max_retries=row.get("max_retries", 2),
            )
        )
    return providers
