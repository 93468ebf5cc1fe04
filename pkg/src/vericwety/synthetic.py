"""Synthetic Verilog corpus with planted, textually distinctive weakness
patterns.

Stands in for a real labeled RTL corpus in offline runs: each design is a
plausible-looking module of filler statements; buggy designs carry 1-3
planted lines whose trigram signature identifies the class. The emitted truth
table doubles as the fixture for unanimous mock label providers. Class
proportions default to a heavily skewed distribution with one rare class
below 1%.
"""
from __future__ import annotations

import argparse
import json
import math
import random
from pathlib import Path

DEFAULT_PROPORTIONS = {
    "CWE-1244": 0.380,
    "CWE-1245": 0.270,
    "NONE": 0.246,
    "CWE-321": 0.095,
    "CWE-1260": 0.009,
}

# Planted lines per class. Sensitive identifiers (vault_key_reg, mmio_base,
# fsm state nets) also appear benignly in every design, so line-level models
# cannot key on the identifier alone.
PATTERNS = {
    "CWE-1244": [
        "  assign dbg_shadow_port = vault_key_reg ^ dbg_shadow_mask; // dbg_shadow tap",
        "  assign scan_mirror_q = vault_key_reg[{hi}:{lo}] | scan_mirror_en; // mirrored secret",
        "  assign dbg_shadow_bus = {{vault_key_reg, dbg_shadow_sel}}; // widened tap",
    ],
    "CWE-1245": [
        "      next_fsm_state = 5'bxxxxx; // fall-through hole",
        "      fsm_guard_bit = 1'bx; fsm_guard_err = 1'bx; // dead guard pair",
        "      next_fsm_state = next_fsm_state ^ 5'bxxxxx; // self-feeding hole",
    ],
    "CWE-321": [
        "  localparam [127:0] CRYPT_KEY = 128'hDEADBEEFFACEFEED0BADC0DE5EC0DE55;",
        "  localparam [63:0] AUTH_SEED = 64'hC0FFEE0DDEADF00D;",
        "  localparam [95:0] CRYPT_IV = 96'hFEEDFACE0DEFACEDDEADBEEF;",
    ],
    "CWE-1260": [
        "  assign ovl_window_lo = mmio_base & 16'hFE00; // stomps locked range",
        "  assign ovl_grant_any = mmio_base | prot_limit_reg; // range fusion",
        "  assign ovl_window_hi = (mmio_base + prot_limit_reg) & 16'hFE00; // aliased span",
    ],
}

_FILLER = [
    "  assign w{a} = r{b} ^ r{c};",
    "  assign w{a} = r{b} & din;",
    "  always @(posedge clk) r{a} <= r{b} + r{c};",
    "  always @(posedge clk) if (!rst_n) r{a} <= 8'd0; else r{a} <= w{b};",
    "  wire [7:0] w{a};",
    "  reg [7:0] r{a};",
    "  assign dout_pre{a} = r{b} | 8'h{h:02x};",
    "  // stage {a} pipeline register",
    "",
    "  always @(posedge clk) r{a} <= din ^ 8'h{h:02x};",
    "  assign w{a} = (r{b} > r{c}) ? r{b} : r{c};",
]

# Benign context mentioning the sensitive nets; present in every design and
# never labeled buggy.
_CONTEXT = [
    "  always @(posedge clk) if (load_key) vault_key_reg <= {{din, din}};",
    "  always @(posedge clk) next_fsm_state <= fsm_state_q;",
    "  always @(posedge clk) mmio_base <= cfg_base_addr;",
    "  // debug note: scan chain disabled in mission mode",
]

# Decoys share much of a pattern's trigram signature but are benign; they show
# up in designs of every class, so a line-only model faces real ambiguity that
# module context can resolve.
_DECOYS = [
    "  assign dbg_shadow_port_en = ctrl_word[3]; // dbg_shadow gating",
    "  assign scan_mirror_rdy = scan_mirror_en & ctrl_word[0];",
    "      next_fsm_state = 5'b00000; // reset arm, no hole",
    "  localparam [127:0] CRYPT_KEY_ZERO = 128'h00000000000000000000000000000000;",
    "  assign ovl_window_chk = mmio_base == 16'hFE00; // window check only",
    "  assign ovl_grant_rdy = prot_limit_reg[0]; // grant handshake",
]

# Identical text in every design: counts as part of the bug surface inside a
# buggy design, benign inside a clean one. Line features alone cannot tell the
# two apart; the appended module embedding can.
_CONDITIONAL = [
    "  assign telemetry_word = {vault_key_reg[7:0], fsm_state_q}; // telemetry out",
    "  assign trace_probe_q = {mmio_base[7:0], next_fsm_state}; // trace probe",
]


def apportion(n: int, proportions: dict[str, float]) -> dict[str, int]:
    """Largest-remainder counts summing exactly to n."""
    total = sum(proportions.values())
    quotas = {lab: n * p / total for lab, p in proportions.items()}
    counts = {lab: math.floor(q) for lab, q in quotas.items()}
    leftover = n - sum(counts.values())
    for lab, _ in sorted(quotas.items(), key=lambda t: (-(t[1] - math.floor(t[1])), t[0])):
        if leftover <= 0:
            break
        counts[lab] += 1
        leftover -= 1
    return counts


def _render(template: str, rng: random.Random) -> str:
    hi = rng.randint(8, 31)
    return template.format(
        a=rng.randint(0, 9), b=rng.randint(0, 9), c=rng.randint(0, 9),
        h=rng.randint(0, 255), hi=hi, lo=rng.randint(0, hi - 1),
    )


def generate_design(name: str, label: str, rng: random.Random) -> tuple[str, list[int]]:
    """One module's source text plus the 1-based planted line numbers."""
    header = [
        f"module {name} (",
        "  input clk,",
        "  input rst_n,",
        "  input [7:0] din,",
        "  output [7:0] dout",
        ");",
        "  reg [127:0] vault_key_reg;",
        "  reg [4:0] fsm_state_q, next_fsm_state;",
        "  reg [15:0] mmio_base, prot_limit_reg;",
    ]
    body = [_render(rng.choice(_FILLER), rng) for _ in range(rng.randint(22, 44))]
    for ctx in rng.sample(_CONTEXT, k=rng.randint(2, 3)):
        body.insert(rng.randrange(len(body) + 1), ctx)
    for decoy in rng.sample(_DECOYS, k=rng.randint(0, 2)):
        body.insert(rng.randrange(len(body) + 1), decoy)
    planted_texts = []
    if label != "NONE":
        for tmpl in rng.sample(PATTERNS[label], k=rng.randint(2, 3)):
            planted_texts.append(_render(tmpl, rng))
        if rng.random() < 0.5:
            planted_texts.append(rng.choice(_CONDITIONAL))
        for text in planted_texts:
            body.insert(rng.randrange(len(body) + 1), text)
    elif rng.random() < 0.5:
        body.insert(rng.randrange(len(body) + 1), rng.choice(_CONDITIONAL))
    lines = header + body + ["  assign dout = r0;", "endmodule"]
    buggy = [i for i, text in enumerate(lines, start=1) if text in planted_texts]
    return "\n".join(lines), buggy


def generate_corpus(
    corpus_dir,
    n_designs: int = 350,
    seed: int = 0,
    proportions: dict[str, float] | None = None,
) -> dict:
    """Write .v files and return the truth table {design_id: {cwe, buggy_lines}}.

    Deterministic for a fixed seed: identical files, identical truth.
    """
    proportions = proportions or DEFAULT_PROPORTIONS
    rng = random.Random(seed)
    counts = apportion(n_designs, proportions)
    labels = [lab for lab in sorted(counts) for _ in range(counts[lab])]
    rng.shuffle(labels)
    corpus_dir = Path(corpus_dir)
    corpus_dir.mkdir(parents=True, exist_ok=True)
    truth: dict[str, dict] = {}
    for i, label in enumerate(labels):
        name = f"design_{i:04d}"
        text, buggy = generate_design(name, label, rng)
        (corpus_dir / f"{name}.v").write_text(text + "\n", encoding="utf-8")
        truth[name] = {"cwe": label, "buggy_lines": buggy}
    return truth


def save_truth(truth: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(truth, f, sort_keys=True, indent=1)


def load_truth(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="generate a synthetic labeled Verilog corpus")
    parser.add_argument("--out", required=True, help="directory for .v files")
    parser.add_argument("--truth", help="path for the truth table JSON (default <out>/../truth.json)")
    parser.add_argument("--designs", type=int, default=350)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    truth = generate_corpus(args.out, n_designs=args.designs, seed=args.seed)
    truth_path = args.truth or str(Path(args.out).parent / "truth.json")
    save_truth(truth, truth_path)
    n_buggy = sum(1 for t in truth.values() if t["cwe"] != "NONE")
    print(f"wrote {len(truth)} designs ({n_buggy} buggy) to {args.out}; truth at {truth_path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
