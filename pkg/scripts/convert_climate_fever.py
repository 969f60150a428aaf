#!/usr/bin/env python3
"""Convert the climate-fever release into the pipeline's JSONL pair format.

Each input record holds a claim plus several annotated evidence sentences;
every (claim, evidence) annotation becomes one pair, labeled with the
evidence-level label.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from maple.corpus import ClaimEvidencePair, Label, save_pairs  # noqa: E402

LABEL_MAP = {
    "SUPPORTS": Label.SUPPORTS,
    "REFUTES": Label.REFUTES,
    "NOT_ENOUGH_INFO": Label.NOT_ENOUGH_INFO,
}


def convert(claims_path: Path) -> list[ClaimEvidencePair]:
    pairs = []
    with open(claims_path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            claim_id = rec["claim_id"]
            for j, ev in enumerate(rec.get("evidences", [])):
                label = LABEL_MAP.get(ev.get("evidence_label", ""))
                if label is None:
                    print(
                        f"skipping {claim_id}-{j}: unknown label "
                        f"{ev.get('evidence_label')!r}",
                        file=sys.stderr,
                    )
                    continue
                pairs.append(
                    ClaimEvidencePair(
                        id=f"{claim_id}-{j}",
                        claim=rec["claim"],
                        evidence=ev["evidence"],
                        label=label,
                    )
                )
    return pairs


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--claims", required=True, type=Path, help="climate-fever JSONL")
    ap.add_argument("--out", required=True, type=Path)
    args = ap.parse_args()
    pairs = convert(args.claims)
    save_pairs(pairs, args.out)
    print(f"wrote {len(pairs)} pairs -> {args.out}")


if __name__ == "__main__":
    main()
