#!/usr/bin/env python3
"""Convert a FEVER-style claims release into the pipeline's JSONL pair format.

Input records need: id, claim, label (SUPPORTS / REFUTES / NOT ENOUGH INFO),
and gold evidence as either
  - "evidence": FEVER's nested [[annotation_id, evidence_id, page, sent_id]]
    sets, resolved against --wiki-dir (the wiki-pages JSONL dump), or
  - "evidence_text": an already-resolved evidence string.

Flattening: the first fully-resolvable evidence set is used; its sentences
are joined by a single space. NOT ENOUGH INFO claims carry no gold evidence,
so each one is paired with evidence sampled uniformly (seeded) from the other
claims' resolved evidence.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from maple.corpus import ClaimEvidencePair, Label, save_pairs  # noqa: E402

LABEL_MAP = {
    "SUPPORTS": Label.SUPPORTS,
    "REFUTES": Label.REFUTES,
    "NOT ENOUGH INFO": Label.NOT_ENOUGH_INFO,
    "NOT_ENOUGH_INFO": Label.NOT_ENOUGH_INFO,
}


def load_wiki_sentences(wiki_dir: Path, needed_pages: set[str]) -> dict[str, dict[int, str]]:
    """Scan the wiki-pages dump once, keeping only the sentences we need."""
    pages: dict[str, dict[int, str]] = {}
    for shard in sorted(wiki_dir.glob("*.jsonl")):
        with open(shard, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                page_id = rec.get("id")
                if page_id not in needed_pages:
                    continue
                sentences: dict[int, str] = {}
                for row in rec.get("lines", "").split("\n"):
                    parts = row.split("\t")
                    if len(parts) >= 2 and parts[0].isdigit():
                        sentences[int(parts[0])] = parts[1]
                pages[page_id] = sentences
    return pages


def resolve_evidence(record: dict, pages: dict[str, dict[int, str]]) -> str | None:
    if "evidence_text" in record:
        text = str(record["evidence_text"]).strip()
        return text or None
    for evidence_set in record.get("evidence") or []:
        sentences = []
        for item in evidence_set:
            page, sent_id = item[2], item[3]
            if page is None or sent_id is None:
                sentences = []
                break
            text = pages.get(page, {}).get(int(sent_id))
            if not text:
                sentences = []
                break
            sentences.append(text)
        if sentences:
            return " ".join(sentences)
    return None


def convert(claims_path: Path, wiki_dir: Path | None, seed: int) -> list[ClaimEvidencePair]:
    records = []
    with open(claims_path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))

    needed = {
        item[2]
        for rec in records
        for evidence_set in (rec.get("evidence") or [])
        for item in evidence_set
        if len(item) >= 4 and item[2] is not None
    }
    pages = load_wiki_sentences(wiki_dir, needed) if wiki_dir else {}

    resolved: list[tuple[dict, str | None]] = []
    evidence_bank: list[str] = []
    for rec in records:
        label = LABEL_MAP.get(rec.get("label", ""))
        if label is None:
            print(f"skipping {rec.get('id')}: unknown label {rec.get('label')!r}", file=sys.stderr)
            continue
        if label is Label.NOT_ENOUGH_INFO:
            resolved.append((rec, None))
            continue
        text = resolve_evidence(rec, pages)
        if text is None:
            print(f"skipping {rec.get('id')}: unresolvable evidence", file=sys.stderr)
            continue
        resolved.append((rec, text))
        evidence_bank.append(text)

    if not evidence_bank:
        raise SystemExit("no resolvable evidence; cannot pair NOT ENOUGH INFO claims")

    rng = random.Random(seed)
    pairs = []
    for rec, text in resolved:
        label = LABEL_MAP[rec["label"]]
        if text is None:
            text = rng.choice(evidence_bank)
        pairs.append(
            ClaimEvidencePair(
                id=str(rec["id"]), claim=rec["claim"], evidence=text, label=label
            )
        )
    return pairs


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--claims", required=True, type=Path, help="FEVER claims JSONL")
    ap.add_argument("--wiki-dir", type=Path, default=None, help="wiki-pages dump directory")
    ap.add_argument("--out", required=True, type=Path, help="output pair file")
    ap.add_argument("--seed", type=int, default=42, help="seed for NEI evidence pairing")
    args = ap.parse_args()
    pairs = convert(args.claims, args.wiki_dir, args.seed)
    save_pairs(pairs, args.out)
    print(f"wrote {len(pairs)} pairs -> {args.out}")


if __name__ == "__main__":
    main()
