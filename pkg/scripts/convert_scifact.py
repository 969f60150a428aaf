#!/usr/bin/env python3
"""Convert SciFact claims + abstract corpus into the pipeline's pair format.

Two configurations:
  oracle     one pair per claim-document annotation; evidence is the
             annotated rationale sentences joined by a space (full abstract
             for NOINFO claims, which carry no rationales).
  retrieved  evidence is the top-3 BM25 abstracts (title-prefixed, joined by
             a single space); the pair keeps the claim's label only when a
             gold evidence document was retrieved, otherwise NOT_ENOUGH_INFO.

Claims from the train and dev releases are merged before conversion.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from maple.bm25 import BM25  # noqa: E402
from maple.corpus import ClaimEvidencePair, Label, save_pairs  # noqa: E402

LABEL_MAP = {"SUPPORT": Label.SUPPORTS, "CONTRADICT": Label.REFUTES}


def load_jsonl(path: Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def load_corpus(path: Path) -> dict[str, dict]:
    return {str(rec["doc_id"]): rec for rec in load_jsonl(path)}


def doc_text(doc: dict, with_title: bool) -> str:
    abstract = " ".join(s.strip() for s in doc.get("abstract", []))
    if with_title:
        return f"{doc.get('title', '').strip()} {abstract}".strip()
    return abstract


def convert_oracle(claims: list[dict], corpus: dict[str, dict]) -> list[ClaimEvidencePair]:
    pairs = []
    for rec in claims:
        claim_id = rec["id"]
        evidence_map = rec.get("evidence") or {}
        if evidence_map:
            for doc_id, annotations in evidence_map.items():
                doc = corpus.get(str(doc_id))
                if doc is None:
                    print(f"skipping {claim_id}/{doc_id}: missing document", file=sys.stderr)
                    continue
                label = LABEL_MAP.get(annotations[0].get("label", ""))
                if label is None:
                    continue
                sentence_ids = sorted({i for ann in annotations for i in ann["sentences"]})
                sentences = [doc["abstract"][i].strip() for i in sentence_ids]
                pairs.append(
                    ClaimEvidencePair(
                        id=f"{claim_id}-{doc_id}",
                        claim=rec["claim"],
                        evidence=" ".join(sentences),
                        label=label,
                    )
                )
        else:
            # NOINFO: no rationales; use the cited documents' abstracts
            for doc_id in rec.get("cited_doc_ids", []):
                doc = corpus.get(str(doc_id))
                if doc is None:
                    continue
                pairs.append(
                    ClaimEvidencePair(
                        id=f"{claim_id}-{doc_id}",
                        claim=rec["claim"],
                        evidence=doc_text(doc, with_title=False),
                        label=Label.NOT_ENOUGH_INFO,
                    )
                )
    return pairs


def convert_retrieved(
    claims: list[dict], corpus: dict[str, dict], k: int
) -> list[ClaimEvidencePair]:
    doc_ids = sorted(corpus)
    texts = [doc_text(corpus[doc_id], with_title=True) for doc_id in doc_ids]
    index = BM25(texts)
    out = []
    for rec in claims:
        top = index.top_k(rec["claim"], k)
        evidence = " ".join(texts[i] for i in top)
        # label survives only when retrieval found a gold evidence document
        evidence_map = rec.get("evidence") or {}
        gold_docs = {str(d) for d in evidence_map}
        if evidence_map and any(doc_ids[i] in gold_docs for i in top):
            first = next(iter(evidence_map.values()))
            label = LABEL_MAP.get(first[0].get("label", ""), Label.NOT_ENOUGH_INFO)
        else:
            label = Label.NOT_ENOUGH_INFO
        out.append(
            ClaimEvidencePair(
                id=str(rec["id"]), claim=rec["claim"], evidence=evidence, label=label
            )
        )
    return out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--claims", required=True, nargs="+", type=Path,
                    help="claim JSONL files (train and dev) to merge")
    ap.add_argument("--corpus", required=True, type=Path, help="corpus.jsonl")
    ap.add_argument("--mode", choices=["oracle", "retrieved"], default="oracle")
    ap.add_argument("--k", type=int, default=3, help="retrieved abstracts per claim")
    ap.add_argument("--out", required=True, type=Path)
    args = ap.parse_args()

    claims = [rec for path in args.claims for rec in load_jsonl(path)]
    corpus = load_corpus(args.corpus)
    if args.mode == "oracle":
        pairs = convert_oracle(claims, corpus)
    else:
        pairs = convert_retrieved(claims, corpus, args.k)
    save_pairs(pairs, args.out)
    print(f"wrote {len(pairs)} pairs -> {args.out}")


if __name__ == "__main__":
    main()
