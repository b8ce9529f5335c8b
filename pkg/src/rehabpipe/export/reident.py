"""Clinic-side re-identification CLI.

Runs where the pseudonym table lives (the clinic), never in the compute
core: annotates a bundle's entries with local identifiers via the clinical
key table.

    reident --bundle out.json --table pseudonyms.csv --out annotated.json
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from rehabpipe.export.bundle import entry_to_observation
from rehabpipe.privacy import load_pseudonym_table, reidentify


def reidentify_bundle(bundle: dict, table_entries) -> tuple[dict, int]:
    observations = [entry_to_observation(e["resource"]) for e in bundle["entry"]]
    annotated, unknown = reidentify(observations, table_entries)
    out = json.loads(json.dumps(bundle))  # deep copy
    for entry, ann in zip(out["entry"], annotated):
        if ann.local_id is not None:
            entry["resource"]["subject"]["display"] = ann.local_id
    out["reidentified"] = True
    out["unknown_pseudonyms"] = unknown
    return out, unknown


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="reident")
    parser.add_argument("--bundle", required=True)
    parser.add_argument("--table", required=True)
    parser.add_argument("--out", required=True)
    args = parser.parse_args(argv)

    bundle = json.loads(Path(args.bundle).read_text())
    table = load_pseudonym_table(args.table)
    annotated, unknown = reidentify_bundle(bundle, table)
    Path(args.out).write_text(json.dumps(annotated, indent=2))
    if unknown:
        print(f"warning: {unknown} observation(s) with unknown pseudonyms",
              file=sys.stderr)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
