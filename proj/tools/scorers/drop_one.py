#!/usr/bin/env python3
"""Faulty scorer: omits the first sample id (exercises the mismatch error)."""
import sys

request, response = sys.argv[1], sys.argv[2]
with open(request) as f, open(response, "w") as out:
    first = True
    for line in f:
        if not line.strip():
            continue
        if first:
            first = False
            continue
        sample_id = line.split("\t")[0]
        out.write(f"{sample_id}\t1.0\n")
