#!/usr/bin/env python3
"""Stub scorer: score = first coordinate of each sample."""
import sys

request, response = sys.argv[1], sys.argv[2]
with open(request) as f, open(response, "w") as out:
    for line in f:
        if not line.strip():
            continue
        sample_id, _dim, values = line.rstrip("\n").split("\t")
        out.write(f"{sample_id}\t{values.split(',')[0]}\n")
