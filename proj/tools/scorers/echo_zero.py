#!/usr/bin/env python3
"""Stub scorer: returns 0.0 for every sample.

Request lines:  id<TAB>dim<TAB>v1,v2,...
Response lines: id<TAB>score
"""
import sys

request, response = sys.argv[1], sys.argv[2]
with open(request) as f, open(response, "w") as out:
    for line in f:
        if not line.strip():
            continue
        sample_id = line.split("\t")[0]
        out.write(f"{sample_id}\t0.0\n")
