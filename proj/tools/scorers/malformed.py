#!/usr/bin/env python3
"""Faulty scorer: writes lines that do not match the protocol."""
import sys

with open(sys.argv[2], "w") as out:
    out.write("this is not a score line\n")
