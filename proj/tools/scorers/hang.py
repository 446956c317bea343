#!/usr/bin/env python3
"""Faulty scorer: never responds (exercises the timeout error)."""
import time

time.sleep(3600)
