#!/usr/bin/env python3
"""Regenerates the sample datasets in this directory. Deterministic."""

import datetime
import json
import math
from pathlib import Path

HERE = Path(__file__).resolve().parent
T0 = 1673612340000  # 2023-01-13T12:19:00Z


def fmt(x):
    return f"{x:.4f}".rstrip("0").rstrip(".") if x != 0 else "0"


def ecg(path, rate=250, seconds=12):
    step = 1000 // rate
    lines = ["t,mv"]
    for i in range(rate * seconds):
        s = i / rate
        phase = (s * 1.2) % 1.0  # 72 bpm
        beat = 1.1 * math.exp(-((phase - 0.30) / 0.012) ** 2)
        beat += 0.15 * math.exp(-((phase - 0.55) / 0.05) ** 2) - 0.12 * math.exp(-((phase - 0.27) / 0.01) ** 2)
        wander = 0.05 * math.sin(2 * math.pi * 0.3 * s)
        lines.append(f"{T0 + i * step},{fmt(beat + wander)}")
    path.write_text("\n".join(lines) + "\n")


def pupil(path, n=100):
    # 10 Hz, two eyes; blinks show up as NA cells.
    lines = ["t,left_mm,right_mm"]
    for i in range(n):
        left = 3.2 + 0.4 * math.sin(i / 9.0)
        right = 3.1 + 0.4 * math.sin(i / 9.0 + 0.2)
        l = "NA" if i % 17 == 5 else fmt(left)
        r = "NA" if i % 23 == 11 else fmt(right)
        lines.append(f"{T0 + i * 100},{l},{r}")
    path.write_text("\n".join(lines) + "\n")


def markers(path, n=20):
    # 2 Hz JSON dataset with ISO-8601 timestamps.
    recs = []
    for i in range(n):
        ms = T0 + i * 500
        secs, milli = divmod(ms, 1000)
        iso = datetime.datetime.fromtimestamp(secs, datetime.timezone.utc).strftime("%Y-%m-%dT%H:%M:%S")
        recs.append({"t": f"{iso}.{milli:03d}Z", "values": [i % 4]})
    path.write_text("[\n" + ",\n".join(json.dumps(r, separators=(",", ":")) for r in recs) + "\n]\n")


def mouse(path, n=100):
    lines = ["t,x,y"]
    for i in range(n):
        lines.append(f"{T0 + i * 20},{fmt(640 + 200 * math.cos(i / 15))},{fmt(360 + 120 * math.sin(i / 15))}")
    path.write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    ecg(HERE / "ecg.csv")
    pupil(HERE / "pupil.csv")
    markers(HERE / "markers.json")
    mouse(HERE / "mouse.csv")
