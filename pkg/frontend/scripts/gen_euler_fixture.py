"""Regenerate fixtures/euler_cases.json from the engine's Euler convention.

Run from the repository root:  python3 frontend/scripts/gen_euler_fixture.py
"""
import json
import os

import numpy as np

from gsavatar import quat

rng = np.random.default_rng(20240612)
cases = []
for _ in range(100):
    deg = rng.uniform(-180.0, 180.0, 3)
    q = quat.from_euler_xyz(np.deg2rad(deg))
    cases.append({"deg": [float(v) for v in deg], "quat": [float(v) for v in q]})

out = os.path.join(os.path.dirname(__file__), "..", "fixtures", "euler_cases.json")
with open(out, "w", encoding="utf-8") as f:
    json.dump(cases, f, indent=1)
    f.write("\n")
print(f"wrote {len(cases)} cases to {out}")
