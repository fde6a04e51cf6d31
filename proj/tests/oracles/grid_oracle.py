# Copyright 2026 The fedrd Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
# ==============================================================================
"""Grid-search reference for the two-device fixture.

Writes tests/fixtures/m2_rho09_oracle.json. Run from the repository root:
    python3 tests/oracles/grid_oracle.py
"""

import json
import pathlib

import numpy as np

RHO = 0.9
C = np.array([0.5, 0.5])
R = np.array([1.0, 1.0])
SIGMA = np.array([[1.0, RHO], [RHO, 1.0]])


def info(q1, q2):
    """Required rates for S = {1}, {2}, {1,2}; vectorized over q1, q2."""
    d = (1 + q1) * (1 + q2) - RHO**2
    i1 = 0.5 * np.log2(d / ((1 + q2) * q1))
    i2 = 0.5 * np.log2(d / ((1 + q1) * q2))
    i12 = 0.5 * np.log2(d / (q1 * q2))
    return i1, i2, i12


def distortion(q1, q2):
    u = SIGMA + np.diag([q1, q2])
    s = SIGMA @ C
    return C @ SIGMA @ C - s @ np.linalg.solve(u, s)


def smallest_q2(q1):
    """Smallest q2 meeting the constraints that contain device 2."""
    def ok(q2):
        _, i2, i12 = info(q1, q2)
        return i2 <= R[1] and i12 <= R[0] + R[1]

    lo, hi = 1e-12, 1.0
    while not ok(hi):
        hi *= 2
        if hi > 1e12:
            return None
    for _ in range(200):
        mid = np.sqrt(lo * hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def search(lo, hi, points=200):
    best = (np.inf, None)
    for q1 in np.exp(np.linspace(np.log(lo), np.log(hi), points)):
        q2 = smallest_q2(q1)
        if q2 is None:
            continue
        i1, _, _ = info(q1, q2)
        if i1 > R[0] + 1e-9:
            continue
        d = distortion(q1, q2)
        if d < best[0]:
            best = (d, (q1, q2))
    return best


def main():
    lo, hi = 1e-4, 1e2
    best = search(lo, hi)
    for _ in range(3):
        step = (np.log(hi) - np.log(lo)) / 199
        c = np.log(best[1][0])
        lo, hi = np.exp(c - 2 * step), np.exp(c + 2 * step)
        best = search(lo, hi)
    out = {
        "model": {"M": 2, "sigma_x": [1.0, RHO, RHO, 1.0], "c": list(C)},
        "budget": list(R),
        "D_star": float(best[0]),
        "q_star": [float(best[1][0]), float(best[1][1])],
        "method": "log grid 200 points on q1 with 3 zooms, bisection on q2",
    }
    path = pathlib.Path(__file__).resolve().parent.parent / "fixtures" / "m2_rho09_oracle.json"
    path.write_text(json.dumps(out, indent=2) + "\n")
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
