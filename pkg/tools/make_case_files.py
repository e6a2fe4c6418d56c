"""Regenerate the bundled feeder case files in src/vvclab/cases/.

case33 and case69 are transcriptions of the classic 12.66 kV radial test
feeders (33 buses / 3715 kW + 2300 kVar, and 69 buses / 3801.89 kW +
2694.1 kVar).  Buses are renumbered 0-based with the substation at bus 0.

case118 is a deterministic synthetic stand-in: published transcriptions of
the 118-bus feeder vary and none could be pinned verbatim, so we generate
a radial 11 kV feeder with comparable size (118 buses, ~22.7 MW / ~17.0
MVar) and commit the frozen JSON.  Experiments on it are supported but not
part of the validation gates.
"""

import json
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parent.parent / "src" / "vvclab" / "cases"

# from, to, r_ohm, x_ohm (1-based bus numbers)
BRANCH33 = [
    (1, 2, 0.0922, 0.0470), (2, 3, 0.4930, 0.2511), (3, 4, 0.3660, 0.1864),
    (4, 5, 0.3811, 0.1941), (5, 6, 0.8190, 0.7070), (6, 7, 0.1872, 0.6188),
    (7, 8, 0.7114, 0.2351), (8, 9, 1.0300, 0.7400), (9, 10, 1.0440, 0.7400),
    (10, 11, 0.1966, 0.0650), (11, 12, 0.3744, 0.1238), (12, 13, 1.4680, 1.1550),
    (13, 14, 0.5416, 0.7129), (14, 15, 0.5910, 0.5260), (15, 16, 0.7463, 0.5450),
    (16, 17, 1.2890, 1.7210), (17, 18, 0.7320, 0.5740), (2, 19, 0.1640, 0.1565),
    (19, 20, 1.5042, 1.3554), (20, 21, 0.4095, 0.4784), (21, 22, 0.7089, 0.9373),
    (3, 23, 0.4512, 0.3083), (23, 24, 0.8980, 0.7091), (24, 25, 0.8960, 0.7011),
    (6, 26, 0.2030, 0.1034), (26, 27, 0.2842, 0.1447), (27, 28, 1.0590, 0.9337),
    (28, 29, 0.8042, 0.7006), (29, 30, 0.5075, 0.2585), (30, 31, 0.9744, 0.9630),
    (31, 32, 0.3105, 0.3619), (32, 33, 0.3410, 0.5302),
]

# bus -> (kW, kVar), 1-based; omitted buses carry no load
LOAD33 = {
    2: (100, 60), 3: (90, 40), 4: (120, 80), 5: (60, 30), 6: (60, 20),
    7: (200, 100), 8: (200, 100), 9: (60, 20), 10: (60, 20), 11: (45, 30),
    12: (60, 35), 13: (60, 35), 14: (120, 80), 15: (60, 10), 16: (60, 20),
    17: (60, 20), 18: (90, 40), 19: (90, 40), 20: (90, 40), 21: (90, 40),
    22: (90, 40), 23: (90, 50), 24: (420, 200), 25: (420, 200), 26: (60, 25),
    27: (60, 25), 28: (60, 20), 29: (120, 70), 30: (200, 600), 31: (150, 70),
    32: (210, 100), 33: (60, 40),
}

DEVICES33 = [
    {"kind": "iber", "bus": 17, "s_mva": 2.0, "p_max_mw": 1.5},
    {"kind": "iber", "bus": 21, "s_mva": 2.0, "p_max_mw": 1.5},
    {"kind": "iber", "bus": 24, "s_mva": 2.0, "p_max_mw": 1.5},
    {"kind": "svc", "bus": 32, "s_mva": 2.0, "q_min_mvar": 0.0, "q_max_mvar": 2.0},
]

BRANCH69 = [
    (1, 2, 0.0005, 0.0012), (2, 3, 0.0005, 0.0012), (3, 4, 0.0015, 0.0036),
    (4, 5, 0.0251, 0.0294), (5, 6, 0.3660, 0.1864), (6, 7, 0.3811, 0.1941),
    (7, 8, 0.0922, 0.0470), (8, 9, 0.0493, 0.0251), (9, 10, 0.8190, 0.2707),
    (10, 11, 0.1872, 0.0619), (11, 12, 0.7114, 0.2351), (12, 13, 1.0300, 0.3400),
    (13, 14, 1.0440, 0.3450), (14, 15, 1.0580, 0.3496), (15, 16, 0.1966, 0.0650),
    (16, 17, 0.3744, 0.1238), (17, 18, 0.0047, 0.0016), (18, 19, 0.3276, 0.1083),
    (19, 20, 0.2106, 0.0690), (20, 21, 0.3416, 0.1129), (21, 22, 0.0140, 0.0046),
    (22, 23, 0.1591, 0.0526), (23, 24, 0.3463, 0.1145), (24, 25, 0.7488, 0.2475),
    (25, 26, 0.3089, 0.1021), (26, 27, 0.1732, 0.0572), (3, 28, 0.0044, 0.0108),
    (28, 29, 0.0640, 0.1565), (29, 30, 0.3978, 0.1315), (30, 31, 0.0702, 0.0232),
    (31, 32, 0.3510, 0.1160), (32, 33, 0.8390, 0.2816), (33, 34, 1.7080, 0.5646),
    (34, 35, 1.4740, 0.4873), (3, 36, 0.0044, 0.0108), (36, 37, 0.0640, 0.1565),
    (37, 38, 0.1053, 0.1230), (38, 39, 0.0304, 0.0355), (39, 40, 0.0018, 0.0021),
    (40, 41, 0.7283, 0.8509), (41, 42, 0.3100, 0.3623), (42, 43, 0.0410, 0.0478),
    (43, 44, 0.0092, 0.0116), (44, 45, 0.1089, 0.1373), (45, 46, 0.0009, 0.0012),
    (4, 47, 0.0034, 0.0084), (47, 48, 0.0851, 0.2083), (48, 49, 0.2898, 0.7091),
    (49, 50, 0.0822, 0.2011), (8, 51, 0.0928, 0.0473), (51, 52, 0.3319, 0.1114),
    (9, 53, 0.1740, 0.0886), (53, 54, 0.2030, 0.1034), (54, 55, 0.2842, 0.1447),
    (55, 56, 0.2813, 0.1433), (56, 57, 1.5900, 0.5337), (57, 58, 0.7837, 0.2630),
    (58, 59, 0.3042, 0.1006), (59, 60, 0.3861, 0.1172), (60, 61, 0.5075, 0.2585),
    (61, 62, 0.0974, 0.0496), (62, 63, 0.1450, 0.0738), (63, 64, 0.7105, 0.3619),
    (64, 65, 1.0410, 0.5302), (11, 66, 0.2012, 0.0611), (66, 67, 0.0047, 0.0014),
    (12, 68, 0.7394, 0.2444), (68, 69, 0.0047, 0.0016),
]

LOAD69 = {
    6: (2.6, 2.2), 7: (40.4, 30.0), 8: (75.0, 54.0), 9: (30.0, 22.0),
    10: (28.0, 19.0), 11: (145.0, 104.0), 12: (145.0, 104.0), 13: (8.0, 5.0),
    14: (8.0, 5.5), 16: (45.5, 30.0), 17: (60.0, 35.0), 18: (60.0, 35.0),
    20: (1.0, 0.6), 21: (114.0, 81.0), 22: (5.0, 3.5), 24: (28.0, 20.0),
    26: (14.0, 10.0), 27: (14.0, 10.0), 28: (26.0, 18.6), 29: (26.0, 18.6),
    33: (14.0, 10.0), 34: (19.5, 14.0), 35: (6.0, 4.0), 36: (26.0, 18.55),
    37: (26.0, 18.55), 39: (24.0, 17.0), 40: (24.0, 17.0), 41: (1.2, 1.0),
    43: (6.0, 4.3), 45: (39.22, 26.3), 46: (39.22, 26.3), 48: (79.0, 56.4),
    49: (384.7, 274.5), 50: (384.7, 274.5), 51: (40.5, 28.3), 52: (3.6, 2.7),
    53: (4.35, 3.5), 54: (26.4, 19.0), 55: (24.0, 17.2), 59: (100.0, 72.0),
    61: (1244.0, 888.0), 62: (32.0, 23.0), 64: (227.0, 162.0), 65: (59.0, 42.0),
    66: (18.0, 13.0), 67: (18.0, 13.0), 68: (28.0, 20.0), 69: (28.0, 20.0),
}

DEVICES69 = [
    {"kind": "iber", "bus": 5, "s_mva": 2.0, "p_max_mw": 1.5},
    {"kind": "iber", "bus": 22, "s_mva": 2.0, "p_max_mw": 1.5},
    {"kind": "iber", "bus": 44, "s_mva": 2.0, "p_max_mw": 1.5},
    {"kind": "iber", "bus": 63, "s_mva": 2.0, "p_max_mw": 1.5},
    {"kind": "svc", "bus": 13, "s_mva": 2.0, "q_min_mvar": 0.0, "q_max_mvar": 2.0},
]

DEVICES118 = [
    {"kind": "iber", "bus": b, "s_mva": 2.0, "p_max_mw": 1.5}
    for b in (33, 50, 53, 68, 74, 97, 107, 111)
] + [
    {"kind": "svc", "bus": 44, "s_mva": 2.0, "q_min_mvar": 0.0, "q_max_mvar": 2.0},
    {"kind": "svc", "bus": 104, "s_mva": 2.0, "q_min_mvar": 0.0, "q_max_mvar": 2.0},
]


def case_obj(base_kv, branches_1b, loads_1b, n_bus, devices):
    buses = []
    for b in range(1, n_bus + 1):
        p, q = loads_1b.get(b, (0.0, 0.0))
        buses.append({"id": b - 1, "load_p_mw": p / 1000.0, "load_q_mvar": q / 1000.0})
    branches = [
        {"from": f - 1, "to": t - 1, "r_ohm": r, "x_ohm": x}
        for f, t, r, x in branches_1b
    ]
    return {
        "base_mva": 10.0,
        "base_kv": base_kv,
        "slack_bus": 0,
        "buses": buses,
        "branches": branches,
        "devices": devices,
    }


def synth_case118():
    """Deterministic synthetic 118-bus feeder (see module docstring)."""
    rng = np.random.default_rng(118)
    n = 118
    branches = []
    # stiff trunk 0..34 (cables near the substation), then laterals
    # hanging off trunk buses round-robin
    trunk = list(range(35))
    for i in range(34):
        r = round(float(rng.uniform(0.005, 0.02)), 4)
        x = round(r * float(rng.uniform(2.0, 3.0)), 4)
        branches.append((trunk[i], trunk[i + 1], r, x))
    nxt = 35
    lateral_roots = [2, 4, 7, 9, 12, 14, 17, 19, 22, 24, 27, 29, 32]
    k = 0
    while nxt < n:
        root = lateral_roots[k % len(lateral_roots)]
        k += 1
        length = int(rng.integers(4, 9))
        prev = root
        for _ in range(length):
            if nxt >= n:
                break
            r = round(float(rng.uniform(0.03, 0.14)), 4)
            x = round(r * float(rng.uniform(0.6, 1.0)), 4)
            branches.append((prev, nxt, r, x))
            prev = nxt
            nxt += 1
    # loads: lognormal-ish weights scaled to 22.7097 MW, pf from 0.75 to 0.9
    w = rng.gamma(2.0, 1.0, size=n - 1)
    p = w / w.sum() * 22709.7
    pf = rng.uniform(0.75, 0.9, size=n - 1)
    q = p * np.sqrt(1 / pf ** 2 - 1)
    q *= 17041.1 / q.sum()
    loads = {i + 2: (round(float(p[i]), 1), round(float(q[i]), 1)) for i in range(n - 1)}
    branches_1b = [(f + 1, t + 1, r, x) for f, t, r, x in branches]
    return case_obj(11.0, branches_1b, loads, n, DEVICES118)


def write(path, obj):
    # one bus/branch per line keeps diffs reviewable
    def block(items):
        return ",\n".join("    " + json.dumps(it) for it in items)

    text = (
        "{\n"
        f'  "base_mva": {obj["base_mva"]},\n'
        f'  "base_kv": {obj["base_kv"]},\n'
        f'  "slack_bus": {obj["slack_bus"]},\n'
        '  "buses": [\n' + block(obj["buses"]) + "\n  ],\n"
        '  "branches": [\n' + block(obj["branches"]) + "\n  ],\n"
        '  "devices": [\n' + block(obj["devices"]) + "\n  ]\n"
        "}\n"
    )
    path.write_text(text)
    print(f"wrote {path}")


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    write(OUT / "case33.json", case_obj(12.66, BRANCH33, LOAD33, 33, DEVICES33))
    write(OUT / "case69.json", case_obj(12.66, BRANCH69, LOAD69, 69, DEVICES69))
    write(OUT / "case118.json", synth_case118())
