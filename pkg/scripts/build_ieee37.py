"""Generate ``src/voltsense/data/ieee37.json`` from IEEE 37-node feeder tables.

Single-phase positive-sequence conversion:

* per-mile impedance of each cable configuration = self minus mean mutual
  impedance of the published phase matrices;
* spot loads summed over phases;
* the in-line transformer XFM-1 (500 kVA, 0.09 + j1.81 %) kept as a branch;
* node 775 (no load in the original) given a small load so every branch
  carries flow;
* per-unit on 4.8 kV / 2.5 MVA, then impedances scaled by IMPEDANCE_SCALE
  and loads by LOAD_SCALE. Without the substation regulator the far end
  sags to about 0.93 p.u.; the scales are chosen so that the 200/300/250 kVAr
  DERs can lift it back to 0.95 p.u. both before and after the line (3, 23)
  impedance doubles, with the 300 kVAr unit saturating first.

Buses are renumbered so that the trunk line 703 -> 730 is line (3, 23) and
the DER hosts 709, 738 and 710 become buses 8, 11 and 27.

Run from the repository root: ``python scripts/build_ieee37.py``.
"""

import json
from pathlib import Path

KV = 4.8
MVA = 2.5
Z_BASE = KV ** 2 / MVA
IMPEDANCE_SCALE = 2.34
LOAD_SCALE = 0.667

# positive-sequence ohm/mile
CONFIGS = {
    "721": (0.2365, 0.2357),
    "722": (0.3254, 0.3393),
    "723": (0.8160, 0.4800),
    "724": (1.5840, 0.5225),
}
# XFM-1 series impedance on its own 500 kVA base
XFM = (0.0009, 0.0181)
XFM_MVA = 0.5

SEGMENTS = [
    ("799", "701", 1850, "721"),
    ("701", "702", 960, "722"),
    ("702", "705", 400, "724"),
    ("702", "713", 360, "723"),
    ("702", "703", 1320, "722"),
    ("703", "727", 240, "724"),
    ("703", "730", 600, "723"),
    ("704", "714", 80, "724"),
    ("704", "720", 800, "723"),
    ("705", "742", 320, "724"),
    ("705", "712", 240, "724"),
    ("706", "725", 280, "724"),
    ("707", "724", 760, "724"),
    ("707", "722", 120, "724"),
    ("708", "733", 320, "723"),
    ("708", "732", 320, "724"),
    ("709", "731", 600, "723"),
    ("709", "708", 320, "723"),
    ("710", "735", 200, "724"),
    ("710", "736", 1280, "724"),
    ("711", "741", 400, "723"),
    ("711", "740", 200, "724"),
    ("713", "704", 520, "723"),
    ("714", "718", 520, "724"),
    ("720", "707", 920, "724"),
    ("720", "706", 600, "723"),
    ("727", "744", 280, "723"),
    ("730", "709", 200, "723"),
    ("733", "734", 560, "723"),
    ("734", "737", 640, "723"),
    ("734", "710", 520, "724"),
    ("737", "738", 400, "723"),
    ("738", "711", 400, "723"),
    ("744", "728", 200, "724"),
    ("744", "729", 280, "724"),
    ("709", "775", 0, "XFM-1"),
]

# kW, kVAr summed over phases
LOADS = {
    "701": (630, 315), "712": (85, 40), "713": (85, 40), "714": (38, 18),
    "718": (85, 40), "720": (85, 40), "722": (161, 80), "724": (42, 21),
    "725": (42, 21), "727": (42, 21), "728": (126, 63), "729": (42, 21),
    "730": (85, 40), "731": (85, 40), "732": (42, 21), "733": (85, 40),
    "734": (42, 21), "735": (85, 40), "736": (42, 21), "737": (140, 70),
    "738": (126, 62), "740": (85, 40), "741": (42, 21), "742": (93, 44),
    "744": (42, 21), "775": (40, 20),
}

ORDER = [
    "799", "701", "702", "703", "705", "742", "712", "713", "709", "704",
    "714", "738", "718", "720", "706", "725", "707", "722", "724", "727",
    "744", "728", "729", "730", "775", "731", "708", "710", "732", "733",
    "734", "737", "711", "740", "741", "735", "736",
]

# bus name -> (q_min, q_max) in kVAr; no active power
DERS = {"709": (0.0, 200.0), "738": (0.0, 300.0), "710": (0.0, 250.0)}


def build():
    num = {name: i for i, name in enumerate(ORDER)}
    parent = {}
    for a, b, length, cfg in SEGMENTS:
        if cfg == "XFM-1":
            zr, zx = XFM[0] * MVA / XFM_MVA, XFM[1] * MVA / XFM_MVA
        else:
            miles = length / 5280.0
            zr = CONFIGS[cfg][0] * miles / Z_BASE
            zx = CONFIGS[cfg][1] * miles / Z_BASE
        parent[num[b]] = (num[a], zr * IMPEDANCE_SCALE, zx * IMPEDANCE_SCALE, a, b)

    lines = []
    for bus in range(1, len(ORDER)):
        a, r, x, na, nb = parent[bus]
        lines.append({"id": f"{na}-{nb}", "from": a, "to": bus,
                      "r_pu": round(r, 8), "x_pu": round(x, 8)})

    buses = []
    for i, name in enumerate(ORDER):
        kw, kvar = LOADS.get(name, (0, 0))
        buses.append({"id": i, "name": name,
                      "p_d0": round(kw * LOAD_SCALE / 1000 / MVA, 8),
                      "q_d0": round(kvar * LOAD_SCALE / 1000 / MVA, 8)})

    ders = [{"bus": num[name], "p_min": 0.0, "p_max": 0.0,
             "q_min": lo / 1000 / MVA, "q_max": hi / 1000 / MVA}
            for name, (lo, hi) in DERS.items()]
    ders.sort(key=lambda d: d["bus"])

    return {
        "name": "ieee37-single-phase",
        "base": {"kv": KV, "mva": MVA},
        "notes": "single-phase positive-sequence conversion of the IEEE 37-node feeder, generated by scripts/build_ieee37.py",
        "buses": buses,
        "lines": lines,
        "ders": ders,
    }


if __name__ == "__main__":
    out = Path(__file__).resolve().parents[1] / "src" / "voltsense" / "data" / "ieee37.json"
    out.write_text(json.dumps(build(), indent=2) + "\n")
    print(f"wrote {out}")
