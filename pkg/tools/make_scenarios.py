"""Regenerate the bundled scenario files under src/spatial_planner/scenarios/."""
from __future__ import annotations

import json
import math
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "spatial_planner" / "scenarios"


def r(p):
    return [round(p[0], 4), round(p[1], 4)]


def straight(x0, x1, step=5.0, y=0.0):
    n = int(round((x1 - x0) / step))
    return [r((x0 + i * step, y)) for i in range(n + 1)]


def merge_reference(radius=40.0, approach_deg=60.0, conflict_s=44.5, lane_offset=3.5, x_end=250.0,
                    bend_radius=None, bend_deg=45.0, bend_start=10.0):
    """Left-turn merge onto the x-axis crossing the oncoming lane at ``y = lane_offset``.

    The side road descends at ``approach_deg`` and bends onto the x-axis,
    joining it tangentially at the origin; the crossing of the oncoming lane
    sits at arc length ``conflict_s``. Returns the points and the arc length
    of the origin. With ``bend_radius`` the main road bends right after
    ``bend_start`` metres past the origin.
    """
    th = math.radians(approach_deg)
    phi_c = math.acos(1.0 - lane_offset / radius)
    if phi_c >= th:
        raise ValueError("the oncoming lane must be crossed on the arc")
    arc_len = radius * th
    merge_s = conflict_s + radius * phi_c
    straight_len = merge_s - arc_len
    if straight_len <= 0.0:
        raise ValueError("the arc before the crossing is longer than conflict_s")
    ax, ay = -radius * math.sin(th), radius - radius * math.cos(th)
    sx, sy = ax - straight_len * math.cos(th), ay + straight_len * math.sin(th)
    pts = [r((sx, sy))]
    n_arc = 30
    for i in range(n_arc + 1):
        phi = th * (1 - i / n_arc)
        pts.append(r((-radius * math.sin(phi), radius - radius * math.cos(phi))))
    if bend_radius is None:
        pts += straight(5.0, x_end)
    else:
        pts += straight(5.0, bend_start)
        b = math.radians(bend_deg)
        n_bend = 30
        for i in range(1, n_bend + 1):
            phi = b * i / n_bend
            pts.append(r((bend_start + bend_radius * math.sin(phi), -bend_radius + bend_radius * math.cos(phi))))
        ex, ey = bend_start + bend_radius * math.sin(b), -bend_radius + bend_radius * math.cos(b)
        for i in range(1, int((x_end - ex) / 5.0) + 1):
            pts.append(r((ex + 5.0 * i * math.cos(b), ey - 5.0 * i * math.sin(b))))
    return pts, merge_s, -radius * math.sin(phi_c)


def write(name, doc):
    OUT.mkdir(parents=True, exist_ok=True)
    (OUT / f"{name}.json").write_text(json.dumps(doc, indent=2) + "\n")


def main():
    v_lg = 11.11
    # the unconstrained ego reaches the crossing at about 4.55 s; the actor is there 0.4 s earlier
    t_conflict_actor = 4.15
    lane = 3.5
    points, merge_s, x_conflict = merge_reference(lane_offset=lane, bend_radius=25.0, bend_start=0.0, bend_deg=45.0)
    write("fig1_merge_light", {
        "name": "fig1_merge_light",
        "description": "Ego turns onto a main road, yielding to oncoming traffic, then must pass a light before it turns red.",
        "reference": {"points": points},
        "speed_limits": [{"v": v_lg}],
        "actors": [{
            "name": "priority",
            "path": [[300.0, lane], [-300.0, lane]],
            "s0": 300.0 - (x_conflict + v_lg * t_conflict_actor),
            "v": v_lg,
        }],
        "signals": [{"name": "light", "s": 114.5,
                     "schedule": [{"t": 0.0, "state": "green"}, {"t": 11.0, "state": "yellow"},
                                  {"t": 14.0, "state": "red"}]}],
        "spatiotemporal": [
            {"name": "merge", "kind": "min", "s": 44.5, "t": 5.75},
            {"name": "light", "kind": "max", "s": 114.5, "t": 14.0},
        ],
        "ego": {"s": 0.0, "v": v_lg},
        "sim": {"duration": 20.0, "constraint_set": "tmin_tmax"},
    })
    write("stop_line", {
        "name": "stop_line",
        "description": "Red light that never turns green.",
        "reference": {"points": straight(0.0, 300.0, step=10.0)},
        "speed_limits": [{"v": 13.89}],
        "signals": [{"name": "stop", "s": 100.0, "schedule": [{"t": 0.0, "state": "red"}]}],
        "ego": {"s": 0.0, "v": 10.0},
        "sim": {"duration": 25.0, "constraint_set": "none"},
    })
    write("leader_follow", {
        "name": "leader_follow",
        "description": "Constant-speed leader slower than the legal limit.",
        "reference": {"points": straight(0.0, 800.0, step=20.0)},
        "speed_limits": [{"v": 13.89}],
        "actors": [{"name": "leader", "s0": 40.0, "v": 5.0}],
        "ego": {"s": 0.0, "v": 10.0},
        "sim": {"duration": 40.0, "constraint_set": "none"},
    })
    write("cut_in", {
        "name": "cut_in",
        "description": "A slower vehicle appears inside the safety distance mid-run.",
        "reference": {"points": straight(0.0, 600.0, step=20.0)},
        "speed_limits": [{"v": 13.89}],
        "actors": [{"name": "cut_in", "s0": 12.0, "v": 8.0, "spawn_time": 8.0, "relative": True}],
        "ego": {"s": 0.0, "v": 10.0},
        "sim": {"duration": 20.0, "constraint_set": "none"},
    })
    write("noisy_line", {
        "name": "noisy_line",
        "description": "Straight reference corrupted with Gaussian vertex noise.",
        "reference": {"points": straight(0.0, 400.0, step=50.0), "noise_sigma": 0.1, "seed": 7},
        "speed_limits": [{"v": 13.89}],
        "ego": {"s": 0.0, "v": 10.0},
        "sim": {"duration": 15.0, "constraint_set": "none"},
    })


if __name__ == "__main__":
    main()
