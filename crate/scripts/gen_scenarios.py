#!/usr/bin/env python3
"""Regenerates the bundled desk-scale scenarios under crates/core/assets/scenarios."""

import math
import random
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent / "crates" / "core" / "assets" / "scenarios"
Z = 0.05


def pose(x, y, yaw=0.0):
    # real = (w, 0, 0, qz); dual = 0.5 * (0, t) * real
    w, qz = math.cos(0.5 * yaw), math.sin(0.5 * yaw)
    return [w, 0.0, 0.0, qz, 0.0, 0.5 * (x * w + y * qz), 0.5 * (y * w - x * qz), 0.0]


def fmt(p):
    return " ".join(f"{v:.9f}" for v in p)


def box(i, x0, y0, x1, y1):
    return f'[[obstacles]]\nid = "{i}"\nshape = "box"\nmin = [{x0}, {y0}, -{Z}]\nmax = [{x1}, {y1}, {Z}]\n'


def workcell(name, obstacles, stations, ws):
    s = f'name = "{name}"\nrobot = "desk3r"\n\n[workspace]\nmin = [{ws[0]}, {ws[1]}, 0.0]\nmax = [{ws[2]}, {ws[3]}, 0.0]\n\n'
    s += "\n".join(obstacles)
    for n, (x, y) in stations.items():
        s += f'\n[[stations]]\nname = "{n}"\nposition = [{x}, {y}, 0.0]\nrpy_deg = [0.0, 0.0, 0.0]\n'
    return s


def demo(i, tags, pts):
    return f"@demo id={i} tags={','.join(tags)}\n" + "\n".join(fmt(pose(x, y)) for x, y in pts) + "\n"


def skills():
    n = 31
    out = {}
    out["line"] = [(0.10 * k / (n - 1), 0.0) for k in range(n)]
    for name, b in (("arc_left", 0.015), ("arc_right", -0.015)):
        out[name] = [(0.10 * k / (n - 1), b * math.sin(math.pi * k / (n - 1))) for k in range(n)]
    out["s_curve"] = [(0.10 * k / (n - 1), 0.01 * math.sin(2 * math.pi * k / (n - 1))) for k in range(n)]
    out["ease"] = [(0.10 * (0.5 - 0.5 * math.cos(math.pi * k / (n - 1))), 0.0) for k in range(n)]
    return out


def task(i, pts, hold):
    lines = [f"@task id={i}"]
    for (x, y), h in zip(pts, hold):
        lines.append(fmt(pose(x, y)) + (" hold" if h else ""))
    return "\n".join(lines) + "\n"


def write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def run_toml(extra=""):
    return (
        "seed = 7\n\n[paths]\nworkcell = \"workcell.toml\"\nlibrary = \"demos\"\ntasks = \"tasks\"\n"
        "eval_tasks = \"eval\"\nout = \"out\"\n" + extra
    )


def scenario(name, obstacles, stations, ws, train, evals, extra):
    d = ROOT / name
    write(d / "workcell.toml", workcell(name, obstacles, stations, ws))
    for k, pts in skills().items():
        write(d / "demos" / f"{k}.demo", demo(k, ["planar"], pts))
    for sub, tasks in (("tasks", train), ("eval", evals)):
        for tid, pts, hold in tasks:
            write(d / sub / f"{tid}.task", task(tid, pts, hold))
    write(d / "run.toml", run_toml(extra))


TUNING = """
[map]
voxel = 0.01
clearance = 0.01

[drl]
goal_radius = 0.03
updates = 200

[bench]
trials = 10
"""


def tray():
    obstacles = [
        box("divider", 0.22, -0.012, 0.28, 0.012),
        box("wall_a", 0.15, 0.17, 0.29, 0.18),
        box("wall_b", 0.15, -0.18, 0.29, -0.17),
        box("back", 0.28, -0.18, 0.29, 0.18),
    ]
    stations = {"tray_a": (0.22, 0.08), "tray_b": (0.22, -0.08), "stage": (0.12, 0.12)}
    rng = random.Random(11)

    # Tools are gripped from pick to place; blocks are pushed, nothing is held.
    def make(prefix, kinds):
        out = []
        for i, kind in enumerate(kinds):
            s = (0.11 + rng.uniform(-0.01, 0.01), 0.12 + rng.uniform(-0.02, 0.02))
            a = (rng.uniform(0.225, 0.255), rng.uniform(0.05, 0.09))
            b = (rng.uniform(0.225, 0.255), -rng.uniform(0.05, 0.09))
            out.append((f"{prefix}{kind}_{i:02}", [s, a, b], [False, kind == "tool", False]))
        return out

    train = make("sort_", ["tool"] * 4 + ["block"] * 2)
    evals = make("eval_", ["tool"] * 7 + ["block"] * 3)
    scenario("tray", obstacles, stations, (-0.02, -0.2, 0.3, 0.2), train, evals, TUNING)


def wallband():
    obstacles = [box("wall", 0.22, -0.012, 0.30, 0.012)]
    stations = {"left": (0.23, 0.07), "right": (0.23, -0.07), "stage": (0.12, 0.12)}
    rng = random.Random(23)

    def make(prefix, holds):
        out = []
        for i, hold in enumerate(holds):
            s = (0.11 + rng.uniform(-0.01, 0.01), 0.12 + rng.uniform(-0.02, 0.02))
            a = (rng.uniform(0.225, 0.255), rng.uniform(0.05, 0.09))
            b = (rng.uniform(0.225, 0.255), -rng.uniform(0.05, 0.09))
            out.append((f"{prefix}{i:02}", [s, a, b], [False, hold, False]))
        return out

    train = make("cross_", [True, False] * 3)
    evals = make("held_", [True, True, False] * 3 + [True])
    scenario("wallband", obstacles, stations, (-0.02, -0.2, 0.3, 0.2), train, evals, TUNING)


def open_workspace():
    stations = {"left": (0.20, 0.08), "right": (0.20, -0.08), "stage": (0.12, 0.12)}
    rng = random.Random(5)

    def make(prefix, n):
        out = []
        for i in range(n):
            s = (0.12 + rng.uniform(-0.01, 0.01), 0.12 + rng.uniform(-0.02, 0.02))
            a = (rng.uniform(0.19, 0.23), rng.uniform(0.05, 0.09))
            b = (rng.uniform(0.19, 0.23), -rng.uniform(0.05, 0.09))
            out.append((f"{prefix}{i:02}", [s, a, b], [False, i % 2 == 0, False]))
        return out

    scenario("open", [], stations, (-0.02, -0.2, 0.3, 0.2), make("move_", 4), make("free_", 6), TUNING)


if __name__ == "__main__":
    open_workspace()
    tray()
    wallband()
