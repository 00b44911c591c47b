"""CSV export of simulation traces and the matching reader.

Files written to the output directory (column order is fixed)::

    trajectory_<robot>.csv   t, x, y, vx, vy, theta, mode, energy, u1, ..., u<d>
    allocation.csv           t, status, alpha|<robot>|<mode>|<task>..., delta|<robot>|<mode>|<task>...
    tasks.csv                t, h|<task>...
    certificates.csv         t, proposition, tau1, tau2, tau3, margin, feasible
    summary.txt              completion times, energy per robot, final distances

``d`` is the widest input among the robot's modes; unused input columns and
the mode of an unassigned robot are empty. Allocation columns run over
virtual robots (robot, then mode) and, inside each, over tasks. Floats are
written with ``repr`` so reading a file back reproduces the trace exactly.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .simulation import CertificateRecord, RobotRecord, StepRecord, Trace

TRAJECTORY_COLUMNS = ["t", "x", "y", "vx", "vy", "theta", "mode", "energy"]
CERTIFICATE_COLUMNS = ["t", "proposition", "tau1", "tau2", "tau3", "margin", "feasible"]
SEP = "|"


def _f(x) -> str:
    return repr(float(x))


def _pair_labels(trace: Trace) -> list[str]:
    return [f"{rid}{SEP}{mode}{SEP}{tid}" for rid, mode in trace.mode_labels for tid in trace.task_ids]


def _open(path: Path):
    try:
        return path.open("w", newline="")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def export_traces(trace: Trace, out_dir, completion_radius: float = 0.05) -> list[Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out}: {exc.strerror}") from exc
    written = []

    for i, rid in enumerate(trace.robot_ids):
        path = out / f"trajectory_{rid}.csv"
        dim = trace.input_dims[i]
        with _open(path) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRAJECTORY_COLUMNS + [f"u{k + 1}" for k in range(dim)])
            for rec in trace.records:
                r = rec.robots[i]
                u = [_f(a) for a in r.u] + [""] * (dim - len(r.u))
                w.writerow([_f(rec.t), _f(r.x), _f(r.y), _f(r.vx), _f(r.vy), _f(r.theta), r.mode,
                            _f(r.energy)] + u)
        written.append(path)

    labels = _pair_labels(trace)
    path = out / "allocation.csv"
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "status"] + [f"alpha{SEP}{p}" for p in labels]
                   + [f"delta{SEP}{p}" for p in labels])
        for rec in trace.records:
            alpha = np.asarray(rec.alpha).T.reshape(-1)  # virtual-robot major
            delta = np.asarray(rec.delta).reshape(-1)
            cells = [_f(d) for d in delta] if delta.size == len(labels) else [""] * len(labels)
            w.writerow([_f(rec.t), rec.status] + [str(int(a)) for a in alpha] + cells)
    written.append(path)

    path = out / "tasks.csv"
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"h{SEP}{tid}" for tid in trace.task_ids])
        for rec in trace.records:
            w.writerow([_f(rec.t)] + [_f(h) for h in rec.h])
    written.append(path)

    path = out / "certificates.csv"
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CERTIFICATE_COLUMNS)
        for rec in trace.records:
            c = rec.certificate
            if c is not None:
                w.writerow([_f(rec.t), str(c.proposition)] + [_f(t) for t in c.tau]
                           + [_f(c.margin), str(bool(c.feasible))])
    written.append(path)

    path = out / "summary.txt"
    with _open(path) as fh:
        fh.write(summary_text(trace, completion_radius))
    written.append(path)
    return written


def summary_text(trace: Trace, completion_radius: float = 0.05) -> str:
    lines = [f"records: {len(trace.records)}",
             f"complete: {trace.complete}" + (f" ({trace.error})" if trace.error else "")]
    lines.append(f"completion radius: {completion_radius!r}")
    lines.append("task completion time [s]:")
    for j, tid in enumerate(trace.task_ids):
        done = next((r.t for r in trace.records if -r.h[j] <= completion_radius ** 2), None)
        lines.append(f"  {tid}: {'not completed' if done is None else repr(done)}")
    lines.append("energy per robot (sum of energy * dt):")
    for i, rid in enumerate(trace.robot_ids):
        total = sum(r.robots[i].energy for r in trace.records) * trace.dt
        lines.append(f"  {rid}: {total!r}")
    lines.append("final distance to task [m]:")
    for j, tid in enumerate(trace.task_ids):
        if trace.records:
            lines.append(f"  {tid}: {float(np.sqrt(max(-trace.records[-1].h[j], 0.0)))!r}")
        else:
            lines.append(f"  {tid}: n/a")
    return "\n".join(lines) + "\n"


def _read(path: Path):
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror}") from exc
    if not rows:
        raise ValueError(f"{path}: missing header")
    return rows[0], rows[1:]


def read_traces(out_dir) -> Trace:
    """Rebuild a trace from the files written by :func:`export_traces`."""
    out = Path(out_dir)
    head, alloc_rows = _read(out / "allocation.csv")
    alpha_cols = [c.split(SEP)[1:] for c in head if c.startswith("alpha" + SEP)]
    mode_labels, task_ids, robot_ids = [], [], []
    for rid, mode, tid in alpha_cols:
        if (rid, mode) not in mode_labels:
            mode_labels.append((rid, mode))
        if tid not in task_ids:
            task_ids.append(tid)
        if rid not in robot_ids:
            robot_ids.append(rid)
    n_t, n_vr = len(task_ids), len(mode_labels)

    task_head, task_rows = _read(out / "tasks.csv")
    if [c.split(SEP, 1)[1] for c in task_head[1:]] != task_ids:
        raise ValueError("tasks.csv columns do not match allocation.csv")

    trajectories, dims = [], []
    for rid in robot_ids:
        th, rows = _read(out / f"trajectory_{rid}.csv")
        dims.append(len(th) - len(TRAJECTORY_COLUMNS))
        trajectories.append(rows)

    _, cert_rows = _read(out / "certificates.csv")
    certs = {row[0]: CertificateRecord(int(row[1]), tuple(float(x) for x in row[2:5]),
                                       float(row[5]), row[6] == "True") for row in cert_rows}

    if len(task_rows) != len(alloc_rows) or any(len(t) != len(alloc_rows) for t in trajectories):
        raise ValueError("trace files have different record counts")
    records = []
    for k, arow in enumerate(alloc_rows):
        t = float(arow[0])
        alpha = np.array([int(a) for a in arow[2:2 + n_vr * n_t]], dtype=int)
        delta = np.array([float(d) for d in arow[2 + n_vr * n_t:] if d != ""])
        robots = []
        for rows in trajectories:
            r = rows[k]
            u = tuple(float(a) for a in r[len(TRAJECTORY_COLUMNS):] if a != "")
            robots.append(RobotRecord(*(float(a) for a in r[1:6]), r[6], float(r[7]), u))
        h = [float(x) for x in task_rows[k][1:]]
        records.append(StepRecord(t, robots, h, alpha.reshape(n_vr, n_t).T, delta, arow[1],
                                  certs.get(arow[0])))
    dt = records[1].t - records[0].t if len(records) > 1 else 0.0
    return Trace(robot_ids, mode_labels, task_ids, dims, records, dt=dt)
