"""CSV and gnuplot emission for experiment results.

Floats are written with ``repr`` so that reading a file back gives the exact
same doubles.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

from .experiments import ExperimentResult

PLOT_STYLE = {
    "PositioningPowerSweep": dict(xlabel="satellite transmit power [dBm]", ylabel="position error bound [m]", logy=True),
    "CePositionErrorSweep": dict(xlabel="position error [m]", ylabel="normalized bound", logy=True, logx=True),
    "CeUtPowerSweep": dict(xlabel="UT transmit power [dBm]", ylabel="normalized bound", logy=True),
    "SumRateAntennaSweep": dict(xlabel="antennas per satellite", ylabel="sum rate [Mbit/s]", logx=True),
    "SumRateUtPowerSweep": dict(xlabel="UT transmit power [dBm]", ylabel="sum rate [Mbit/s]"),
    "SolverBenchmark": dict(xlabel="antennas per satellite", ylabel="time per BCD sweep [s]", logy=True, logx=True),
}


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def provenance_block(prov: dict) -> list[str]:
    lines = ["# provenance"]
    for key in ("experiment", "seed", "trials", "excluded_trials", "code_version"):
        lines.append(f"# {key}: {prov[key]}")
    lines.append("# config:")
    lines.extend("#   " + ln for ln in prov["config"].rstrip("\n").splitlines())
    return lines


def render_csv(result: ExperimentResult, family: str) -> str:
    buf = io.StringIO()
    buf.write("\n".join(provenance_block(result.provenance)) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(result.axes) + ["metric", "mean", "std", "trials"])
    for row in result.families()[family]:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def read_csv(path):
    """Parse a result file into ``(provenance lines, header, rows)`` with floats restored."""
    prov, body = [], []
    for line in Path(path).read_text().splitlines():
        (prov if line.startswith("#") else body).append(line)
    reader = csv.reader(body)
    header = next(reader)
    rows = []
    for rec in reader:
        out = []
        for name, v in zip(header, rec):
            if name == "metric":
                out.append(v)
            elif name == "trials":
                out.append(int(v))
            else:
                out.append(float(v))
        rows.append(tuple(out))
    return prov, header, rows


def _plot_1d(result: ExperimentResult, files: dict) -> str:
    style = PLOT_STYLE.get(result.experiment, {})
    lines = [
        "set datafile separator ','",
        f"set xlabel '{style.get('xlabel', result.axes[0])}'",
        f"set ylabel '{style.get('ylabel', 'value')}'",
        "set key outside right",
        "set grid",
    ]
    if style.get("logy"):
        lines.append("set logscale y")
    if style.get("logx"):
        lines.append("set logscale x")
    ncol = len(result.axes)
    xcol = 2 if result.experiment == "SolverBenchmark" else 1
    plots = []
    for fam, fname in files.items():
        metrics = []
        for row in result.families()[fam]:
            if row[ncol] not in metrics:
                metrics.append(row[ncol])
        for m in metrics:
            plots.append(
                f"'{fname}' every ::1 using {xcol}:(strcol({ncol + 1}) eq '{m}' ? ${ncol + 2} : 1/0) with linespoints title '{m}'"
            )
    lines.append("plot " + ", \\\n     ".join(plots))
    return "\n".join(lines) + "\n"


def _plot_surface(result: ExperimentResult, files: dict) -> str:
    (fname,) = files.values()
    return "\n".join(
        [
            "set datafile separator ','",
            "set xlabel 'max clock bias [s]'",
            "set ylabel 'max CFO [Hz]'",
            "set zlabel 'position bound [m]'",
            "set pm3d",
            "set dgrid3d 7,7",
            f"splot '{fname}' every ::1 using 1:2:(strcol(3) eq 'LB' ? $4 : 1/0) with pm3d title 'LB'",
        ]
    ) + "\n"


def write_result(result: ExperimentResult, out_dir) -> list[Path]:
    """Write one CSV per metric family plus a gnuplot script; return the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    written = []
    for fam in result.families():
        path = out_dir / f"{fam}.csv"
        path.write_text(render_csv(result, fam))
        files[fam] = path.name
        written.append(path)
    script = _plot_surface(result, files) if result.experiment == "MismatchSurface" else _plot_1d(result, files)
    plot = out_dir / "plot.gp"
    plot.write_text(f"set terminal pngcairo size 900,600\nset output '{result.experiment}.png'\n" + script)
    written.append(plot)
    return written
