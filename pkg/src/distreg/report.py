"""Human-readable report from a finished run's output tables.

Writes a plain-text summary, CSVs with the plotted data (ROC points and
observed-vs-predicted bins) and, unless disabled, PNG figures of both.
"""

from __future__ import annotations

import math
from pathlib import Path

from .errors import DataError
from .tables import decode_csv, encode_csv, parse_float, write_bytes

REQUIRED = ("p_est", "p_est_hc", "modelfit", "convrg_status")
OPTIONAL = ("anova", "glob_null_chisq", "hl_chisq", "roc", "resid_sum_by_pct", "condition")


def _read(directory: Path, prefix: str, suffix: str):
    path = Path(directory) / f"{prefix}_{suffix}.csv"
    if not path.is_file():
        return None
    return decode_csv(path.read_bytes())


def _num(text: str) -> str:
    if text == "":
        return ""
    v = parse_float(text)
    if math.isnan(v):
        return "."
    return f"{v:.5f}" if abs(v) < 1e7 else f"{v:.5e}"


def _pval(text: str) -> str:
    if text == "":
        return ""
    v = parse_float(text)
    if math.isnan(v):
        return "."
    return "<.0001" if v < 1e-4 else f"{v:.4f}"


def _table(header: list[str], rows: list[list[str]]) -> list[str]:
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(header)]
    line = "  ".join(h.ljust(w) for h, w in zip(header, widths))
    out = [line, "-" * len(line)]
    out += ["  ".join(c.rjust(w) if j else c.ljust(w) for j, (c, w) in enumerate(zip(r, widths)))
            for r in rows]
    return out


def _estimates(title: str, header, rows) -> list[str]:
    # Variable, DF, Estimate, SE, stat, p, lower, upper
    body = [[r[0], r[1], _num(r[2]), _num(r[3]), _num(r[4]), _pval(r[5]), _num(r[6]), _num(r[7])]
            for r in rows]
    return ["", title, *_table(header, body)]


def render_text(directory: Path, prefix: str) -> tuple[str, dict]:
    tables = {s: _read(directory, prefix, s) for s in REQUIRED + OPTIONAL}
    missing = [f"{prefix}_{s}.csv" for s in REQUIRED if tables[s] is None]
    if missing:
        raise DataError(f"report inputs missing: {', '.join(missing)}")
    logistic = tables["glob_null_chisq"] is not None or tables["roc"] is not None
    lines = [f"Distributed {'logistic' if logistic else 'linear'} regression: {prefix}"]
    _, conv = tables["convrg_status"]
    lines += ["", "Convergence", *_table(["Statistic", "Value"], [[r[0], r[1]] for r in conv])]
    _, fit = tables["modelfit"]
    lines += ["", "Model fit statistics", *_table(["Statistic", "Value"], [[r[0], _num(r[1])] for r in fit])]
    if tables["anova"] is not None:
        _, rows = tables["anova"]
        lines += ["", "Analysis of variance", *_table(
            ["Source", "DF", "Sum of Squares", "Mean Square", "F Value", "Pr > F"],
            [[r[0], r[1], _num(r[2]), _num(r[3]), _num(r[4]), _pval(r[5])] for r in rows])]
    if tables["glob_null_chisq"] is not None:
        _, rows = tables["glob_null_chisq"]
        lines += ["", "Testing global null hypothesis: beta = 0", *_table(
            ["Test", "Chi-Square", "DF", "Pr > ChiSq"],
            [[r[0], _num(r[1]), r[2], _pval(r[3])] for r in rows])]
    header, rows = tables["p_est"]
    lines += _estimates("Parameter estimates", ["Variable", "DF", "Estimate", "Std Error", header[4],
                                                "P-Value", "Lower CL", "Upper CL"], rows)
    header, rows = tables["p_est_hc"]
    lines += _estimates("Parameter estimates with robust standard errors",
                        ["Variable", "DF", "Estimate", "Robust SE", header[4], "P-Value",
                         "Lower CL", "Upper CL"], rows)
    if tables["hl_chisq"] is not None:
        _, rows = tables["hl_chisq"]
        lines += ["", "Hosmer and Lemeshow goodness-of-fit test", *_table(
            ["Chi-Square", "DF", "Value/DF", "Pr > ChiSq"],
            [[_num(r[0]), r[1], _num(r[2]), _pval(r[3])] for r in rows])]
    if tables["roc"] is not None:
        _, rows = tables["roc"]
        lines += ["", f"Area under the ROC curve (binned): {_num(rows[0][7])}"]
    if tables["condition"] is not None:
        _, rows = tables["condition"]
        lines += ["", f"Condition number of the scaled cross-product matrix: {_num(rows[0][1])}"]
    return "\n".join(lines) + "\n", tables


def render_report(directory: str | Path, prefix: str, out_dir: str | Path | None = None,
                  figures: bool = True) -> list[Path]:
    directory = Path(directory)
    out_dir = Path(out_dir) if out_dir is not None else directory
    out_dir.mkdir(parents=True, exist_ok=True)
    text, tables = render_text(directory, prefix)
    written = []
    path = out_dir / f"{prefix}_report.txt"
    write_bytes(path, text.encode("utf-8"))
    written.append(path)
    roc_points = obs = None
    if tables["roc"] is not None:
        _, rows = tables["roc"]
        roc_points = [[parse_float(r[6]), parse_float(r[5]), parse_float(r[7])] for r in rows]
        path = out_dir / f"{prefix}_roc_points.csv"
        write_bytes(path, encode_csv(["1MSPEC", "SENSIT", "AUC"], roc_points))
        written.append(path)
    if tables["resid_sum_by_pct"] is not None:
        _, rows = tables["resid_sum_by_pct"]
        # dp_cd, bin, PROB, Nobs, ..., RESP_Mean
        obs = [[int(r[0]), int(r[1]), parse_float(r[2]), parse_float(r[5]), parse_float(r[3])] for r in rows]
        path = out_dir / f"{prefix}_obs_vs_pred.csv"
        write_bytes(path, encode_csv(["dp_cd", "bin", "PROB", "RESP_Mean", "Nobs"], obs))
        written.append(path)
    if figures:
        written += _figures(out_dir, prefix, roc_points, obs)
    return written


def _figures(out_dir: Path, prefix: str, roc_points, obs) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    if roc_points:
        fig, ax = plt.subplots(figsize=(5, 5))
        xs = [0.0] + [p[0] for p in roc_points]
        ys = [0.0] + [p[1] for p in roc_points]
        ax.plot(xs, ys, marker=".", label=f"binned (AUC {roc_points[0][2]:.4f})")
        ax.plot([0, 1], [0, 1], color="grey", linestyle=":")
        ax.set_xlabel("1 - specificity")
        ax.set_ylabel("Sensitivity")
        ax.legend(loc="lower right")
        path = out_dir / f"{prefix}_roc.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        paths.append(path)
    if obs:
        fig, ax = plt.subplots(figsize=(5, 5))
        markers = "osD^v<>pXh"
        for i, dp in enumerate(sorted({r[0] for r in obs})):
            pts = [r for r in obs if r[0] == dp]
            ax.scatter([r[2] for r in pts], [r[3] for r in pts], s=[4 * r[4] for r in pts],
                       marker=markers[i % len(markers)], alpha=0.5, label=f"partner {dp}")
        lo = min(min(r[2], r[3]) for r in obs)
        hi = max(max(r[2], r[3]) for r in obs)
        ax.plot([lo, hi], [lo, hi], color="grey", linestyle=":")
        ax.set_xlabel("Mean predicted")
        ax.set_ylabel("Mean observed")
        ax.legend(loc="upper left")
        path = out_dir / f"{prefix}_obs_vs_pred.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        paths.append(path)
    return paths
