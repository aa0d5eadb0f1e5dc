"""Metrics records, aggregation and figure rendering for batch runs.

The metrics file is delimited text with one record per (flow, method); all
columns are deterministic, so re-running a spec reproduces the file
byte-for-byte.  Wall-clock times and the run timestamp live in a sidecar
(same key columns plus seconds), keeping timing out of the reproducible
artifact while still recording it per row.

Aggregation restricts cross-method comparisons to the common subset of
successfully analyzed flows and reports that subset's size next to every
average.  The report path renders matplotlib figures alongside the tables.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from fractions import Fraction

from .minplus import UsageError

METRICS_HEADER = (
    "network\tfoi\tmethod\tsuccess\tdelay_bound\toutput_burst\tgap"
    "\tlat_improvement\tburst_improvement\texplored\tn_flows\terror\n"
)
TIMING_HEADER = "network\tfoi\tmethod\twall_time_s\n"


@dataclass(frozen=True)
class MetricsRecord:
    network: str
    foi: str
    method: str
    success: bool
    delay_bound: Fraction | None
    output_burst: Fraction | None
    gap: float | None                 # (plain - method) / plain
    lat_improvement: float | None     # latency-increase improvement, same form
    burst_improvement: float | None   # output-burstiness-increase improvement
    explored: int
    n_flows: int
    wall_time_s: float
    error: str = ""

    def key(self) -> tuple[str, str]:
        return (self.network, self.foi)


def _fmt(x) -> str:
    if x is None:
        return "-"
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_metrics(path, records: list[MetricsRecord]) -> None:
    with open(path, "w") as fh:
        fh.write(METRICS_HEADER)
        for r in records:
            fh.write(
                "\t".join(
                    [
                        r.network, r.foi, r.method,
                        "1" if r.success else "0",
                        _fmt(r.delay_bound), _fmt(r.output_burst),
                        _fmt(r.gap), _fmt(r.lat_improvement), _fmt(r.burst_improvement),
                        str(r.explored), str(r.n_flows), r.error or "-",
                    ]
                )
                + "\n"
            )


def write_timings(path, records: list[MetricsRecord], stamp: str) -> None:
    with open(path, "w") as fh:
        fh.write(f"# run {stamp}\n")
        fh.write(TIMING_HEADER)
        for r in records:
            fh.write(f"{r.network}\t{r.foi}\t{r.method}\t{r.wall_time_s!r}\n")


def read_metrics(path) -> list[MetricsRecord]:
    out: list[MetricsRecord] = []
    with open(path) as fh:
        header = fh.readline()
        if header != METRICS_HEADER:
            raise UsageError(f"unrecognized metrics header in {path}")
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            (net, foi, method, success, bound, burst, gap, lat, bimp,
             explored, n_flows, error) = parts
            out.append(
                MetricsRecord(
                    net, foi, method, success == "1",
                    None if bound == "-" else Fraction(bound),
                    None if burst == "-" else Fraction(burst),
                    None if gap == "-" else float(gap),
                    None if lat == "-" else float(lat),
                    None if bimp == "-" else float(bimp),
                    int(explored), int(n_flows), 0.0,
                    "" if error == "-" else error,
                )
            )
    return out


def read_timings(path) -> dict[tuple[str, str, str], float]:
    out: dict[tuple[str, str, str], float] = {}
    with open(path) as fh:
        for line in fh:
            if line.startswith("#") or line.startswith("network\t"):
                continue
            net, foi, method, secs = line.rstrip("\n").split("\t")
            out[(net, foi, method)] = float(secs)
    return out


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

def _percentile(values: list[float], q: float) -> float:
    vs = sorted(values)
    if not vs:
        return float("nan")
    pos = q * (len(vs) - 1)
    lo = int(pos)
    hi = min(lo + 1, len(vs) - 1)
    return vs[lo] + (vs[hi] - vs[lo]) * (pos - lo)


@dataclass(frozen=True)
class MethodSummary:
    method: str
    analyzed: int
    succeeded: int
    mean_gap: float
    p10_gap: float
    median_gap: float
    p90_gap: float
    negative_share: float


def summarize(records: list[MetricsRecord]) -> tuple[list[MethodSummary], int]:
    """Per-method summaries over the common success subset.

    Returns the summaries and the common subset's size.  Methods rarely all
    finish on the same flows, so averaging anything else would compare
    different populations.
    """
    methods = sorted({r.method for r in records})
    succeeded: dict[str, set] = {m: set() for m in methods}
    for r in records:
        if r.success and r.gap is not None:
            succeeded[r.method].add(r.key())
    common = set.intersection(*succeeded.values()) if methods else set()
    out = []
    for m in methods:
        rows = [r for r in records if r.method == m]
        gaps = [r.gap for r in rows if r.key() in common and r.gap is not None]
        out.append(
            MethodSummary(
                method=m,
                analyzed=len(rows),
                succeeded=sum(1 for r in rows if r.success),
                mean_gap=sum(gaps) / len(gaps) if gaps else float("nan"),
                p10_gap=_percentile(gaps, 0.1),
                median_gap=_percentile(gaps, 0.5),
                p90_gap=_percentile(gaps, 0.9),
                negative_share=(sum(1 for g in gaps if g < 0) / len(gaps)) if gaps else float("nan"),
            )
        )
    return out, len(common)


def success_by_size(records: list[MetricsRecord], buckets=(20, 50, 100, 1000)) -> dict[str, list[tuple[str, float, int]]]:
    """Per-method success ratio for networks bucketed by flow count."""
    out: dict[str, list[tuple[str, float, int]]] = {}
    for method in sorted({r.method for r in records}):
        rows = [r for r in records if r.method == method]
        col = []
        lo = 0
        for hi in buckets:
            sub = [r for r in rows if lo < r.n_flows <= hi]
            if sub:
                col.append((f"{lo + 1}-{hi}", sum(r.success for r in sub) / len(sub), len(sub)))
            lo = hi
        out[method] = col
    return out


def gap_cdf(records: list[MetricsRecord], method: str, points: int = 101) -> list[tuple[float, float]]:
    gaps = sorted(r.gap for r in records if r.method == method and r.gap is not None)
    if not gaps:
        return []
    return [(g, (i + 1) / len(gaps)) for i, g in enumerate(gaps)]


def format_report(summaries: list[MethodSummary], common: int,
                  sizes: dict[str, list[tuple[str, float, int]]],
                  runtime: dict[str, tuple[float, float]] | None = None) -> str:
    lines = [f"common success subset: {common} flow analyses"]
    lines.append("method\tanalyzed\tsucceeded\tmean_gap\tp10\tmedian\tp90\tnegative_share")
    for s in summaries:
        lines.append(
            f"{s.method}\t{s.analyzed}\t{s.succeeded}\t{s.mean_gap:.4f}"
            f"\t{s.p10_gap:.4f}\t{s.median_gap:.4f}\t{s.p90_gap:.4f}\t{s.negative_share:.4f}"
        )
    lines.append("")
    lines.append("success ratio by network size (flows):")
    for method, col in sizes.items():
        for bucket, ratio, count in col:
            lines.append(f"{method}\t{bucket}\t{ratio:.3f}\t(n={count})")
    if runtime:
        lines.append("")
        lines.append("wall time per analysis (s): method\tmean\tmedian")
        for method, (mean, median) in sorted(runtime.items()):
            lines.append(f"{method}\t{mean:.4f}\t{median:.4f}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# figures
# ---------------------------------------------------------------------------

def render_figures(records: list[MetricsRecord], out_dir,
                   timings: dict[tuple[str, str, str], float] | None = None) -> list[str]:
    """Render the report figures next to the tables; returns written paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    methods = sorted({r.method for r in records})
    summaries, _ = summarize(records)

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar([s.method for s in summaries], [s.mean_gap for s in summaries], color="#4878a8")
    ax.set_ylabel("mean delay bound gap")
    ax.set_title("Relative delay bound improvement vs plain analysis")
    ax.axhline(0, color="black", linewidth=0.8)
    fig.autofmt_xdate(rotation=25)
    path = os.path.join(out_dir, "gap_by_method.png")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    for m in methods:
        cdf = gap_cdf(records, m)
        if cdf:
            ax.plot([g for g, _ in cdf], [p for _, p in cdf], label=m, drawstyle="steps-post")
    ax.set_xlabel("delay bound gap")
    ax.set_ylabel("CDF")
    ax.axvline(0, color="gray", linewidth=0.8, linestyle=":")
    ax.legend(fontsize=8)
    path = os.path.join(out_dir, "gap_cdf.png")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(path)

    if timings:
        fig, ax = plt.subplots(figsize=(6, 4))
        data, labels = [], []
        for m in methods:
            vals = [t for (n, f, mm), t in timings.items() if mm == m]
            if vals:
                data.append(vals)
                labels.append(m)
        if data:
            ax.boxplot(data, tick_labels=labels)
            ax.set_yscale("log")
            ax.set_ylabel("wall time per analysis (s)")
            fig.autofmt_xdate(rotation=25)
            path = os.path.join(out_dir, "runtime.png")
            fig.savefig(path, dpi=120, bbox_inches="tight")
            plt.close(fig)
            written.append(path)
    return written


def render_importance(importances: list[tuple[str, float]], out_dir) -> str:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = [n for n, _ in importances]
    vals = [v for _, v in importances]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.barh(names, vals, color="#a85048")
    ax.set_xlabel("gap difference (baseline - permuted)")
    ax.set_title("Permutation importance of input features")
    path = os.path.join(out_dir, "importance.png")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path
