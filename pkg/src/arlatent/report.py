"""Plain-text tables for side-by-side method comparison."""

from __future__ import annotations

from .metrics import MetricsReport


def _fmt(value, digits: int = 3) -> str:
    if value is None:
        return "-"
    try:
        if value != value:  # NaN
            return "-"
    except TypeError:
        return str(value)
    return f"{value:.{digits}f}"


def _render_rows(header: list[str], rows: list[list[str]], title: str = "") -> str:
    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) if rows else len(header[i])
              for i in range(len(header))]
    sep = "-+-".join("-" * w for w in widths)
    lines = []
    if title:
        lines.append(title)
    lines.append(" | ".join(h.ljust(w) for h, w in zip(header, widths)))
    lines.append(sep)
    for r in rows:
        lines.append(" | ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines)


def render_report_tables(report: MetricsReport, method: str = "", regularized: bool | None = None) -> str:
    """Reconstruction block plus latent block for a single run."""
    reg = "-" if regularized is None else ("yes" if regularized else "no")
    recon = _render_rows(
        ["Method", "Reg.", "SSIM All", "SSIM ED", "SSIM ES", "PFD All", "PFD ED", "PFD ES"],
        [[
            method or "-", reg,
            _fmt(report.ssim_all), _fmt(report.ssim_ed), _fmt(report.ssim_es),
            _fmt(report.pfd_all, 5), _fmt(report.pfd_ed, 5), _fmt(report.pfd_es, 5),
        ]],
        title="Reconstruction",
    )
    latent = _render_rows(
        ["Method", "Reg.", "SCC", "Mod.", "SAP", "Interp. All (EDV/ESV)"],
        [[
            method or "-", reg,
            _fmt(report.scc), _fmt(report.modularity), _fmt(report.sap),
            f"{_fmt(report.interp_all)} ({_fmt(report.interp_edv)}/ {_fmt(report.interp_esv)})",
        ]],
        title="Latent interpretability",
    )
    per_attr_rows = [
        [name, _fmt(v["scc"]), _fmt(v["interpretability"]), _fmt(v["sap"])]
        for name, v in report.per_attribute.items()
    ]
    per_attr = _render_rows(
        ["Attribute", "SCC", "Interp.", "SAP"], per_attr_rows, title="Per attribute"
    )
    return "\n\n".join([recon, latent, per_attr]) + "\n"


def render_comparison_table(
    entries: list[dict],
    mismatched_datasets: bool = False,
) -> str:
    """One row per run: method, Reg. flag, reconstruction and latent metrics.

    ``entries`` items need ``method``, ``regularized`` and ``report`` keys.
    """
    header = ["Method", "Reg.", "SSIM All", "SSIM ED", "SSIM ES",
              "PFD All", "PFD ED", "PFD ES", "SCC", "Mod.", "SAP",
              "Interp. All (EDV/ESV)"]
    rows = []
    for e in entries:
        r: MetricsReport = e["report"]
        rows.append([
            e.get("method", "-"),
            "yes" if e.get("regularized") else "no",
            _fmt(r.ssim_all), _fmt(r.ssim_ed), _fmt(r.ssim_es),
            _fmt(r.pfd_all, 5), _fmt(r.pfd_ed, 5), _fmt(r.pfd_es, 5),
            _fmt(r.scc), _fmt(r.modularity), _fmt(r.sap),
            f"{_fmt(r.interp_all)} ({_fmt(r.interp_edv)}/ {_fmt(r.interp_esv)})",
        ])
    title = "Method comparison"
    if mismatched_datasets:
        title += "  [WARNING: runs evaluated on differing dataset fingerprints]"
    return _render_rows(header, rows, title=title) + "\n"


def render_sweep_table(rows: list[dict]) -> str:
    """Attribute-weight sweep: interpretability vs reconstruction trade-off."""
    header = ["gamma_reg", "SCC", "Interp.", "SSIM All", "PFD All"]
    body = [
        [f"{r['gamma_reg']:g}", _fmt(r["scc"]), _fmt(r["interp_all"]),
         _fmt(r["ssim_all"]), _fmt(r["pfd_all"], 5)]
        for r in rows
    ]
    return _render_rows(header, body, title="Attribute-regularization weight sweep") + "\n"
