"""Deterministic report rendering: one artifacts bundle, several HTML pages.

Pages are regenerated from the artifacts on every recompute and contain
nothing except values derived from board state, so identical state always
renders to identical bytes.
"""

from __future__ import annotations

import html

_PAGE_STYLE = """\
body { font-family: system-ui, sans-serif; margin: 2rem auto; max-width: 64rem; color: #1a1a1a; }
table { border-collapse: collapse; width: 100%; margin: 1rem 0; }
th, td { border: 1px solid #d0d0d0; padding: 0.4rem 0.7rem; text-align: left; }
th { background: #f2f2f2; }
tr.positive td.beta { color: #b22222; }
tr.negative td.beta { color: #1e5bb2; }
.muted { color: #777; }
code { background: #f6f6f6; padding: 0 0.25rem; }
nav a { margin-right: 1rem; }
"""


def _page(title: str, body: str) -> str:
    return (
        "<!DOCTYPE html>\n"
        "<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n"
        f"<title>{html.escape(title)}</title>\n"
        f"<style>\n{_PAGE_STYLE}</style>\n</head>\n<body>\n"
        "<nav><a href=\"index.html\">overview</a>"
        "<a href=\"generators.html\">generators</a>"
        "<a href=\"metrics.html\">metrics</a>"
        "<a href=\"ensemble.html\">ensemble</a>"
        "<a href=\"overrate.html\">overrating</a></nav>\n"
        f"<h1>{html.escape(title)}</h1>\n{body}\n</body>\n</html>\n"
    )


def format_formula(selected: list[tuple[str, float]]) -> str:
    """Render weights as `1.72·A+1.48·B`, largest magnitude first."""
    ordered = sorted(selected, key=lambda t: (-abs(t[1]), t[0]))
    text = "".join(f"{w:+.2f}·{mid}" for mid, w in ordered)
    return text.lstrip("+")


def render_index(artifacts: dict) -> str:
    board = artifacts["board_id"]
    counts = artifacts["counts"]
    body = (
        f"<p>Board <code>{html.escape(board)}</code>, version {artifacts['version']}: "
        f"{counts['generators']} generators, {counts['metrics']} metrics, "
        f"{counts['instances']} test instances.</p>"
    )
    if artifacts["scorer"] is not None:
        s = artifacts["scorer"]
        body += (
            f"<p>Current ranking scorer: <code>{html.escape(s['id'])}</code> "
            f"({html.escape(s['kind'])}, correlation {s['correlation']:.4f}).</p>"
        )
    else:
        body += "<p class=\"muted\">No rankings yet — no submissions scored.</p>"
    return _page(f"Leaderboard — {board}", body)


def render_generators(artifacts: dict) -> str:
    entries = artifacts["generator_ranking"]
    if not entries:
        body = "<p class=\"muted\">No submissions.</p>"
    else:
        scorer = artifacts["scorer"]
        rows = "".join(
            f"<tr><td>{e['rank']}</td><td>{html.escape(e['generator_id'])}</td>"
            f"<td>{e['score']:.6f}</td></tr>"
            for e in entries
        )
        body = (
            f"<p>Scored by <code>{html.escape(scorer['id'])}</code>.</p>"
            f"<table><tr><th>rank</th><th>generator</th><th>score</th></tr>{rows}</table>"
        )
    return _page("Generator leaderboard", body)


def render_metrics(artifacts: dict) -> str:
    entries = artifacts["metric_ranking"]
    if not entries:
        body = "<p class=\"muted\">No metrics ranked yet.</p>"
    else:
        rows = "".join(
            f"<tr><td>{i + 1}</td><td>{html.escape(e['metric_id'])}</td>"
            f"<td>{e['pearson_instance']:.4f}</td><td>{e['kendall_system']:.4f}</td>"
            f"<td>{e['n_pairs']}</td>"
            f"<td>{'yes' if e['degenerate'] else ''}</td></tr>"
            for i, e in enumerate(entries)
        )
        body = (
            "<table><tr><th>#</th><th>metric</th><th>instance Pearson</th>"
            f"<th>system Kendall τ-b</th><th>pairs</th><th>degenerate</th></tr>{rows}</table>"
        )
    return _page("Metric leaderboard", body)


def render_ensemble(artifacts: dict) -> str:
    model = artifacts["ensemble"]
    if model is None:
        reason = artifacts.get("ensemble_skip_reason") or "not built yet"
        body = f"<p class=\"muted\">No ensemble: {html.escape(reason)}.</p>"
    else:
        formula = format_formula([(w["metric_id"], w["weight"]) for w in model["weights"]])
        body = (
            f"<p>Formula: <code>{html.escape(formula)}</code></p>"
            f"<p>λ = {model['lambda']:.6g}, intercept = {model['intercept']:.6g}, "
            f"cross-validated correlation = {model['cv_correlation']:.4f}</p>"
            f"<p>Signature: <code>{html.escape(model['signature'])}</code></p>"
        )
        if model["inexact_support"]:
            body += "<p class=\"muted\">Support size is below target (inexact_support).</p>"
    return _page("Ensemble metric", body)


def render_overrate(artifacts: dict) -> str:
    rows = artifacts["overrate"]
    if rows is None:
        reason = artifacts.get("overrate_skip_reason") or "not computed"
        body = f"<p class=\"muted\">No analysis: {html.escape(reason)}.</p>"
    elif not rows:
        body = "<p class=\"muted\">No metrics to analyze.</p>"
    else:
        cells = []
        for r in rows:
            if "error" in r:
                cells.append(
                    f"<tr><td>{html.escape(r['metric_id'])}</td>"
                    f"<td colspan=\"4\" class=\"muted\">failed: {html.escape(r['error'])}</td></tr>"
                )
                continue
            cells.append(
                f"<tr class=\"{r['significance']}\">"
                f"<td>{html.escape(r['metric_id'])}</td>"
                f"<td class=\"beta\">{r['beta0']:.4f}"
                f"<sub>±{(r['ci90_hi'] - r['beta0']):.4f}</sub></td>"
                f"<td>[{r['ci90_lo']:.4f}, {r['ci90_hi']:.4f}]</td>"
                f"<td>{r['significance']}</td>"
                f"<td>{r['sigma_gamma_sq']:.4g} / {r['sigma_eps_sq']:.4g}</td></tr>"
            )
        body = (
            "<p>Machine coefficient per metric: positive means the metric "
            "overrates machine output relative to human raters (90% CI).</p>"
            "<table><tr><th>metric</th><th>coefficient</th><th>90% CI</th>"
            f"<th>significance</th><th>σ² group / residual</th></tr>{''.join(cells)}</table>"
        )
    return _page("Machine overrating analysis", body)


def render_all(artifacts: dict) -> dict[str, str]:
    return {
        "index.html": render_index(artifacts),
        "generators.html": render_generators(artifacts),
        "metrics.html": render_metrics(artifacts),
        "ensemble.html": render_ensemble(artifacts),
        "overrate.html": render_overrate(artifacts),
    }
