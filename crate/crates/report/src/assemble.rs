//! Turns a reflection into the report artifact: ordered sections, role
//! narrative, lineage and a content hash.

use crate::job::{JobSpec, ReportFamily, Role};
use crate::narrative::{NarrativeBlock, NarrativeProvider, TemplateProvider};
use crate::reflection::{MomRowDoc, MomTableDoc, Reflection, Violation, ViolationKind};
use crate::validate::validate_text;
use crate::Result;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sparecast_core::scorecard::{BandDistribution, RankMetric, RankedEntry, BAND_LABELS};
use sparecast_core::trend::{ShareRow, TrendVerdict};
use sparecast_core::PeriodId;
use sparecast_store::{ArtifactStore, RunRecord};
use std::collections::BTreeMap;

pub const REFLECTION_ATTACHMENT: &str = "reflection.json";
pub const FAILED_BANNER: &str = "failed-validation";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: String,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Section {
    Banner { id: String, level: String, text: String, violations: Vec<Violation> },
    Summary { id: String, title: String, metrics: Vec<Metric> },
    Table { id: String, title: String, columns: Vec<Column>, rows: Vec<Vec<Value>> },
    FigureSpec { id: String, title: String, chart: String, source_table: String, x: String, y: String },
}

impl Section {
    pub fn id(&self) -> &str {
        match self {
            Section::Banner { id, .. }
            | Section::Summary { id, .. }
            | Section::Table { id, .. }
            | Section::FigureSpec { id, .. } => id,
        }
    }
}

/// The cell at `row` of `column` in a table, or the named metric of a
/// summary (row 0).
pub fn cell<'a>(sections: &'a [Section], table: &str, row: usize, column: &str) -> Option<&'a Value> {
    match sections.iter().find(|s| s.id() == table)? {
        Section::Table { columns, rows, .. } => {
            let i = columns.iter().position(|c| c.name == column)?;
            rows.get(row)?.get(i)
        }
        Section::Summary { metrics, .. } if row == 0 => metrics.iter().find(|m| m.name == column).map(|m| &m.value),
        _ => None,
    }
}

/// How a cell is written into narrative text.
pub fn cell_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => "n/a".into(),
        other => other.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    pub dataset_id: Option<String>,
    pub dataset_hash: String,
    pub config_hash: Option<String>,
    pub job_hash: String,
    pub reflection_hash: String,
    pub runs: Vec<String>,
    pub evaluation_source: String,
    pub window_start: PeriodId,
    pub window_end: PeriodId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportArtifact {
    pub job: JobSpec,
    pub passed: bool,
    pub sections: Vec<Section>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub narrative: Option<BTreeMap<Role, Vec<NarrativeBlock>>>,
    pub lineage: Lineage,
    /// sha256 of the artifact serialized with this field empty.
    pub content_hash: String,
}

impl ReportArtifact {
    pub fn compute_hash(&self) -> String {
        let mut copy = self.clone();
        copy.content_hash.clear();
        sparecast_store::sha256_hex(&serde_json::to_vec(&copy).expect("artifact serializes"))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("artifact serializes")
    }
}

/// Half-to-even at four decimals; non-finite values become null.
pub fn round4(x: f64) -> Value {
    if !x.is_finite() {
        return Value::Null;
    }
    let r = (x * 1e4).round_ties_even() / 1e4;
    json!(if r == 0.0 { 0.0 } else { r })
}

fn pct(x: Option<f64>) -> Value {
    x.map_or(Value::Null, |v| round4(v * 100.0))
}

fn num(x: f64) -> Value {
    round4(x)
}

fn s(x: impl ToString) -> Value {
    Value::String(x.to_string())
}

fn table(id: &str, title: &str, columns: &[(&str, &str)], rows: Vec<Vec<Value>>) -> Section {
    Section::Table {
        id: id.into(),
        title: title.into(),
        columns: columns.iter().map(|(n, k)| Column { name: n.to_string(), kind: k.to_string() }).collect(),
        rows,
    }
}

fn summary(id: &str, title: &str, metrics: Vec<(&str, &str, Value)>) -> Section {
    Section::Summary {
        id: id.into(),
        title: title.into(),
        metrics: metrics.into_iter().map(|(n, k, v)| Metric { name: n.into(), kind: k.into(), value: v }).collect(),
    }
}

fn figure(id: &str, title: &str, chart: &str, source: &str, x: &str, y: &str) -> Section {
    Section::FigureSpec {
        id: id.into(),
        title: title.into(),
        chart: chart.into(),
        source_table: source.into(),
        x: x.into(),
        y: y.into(),
    }
}

const METRIC_COLUMNS: &[(&str, &str)] = &[
    ("entity", "string"),
    ("n_periods", "integer"),
    ("coverage_pct", "number"),
    ("mape_pct", "number"),
    ("median_ape_pct", "number"),
    ("wmape_pct", "number"),
    ("bias_pct", "number"),
    ("actuals", "number"),
];

fn metric_rows(rows: &[sparecast_core::scorecard::MetricRow]) -> Vec<Vec<Value>> {
    rows.iter()
        .map(|r| {
            vec![
                s(&r.entity),
                json!(r.n_periods),
                pct(Some(r.coverage)),
                pct(r.mape),
                pct(r.median_ape),
                pct(r.wmape),
                pct(r.bias_pct),
                num(r.actuals),
            ]
        })
        .collect()
}

fn band_rows(scope: &str, group: &str, b: &BandDistribution) -> Vec<Vec<Value>> {
    (0..4)
        .map(|i| {
            vec![
                s(scope),
                s(group),
                s(BAND_LABELS[i]),
                json!(b.counts[i]),
                pct(Some(b.shares[i])),
                json!(b.denominator_count),
                json!(b.total_count),
                pct(Some(b.coverage_note)),
            ]
        })
        .collect()
}

fn ranking_rows(rankings: &[sparecast_core::scorecard::Ranking], keep: impl Fn(RankMetric) -> bool) -> Vec<Vec<Value>> {
    let mut out = Vec::new();
    for rk in rankings.iter().filter(|r| keep(r.metric)) {
        for (end, list) in [("top", &rk.top), ("bottom", &rk.bottom)] {
            for (i, e) in list.iter().enumerate() {
                let e: &RankedEntry = e;
                out.push(vec![s(rk.level.as_str()), s(rk.metric.as_str()), s(end), json!(i + 1), s(&e.entity), pct(Some(e.value))]);
            }
        }
    }
    out
}

const RANKING_COLUMNS: &[(&str, &str)] = &[
    ("level", "string"),
    ("metric", "string"),
    ("end", "string"),
    ("rank", "integer"),
    ("entity", "string"),
    ("value_pct", "number"),
];

fn scorecard_sections(r: &Reflection, out: &mut Vec<Section>) {
    let Some(body) = &r.scorecard else { return };
    let sc = &body.scorecard;
    let revenue_views = r.job.toggles.revenue_views;
    let basis = sc.summary.primary.as_ref().unwrap_or(&sc.summary.context);
    out.push(summary(
        "summary",
        "Accuracy summary",
        vec![
            ("window_start", "period", s(sc.window_start)),
            ("window_end", "period", s(sc.window_end)),
            ("evaluation_source", "string", s(&r.evaluation_source)),
            ("mape_pct", "number", pct(basis.metrics.mape)),
            ("wmape_pct", "number", pct(basis.metrics.wmape)),
            ("bias_pct", "number", pct(basis.metrics.bias_pct)),
            ("bias_direction", "string", s(sc.bias_direction.as_str())),
            ("n_entities", "integer", json!(basis.n_entities)),
            ("median_entity_mape_pct", "number", pct(basis.median_entity_mape)),
            ("filtered_entities", "integer", json!(sc.summary.filtered_entities)),
            ("filter_matched_nothing", "boolean", json!(sc.summary.filter_matched_nothing)),
            ("context_wmape_pct", "number", pct(sc.summary.context.metrics.wmape)),
        ],
    ));
    out.push(table("country_metrics", "Accuracy by country", METRIC_COLUMNS, metric_rows(&sc.countries)));
    out.push(table("material_metrics", "Accuracy by material", METRIC_COLUMNS, metric_rows(&sc.materials)));
    out.push(table("key_metrics", "Accuracy by key", METRIC_COLUMNS, metric_rows(&sc.keys)));
    out.push(table(
        "tolerance",
        "Keys within the deviation tolerance",
        &[("deviation_pct", "number"), ("within_by_count_pct", "number")],
        vec![vec![pct(Some(sc.tolerance.deviation)), pct(Some(sc.tolerance.by_count))]],
    ));
    let mut bands = band_rows("overall", "all", &sc.bands_overall);
    for (g, b) in &sc.bands_by_country {
        bands.extend(band_rows("country", g, b));
    }
    for (g, b) in &sc.bands_by_size_class {
        bands.extend(band_rows("size_class", g, b));
    }
    out.push(table(
        "error_bands",
        "Key MAPE bands",
        &[
            ("scope", "string"),
            ("group", "string"),
            ("band", "string"),
            ("count", "integer"),
            ("share_pct", "number"),
            ("denominator_count", "integer"),
            ("total_count", "integer"),
            ("coverage_pct", "number"),
        ],
        bands,
    ));
    out.push(figure("error_bands_chart", "Key MAPE bands", "bar", "error_bands", "group", "share_pct"));
    out.push(table(
        "rankings",
        "Rankings",
        RANKING_COLUMNS,
        ranking_rows(&sc.rankings, |m| m != RankMetric::RevenueWeightedMape),
    ));
    let mut rw = Vec::new();
    for (list, items) in [("risk", &sc.risk_win.risk), ("win", &sc.risk_win.win)] {
        for e in items {
            rw.push(vec![s(list), s(&e.entity), num(e.revenue), pct(Some(e.mape))]);
        }
    }
    out.push(table(
        "risk_win",
        "High-revenue keys by MAPE against the deviation",
        &[("list", "string"), ("entity", "string"), ("revenue", "number"), ("mape_pct", "number")],
        rw,
    ));
    out.push(table(
        "benchmark",
        "Backtest WMAPE by model and horizon",
        &[("model", "string"), ("horizon", "integer"), ("wmape_pct", "number"), ("n", "integer")],
        body.benchmark.iter().map(|b| vec![s(&b.model_id), json!(b.horizon), pct(b.wmape), json!(b.n)]).collect(),
    ));
    if !revenue_views {
        return;
    }
    let mut rows = Vec::new();
    for (level, list) in [("country", &sc.countries), ("material", &sc.materials), ("key", &sc.keys)] {
        for m in list {
            rows.push(vec![s(level), s(&m.entity), num(m.revenue), pct(m.revenue_weighted_mape)]);
        }
    }
    out.push(table(
        "revenue_weighted_metrics",
        "Revenue-weighted MAPE",
        &[("level", "string"), ("entity", "string"), ("revenue", "number"), ("revenue_weighted_mape_pct", "number")],
        rows,
    ));
    out.push(table(
        "tolerance_by_revenue",
        "Revenue within the deviation tolerance",
        &[("deviation_pct", "number"), ("within_by_revenue_pct", "number"), ("total_revenue", "number")],
        vec![vec![pct(Some(sc.tolerance.deviation)), pct(Some(sc.tolerance.by_revenue)), num(sc.total_revenue)]],
    ));
    out.push(table(
        "rankings_revenue_weighted",
        "Rankings by revenue-weighted MAPE",
        RANKING_COLUMNS,
        ranking_rows(&sc.rankings, |m| m == RankMetric::RevenueWeightedMape),
    ));
    if let Some(bins) = &sc.revenue_bins {
        out.push(table(
            "revenue_bins",
            "MAPE by revenue quartile",
            &[("bin", "integer"), ("lower", "number"), ("upper", "number"), ("avg_mape_pct", "number"), ("materials", "integer")],
            bins.bins
                .iter()
                .map(|b| vec![json!(b.bin), num(b.lower), num(b.upper), pct(b.avg_mape), json!(b.material_count)])
                .collect(),
        ));
        out.push(table(
            "revenue_bin_deviation",
            "Country deviation from the bin average",
            &[
                ("country", "string"),
                ("bin", "integer"),
                ("avg_mape_pct", "number"),
                ("deviation_pp", "number"),
                ("materials", "integer"),
                ("low_support", "boolean"),
            ],
            bins.country_deviation
                .iter()
                .map(|d| {
                    vec![s(&d.country), json!(d.bin), pct(d.avg_mape), pct(d.deviation), json!(d.material_count), json!(d.low_support)]
                })
                .collect(),
        ));
    }
}

fn mix_rows(dimension: &str, rows: &[ShareRow]) -> Vec<Vec<Value>> {
    rows.iter()
        .map(|r| {
            vec![
                s(dimension),
                s(&r.entity),
                num(r.actuals),
                num(r.revenue),
                pct(Some(r.share_a)),
                pct(Some(r.share_r)),
                r.asp.map_or(Value::Null, num),
                pct(Some(r.prem_disc)),
            ]
        })
        .collect()
}

fn overall_sections(r: &Reflection, out: &mut Vec<Section>) {
    let Some(o) = &r.overall else { return };
    out.push(summary(
        "summary",
        "Value and mix",
        vec![
            ("window_start", "period", s(o.window_start)),
            ("window_end", "period", s(o.window_end)),
            ("actuals", "number", num(o.dataset_actuals)),
            ("revenue", "number", num(o.dataset_revenue)),
            ("country_hhi", "number", num(o.country_concentration.hhi)),
            ("material_hhi", "number", num(o.material_concentration.hhi)),
            ("asp_coverage_pct", "number", pct(Some(o.materials.asp_summary.coverage))),
            ("asp_median", "number", o.materials.asp_summary.median.map_or(Value::Null, num)),
        ],
    ));
    let mut rows = mix_rows("country", &o.countries.rows);
    rows.extend(mix_rows("material", &o.materials.rows));
    out.push(table(
        "mix",
        "Shares and average selling price",
        &[
            ("dimension", "string"),
            ("entity", "string"),
            ("actuals", "number"),
            ("revenue", "number"),
            ("share_actuals_pct", "number"),
            ("share_revenue_pct", "number"),
            ("asp", "number"),
            ("premium_discount_pp", "number"),
        ],
        rows,
    ));
    let mut conc = Vec::new();
    let mut pareto = Vec::new();
    for (dim, c) in [("country", &o.country_concentration), ("material", &o.material_concentration)] {
        conc.push(vec![s(dim), s("hhi"), num(c.hhi)]);
        for (k, v) in &c.top_k {
            conc.push(vec![s(dim), s(format!("top_{k}_share_pct")), pct(Some(*v))]);
        }
        for p in &c.pareto {
            pareto.push(vec![s(dim), json!(p.rank), s(&p.entity), pct(Some(p.cumulative_share))]);
        }
    }
    out.push(table("concentration", "Revenue concentration", &[("dimension", "string"), ("measure", "string"), ("value", "number")], conc));
    out.push(table(
        "pareto",
        "Cumulative revenue share",
        &[("dimension", "string"), ("rank", "integer"), ("entity", "string"), ("cumulative_share_pct", "number")],
        pareto,
    ));
    out.push(figure("pareto_chart", "Cumulative revenue share", "pareto", "pareto", "rank", "cumulative_share_pct"));
    out.push(table(
        "intersections",
        "Country by price band",
        &[
            ("country", "string"),
            ("price_band", "string"),
            ("materials", "integer"),
            ("actuals", "number"),
            ("revenue", "number"),
            ("under_10_share_pct", "number"),
            ("10_20_share_pct", "number"),
            ("20_40_share_pct", "number"),
            ("over_40_share_pct", "number"),
            ("coverage_pct", "number"),
            ("low_support", "boolean"),
            ("heuristic", "boolean"),
        ],
        o.intersections
            .iter()
            .map(|c| {
                let mut row = vec![s(&c.row), s(&c.column), json!(c.materials), num(c.actuals), num(c.revenue)];
                row.extend(c.bands.shares.iter().map(|v| pct(Some(*v))));
                row.extend([pct(Some(c.bands.coverage_note)), json!(c.low_support), json!(c.heuristic)]);
                row
            })
            .collect(),
    ));
    if r.job.toggles.revenue_views {
        out.push(table(
            "intersections_revenue_weighted",
            "Revenue-weighted band shares by cell",
            &[
                ("country", "string"),
                ("price_band", "string"),
                ("under_10_share_pct", "number"),
                ("10_20_share_pct", "number"),
                ("20_40_share_pct", "number"),
                ("over_40_share_pct", "number"),
            ],
            o.intersections
                .iter()
                .map(|c| {
                    let mut row = vec![s(&c.row), s(&c.column)];
                    row.extend(c.revenue_weighted_band_shares.iter().map(|v| pct(Some(*v))));
                    row
                })
                .collect(),
        ));
    }
}

fn opt(v: &Option<String>) -> Value {
    v.as_ref().map_or(Value::Null, s)
}

fn mom_rows(doc: &MomTableDoc, rows: &[MomRowDoc]) -> Vec<Vec<Value>> {
    let rank: BTreeMap<&str, usize> = doc.ranking.iter().enumerate().map(|(i, e)| (e.as_str(), i + 1)).collect();
    rows.iter()
        .map(|r| {
            vec![
                s(&r.entity),
                json!(rank.get(r.entity.as_str())),
                opt(&r.current),
                opt(&r.prior),
                s(&r.delta),
                pct(r.pct_change),
                pct(r.contribution_share),
            ]
        })
        .collect()
}

const MOM_COLUMNS: &[(&str, &str)] = &[
    ("entity", "string"),
    ("rank", "integer"),
    ("current", "decimal"),
    ("prior", "decimal"),
    ("delta", "decimal"),
    ("pct_change_pct", "number"),
    ("contribution_share_pct", "number"),
];

fn monthly_sections(r: &Reflection, out: &mut Vec<Section>) {
    let Some(m) = &r.monthly else { return };
    let holding = m
        .proofs
        .iter()
        .filter(|p| [&p.actuals, &p.revenue].iter().all(|d| d.sum_of_deltas == d.total_delta && d.difference == "0"))
        .count();
    out.push(summary(
        "summary",
        "Latest month",
        vec![
            ("period", "period", s(m.latest_country.period)),
            ("prior_period", "period", s(m.latest_country.prior_period)),
            ("proofs", "integer", json!(m.proofs.len())),
            ("proofs_holding", "integer", json!(holding)),
            ("alerts", "integer", json!(m.alerts.len())),
        ],
    ));
    for (id, doc) in [("mom_country", &m.latest_country), ("mom_key", &m.latest_key)] {
        out.push(table(id, &format!("Change in actuals by {}", doc.level), MOM_COLUMNS, mom_rows(doc, &doc.actuals)));
        out.push(table(
            &format!("{id}_revenue"),
            &format!("Change in revenue by {}", doc.level),
            MOM_COLUMNS,
            mom_rows(doc, &doc.revenue),
        ));
    }
    out.push(figure("mom_country_chart", "Change in actuals by country", "bar", "mom_country", "entity", "delta"));
    let mut rec = Vec::new();
    for doc in [&m.latest_country, &m.latest_key] {
        for (measure, p) in [("actuals", &doc.proof_actuals), ("revenue", &doc.proof_revenue)] {
            rec.push(vec![s(&doc.level), s(measure), s(&p.sum_of_deltas), s(&p.total_delta), s(&p.difference)]);
        }
    }
    out.push(table(
        "reconciliation",
        "Latest month reconciliation",
        &[
            ("level", "string"),
            ("measure", "string"),
            ("sum_of_deltas", "decimal"),
            ("total_delta", "decimal"),
            ("difference", "decimal"),
        ],
        rec,
    ));
    out.push(table(
        "transition_proofs",
        "Reconciliation for every month transition",
        &[
            ("level", "string"),
            ("period", "period"),
            ("actuals_total_delta", "decimal"),
            ("actuals_difference", "decimal"),
            ("revenue_total_delta", "decimal"),
            ("revenue_difference", "decimal"),
            ("rows", "integer"),
            ("nonpositive_prior_rows", "integer"),
            ("pct_unavailable_rows", "integer"),
        ],
        m.proofs
            .iter()
            .map(|p| {
                vec![
                    s(&p.level),
                    s(p.period),
                    s(&p.actuals.total_delta),
                    s(&p.actuals.difference),
                    s(&p.revenue.total_delta),
                    s(&p.revenue.difference),
                    json!(p.rows),
                    json!(p.nonpositive_prior_rows),
                    json!(p.pct_unavailable_rows),
                ]
            })
            .collect(),
    ));
    out.push(table(
        "momentum",
        "Momentum by key",
        &[("entity", "string"), ("delta", "number"), ("prior_delta", "number"), ("momentum", "number")],
        m.momentum.iter().map(|x| vec![s(&x.entity), num(x.delta), num(x.prior_delta), num(x.momentum)]).collect(),
    ));
    out.push(table(
        "alerts",
        "Alerts",
        &[("entity", "string"), ("kind", "string"), ("value", "number")],
        m.alerts
            .iter()
            .map(|a| {
                let kind = serde_json::to_value(a.kind).expect("alert kind serializes");
                vec![s(&a.entity), kind, num(a.value)]
            })
            .collect(),
    ));
}

fn trajectory_section(verdicts: &[TrendVerdict]) -> Section {
    table(
        "trajectory",
        "Accuracy trends",
        &[
            ("entity", "string"),
            ("metric", "string"),
            ("slope_pp", "number"),
            ("slope_stderr_pp", "number"),
            ("threshold_pp", "number"),
            ("classification", "string"),
            ("change_points", "string"),
            ("attribution", "string"),
        ],
        verdicts
            .iter()
            .map(|v| {
                let join = |xs: Vec<String>| xs.join(", ");
                vec![
                    s(&v.entity),
                    s(v.metric.as_str()),
                    num(v.slope),
                    num(v.slope_stderr),
                    num(v.threshold),
                    s(v.classification.as_str()),
                    s(join(v.change_points.iter().map(|p| p.to_string()).collect())),
                    s(if v.regime_attribution.is_empty() {
                        "no change point".to_string()
                    } else {
                        join(v.regime_attribution.iter().map(|a| format!("{}: {}", a.period, a.label)).collect())
                    }),
                ]
            })
            .collect(),
    )
}

fn checks_section(r: &Reflection) -> Section {
    table(
        "contract_checks",
        "Contract checks",
        &[("check", "string"), ("items_checked", "integer"), ("violations", "integer")],
        r.checks.iter().map(|c| vec![s(c.kind.label()), json!(c.items_checked), json!(c.violations)]).collect(),
    )
}

/// Sections in their fixed order, without the failure banner.
pub fn build_sections(r: &Reflection) -> Vec<Section> {
    let mut out = Vec::new();
    match r.job.report_family {
        ReportFamily::PerformanceScorecard => scorecard_sections(r, &mut out),
        ReportFamily::TrendOverall => overall_sections(r, &mut out),
        ReportFamily::TrendMonthly => monthly_sections(r, &mut out),
    }
    if let Some(v) = &r.trajectory {
        out.push(trajectory_section(v));
    }
    out.push(checks_section(r));
    out
}

/// Claims must match the cells they cite and appear in the text; named
/// entities must be reported and ranked where the text says.
pub fn validate_blocks(role: Role, blocks: &[NarrativeBlock], sections: &[Section], r: &Reflection) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, b) in blocks.iter().enumerate() {
        let loc = format!("narrative.{}.{i}", role.as_str());
        for c in &b.claims {
            let actual = cell(sections, &c.table, c.row, &c.column).map(cell_text);
            if actual.as_deref() != Some(c.value.as_str()) {
                out.push(Violation {
                    kind: ViolationKind::NamedOutlierPresence,
                    location: loc.clone(),
                    detail: format!("claim {} row {} {} = {} does not match the table", c.table, c.row, c.column, c.value),
                });
            } else if !b.text.contains(&c.value) {
                out.push(Violation {
                    kind: ViolationKind::NamedOutlierPresence,
                    location: loc.clone(),
                    detail: format!("claimed value {} is not in the text", c.value),
                });
            }
        }
        out.extend(validate_text(&b.text, &loc, r));
    }
    out
}

fn narrate(role: Role, r: &Reflection, sections: &[Section], provider: &dyn NarrativeProvider) -> Vec<NarrativeBlock> {
    let fallback = |why: String| {
        let mut blocks = TemplateProvider.narrate(role, r, sections).unwrap_or_default();
        for b in &mut blocks {
            b.provenance = format!("template (fallback: {why})");
        }
        blocks
    };
    match provider.narrate(role, r, sections) {
        Ok(blocks) => {
            let v = validate_blocks(role, &blocks, sections, r);
            if v.is_empty() || provider.name() == TemplateProvider.name() {
                blocks
            } else {
                fallback(format!("{} narrative failed validation: {}", provider.name(), v[0].detail))
            }
        }
        Err(e) => fallback(e),
    }
}

/// Builds the artifact. Narrative violations join the reflection's, and
/// any violation puts the failure banner first.
pub fn assemble_report(r: &Reflection, provider: &dyn NarrativeProvider) -> ReportArtifact {
    let mut sections = build_sections(r);
    let mut violations = r.violations.clone();
    let narrative = r.job.toggles.narrative.then(|| {
        let mut map = BTreeMap::new();
        for &role in &r.job.roles {
            let blocks = narrate(role, r, &sections, provider);
            violations.extend(validate_blocks(role, &blocks, &sections, r));
            map.insert(role, blocks);
        }
        map
    });
    if !violations.is_empty() {
        let text = format!("Report failed validation with {} violation(s).", violations.len());
        sections.insert(
            0,
            Section::Banner { id: FAILED_BANNER.into(), level: "error".into(), text, violations: violations.clone() },
        );
    }
    let mut artifact = ReportArtifact {
        job: r.job.clone(),
        passed: violations.is_empty(),
        sections,
        narrative,
        lineage: Lineage {
            dataset_id: r.job.dataset_id.clone(),
            dataset_hash: r.dataset_hash.clone(),
            config_hash: r.job.config_hash.clone(),
            job_hash: r.job.hash(),
            reflection_hash: r.content_hash(),
            runs: r.runs.clone(),
            evaluation_source: r.evaluation_source.clone(),
            window_start: r.window_start,
            window_end: r.window_end,
        },
        content_hash: String::new(),
    };
    artifact.content_hash = artifact.compute_hash();
    artifact
}

/// Stores the artifact with its reflection attached. The run is keyed by
/// the job hash, so repeating a job returns the first stored report.
pub fn persist_report(store: &ArtifactStore, artifact: &ReportArtifact, r: &Reflection) -> Result<RunRecord> {
    let dataset_id = r.job.dataset_id.as_deref().unwrap_or_default();
    let reflection = serde_json::to_vec_pretty(r).expect("reflection serializes");
    Ok(store.persist_with_attachments(
        dataset_id,
        &r.job.hash()[..32],
        r.job.report_family.artifact_kind(),
        r.runs.clone(),
        &artifact.to_bytes(),
        &[(REFLECTION_ATTACHMENT, &reflection)],
    )?)
}
