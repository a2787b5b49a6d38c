//! Role-specific narrative. The template provider is deterministic; the
//! HTTP provider posts the reflection to an external endpoint and its
//! output is checked like any other narrative.

use crate::assemble::{cell, cell_text, Section};
use crate::job::{ReportFamily, Role};
use crate::reflection::Reflection;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::time::Duration;

/// A sentence-level figure: `value` must equal the rendered cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub table: String,
    pub row: usize,
    pub column: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NarrativeBlock {
    pub text: String,
    pub claims: Vec<Claim>,
    pub provenance: String,
}

pub trait NarrativeProvider: Send + Sync {
    fn name(&self) -> &str;
    fn narrate(&self, role: Role, reflection: &Reflection, sections: &[Section]) -> Result<Vec<NarrativeBlock>, String>;
}

pub const TEMPLATE_PROVENANCE: &str = "template";
pub const RISK_LIST_MAX: usize = 5;

#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateProvider;

/// Collects text fragments and the claims behind them.
struct Writer<'a> {
    sections: &'a [Section],
    text: String,
    claims: Vec<Claim>,
}

impl<'a> Writer<'a> {
    fn new(sections: &'a [Section]) -> Self {
        Self { sections, text: String::new(), claims: Vec::new() }
    }

    fn s(&mut self, t: &str) -> &mut Self {
        self.text.push_str(t);
        self
    }

    /// Appends the cell text and records the claim. Missing cells render
    /// as `n/a` without a claim.
    fn v(&mut self, table: &str, row: usize, column: &str) -> &mut Self {
        match cell(self.sections, table, row, column) {
            Some(c) => {
                let value = cell_text(c);
                self.text.push_str(&value);
                self.claims.push(Claim { table: table.into(), row, column: column.into(), value });
            }
            None => self.text.push_str("n/a"),
        }
        self
    }

    /// Appends an entity id as `[[id]]` markup.
    fn e(&mut self, table: &str, row: usize, column: &str) -> &mut Self {
        if let Some(c) = cell(self.sections, table, row, column) {
            self.text.push_str(&format!("[[{}]]", cell_text(c)));
        }
        self
    }

    fn block(&mut self) -> Option<NarrativeBlock> {
        let text = std::mem::take(&mut self.text);
        let claims = std::mem::take(&mut self.claims);
        (!text.is_empty()).then(|| NarrativeBlock { text, claims, provenance: TEMPLATE_PROVENANCE.into() })
    }
}

fn rows_where<'a>(sections: &'a [Section], table: &str, pred: impl Fn(&dyn Fn(&str) -> Option<&'a Value>) -> bool) -> Vec<usize> {
    let Some(Section::Table { columns, rows, .. }) = sections.iter().find(|s| s.id() == table) else {
        return Vec::new();
    };
    rows.iter()
        .enumerate()
        .filter(|(_, r)| {
            let get = |name: &str| columns.iter().position(|c| c.name == name).and_then(|i| r.get(i));
            pred(&get)
        })
        .map(|(i, _)| i)
        .collect()
}

fn is_str(v: Option<&Value>, s: &str) -> bool {
    v.and_then(Value::as_str) == Some(s)
}

fn list(w: &mut Writer, table: &str, rows: &[usize], entity: &str, value: &str, unit: &str) {
    for (i, &r) in rows.iter().enumerate() {
        if i > 0 {
            w.s(", ");
        }
        w.e(table, r, entity).s(" (").v(table, r, value).s(unit).s(")");
    }
}

impl TemplateProvider {
    fn scorecard(&self, role: Role, sections: &[Section]) -> Vec<NarrativeBlock> {
        let mut w = Writer::new(sections);
        let mut out = Vec::new();
        w.s("Accuracy from ")
            .v("summary", 0, "window_start")
            .s(" to ")
            .v("summary", 0, "window_end")
            .s(": WMAPE ")
            .v("summary", 0, "wmape_pct")
            .s("% and MAPE ")
            .v("summary", 0, "mape_pct")
            .s("% over ")
            .v("summary", 0, "n_entities")
            .s(" keys, ")
            .v("summary", 0, "bias_direction")
            .s(" overall.");
        out.extend(w.block());
        let best = rows_where(sections, "rankings", |g| {
            is_str(g("level"), "country") && is_str(g("metric"), "wmape") && is_str(g("end"), "top")
        });
        if !best.is_empty() {
            w.s("Best countries by WMAPE: ");
            list(&mut w, "rankings", &best, "entity", "value_pct", "%");
            w.s(".");
            out.extend(w.block());
        }
        let risk = rows_where(sections, "risk_win", |g| is_str(g("list"), "risk"));
        if risk.is_empty() {
            w.s("No high-revenue key is outside the ").v("tolerance", 0, "deviation_pct").s("% deviation.");
        } else {
            w.s("High-revenue keys outside the ").v("tolerance", 0, "deviation_pct").s("% deviation: ");
            list(&mut w, "risk_win", &risk[..risk.len().min(RISK_LIST_MAX)], "entity", "mape_pct", "% MAPE");
            w.s(".");
        }
        out.extend(w.block());
        if role == Role::Planner {
            let worst = rows_where(sections, "rankings", |g| {
                is_str(g("level"), "material") && is_str(g("metric"), "wmape") && is_str(g("end"), "bottom")
            });
            if !worst.is_empty() {
                w.s("Worst materials by WMAPE: ");
                list(&mut w, "rankings", &worst, "entity", "value_pct", "%");
                w.s(".");
                out.extend(w.block());
            }
            w.s("Keys within tolerance: ")
                .v("tolerance", 0, "within_by_count_pct")
                .s("% by count. Keys under 10% MAPE: ")
                .v("error_bands", 0, "share_pct")
                .s("%.");
            out.extend(w.block());
            w.s("Recommended checks: review the forecast inputs for the keys listed above and confirm their recent actuals.");
            out.extend(w.block());
        }
        out
    }

    fn overall(&self, role: Role, sections: &[Section]) -> Vec<NarrativeBlock> {
        let mut w = Writer::new(sections);
        let mut out = Vec::new();
        w.s("From ")
            .v("summary", 0, "window_start")
            .s(" to ")
            .v("summary", 0, "window_end")
            .s(" demand was ")
            .v("summary", 0, "actuals")
            .s(" units for revenue of ")
            .v("summary", 0, "revenue")
            .s(". Country revenue HHI is ")
            .v("summary", 0, "country_hhi")
            .s(".");
        out.extend(w.block());
        let lead = rows_where(sections, "pareto", |g| is_str(g("dimension"), "country"));
        if !lead.is_empty() {
            w.s("Largest countries by revenue: ");
            for (i, &r) in lead.iter().take(3).enumerate() {
                if i > 0 {
                    w.s(", ");
                }
                w.e("pareto", r, "entity").s(" (cumulative ").v("pareto", r, "cumulative_share_pct").s("%)");
            }
            w.s(".");
            out.extend(w.block());
        }
        let mut weak = rows_where(sections, "intersections", |g| {
            g("low_support").and_then(Value::as_bool) == Some(false)
                && g("over_40_share_pct").and_then(Value::as_f64).is_some_and(|v| v > 0.0)
        });
        weak.truncate(RISK_LIST_MAX);
        if !weak.is_empty() {
            w.s("Cells with keys above 40% MAPE: ");
            for (i, &r) in weak.iter().enumerate() {
                if i > 0 {
                    w.s(", ");
                }
                w.e("intersections", r, "country").s(" ").v("intersections", r, "price_band").s(" (").v(
                    "intersections",
                    r,
                    "over_40_share_pct",
                );
                w.s("%)");
            }
            w.s(".");
            out.extend(w.block());
        }
        if role == Role::Planner {
            w.s("Material revenue HHI is ").v("summary", 0, "material_hhi").s(" and ASP coverage is ").v(
                "summary",
                0,
                "asp_coverage_pct",
            );
            w.s("%.");
            out.extend(w.block());
            w.s("Recommended checks: confirm price band assignments for the cells above.");
            out.extend(w.block());
        }
        out
    }

    fn monthly(&self, role: Role, sections: &[Section]) -> Vec<NarrativeBlock> {
        let mut w = Writer::new(sections);
        let mut out = Vec::new();
        let total = rows_where(sections, "reconciliation", |g| is_str(g("level"), "country") && is_str(g("measure"), "actuals"));
        if let Some(&r) = total.first() {
            w.s("Demand changed by ")
                .v("reconciliation", r, "total_delta")
                .s(" units from ")
                .v("summary", 0, "prior_period")
                .s(" to ")
                .v("summary", 0, "period")
                .s("; the country deltas sum to ")
                .v("reconciliation", r, "sum_of_deltas")
                .s(".");
            out.extend(w.block());
        }
        let movers = rows_where(sections, "mom_country", |g| g("rank").and_then(Value::as_u64).is_some_and(|k| k <= 3));
        let mut movers: Vec<(u64, usize)> = movers
            .into_iter()
            .filter_map(|r| cell(sections, "mom_country", r, "rank").and_then(Value::as_u64).map(|k| (k, r)))
            .collect();
        movers.sort();
        if !movers.is_empty() {
            w.s("Largest movers: ");
            let rows: Vec<usize> = movers.iter().map(|m| m.1).collect();
            list(&mut w, "mom_country", &rows, "entity", "delta", " units");
            w.s(".");
            out.extend(w.block());
        }
        let declines = rows_where(sections, "alerts", |g| is_str(g("kind"), "consecutive_decline"));
        if !declines.is_empty() {
            w.s("Consecutive declines in large keys: ");
            list(&mut w, "alerts", &declines[..declines.len().min(RISK_LIST_MAX)], "entity", "value", " units");
            w.s(".");
            out.extend(w.block());
        }
        if role == Role::Planner {
            let others = rows_where(sections, "alerts", |g| !is_str(g("kind"), "consecutive_decline"));
            if !others.is_empty() {
                w.s("Price alerts: ");
                for (i, &r) in others.iter().take(RISK_LIST_MAX).enumerate() {
                    if i > 0 {
                        w.s(", ");
                    }
                    w.e("alerts", r, "entity").s(" ").v("alerts", r, "kind");
                }
                w.s(".");
                out.extend(w.block());
            }
            w.s("Transitions reconciled: ")
                .v("summary", 0, "proofs_holding")
                .s(" of ")
                .v("summary", 0, "proofs")
                .s(".");
            out.extend(w.block());
            w.s("Recommended checks: confirm the large declines against open orders.");
            out.extend(w.block());
        }
        out
    }

    fn trajectory(&self, sections: &[Section]) -> Vec<NarrativeBlock> {
        let mut w = Writer::new(sections);
        let rows = rows_where(sections, "trajectory", |g| is_str(g("classification"), "deteriorating"));
        if rows.is_empty() {
            return Vec::new();
        }
        w.s("Deteriorating trends: ");
        for (i, &r) in rows.iter().take(RISK_LIST_MAX).enumerate() {
            if i > 0 {
                w.s(", ");
            }
            w.e("trajectory", r, "entity")
                .s(" ")
                .v("trajectory", r, "metric")
                .s(" (")
                .v("trajectory", r, "slope_pp")
                .s(" pp per month, ")
                .v("trajectory", r, "attribution")
                .s(")");
        }
        w.s(".");
        w.block().into_iter().collect()
    }
}

impl NarrativeProvider for TemplateProvider {
    fn name(&self) -> &str {
        TEMPLATE_PROVENANCE
    }

    fn narrate(&self, role: Role, reflection: &Reflection, sections: &[Section]) -> Result<Vec<NarrativeBlock>, String> {
        let mut out = match reflection.job.report_family {
            ReportFamily::PerformanceScorecard => self.scorecard(role, sections),
            ReportFamily::TrendOverall => self.overall(role, sections),
            ReportFamily::TrendMonthly => self.monthly(role, sections),
        };
        if role == Role::Planner {
            out.extend(self.trajectory(sections));
        }
        Ok(out)
    }
}

pub const HTTP_TIMEOUT: Duration = Duration::from_secs(10);

/// Posts `{role, reflection, sections}` and expects `{"blocks": [...]}`.
/// No retries.
#[derive(Debug, Clone)]
pub struct HttpProvider {
    pub url: String,
    pub timeout: Duration,
}

impl HttpProvider {
    pub fn new(url: impl Into<String>) -> Self {
        Self { url: url.into(), timeout: HTTP_TIMEOUT }
    }
}

#[derive(Deserialize)]
struct HttpReply {
    blocks: Vec<NarrativeBlock>,
}

impl NarrativeProvider for HttpProvider {
    fn name(&self) -> &str {
        "http"
    }

    fn narrate(&self, role: Role, reflection: &Reflection, sections: &[Section]) -> Result<Vec<NarrativeBlock>, String> {
        let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(self.timeout)).build().into();
        let body = json!({ "role": role, "reflection": reflection, "sections": sections });
        let bytes = serde_json::to_vec(&body).map_err(|e| e.to_string())?;
        let mut resp = agent
            .post(&self.url)
            .header("content-type", "application/json")
            .send(&bytes[..])
            .map_err(|e| format!("narrative endpoint: {e}"))?;
        let text = resp.body_mut().read_to_string().map_err(|e| format!("narrative endpoint reply: {e}"))?;
        let reply: HttpReply = serde_json::from_str(&text).map_err(|e| format!("narrative endpoint reply: {e}"))?;
        Ok(reply.blocks)
    }
}
