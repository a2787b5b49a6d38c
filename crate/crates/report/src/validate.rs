//! Contract checks over a reflection and over narrative text.

use crate::reflection::{CheckOutcome, MomRowDoc, MomTableDoc, ProofDoc, Reflection, Violation, ViolationKind};
use regex::Regex;
use sparecast_core::exact::{self, Exact};
use sparecast_core::scorecard::{entity_ranking, BandDistribution, EntityLevel, MetricRow};
use sparecast_core::trend::{ShareRow, OVERALL};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

/// Relative tolerance for floating totals.
pub const TOTALS_RTOL: f64 = 1e-9;
pub const SHARE_TOL: f64 = 1e-9;

#[derive(Default)]
struct Checks {
    counts: BTreeMap<ViolationKind, usize>,
    violations: Vec<Violation>,
}

impl Checks {
    fn check(&mut self, kind: ViolationKind, ok: bool, location: &str, detail: impl FnOnce() -> String) {
        *self.counts.entry(kind).or_default() += 1;
        if !ok {
            self.violations.push(Violation { kind, location: location.to_string(), detail: detail() });
        }
    }

    fn finish(self) -> (Vec<CheckOutcome>, Vec<Violation>) {
        let outcomes = ViolationKind::ALL
            .iter()
            .map(|&kind| CheckOutcome {
                kind,
                items_checked: self.counts.get(&kind).copied().unwrap_or(0),
                violations: self.violations.iter().filter(|v| v.kind == kind).count(),
            })
            .collect();
        (outcomes, self.violations)
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOTALS_RTOL * a.abs().max(b.abs()).max(1.0)
}

fn zero() -> Exact {
    exact::from_f64(0.0)
}

/// Runs every contract rule that applies to the bodies present.
pub fn validate_contract(r: &Reflection) -> (Vec<CheckOutcome>, Vec<Violation>) {
    let mut c = Checks::default();
    if let Some(body) = &r.scorecard {
        let s = &body.scorecard;
        let key_rev: f64 = sparecast_core::num::compensated_sum(s.keys.iter().map(|k| k.revenue));
        c.check(ViolationKind::TotalsReconcile, close(s.total_revenue, key_rev), "scorecard.keys", || {
            format!("key revenue {key_rev} against total {}", s.total_revenue)
        });
        c.check(ViolationKind::TotalsReconcile, close(s.total_revenue, body.dataset_revenue), "scorecard.total_revenue", || {
            format!("scorecard total {} against dataset revenue {}", s.total_revenue, body.dataset_revenue)
        });
        check_bands(&mut c, "bands.overall", &s.bands_overall);
        for (g, b) in &s.bands_by_country {
            check_bands(&mut c, &format!("bands.country.{g}"), b);
        }
        for (g, b) in &s.bands_by_size_class {
            check_bands(&mut c, &format!("bands.size_class.{g}"), b);
        }
        for (level, rows) in [("keys", &s.keys), ("countries", &s.countries), ("materials", &s.materials)] {
            for row in rows {
                check_denominator(&mut c, level, row);
            }
        }
        let keys: BTreeSet<&str> = s.keys.iter().map(|k| k.entity.as_str()).collect();
        for (list, items) in [("risk", &s.risk_win.risk), ("win", &s.risk_win.win)] {
            for e in items {
                c.check(ViolationKind::NamedOutlierPresence, keys.contains(e.entity.as_str()), list, || {
                    format!("{} is not in the key table", e.entity)
                });
            }
            let ordered = items.windows(2).all(|w| {
                w[0].revenue > w[1].revenue || (w[0].revenue == w[1].revenue && w[0].entity < w[1].entity)
            });
            c.check(ViolationKind::RankingConsistency, ordered, list, || "not ordered by revenue".into());
        }
        for rk in &s.rankings {
            let rows = match rk.level {
                EntityLevel::Country => &s.countries,
                EntityLevel::Material => &s.materials,
                EntityLevel::Key => &s.keys,
            };
            let loc = format!("ranking.{}.{}", rk.level.as_str(), rk.metric.as_str());
            let names: BTreeSet<&str> = rows.iter().map(|r| r.entity.as_str()).collect();
            for e in rk.top.iter().chain(&rk.bottom) {
                c.check(ViolationKind::NamedOutlierPresence, names.contains(e.entity.as_str()), &loc, || {
                    format!("{} is not in the {} table", e.entity, rk.level.as_str())
                });
            }
            let expect = entity_ranking(rows, rk.level, rk.metric, rk.top.len().max(rk.bottom.len()));
            let ids = |v: &[sparecast_core::scorecard::RankedEntry]| v.iter().map(|e| e.entity.clone()).collect::<Vec<_>>();
            c.check(
                ViolationKind::RankingConsistency,
                ids(&expect.top) == ids(&rk.top) && ids(&expect.bottom) == ids(&rk.bottom),
                &loc,
                || format!("recomputed order {:?} / {:?}", ids(&expect.top), ids(&expect.bottom)),
            );
        }
    }
    if let Some(o) = &r.overall {
        for (name, sig) in [("countries", &o.countries), ("materials", &o.materials)] {
            check_share_rows(&mut c, name, &sig.rows, o.dataset_actuals, o.dataset_revenue);
        }
        let ia = sparecast_core::num::compensated_sum(o.intersections.iter().map(|i| i.actuals));
        let ir = sparecast_core::num::compensated_sum(o.intersections.iter().map(|i| i.revenue));
        c.check(
            ViolationKind::TotalsReconcile,
            close(ia, o.dataset_actuals) && close(ir, o.dataset_revenue),
            "intersections",
            || format!("cells sum to ({ia}, {ir}) against ({}, {})", o.dataset_actuals, o.dataset_revenue),
        );
        for cell in &o.intersections {
            check_bands(&mut c, &format!("intersections.{}.{}", cell.row, cell.column), &cell.bands);
        }
        let countries: BTreeSet<&str> = o.countries.rows.iter().map(|r| r.entity.as_str()).collect();
        for cell in &o.intersections {
            c.check(ViolationKind::NamedOutlierPresence, countries.contains(cell.row.as_str()), "intersections", || {
                format!("{} is not in the country table", cell.row)
            });
        }
        for (name, conc, rows) in
            [("countries", &o.country_concentration, &o.countries.rows), ("materials", &o.material_concentration, &o.materials.rows)]
        {
            let mut expect: Vec<&ShareRow> = rows.iter().collect();
            expect.sort_by(|a, b| b.revenue.total_cmp(&a.revenue).then_with(|| a.entity.cmp(&b.entity)));
            let ok = conc.pareto.len() == expect.len() && conc.pareto.iter().zip(&expect).all(|(p, r)| p.entity == r.entity);
            c.check(ViolationKind::RankingConsistency, ok, &format!("pareto.{name}"), || "pareto order differs".into());
        }
    }
    if let Some(m) = &r.monthly {
        for t in [&m.latest_country, &m.latest_key] {
            check_mom_table(&mut c, t);
        }
        for p in &m.proofs {
            let loc = format!("proof.{}.{}", p.level, p.period);
            for proof in [&p.actuals, &p.revenue] {
                let ok = parse(&proof.difference).is_some_and(|d| d == zero())
                    && parse(&proof.sum_of_deltas).zip(parse(&proof.total_delta)).is_some_and(|(a, b)| a == b);
                c.check(ViolationKind::TotalsReconcile, ok, &loc, || format!("difference {}", proof.difference));
            }
        }
        let keys: BTreeSet<&str> = m.latest_key.actuals.iter().map(|r| r.entity.as_str()).collect();
        for e in m.alerts.iter().map(|a| &a.entity).chain(m.momentum.iter().map(|r| &r.entity)) {
            c.check(ViolationKind::NamedOutlierPresence, keys.contains(e.as_str()), "alerts", || {
                format!("{e} is not in the key table")
            });
        }
    }
    if let Some(verdicts) = &r.trajectory {
        let known = known_entities(r);
        for v in verdicts {
            let ok = v.entity == OVERALL || v.entity.starts_with("pattern:") || known.contains(&v.entity);
            c.check(ViolationKind::NamedOutlierPresence, ok, "trajectory", || format!("{} is not a reported entity", v.entity));
        }
    }
    c.finish()
}

fn check_bands(c: &mut Checks, loc: &str, b: &BandDistribution) {
    let sum: f64 = b.shares.iter().sum();
    let counted: usize = b.counts.iter().sum();
    let shares_ok = if b.denominator_count > 0 { (sum - 1.0).abs() <= SHARE_TOL } else { sum == 0.0 };
    let note = if b.total_count == 0 { 0.0 } else { b.denominator_count as f64 / b.total_count as f64 };
    c.check(
        ViolationKind::BinCompleteness,
        shares_ok && counted == b.denominator_count && (b.coverage_note - note).abs() <= SHARE_TOL,
        loc,
        || format!("shares sum to {sum} over {} of {} entities", b.denominator_count, b.total_count),
    );
}

fn check_denominator(c: &mut Checks, level: &str, row: &MetricRow) {
    let ok = row.actuals > 0.0 || row.mape.is_none() && row.median_ape.is_none() && row.wmape.is_none();
    c.check(ViolationKind::DenominatorValidity, ok, level, || format!("{} has zero actuals but a percentage error", row.entity));
}

fn check_share_rows(c: &mut Checks, name: &str, rows: &[ShareRow], total_a: f64, total_r: f64) {
    let sum = |f: fn(&ShareRow) -> f64| sparecast_core::num::compensated_sum(rows.iter().map(f));
    let (a, r) = (sum(|x| x.actuals), sum(|x| x.revenue));
    c.check(ViolationKind::TotalsReconcile, close(a, total_a) && close(r, total_r), name, || {
        format!("rows sum to ({a}, {r}) against ({total_a}, {total_r})")
    });
    let (sa, sr) = (sum(|x| x.share_a), sum(|x| x.share_r));
    c.check(
        ViolationKind::BinCompleteness,
        (sa - 1.0).abs() <= SHARE_TOL && (sr - 1.0).abs() <= SHARE_TOL,
        &format!("{name}.shares"),
        || format!("shares sum to ({sa}, {sr})"),
    );
    for row in rows {
        c.check(ViolationKind::DenominatorValidity, row.actuals != 0.0 || row.asp.is_none(), name, || {
            format!("{} has an ASP without actuals", row.entity)
        });
    }
}

fn parse(s: &str) -> Option<Exact> {
    exact::parse_decimal(s).ok()
}

fn parse_opt(s: &Option<String>) -> Option<Option<Exact>> {
    match s {
        None => Some(None),
        Some(v) => parse(v).map(Some),
    }
}

/// Recomputes a month-over-month table from its rows with exact
/// arithmetic. Reports at most one totals violation per table.
fn check_mom_table(c: &mut Checks, t: &MomTableDoc) {
    for (measure, rows, proof) in [("actuals", &t.actuals, &t.proof_actuals), ("revenue", &t.revenue, &t.proof_revenue)] {
        let loc = format!("mom.{}.{}.{measure}", t.level, t.period);
        let problem = mom_problem(rows, proof);
        c.check(ViolationKind::TotalsReconcile, problem.is_none(), &loc, || problem.clone().unwrap_or_default());
        for row in rows {
            let prior = parse_opt(&row.prior).flatten();
            let ok = row.pct_change.is_none() || prior.is_some_and(|p| p > zero());
            c.check(ViolationKind::DenominatorValidity, ok, &loc, || {
                format!("{} has a percent change without a positive prior month", row.entity)
            });
        }
    }
    let mut expect: Vec<(Exact, &str)> = t
        .actuals
        .iter()
        .filter_map(|r| parse(&r.delta).map(|d| (if d < zero() { -d } else { d }, r.entity.as_str())))
        .collect();
    expect.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    let ok = expect.len() == t.ranking.len() && expect.iter().zip(&t.ranking).all(|(e, r)| e.1 == r);
    c.check(ViolationKind::RankingConsistency, ok, &format!("mom.{}.{}.ranking", t.level, t.period), || {
        "ranking is not ordered by absolute change".into()
    });
}

fn mom_problem(rows: &[MomRowDoc], proof: &ProofDoc) -> Option<String> {
    let (mut deltas, mut cur, mut prior) = (zero(), zero(), zero());
    for r in rows {
        let (Some(c), Some(p), Some(d)) = (parse_opt(&r.current), parse_opt(&r.prior), parse(&r.delta)) else {
            return Some(format!("{} has an unreadable amount", r.entity));
        };
        let (c, p) = (c.unwrap_or_else(zero), p.unwrap_or_else(zero));
        if d != &c - &p {
            return Some(format!("{} delta {} is not current minus prior", r.entity, r.delta));
        }
        deltas += d;
        cur += c;
        prior += p;
    }
    let total = cur - prior;
    let stated = (parse(&proof.sum_of_deltas), parse(&proof.total_delta), parse(&proof.difference));
    if stated != (Some(deltas.clone()), Some(total.clone()), Some(zero())) || deltas != total {
        return Some(format!(
            "sum of deltas {} and total change {} do not match the stated proof",
            exact::to_decimal_string(&deltas),
            exact::to_decimal_string(&total)
        ));
    }
    None
}

/// Every entity id a report may name.
pub fn known_entities(r: &Reflection) -> BTreeSet<String> {
    let mut out = BTreeSet::from([OVERALL.to_string()]);
    if let Some(b) = &r.scorecard {
        let s = &b.scorecard;
        out.extend(s.keys.iter().chain(&s.countries).chain(&s.materials).map(|x| x.entity.clone()));
    }
    if let Some(o) = &r.overall {
        out.extend(o.countries.rows.iter().chain(&o.materials.rows).map(|x| x.entity.clone()));
    }
    if let Some(m) = &r.monthly {
        out.extend(m.latest_country.actuals.iter().chain(&m.latest_key.actuals).map(|x| x.entity.clone()));
    }
    if let Some(t) = &r.trajectory {
        out.extend(t.iter().filter(|v| v.entity.starts_with("pattern:")).map(|v| v.entity.clone()));
    }
    out
}

/// Entities ranked at the favourable and unfavourable ends.
pub fn ranked_ends(r: &Reflection) -> (BTreeSet<String>, BTreeSet<String>) {
    let (mut top, mut bottom) = (BTreeSet::new(), BTreeSet::new());
    if let Some(b) = &r.scorecard {
        for rk in &b.scorecard.rankings {
            top.extend(rk.top.iter().map(|e| e.entity.clone()));
            bottom.extend(rk.bottom.iter().map(|e| e.entity.clone()));
        }
        top.extend(b.scorecard.risk_win.win.iter().map(|e| e.entity.clone()));
        bottom.extend(b.scorecard.risk_win.risk.iter().map(|e| e.entity.clone()));
    }
    (top, bottom)
}

static MARKUP: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[\[([^\]]+)\]\]").expect("valid regex"));
static KEY_TOKEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b[A-Z]{2,3}/[A-Za-z0-9_.-]+").expect("valid regex"));
static SENTENCE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[.;!?](\s+|$)|\n").expect("valid regex"));
static TOP_WORDS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(top|best)\b").expect("valid regex"));
static BOTTOM_WORDS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(worst|bottom)\b").expect("valid regex"));

/// Entity ids mentioned in free text: `[[id]]` markup and bare
/// `CC/part` tokens.
pub fn mentions(text: &str) -> Vec<String> {
    let mut out: Vec<String> = MARKUP.captures_iter(text).map(|c| c[1].to_string()).collect();
    let stripped = MARKUP.replace_all(text, " ");
    out.extend(
        KEY_TOKEN
            .find_iter(&stripped)
            .map(|m| m.as_str().trim_end_matches(['.', '-']).to_string()),
    );
    out
}

/// Checks free text against the reflection: every named entity must be
/// reported, and entities named next to ranking words must sit at that end
/// of a ranking.
pub fn validate_text(text: &str, location: &str, reflection: &Reflection) -> Vec<Violation> {
    let known = known_entities(reflection);
    let (top, bottom) = ranked_ends(reflection);
    let mut out = Vec::new();
    for sentence in SENTENCE.split(text) {
        let named = mentions(sentence);
        for e in &named {
            if !known.contains(e) {
                out.push(Violation {
                    kind: ViolationKind::NamedOutlierPresence,
                    location: location.to_string(),
                    detail: format!("{e} is not in any reported table"),
                });
            }
        }
        let checks = [(TOP_WORDS.is_match(sentence), &top, "top"), (BOTTOM_WORDS.is_match(sentence), &bottom, "bottom")];
        for (hit, set, end) in checks {
            for e in named.iter().filter(|e| hit && known.contains(*e) && !set.contains(*e)) {
                out.push(Violation {
                    kind: ViolationKind::RankingConsistency,
                    location: location.to_string(),
                    detail: format!("{e} is described at the {end} but is not ranked there"),
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(entity: &str, current: Option<&str>, prior: Option<&str>, delta: &str) -> MomRowDoc {
        MomRowDoc {
            entity: entity.into(),
            current: current.map(Into::into),
            prior: prior.map(Into::into),
            delta: delta.into(),
            pct_change: None,
            contribution_share: None,
        }
    }

    fn proof(s: &str, t: &str, d: &str) -> ProofDoc {
        ProofDoc { sum_of_deltas: s.into(), total_delta: t.into(), difference: d.into() }
    }

    #[test]
    fn mom_rows_reconcile_exactly() {
        let rows = vec![row("A", Some("0.1"), Some("0.3"), "-0.2"), row("B", Some("0.2"), None, "0.2")];
        assert_eq!(mom_problem(&rows, &proof("0", "0", "0")), None);
        assert!(mom_problem(&rows, &proof("0.1", "0", "0.1")).is_some());
        let bad = vec![row("A", Some("0.1"), Some("0.3"), "-0.19999")];
        assert!(mom_problem(&bad, &proof("-0.19999", "-0.2", "0.00001")).unwrap().contains("A delta"));
    }

    #[test]
    fn mentions_cover_markup_and_key_tokens() {
        let m = mentions("Worst: [[DE]] and FR/P-001. Then US/X.Y, end.");
        assert_eq!(m, vec!["DE", "FR/P-001", "US/X.Y"]);
        assert!(mentions("no ids here, AB / x").is_empty());
    }

    #[test]
    fn band_check_flags_incomplete_shares() {
        let mut c = Checks::default();
        let good = sparecast_core::scorecard::band_distribution(&[Some(0.05), Some(0.5), None]);
        check_bands(&mut c, "g", &good);
        let mut bad = good.clone();
        bad.shares[0] = 0.4;
        check_bands(&mut c, "b", &bad);
        let empty = sparecast_core::scorecard::band_distribution(&[None]);
        check_bands(&mut c, "e", &empty);
        let (outcomes, v) = c.finish();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].location, "b");
        assert_eq!(outcomes.iter().find(|o| o.kind == ViolationKind::BinCompleteness).unwrap().items_checked, 3);
    }
}
