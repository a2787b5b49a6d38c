mod common;

use common::{job, scorecard_job, small_store};
use serde_json::json;
use sparecast_report::assemble::{build_sections, REFLECTION_ATTACHMENT, FAILED_BANNER};
use sparecast_report::validate::{ranked_ends, validate_text};
use sparecast_report::{
    assemble_report, execute_jobspec, persist_report, validate_contract, ReportError, Section, TemplateProvider,
    ViolationKind,
};
use std::sync::OnceLock;

struct Shared {
    _dir: tempfile::TempDir,
    store: sparecast_store::ArtifactStore,
}

fn shared() -> &'static Shared {
    static S: OnceLock<Shared> = OnceLock::new();
    S.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let (store, _) = small_store(dir.path(), true);
        Shared { _dir: dir, store }
    })
}

fn kinds(v: &[sparecast_report::Violation]) -> Vec<ViolationKind> {
    v.iter().map(|x| x.kind).collect()
}

#[test]
fn scorecard_passes_and_is_deterministic() {
    let s = shared();
    let spec = scorecard_job(&s.store);
    let r = execute_jobspec(&s.store, &spec).unwrap();
    assert!(r.violations.is_empty(), "{:?}", r.violations);
    assert_eq!(r.evaluation_source, "forecast_history");
    let a = assemble_report(&r, &TemplateProvider);
    assert!(a.passed);
    assert_eq!(a.sections[0].id(), "summary");
    assert_eq!(a.sections.last().unwrap().id(), "contract_checks");
    let b = assemble_report(&execute_jobspec(&s.store, &spec).unwrap(), &TemplateProvider);
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_eq!(a.content_hash, a.compute_hash());
    let narrative = a.narrative.as_ref().unwrap();
    assert_eq!(narrative.len(), 2);
    for blocks in narrative.values() {
        assert!(!blocks.is_empty());
        for b in blocks {
            for c in &b.claims {
                assert!(b.text.contains(&c.value));
            }
        }
    }
}

#[test]
fn revenue_toggle_only_adds_sections() {
    let s = shared();
    let on = execute_jobspec(&s.store, &job(&s.store, json!({"family": "scorecard", "narrative": false}))).unwrap();
    let off =
        execute_jobspec(&s.store, &job(&s.store, json!({"family": "scorecard", "narrative": false, "revenue_views": false})))
            .unwrap();
    let (a, b) = (build_sections(&on), build_sections(&off));
    let extra: Vec<&str> = a.iter().map(Section::id).filter(|id| !b.iter().any(|x| x.id() == *id)).collect();
    assert_eq!(
        extra,
        ["revenue_weighted_metrics", "tolerance_by_revenue", "rankings_revenue_weighted", "revenue_bins", "revenue_bin_deviation"]
    );
    for sec in &b {
        let twin = a.iter().find(|x| x.id() == sec.id()).unwrap();
        assert_eq!(serde_json::to_vec(sec).unwrap(), serde_json::to_vec(twin).unwrap(), "{}", sec.id());
    }
    let art = assemble_report(&off, &TemplateProvider);
    assert!(art.narrative.is_none());
    let v: serde_json::Value = serde_json::from_slice(&art.to_bytes()).unwrap();
    assert!(v.get("narrative").is_none());
}

#[test]
fn trend_toggle_adds_trajectory_with_attribution() {
    let s = shared();
    let r = execute_jobspec(&s.store, &job(&s.store, json!({"family": "trend", "months": 48}))).unwrap();
    assert!(r.violations.is_empty(), "{:?}", r.violations);
    let verdicts = r.trajectory.as_ref().unwrap();
    let overall = verdicts.iter().find(|v| v.entity == "overall" && v.metric.as_str() == "mape").unwrap();
    assert!(overall.regime_attribution.iter().any(|a| a.label == "shock"), "{overall:?}");
    let none = execute_jobspec(&s.store, &job(&s.store, json!({"family": "trend", "trend": false}))).unwrap();
    assert!(none.trajectory.is_none());
    assert!(!build_sections(&none).iter().any(|x| x.id() == "trajectory"));
}

#[test]
fn monthly_trend_reconciles_every_transition() {
    let s = shared();
    let r = execute_jobspec(&s.store, &job(&s.store, json!({"family": "trend-monthly"}))).unwrap();
    assert!(r.violations.is_empty(), "{:?}", r.violations);
    let m = r.monthly.as_ref().unwrap();
    assert_eq!(m.proofs.len(), 2 * 47);
    assert!(m.proofs.iter().all(|p| p.actuals.difference == "0" && p.revenue.difference == "0"));
    let a = assemble_report(&r, &TemplateProvider);
    let headline = &a.narrative.as_ref().unwrap().values().next().unwrap()[0];
    assert!(headline.text.starts_with("Demand changed by "));
    assert_eq!(headline.claims[0].table, "reconciliation");
}

#[test]
fn tampering_is_caught_per_rule() {
    let s = shared();
    let mut sc = execute_jobspec(&s.store, &scorecard_job(&s.store)).unwrap();
    let body = sc.scorecard.as_mut().unwrap();
    body.scorecard.bands_overall.shares[0] += 0.01;
    body.scorecard.total_revenue *= 1.01;
    body.scorecard.rankings[0].top.reverse();
    body.scorecard.keys[0].actuals = 0.0;
    body.scorecard.keys[0].mape = Some(0.5);
    body.scorecard.risk_win.win.push(sparecast_core::scorecard::FlaggedEntity {
        entity: "ZZ/NOPE".into(),
        revenue: 0.0,
        mape: 0.0,
    });
    let (checks, v) = validate_contract(&sc);
    let k = kinds(&v);
    for kind in ViolationKind::ALL {
        assert!(k.contains(&kind), "{kind:?} not flagged: {v:?}");
        assert!(checks.iter().any(|c| c.kind == kind && c.violations > 0));
    }
    sc.violations = v;
    let a = assemble_report(&sc, &TemplateProvider);
    assert!(!a.passed);
    assert_eq!(a.sections[0].id(), FAILED_BANNER);

    let mut m = execute_jobspec(&s.store, &job(&s.store, json!({"family": "monthly-trend"}))).unwrap();
    let doc = &mut m.monthly.as_mut().unwrap().latest_key;
    doc.actuals[0].delta = format!("{}1", doc.actuals[0].delta.trim_end_matches('0'));
    let v = validate_contract(&m).1;
    assert_eq!(v.iter().filter(|x| x.kind == ViolationKind::TotalsReconcile).count(), 1, "{v:?}");
}

#[test]
fn narrative_text_checks() {
    let s = shared();
    let r = execute_jobspec(&s.store, &scorecard_job(&s.store)).unwrap();
    assert_eq!(kinds(&validate_text("Worst: [[XX/P999]].", "t", &r)), [ViolationKind::NamedOutlierPresence]);
    let (top, bottom) = ranked_ends(&r);
    let best = top.difference(&bottom).next().expect("an entity ranked only at the top");
    assert!(validate_text(&format!("Best performer: [[{best}]]."), "t", &r).is_empty());
    assert_eq!(
        kinds(&validate_text(&format!("The worst entity is [[{best}]]."), "t", &r)),
        [ViolationKind::RankingConsistency]
    );
}

#[test]
fn missing_backtest_names_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let (store, ds) = small_store(dir.path(), false);
    let mut spec = scorecard_job(&store);
    spec.config_hash = Some("0123456789abcdef".into());
    match execute_jobspec(&store, &spec) {
        Err(ReportError::MissingArtifact(m)) => assert!(m.starts_with("backtest artifact (run residuals-"), "{m}"),
        other => panic!("{other:?}"),
    }
    let r = execute_jobspec(&store, &scorecard_job(&store)).unwrap();
    assert_eq!(r.evaluation_source, "ensemble_backtest");
    assert!(r.violations.is_empty(), "{:?}", r.violations);
    let _ = ds;
}

#[test]
fn window_beyond_history_is_rejected() {
    let s = shared();
    match execute_jobspec(&s.store, &job(&s.store, json!({"family": "scorecard", "months": 200}))) {
        Err(ReportError::InvalidParameter { name, .. }) => assert_eq!(name, "window_months"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn persisted_reflection_revalidates() {
    let s = shared();
    let r = execute_jobspec(&s.store, &scorecard_job(&s.store)).unwrap();
    let a = assemble_report(&r, &TemplateProvider);
    let rec = persist_report(&s.store, &a, &r).unwrap();
    let again = persist_report(&s.store, &a, &r).unwrap();
    assert_eq!(rec, again);
    let bytes = s.store.fetch_attachment(&rec.run_id, REFLECTION_ATTACHMENT).unwrap();
    let back: sparecast_report::Reflection = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(back.content_hash(), r.content_hash());
    assert_eq!(validate_contract(&back), (back.checks.clone(), back.violations.clone()));
}
