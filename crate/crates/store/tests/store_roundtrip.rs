use proptest::prelude::*;
use sparecast_core::fixture::{demo_dataset, DEMO_SEED};
use sparecast_store::ingest::{demand_csv, exogenous_csv, history_csv};
use sparecast_store::{ArtifactKind, ArtifactStore, StoreError};
use std::fs;

fn fixture_store(dir: &std::path::Path) -> (ArtifactStore, String) {
    let d = demo_dataset(DEMO_SEED);
    let store = ArtifactStore::open(dir).unwrap();
    let v = store
        .import_dataset(
            demand_csv(&d.series).as_bytes(),
            exogenous_csv(&d.exog).as_bytes(),
            Some(history_csv(&d.forecast_history).as_bytes()),
        )
        .unwrap();
    (store, v.dataset_id)
}

#[test]
fn import_is_content_addressed() {
    let dir = tempfile::tempdir().unwrap();
    let (store, id) = fixture_store(dir.path());
    let (store2, id2) = fixture_store(dir.path());
    assert_eq!(id, id2);
    assert_eq!(store.current_dataset().unwrap(), id);
    let ds = store2.load_dataset(&id).unwrap();
    let d = demo_dataset(DEMO_SEED);
    assert_eq!(ds.series, d.series);
    assert_eq!(ds.exog, d.exog);
    assert_eq!(ds.history, d.forecast_history);
    assert!(ds.defects.is_empty());
}

#[test]
fn persist_fetch_and_idempotency() {
    let dir = tempfile::tempdir().unwrap();
    let (store, id) = fixture_store(dir.path());
    let payload = br#"{"weights":[0.25,0.75]}"#;
    let a = store.persist_artifact(&id, "cfg1", ArtifactKind::Weights, vec![], payload).unwrap();
    let b = store.persist_artifact(&id, "cfg1", ArtifactKind::Weights, vec![], b"{\"different\":1}").unwrap();
    assert_eq!(a, b);
    let (rec, bytes) = store.fetch_artifact(&a.run_id).unwrap();
    assert_eq!(rec, a);
    assert_eq!(bytes, payload);
    let runs: Vec<_> = fs::read_dir(dir.path().join("runs")).unwrap().collect();
    assert_eq!(runs.len(), 1);
    let c = store.persist_artifact("ds-other", "cfg1", ArtifactKind::Weights, vec![], payload).unwrap();
    assert_ne!(c.run_id, a.run_id);
    assert_eq!(store.latest(&id, ArtifactKind::Weights).unwrap().run_id, a.run_id);
    assert!(matches!(store.latest(&id, ArtifactKind::Forecasts), Err(StoreError::NotFound(_))));
    assert!(fs::read_dir(dir.path().join("tmp")).unwrap().next().is_none());
}

#[test]
fn fetch_survives_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let run_id = {
        let store = ArtifactStore::open(dir.path()).unwrap();
        store.persist_artifact("ds-x", "cfg", ArtifactKind::Residuals, vec![], b"[1,2,3]").unwrap().run_id
    };
    let store = ArtifactStore::open(dir.path()).unwrap();
    assert_eq!(store.fetch_artifact(&run_id).unwrap().1, b"[1,2,3]");
}

#[test]
fn unknown_and_hostile_ids() {
    let dir = tempfile::tempdir().unwrap();
    let store = ArtifactStore::open(dir.path()).unwrap();
    for id in ["weights-000", "../current", "runs/../../x"] {
        assert!(matches!(store.fetch_artifact(id), Err(StoreError::NotFound(_))), "{id}");
    }
    assert!(matches!(store.persist_artifact("ds", "c", ArtifactKind::Weights, vec![], b""), Err(StoreError::Invalid(_))));
    assert!(matches!(store.persist_artifact("../ds", "c", ArtifactKind::Weights, vec![], b"1"), Err(StoreError::Invalid(_))));
}

#[test]
fn concurrent_persists_store_one_run() {
    let dir = tempfile::tempdir().unwrap();
    let store = ArtifactStore::open(dir.path()).unwrap();
    let ids: Vec<String> = std::thread::scope(|s| {
        let hs: Vec<_> = (0..8)
            .map(|_| s.spawn(|| store.persist_artifact("ds", "cfg", ArtifactKind::TrendReport, vec![], b"{}").unwrap().run_id))
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert!(ids.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(store.list_runs().unwrap().len(), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn payload_bytes_round_trip(payload in proptest::collection::vec(any::<u8>(), 1..2048), cfg in "[a-f0-9]{8}") {
        let dir = tempfile::tempdir().unwrap();
        let store = ArtifactStore::open(dir.path()).unwrap();
        let r = store.persist_artifact("ds", &cfg, ArtifactKind::Forecasts, vec![], &payload).unwrap();
        prop_assert_eq!(store.fetch_artifact(&r.run_id).unwrap().1, payload);
    }

    #[test]
    fn repeated_persists_create_one_artifact(n in 1usize..6) {
        let dir = tempfile::tempdir().unwrap();
        let store = ArtifactStore::open(dir.path()).unwrap();
        for _ in 0..n {
            store.persist_artifact("ds", "cfg", ArtifactKind::ScorecardReport, vec![], b"{}").unwrap();
        }
        prop_assert_eq!(store.list_runs().unwrap().len(), 1);
    }

    #[test]
    fn loading_is_deterministic(rows in proptest::collection::vec((0u32..3, 1u32..13, 0u32..50), 1..30)) {
        let mut seen = std::collections::BTreeSet::new();
        let mut csv = String::from("country,part,year,month,actuals,revenue,price\n");
        for (p, m, a) in rows {
            if seen.insert((p, m)) {
                csv.push_str(&format!("DE,P{p},2022,{m},{a},{},{}\n", a * 2, if a > 0 { "2" } else { "" }));
            }
        }
        let x = sparecast_store::parse_demand(csv.as_bytes()).unwrap();
        let y = sparecast_store::parse_demand(csv.as_bytes()).unwrap();
        prop_assert_eq!(x.version.content_hash, y.version.content_hash);
        prop_assert_eq!(x.series, y.series);
    }
}

#[test]
fn attachments_travel_with_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let store = ArtifactStore::open(dir.path()).unwrap();
    let r = store
        .persist_with_attachments("ds", "cfg", ArtifactKind::TrendReport, vec![], b"{}", &[("reflection.json", b"[1]")])
        .unwrap();
    assert_eq!(store.fetch_attachment(&r.run_id, "reflection.json").unwrap(), b"[1]");
    assert!(store.fetch_attachment(&r.run_id, "other.json").is_err());
    assert!(store.fetch_attachment(&r.run_id, "../record.json").is_err());
}
