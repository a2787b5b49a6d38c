//! The structured analytics result a report is assembled from. Exact
//! month-over-month amounts are carried as decimal strings so a stored
//! reflection can be re-validated without floating-point drift.

use crate::job::JobSpec;
use serde::{Deserialize, Serialize};
use sparecast_core::exact::{self, Exact};
use sparecast_core::scorecard::Scorecard;
use sparecast_core::trend::{Alert, Concentration, IntersectionCell, MomRow, MomTable, MomentumRow, ReconciliationProof, TrendVerdict, ValueSignals};
use sparecast_core::PeriodId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    TotalsReconcile,
    BinCompleteness,
    DenominatorValidity,
    NamedOutlierPresence,
    RankingConsistency,
}

impl ViolationKind {
    pub const ALL: [ViolationKind; 5] = [
        ViolationKind::TotalsReconcile,
        ViolationKind::BinCompleteness,
        ViolationKind::DenominatorValidity,
        ViolationKind::NamedOutlierPresence,
        ViolationKind::RankingConsistency,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ViolationKind::TotalsReconcile => "totals reconcile",
            ViolationKind::BinCompleteness => "bin completeness",
            ViolationKind::DenominatorValidity => "denominator validity",
            ViolationKind::NamedOutlierPresence => "named-outlier presence",
            ViolationKind::RankingConsistency => "ranking consistency",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Which table or list failed.
    pub location: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub kind: ViolationKind,
    pub items_checked: usize,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomRowDoc {
    pub entity: String,
    pub current: Option<String>,
    pub prior: Option<String>,
    pub delta: String,
    pub pct_change: Option<f64>,
    pub contribution_share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProofDoc {
    pub sum_of_deltas: String,
    pub total_delta: String,
    pub difference: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomTableDoc {
    pub level: String,
    pub period: PeriodId,
    pub prior_period: PeriodId,
    pub actuals: Vec<MomRowDoc>,
    pub revenue: Vec<MomRowDoc>,
    /// Entities by |actuals delta| descending.
    pub ranking: Vec<String>,
    pub proof_actuals: ProofDoc,
    pub proof_revenue: ProofDoc,
}

fn dec(x: &Exact) -> String {
    exact::to_decimal_string(x)
}

fn row_doc(r: &MomRow<Exact>) -> MomRowDoc {
    MomRowDoc {
        entity: r.entity.clone(),
        current: r.current.as_ref().map(dec),
        prior: r.prior.as_ref().map(dec),
        delta: dec(&r.delta),
        pct_change: r.pct_change,
        contribution_share: r.contribution_share,
    }
}

pub fn proof_doc(p: &ReconciliationProof<Exact>) -> ProofDoc {
    ProofDoc { sum_of_deltas: dec(&p.sum_of_deltas), total_delta: dec(&p.total_delta), difference: dec(&p.difference) }
}

impl MomTableDoc {
    pub fn from_table(level: &str, t: &MomTable<Exact>) -> Self {
        Self {
            level: level.to_string(),
            period: t.period,
            prior_period: t.prior_period,
            actuals: t.actuals.iter().map(row_doc).collect(),
            revenue: t.revenue.iter().map(row_doc).collect(),
            ranking: t.ranking.clone(),
            proof_actuals: proof_doc(&t.proof_actuals),
            proof_revenue: proof_doc(&t.proof_revenue),
        }
    }
}

/// Reconciliation outcome for one month transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionProof {
    pub level: String,
    pub period: PeriodId,
    pub actuals: ProofDoc,
    pub revenue: ProofDoc,
    pub rows: usize,
    /// Rows whose prior month is missing or not positive.
    pub nonpositive_prior_rows: usize,
    /// Rows without a percent change.
    pub pct_unavailable_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub model_id: String,
    pub horizon: u32,
    pub wmape: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorecardBody {
    pub scorecard: Scorecard,
    /// Revenue of the evaluated key-months summed from the dataset itself.
    pub dataset_revenue: f64,
    pub benchmark: Vec<BenchmarkRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallBody {
    pub window_start: PeriodId,
    pub window_end: PeriodId,
    pub dataset_actuals: f64,
    pub dataset_revenue: f64,
    pub countries: ValueSignals,
    pub materials: ValueSignals,
    pub country_concentration: Concentration,
    pub material_concentration: Concentration,
    /// Country by price band.
    pub intersections: Vec<IntersectionCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlyBody {
    pub latest_country: MomTableDoc,
    pub latest_key: MomTableDoc,
    pub proofs: Vec<TransitionProof>,
    pub momentum: Vec<MomentumRow>,
    pub alerts: Vec<Alert>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reflection {
    pub job: JobSpec,
    pub dataset_hash: String,
    pub runs: Vec<String>,
    /// `forecast_history` or `ensemble_backtest`.
    pub evaluation_source: String,
    pub window_start: PeriodId,
    pub window_end: PeriodId,
    pub scorecard: Option<ScorecardBody>,
    pub overall: Option<OverallBody>,
    pub monthly: Option<MonthlyBody>,
    pub trajectory: Option<Vec<TrendVerdict>>,
    pub checks: Vec<CheckOutcome>,
    pub violations: Vec<Violation>,
}

impl Reflection {
    pub fn content_hash(&self) -> String {
        sparecast_store::sha256_hex(&serde_json::to_vec(self).expect("reflection serializes"))
    }

    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}
