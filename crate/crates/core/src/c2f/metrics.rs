//! Per-session accuracy reports and the derived run metrics: average
//! accuracy and the fine/coarse/overall forgetting rates.

use serde::{Deserialize, Serialize};

use super::ProtocolError;

/// Accuracies measured at the end of one session. Session 0 (the coarse base
/// session) always has `acc_fine = 0` and `acc_total = acc_coarse`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionReport {
    pub session: usize,
    pub acc_coarse: f64,
    pub acc_fine: f64,
    pub acc_total: f64,
}

impl SessionReport {
    /// Base-session report; the session-0 convention is applied
    /// structurally.
    pub fn base(acc_coarse: f64) -> Self {
        Self {
            session: 0,
            acc_coarse,
            acc_fine: 0.0,
            acc_total: acc_coarse,
        }
    }

    pub fn incremental(
        session: usize,
        acc_coarse: f64,
        acc_fine: f64,
        acc_total: f64,
    ) -> Result<Self, ProtocolError> {
        if session == 0 {
            return Err(ProtocolError::BadHistory(
                "incremental reports start at session 1".into(),
            ));
        }
        Ok(Self {
            session,
            acc_coarse,
            acc_fine,
            acc_total,
        })
    }
}

/// Complete record of one run: ordered session reports, the cumulative fine
/// class counts `C_n`, and the overall metrics computed at finalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunHistory {
    pub schema_version: u32,
    /// `T`: index of the last session (reports run 0..=T).
    pub total_sessions: usize,
    /// `N_fine`: total number of fine classes in the protocol.
    pub total_fine: usize,
    /// `C_n` indexed by session; `C_0 = 0`, non-decreasing, last `<= N_fine`.
    pub cumulative_fine_counts: Vec<usize>,
    pub sessions: Vec<SessionReport>,
    /// Mean of total accuracies over all sessions.
    pub avg_acc: f64,
    /// Overall forgetting rate; `null` when undefined (fewer than two
    /// sessions or a zero-accuracy denominator).
    pub forgetting: Option<f64>,
}

pub const HISTORY_SCHEMA_VERSION: u32 = 1;

impl RunHistory {
    /// Assemble and validate a history, computing the overall metrics.
    pub fn from_reports(
        reports: Vec<SessionReport>,
        cumulative_fine_counts: Vec<usize>,
        total_fine: usize,
    ) -> Result<Self, ProtocolError> {
        if reports.is_empty() {
            return Err(ProtocolError::BadHistory("no sessions".into()));
        }
        let mut history = Self {
            schema_version: HISTORY_SCHEMA_VERSION,
            total_sessions: reports.len() - 1,
            total_fine,
            cumulative_fine_counts,
            sessions: reports,
            avg_acc: 0.0,
            forgetting: None,
        };
        history.validate_structure()?;
        history.avg_acc = average_accuracy(&history, history.total_sessions);
        history.forgetting = forgetting_rates(&history).ok().map(|r| r.overall);
        Ok(history)
    }

    /// Structural invariants shared by fresh runs and deserialized files.
    pub fn validate_structure(&self) -> Result<(), ProtocolError> {
        let bad = |msg: &str| Err(ProtocolError::BadHistory(msg.into()));
        if self.sessions.is_empty() {
            return bad("no sessions");
        }
        if self.total_sessions != self.sessions.len() - 1 {
            return bad("total_sessions does not match the sessions array");
        }
        if self.cumulative_fine_counts.len() != self.sessions.len() {
            return bad("cumulative_fine_counts must align with sessions");
        }
        for (n, report) in self.sessions.iter().enumerate() {
            if report.session != n {
                return bad("session indices must be consecutive from 0");
            }
        }
        let first = &self.sessions[0];
        if first.acc_fine != 0.0 || first.acc_total != first.acc_coarse {
            return bad("session 0 must have acc_fine = 0 and acc_total = acc_coarse");
        }
        if self.cumulative_fine_counts[0] != 0 {
            return bad("C_0 must be 0");
        }
        if self.cumulative_fine_counts.windows(2).any(|w| w[1] < w[0]) {
            return bad("cumulative_fine_counts must be non-decreasing");
        }
        if *self.cumulative_fine_counts.last().unwrap() > self.total_fine {
            return bad("cumulative fine count exceeds total_fine");
        }
        Ok(())
    }

    /// Recompute the stored overall metrics and require agreement within
    /// `tol` (stale-file detection for the `report` command).
    pub fn validate_consistency(&self, tol: f64) -> Result<(), ProtocolError> {
        self.validate_structure()?;
        let avg = average_accuracy(self, self.total_sessions);
        if (avg - self.avg_acc).abs() > tol {
            return Err(ProtocolError::BadHistory(format!(
                "stored avg_acc {} disagrees with recomputed {}",
                self.avg_acc, avg
            )));
        }
        let recomputed = forgetting_rates(self).ok().map(|r| r.overall);
        match (recomputed, self.forgetting) {
            (None, None) => Ok(()),
            (Some(a), Some(b)) if (a - b).abs() <= tol => Ok(()),
            (a, b) => Err(ProtocolError::BadHistory(format!(
                "stored forgetting {:?} disagrees with recomputed {:?}",
                b, a
            ))),
        }
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// CSV table with one row per session. Rates that are undefined at a
    /// given session are left empty.
    pub fn to_csv(&self) -> String {
        let (fine, coarse) = per_session_rates(self);
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out =
            String::from("session,acc_coarse,acc_fine,acc_total,avg_acc,f_fine,f_coarse\n");
        for (n, r) in self.sessions.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.session,
                r.acc_coarse,
                r.acc_fine,
                r.acc_total,
                average_accuracy(self, n),
                fmt(fine[n]),
                fmt(coarse[n]),
            ));
        }
        out
    }
}

/// Mean of total accuracies over sessions `0..=upto`.
pub fn average_accuracy(history: &RunHistory, upto: usize) -> f64 {
    assert!(
        upto < history.sessions.len(),
        "average_accuracy: session {upto} out of range"
    );
    let sum: f64 = history.sessions[..=upto].iter().map(|r| r.acc_total).sum();
    sum / (upto + 1) as f64
}

/// Per-session forgetting rates, `None` where undefined:
/// `F_fine^n = (A_fine^{n-1} - A_fine^n) / A_fine^{n-1}` needs `n >= 2` and a
/// non-zero denominator; `F_coarse^n = (A_coarse^0 - A_coarse^n) / A_coarse^0`
/// needs `n >= 1` and `A_coarse^0 > 0`.
pub fn per_session_rates(history: &RunHistory) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
    let reports = &history.sessions;
    let a0 = reports[0].acc_coarse;
    let mut fine = vec![None; reports.len()];
    let mut coarse = vec![None; reports.len()];
    for n in 1..reports.len() {
        if a0 > 0.0 {
            coarse[n] = Some((a0 - reports[n].acc_coarse) / a0);
        }
        if n >= 2 && reports[n - 1].acc_fine > 0.0 {
            fine[n] =
                Some((reports[n - 1].acc_fine - reports[n].acc_fine) / reports[n - 1].acc_fine);
        }
    }
    (fine, coarse)
}

/// All forgetting rates for a finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct ForgettingRates {
    /// `F_fine^n` by session index.
    pub fine: Vec<Option<f64>>,
    /// `F_coarse^n` by session index.
    pub coarse: Vec<Option<f64>>,
    /// `F = (1/(T-1)) sum_{n=2..T} F_fine^n C_n/N_fine
    ///      + sum_{n=1..T-1} F_coarse^n (1 - C_n/N_fine)`.
    pub overall: f64,
}

/// Compute the per-session rates and the overall weighted forgetting rate.
/// Errors name the session whose zero accuracy makes a required term
/// undefined.
pub fn forgetting_rates(history: &RunHistory) -> Result<ForgettingRates, ProtocolError> {
    let t = history.total_sessions;
    if t < 2 {
        return Err(ProtocolError::HistoryTooShort);
    }
    let (fine, coarse) = per_session_rates(history);
    let n_fine = history.total_fine as f64;

    let mut fine_sum = 0.0;
    for n in 2..=t {
        let rate = fine[n].ok_or(ProtocolError::UndefinedRate { session: n })?;
        fine_sum += rate * history.cumulative_fine_counts[n] as f64 / n_fine;
    }
    let mut coarse_sum = 0.0;
    for n in 1..t {
        let rate = coarse[n].ok_or(ProtocolError::UndefinedRate { session: n })?;
        coarse_sum += rate * (1.0 - history.cumulative_fine_counts[n] as f64 / n_fine);
    }
    Ok(ForgettingRates {
        fine,
        coarse,
        overall: fine_sum / (t - 1) as f64 + coarse_sum,
    })
}
