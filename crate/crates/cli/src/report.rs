use fedlab_core::sim::{format_real, RoundMetrics};

/// Summary of one run, printed as a two-column table.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    /// Hex sha256 of the effective configuration (after seed overrides).
    pub config_digest: String,
    pub problem: String,
    pub algorithm: String,
    pub topology: String,
    pub seed: u64,
    pub rounds: usize,
    pub final_objective: Option<f64>,
    pub oracle_objective: Option<f64>,
    pub tol: f64,
    /// First round whose oracle gap is at most `tol`.
    pub rounds_to_tol: Option<usize>,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub dp_epsilon: f64,
}

impl RunReport {
    pub fn oracle_gap(&self) -> Option<f64> {
        Some(self.final_objective? - self.oracle_objective?)
    }

    pub fn render(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), format_real);
        let rows = [
            ("config", self.config_digest.clone()),
            ("problem", self.problem.clone()),
            ("algorithm", self.algorithm.clone()),
            ("topology", self.topology.clone()),
            ("seed", self.seed.to_string()),
            ("rounds", self.rounds.to_string()),
            ("final objective", opt(self.final_objective)),
            ("oracle objective", opt(self.oracle_objective)),
            ("oracle gap", opt(self.oracle_gap())),
            (
                "rounds to tol",
                format!("{} (tol {})", self.rounds_to_tol.map_or("-".into(), |r| r.to_string()), format_real(self.tol)),
            ),
            ("bytes up", self.bytes_up.to_string()),
            ("bytes down", self.bytes_down.to_string()),
            ("dp epsilon", format_real(self.dp_epsilon)),
        ];
        table(&["field", "value"], &rows.map(|(k, v)| vec![k.to_string(), v]))
    }
}

/// One line of a `compare` table.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub label: String,
    pub rounds_to_tol: Option<usize>,
    /// Cumulative up and down bytes through the round that reached `tol`.
    pub bytes_to_tol: Option<u64>,
    pub bytes_up_per_round: f64,
    pub final_gap: Option<f64>,
}

impl CompareRow {
    pub fn from_ledger(label: String, ledger: &[RoundMetrics], oracle: Option<f64>, tol: f64) -> Self {
        let reached = oracle.and_then(|o| ledger.iter().position(|m| m.objective - o <= tol));
        let bytes_to_tol =
            reached.map(|k| ledger[..=k].iter().map(|m| m.bytes_up + m.bytes_down).sum::<u64>());
        let total_up: u64 = ledger.iter().map(|m| m.bytes_up).sum();
        Self {
            label,
            rounds_to_tol: reached.map(|k| k + 1),
            bytes_to_tol,
            bytes_up_per_round: if ledger.is_empty() { 0.0 } else { total_up as f64 / ledger.len() as f64 },
            final_gap: oracle.zip(ledger.last()).map(|(o, m)| m.objective - o),
        }
    }
}

pub fn render_comparison(rows: &[CompareRow], tol: f64) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.label.clone(),
                r.rounds_to_tol.map_or("-".into(), |v| v.to_string()),
                r.bytes_to_tol.map_or("-".into(), |v| v.to_string()),
                format_real(r.bytes_up_per_round),
                r.final_gap.map_or("-".into(), format_real),
            ]
        })
        .collect();
    let tol = format_real(tol);
    let headers = [
        "config".to_string(),
        format!("rounds_to_{tol}"),
        format!("bytes_to_{tol}"),
        "bytes_up_per_round".to_string(),
        "final_gap".to_string(),
    ];
    table(&headers.iter().map(String::as_str).collect::<Vec<_>>(), &body)
}

/// Left-aligned columns separated by two spaces.
fn table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        padded.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(headers.to_vec());
    out += &line(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect());
    for row in rows {
        out += &line(row.iter().map(String::as_str).collect());
    }
    out
}
