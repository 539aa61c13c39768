use serde::{Deserialize, Serialize};

pub const CSV_HEADER: &str = "round,objective,residual,bytes_up,bytes_down,sampled_count";

/// One row of the per-round ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    /// One-based round index.
    pub round: usize,
    pub objective: f64,
    /// Gradient-mapping norm (first-order) or mean consensus residual (gossip, ADMM).
    pub residual: f64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    /// Zero-based ids of the clients that took part, ascending.
    pub sampled: Vec<usize>,
}

/// `x` with 12 significant digits in the shortest of fixed or scientific notation.
pub fn format_real(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Renders the ledger with [`CSV_HEADER`] and one line per round.
pub fn to_csv(rows: &[RoundMetrics]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.round,
            format_real(r.objective),
            format_real(r.residual),
            r.bytes_up,
            r.bytes_down,
            r.sampled.len()
        ));
    }
    out
}
