use std::fmt::Write;

use serde::Serialize;

use super::{ka_attention_flops, ka_cost, sa_attention_flops, sa_cost};
use crate::error::{KatError, Result};
use crate::model::KatConfig;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostRecord {
    pub n_p: usize,
    pub k: usize,
    pub ka_flops: u64,
    pub sa_flops: u64,
    pub ka_attention_flops: u64,
    pub sa_attention_flops: u64,
    pub ka_activations: u64,
    pub sa_activations: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Published per-slide costs. The token count behind them is not known,
/// so they are quoted for orientation only.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ReferenceRow {
    pub ka_gflops: f64,
    pub sa_gflops: f64,
    pub ka_mib: f64,
    pub sa_mib: f64,
}

pub const TABLE_REFERENCE: ReferenceRow = ReferenceRow {
    ka_gflops: 0.213,
    sa_gflops: 0.701,
    ka_mib: 569.31,
    sa_mib: 3655.1,
};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub d_e: usize,
    pub heads: usize,
    pub blocks: usize,
    pub d_ff: usize,
    pub records: Vec<CostRecord>,
    pub ka_fit: LogLogFit,
    pub sa_fit: LogLogFit,
    pub ka_attention_fit: LogLogFit,
    pub sa_attention_fit: LogLogFit,
    /// Smallest patch count from which self-attention costs more FLOPs than
    /// kernel attention for every larger count, at the report's K.
    pub crossover: u64,
    pub reference: ReferenceRow,
}

/// Least-squares line through `(ln x, ln y)`.
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Result<LogLogFit> {
    if xs.len() != ys.len() {
        return Err(KatError::Fit(format!(
            "{} x values for {} y values",
            xs.len(),
            ys.len()
        )));
    }
    let mut distinct = xs.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(KatError::Fit(format!(
            "need at least 3 distinct points, got {}",
            distinct.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(KatError::Fit("log-log fit needs positive finite values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LogLogFit { slope, intercept, r2 })
}

/// `SA(n) - KA(n)` is a quadratic in `n` with positive leading term; find
/// the point after which it stays positive.
fn crossover(config: &KatConfig, k: usize) -> u64 {
    let diff = |n: u64| sa_cost(config, n as usize).flops as i128 - ka_cost(config, n as usize, k).flops as i128;
    let (d0, d1, d2) = (diff(1), diff(2), diff(3));
    let a = (d2 - 2 * d1 + d0) as f64 / 2.0;
    let b = (d1 - d0) as f64 - 3.0 * a;
    let c = d0 as f64 - a - b;
    let disc = b * b - 4.0 * a * c;
    let mut n = if disc <= 0.0 {
        1
    } else {
        ((-b + disc.sqrt()) / (2.0 * a)).floor().max(1.0) as u64
    };
    while n > 1 && diff(n - 1) > 0 {
        n -= 1;
    }
    while diff(n) <= 0 {
        n += 1;
    }
    n
}

pub fn scaling_report(n_ps: &[usize], k: usize, d_e: usize, heads: usize, blocks: usize) -> Result<CostReport> {
    let config = KatConfig::new(1, d_e, blocks, heads, 2);
    config.validate()?;
    if k == 0 || n_ps.contains(&0) {
        return Err(KatError::param("patch and kernel counts must be at least 1"));
    }
    let records: Vec<CostRecord> = n_ps
        .iter()
        .map(|&n| {
            let ka = ka_cost(&config, n, k);
            let sa = sa_cost(&config, n);
            CostRecord {
                n_p: n,
                k,
                ka_flops: ka.flops,
                sa_flops: sa.flops,
                ka_attention_flops: ka_attention_flops(&config, n, k),
                sa_attention_flops: sa_attention_flops(&config, n),
                ka_activations: ka.activations,
                sa_activations: sa.activations,
            }
        })
        .collect();
    let xs: Vec<f64> = n_ps.iter().map(|&n| n as f64).collect();
    let col = |f: fn(&CostRecord) -> u64| records.iter().map(|r| f(r) as f64).collect::<Vec<_>>();
    Ok(CostReport {
        d_e,
        heads,
        blocks,
        d_ff: config.d_ff,
        ka_fit: fit_loglog(&xs, &col(|r| r.ka_flops))?,
        sa_fit: fit_loglog(&xs, &col(|r| r.sa_flops))?,
        ka_attention_fit: fit_loglog(&xs, &col(|r| r.ka_attention_flops))?,
        sa_attention_fit: fit_loglog(&xs, &col(|r| r.sa_attention_flops))?,
        crossover: crossover(&config, k),
        records,
        reference: TABLE_REFERENCE,
    })
}

impl CostReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# matmul FLOPs (2abc per product) and kept activation elements over {} blocks",
            self.blocks
        );
        let _ = writeln!(s, "# d_e={} heads={} d_ff={}", self.d_e, self.heads, self.d_ff);
        let _ = writeln!(
            s,
            "# kernel attention per block: 2d^2(3n+3K+1) + 8Knd + 4Kd + 2(n+K+1)d^2 + 4(n+K+1)d*d_ff"
        );
        let _ = writeln!(s, "# self-attention per block:   8(n+1)d^2 + 4(n+1)^2 d + 4(n+1)d*d_ff");
        let _ = writeln!(
            s,
            "{:>8} {:>4} {:>16} {:>16} {:>8} {:>14} {:>14}",
            "n_p", "K", "KA FLOPs", "SA FLOPs", "SA/KA", "KA act.", "SA act."
        );
        for r in &self.records {
            let _ = writeln!(
                s,
                "{:>8} {:>4} {:>16} {:>16} {:>8.3} {:>14} {:>14}",
                r.n_p,
                r.k,
                r.ka_flops,
                r.sa_flops,
                r.sa_flops as f64 / r.ka_flops as f64,
                r.ka_activations,
                r.sa_activations
            );
        }
        let fit = |name: &str, f: &LogLogFit| format!("{name:<28} slope {:.4}  R^2 {:.6}\n", f.slope, f.r2);
        s.push_str(&fit("KA full blocks", &self.ka_fit));
        s.push_str(&fit("SA full blocks", &self.sa_fit));
        s.push_str(&fit("KA attention module only", &self.ka_attention_fit));
        s.push_str(&fit("SA attention module only", &self.sa_attention_fit));
        let _ = writeln!(s, "SA exceeds KA from n_p = {}", self.crossover);
        let r = &self.reference;
        let _ = writeln!(
            s,
            "reference (published, token count unknown, not reproducible): KA {} GFLOPs {} MiB, SA {} GFLOPs {} MiB",
            r.ka_gflops, r.ka_mib, r.sa_gflops, r.sa_mib
        );
        s
    }

    /// Whitespace-separated `n_p ka_flops sa_flops` rows for plotting.
    pub fn to_plot(&self) -> String {
        self.records
            .iter()
            .map(|r| format!("{} {} {}\n", r.n_p, r.ka_flops, r.sa_flops))
            .collect()
    }
}
