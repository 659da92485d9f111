//! Future-study designs: simulate one dataset per posterior draw and reduce it
//! to the statistic the EVSI regression conditions on.
//!
//! Every row draws its uniforms from its own ChaCha stream keyed by
//! `(seed, design kind, row)`, and binomial counts are obtained by inverting
//! the binomial CDF at those uniforms. Statistics for different `n` are
//! therefore monotonically coupled row by row, which keeps EVSI curves smooth
//! in `n`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, Normal};

use crate::error::{Result, VoiError};
use crate::samples::SampleTable;
use crate::stats::odds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DesignKind {
    /// Additional GUM Anon sample: `T = y / n`, `y ~ Bin(n, pi_GA)`.
    GumAnon,
    /// Additional GMSHS sample with the smoothed odds-ratio statistic.
    Gmshs {
        /// Fixed probability that a sampled man attended a GUM clinic. When
        /// absent the draw's `rho_G / (rho_G + rho_N)` is used.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        split: Option<f64>,
    },
    /// Generic `T = y / n`, `y ~ Bin(n, parameter)`.
    Binomial { parameter: String },
}

impl DesignKind {
    fn key(&self) -> u64 {
        match self {
            DesignKind::GumAnon => 0x6741_6e6f,
            DesignKind::Gmshs { .. } => 0x676d_7368,
            DesignKind::Binomial { .. } => 0x6269_6e6f,
        }
    }

    pub fn tag(&self) -> &str {
        match self {
            DesignKind::GumAnon => "gumanon",
            DesignKind::Gmshs { .. } => "gmshs",
            DesignKind::Binomial { .. } => "binomial",
        }
    }

    /// Columns the simulation reads.
    pub fn required_columns(&self) -> Vec<String> {
        match self {
            DesignKind::GumAnon => vec!["pi_GA".into()],
            DesignKind::Gmshs { split } => {
                let mut c = vec!["p_GM_G".to_string(), "p_GM_N".to_string()];
                if split.is_none() {
                    c.extend(["rho_G".to_string(), "rho_N".to_string()]);
                }
                c
            }
            DesignKind::Binomial { parameter } => vec![parameter.clone()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    #[serde(flatten)]
    pub kind: DesignKind,
    pub n: u64,
    #[serde(default)]
    pub seed: u64,
}

impl DesignSpec {
    pub fn new(kind: DesignKind, n: u64, seed: u64) -> Self {
        DesignSpec { kind, n, seed }
    }

    pub fn with_n(&self, n: u64) -> Self {
        DesignSpec { n, ..self.clone() }
    }

    /// Name of the statistic column produced by [`simulate_statistics`].
    pub fn statistic_name(&self) -> String {
        match &self.kind {
            DesignKind::Binomial { parameter } => format!("T_{parameter}"),
            k => format!("T_{}", k.tag()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let DesignKind::Gmshs { split: Some(q) } = self.kind {
            if !(q > 0.0 && q < 1.0) {
                return Err(VoiError::InvalidArgument(format!(
                    "GMSHS split must lie in (0, 1), got {q}"
                )));
            }
        }
        Ok(())
    }
}

/// `Bin(n, p)` quantile at `u`: the smallest `y` with `F(y) >= u`.
///
/// Starts from the normal approximation, brackets by doubling steps and
/// finishes by bisection on the exact CDF.
pub fn binomial_quantile(n: u64, p: f64, u: f64) -> u64 {
    if n == 0 || p <= 0.0 || u <= 0.0 {
        return 0;
    }
    if p >= 1.0 || u >= 1.0 {
        return n;
    }
    let Ok(dist) = Binomial::new(p, n) else {
        return 0;
    };
    let cdf = |y: u64| if y >= n { 1.0 } else { dist.cdf(y) };
    let nf = n as f64;
    let z = Normal::standard().inverse_cdf(u);
    let guess = (nf * p + z * (nf * p * (1.0 - p)).sqrt()).round().clamp(0.0, nf) as u64;

    // Invariant once set: cdf(lo) < u <= cdf(hi).
    let (mut lo, mut hi);
    let mut step = 1u64;
    if cdf(guess) >= u {
        hi = guess;
        loop {
            if hi == 0 {
                return 0;
            }
            let c = hi.saturating_sub(step);
            if cdf(c) < u {
                lo = c;
                break;
            }
            hi = c;
            step = step.saturating_mul(2);
        }
    } else {
        lo = guess;
        loop {
            let c = lo.saturating_add(step).min(n);
            if cdf(c) >= u {
                hi = c;
                break;
            }
            lo = c;
            step = step.saturating_mul(2);
        }
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if cdf(mid) >= u {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

fn check_probability(name: &str, row: usize, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(VoiError::InvalidData(format!(
            "column {name} row {row}: {p} is not a probability"
        )))
    }
}

/// GMSHS odds-ratio statistic with Beta(0.5, 0.5) smoothing.
pub fn gmshs_statistic(y_g: u64, n_g: u64, y_n: u64, n_n: u64) -> f64 {
    let p_n = (y_n as f64 + 0.5) / (n_n as f64 + 1.0);
    let p_g = (y_g as f64 + 0.5) / (n_g as f64 + 1.0);
    odds(p_n) / odds(p_g)
}

/// Simulate the design once per row of `table`.
pub fn simulate_statistics(design: &DesignSpec, table: &SampleTable) -> Result<SampleTable> {
    design.validate()?;
    let needed = design.kind.required_columns();
    let cols = table.columns_by_name(&needed)?;
    let k = table.nrows();
    let n = design.n;
    let name = design.statistic_name();
    if n == 0 {
        return SampleTable::new(vec![name], vec![vec![0.5; k]]);
    }
    let base_seed = design.seed ^ design.kind.key();
    let stream = |row: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
        rng.set_stream(row as u64);
        rng
    };
    let nf = n as f64;
    let values: Result<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|row| {
            let mut rng = stream(row);
            match &design.kind {
                DesignKind::GumAnon | DesignKind::Binomial { .. } => {
                    let p = cols[0][row];
                    check_probability(&needed[0], row, p)?;
                    Ok(binomial_quantile(n, p, rng.random()) as f64 / nf)
                }
                DesignKind::Gmshs { split } => {
                    let (p_g, p_n) = (cols[0][row], cols[1][row]);
                    check_probability("p_GM_G", row, p_g)?;
                    check_probability("p_GM_N", row, p_n)?;
                    let q = match split {
                        Some(q) => *q,
                        None => cols[2][row] / (cols[2][row] + cols[3][row]),
                    };
                    check_probability("GUM attendance split", row, q)?;
                    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
                    let n_g = binomial_quantile(n, q, u1);
                    let y_g = binomial_quantile(n_g, p_g, u2);
                    let y_n = binomial_quantile(n - n_g, p_n, u3);
                    Ok(gmshs_statistic(y_g, n_g, y_n, n - n_g))
                }
            }
        })
        .collect();
    SampleTable::new(vec![name], vec![values?])
}
