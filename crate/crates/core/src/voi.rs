//! Value-of-information estimators.
//!
//! EVPPI and EVSI are obtained by regressing each output on the inputs (or
//! the simulated statistics) across posterior draws: the fitted values
//! estimate `E(alpha | phi)` and the residuals estimate what remains
//! uncertain once `phi` is known. All variances use the `K - 1` denominator,
//! so for a least-squares fit with an intercept
//! `var(fitted) + SSR / (K - 1) = var(alpha)` holds to rounding error.
//!
//! Standard errors come from refitting nothing: coefficient vectors are
//! drawn from their asymptotic normal distribution and the loss functional
//! is re-evaluated for each draw; the reported SE is the SD over draws.

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::designs::{simulate_statistics, DesignSpec};
use crate::error::{Result, VoiError};
use crate::regress::{self, FitConfig, MarsModel};
use crate::samples::SampleTable;
use crate::stats;

/// Inputs above this count are allowed but MARS becomes slow and noisy.
pub const SOFT_MAX_INPUTS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    ScalarQuadratic { output: String },
    WeightedA { outputs: Vec<String>, weights: Vec<f64> },
    TraceA { outputs: Vec<String> },
    DCriterion {
        outputs: Vec<String>,
        #[serde(default)]
        standardized: bool,
    },
    /// Columns hold the loss of each action; smaller is better.
    FiniteAction { losses: Vec<String> },
}

impl LossSpec {
    pub fn scalar(output: impl Into<String>) -> Self {
        LossSpec::ScalarQuadratic {
            output: output.into(),
        }
    }

    pub fn columns(&self) -> &[String] {
        match self {
            LossSpec::ScalarQuadratic { output } => std::slice::from_ref(output),
            LossSpec::WeightedA { outputs, .. }
            | LossSpec::TraceA { outputs }
            | LossSpec::DCriterion { outputs, .. } => outputs,
            LossSpec::FiniteAction { losses } => losses,
        }
    }

    pub fn validate(&self, table: &SampleTable) -> Result<()> {
        let cols = self.columns();
        if cols.is_empty() {
            return Err(VoiError::InvalidArgument("loss names no columns".into()));
        }
        if let LossSpec::WeightedA { outputs, weights } = self {
            if outputs.len() != weights.len() {
                return Err(VoiError::InvalidArgument(format!(
                    "{} weights for {} outputs",
                    weights.len(),
                    outputs.len()
                )));
            }
        }
        table.columns_by_name(cols)?;
        if table.nrows() < 2 {
            return Err(VoiError::TooFewDraws {
                needed: 2,
                got: table.nrows(),
            });
        }
        Ok(())
    }

    /// Loss functional applied to a covariance matrix (quadratic kinds).
    fn functional(&self, cov: &DMatrix<f64>, warnings: &mut Vec<String>) -> f64 {
        match self {
            LossSpec::ScalarQuadratic { .. } | LossSpec::TraceA { .. } => cov.trace(),
            LossSpec::WeightedA { weights, .. } => {
                let c = nalgebra::DVector::from_column_slice(weights);
                (c.transpose() * cov * &c)[(0, 0)]
            }
            LossSpec::DCriterion { standardized, .. } => {
                let det = psd_determinant(cov, warnings);
                if *standardized {
                    det.powf(1.0 / cov.nrows() as f64)
                } else {
                    det
                }
            }
            LossSpec::FiniteAction { .. } => unreachable!("finite-action loss has no covariance form"),
        }
    }
}

/// Determinant of a covariance matrix through the eigenvalues of its
/// correlation matrix, with negative eigenvalues floored at zero.
pub fn psd_determinant(cov: &DMatrix<f64>, warnings: &mut Vec<String>) -> f64 {
    let s = cov.nrows();
    let sd: Vec<f64> = (0..s).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    if sd.iter().any(|&v| v == 0.0) {
        return 0.0;
    }
    let corr = DMatrix::from_fn(s, s, |i, j| {
        0.5 * (cov[(i, j)] + cov[(j, i)]) / (sd[i] * sd[j])
    });
    let eig = SymmetricEigen::new(corr);
    let mut det = sd.iter().map(|v| v * v).product::<f64>();
    for &l in eig.eigenvalues.iter() {
        if l < 0.0 {
            if l < -1e-10 {
                let msg = format!("covariance eigenvalue {l:.3e} floored at 0");
                warn!("{msg}");
                warnings.push(msg);
            }
            return 0.0;
        }
        det *= l;
    }
    det
}

fn covariance_matrix(cols: &[&[f64]]) -> DMatrix<f64> {
    let s = cols.len();
    let mut c = DMatrix::zeros(s, s);
    for i in 0..s {
        for j in i..s {
            let v = if i == j {
                stats::variance(cols[i])
            } else {
                stats::covariance(cols[i], cols[j])
            };
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoiEstimate {
    /// Expected loss reduction.
    pub value: f64,
    /// Expected loss under current information.
    pub baseline: f64,
    /// `value / baseline`, when the baseline is positive.
    pub proportion: Option<f64>,
    pub se: Option<f64>,
    pub k_used: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl VoiEstimate {
    fn new(value: f64, baseline: f64, se: Option<f64>, k_used: usize, warnings: Vec<String>) -> Self {
        VoiEstimate {
            value,
            baseline,
            proportion: (baseline > 0.0).then(|| value / baseline),
            se,
            k_used,
            warnings,
        }
    }

    /// Expected loss remaining after the information is obtained.
    pub fn remaining(&self) -> f64 {
        self.baseline - self.value
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VoiConfig {
    pub fit: FitConfig,
    /// Coefficient draws for the standard error; 0 disables it.
    pub se_draws: usize,
    pub seed: u64,
}

impl Default for VoiConfig {
    fn default() -> Self {
        VoiConfig {
            fit: FitConfig::default(),
            se_draws: 200,
            seed: 1,
        }
    }
}

/// Expected loss under current information.
pub fn expected_loss(table: &SampleTable, loss: &LossSpec) -> Result<f64> {
    loss.validate(table)?;
    let cols = table.columns_by_name(loss.columns())?;
    Ok(match loss {
        LossSpec::FiniteAction { .. } => cols.iter().map(|c| stats::mean(c)).fold(f64::INFINITY, f64::min),
        _ => loss.functional(&covariance_matrix(&cols), &mut Vec::new()),
    })
}

/// Index of the action with the smallest expected loss (first on ties).
fn best_action(means: &[f64]) -> usize {
    let mut best = 0;
    for (d, &m) in means.iter().enumerate() {
        if m < means[best] {
            best = d;
        }
    }
    best
}

/// `mean_k [a_{best,k} - min_d a_{d,k}]`; adding a constant to every
/// column leaves each difference unchanged.
fn finite_action_gain(cols: &[&[f64]], best: usize) -> f64 {
    let k = cols[0].len();
    let diffs: Vec<f64> = (0..k)
        .map(|i| {
            let m = cols.iter().map(|c| c[i]).fold(f64::INFINITY, f64::min);
            cols[best][i] - m
        })
        .collect();
    stats::mean(&diffs)
}

/// Expected value of perfect information.
pub fn evpi(table: &SampleTable, loss: &LossSpec) -> Result<VoiEstimate> {
    let baseline = expected_loss(table, loss)?;
    let k = table.nrows();
    Ok(match loss {
        LossSpec::FiniteAction { losses } => {
            let cols = table.columns_by_name(losses)?;
            let means: Vec<f64> = cols.iter().map(|c| stats::mean(c)).collect();
            let value = finite_action_gain(&cols, best_action(&means));
            VoiEstimate::new(value, baseline, None, k, Vec::new())
        }
        _ => VoiEstimate::new(baseline, baseline, None, k, Vec::new()),
    })
}

fn fit_all(x: &[&[f64]], ys: &[&[f64]], cfg: &FitConfig) -> Result<Vec<MarsModel>> {
    ys.par_iter().map(|y| regress::fit(x, y, cfg)).collect()
}

fn centred(col: &[f64]) -> Vec<f64> {
    let m = stats::mean(col);
    col.iter().map(|v| v - m).collect()
}

fn centred_basis(model: &MarsModel, x: &[&[f64]]) -> Result<DMatrix<f64>> {
    let mut b = model.basis_matrix(x)?;
    for mut c in b.column_iter_mut() {
        let m = c.mean();
        c.add_scalar_mut(-m);
    }
    Ok(b)
}

fn sd_of(values: &[f64]) -> Option<f64> {
    (values.len() >= 2).then(|| stats::variance(values).sqrt())
}

/// Regression-based estimate of the loss reduction from learning the
/// predictor columns exactly.
fn regression_voi(
    table: &SampleTable,
    predictors: &[String],
    loss: &LossSpec,
    cfg: &VoiConfig,
) -> Result<VoiEstimate> {
    loss.validate(table)?;
    let k = table.nrows();
    let x = table.columns_by_name(predictors)?;
    let outs = table.columns_by_name(loss.columns())?;
    let baseline = expected_loss(table, loss)?;
    let mut warnings = Vec::new();
    if predictors.len() > SOFT_MAX_INPUTS {
        warnings.push(format!(
            "{} predictors exceed the recommended {SOFT_MAX_INPUTS}",
            predictors.len()
        ));
    }
    if x.iter().all(|c| c.iter().all(|&v| v == c[0])) {
        let msg = "all predictors are constant; value is 0".to_string();
        warn!("{msg}");
        warnings.push(msg);
        return Ok(VoiEstimate::new(0.0, baseline, Some(0.0), k, warnings));
    }

    let models = fit_all(&x, &outs, &cfg.fit)?;
    for m in &models {
        warnings.extend(m.warnings.iter().cloned());
    }
    let seed_for = |i: usize| cfg.seed.wrapping_add(i as u64);

    match loss {
        LossSpec::ScalarQuadratic { .. } => {
            let m = &models[0];
            let value = stats::variance(m.fitted());
            let alt = baseline - stats::mean_square_k1(m.resid());
            debug_assert!(
                (value + stats::mean_square_k1(m.resid()) - baseline).abs()
                    <= 1e-8 * baseline.abs().max(f64::MIN_POSITIVE),
                "variance decomposition violated"
            );
            if (value - alt).abs() > 0.01 * value.abs().max(1e-300) {
                warnings.push(format!(
                    "fitted-variance ({value:.6e}) and residual ({alt:.6e}) estimates differ by more than 1%"
                ));
            }
            let se = if cfg.se_draws > 0 {
                let cov = m.basis_covariance()?;
                let draws = m.coefficient_draws(cfg.se_draws, seed_for(0))?;
                let vals: Vec<f64> = draws
                    .row_iter()
                    .map(|b| (b * cov * b.transpose())[(0, 0)])
                    .collect();
                sd_of(&vals)
            } else {
                None
            };
            Ok(VoiEstimate::new(value, baseline, se, k, warnings))
        }
        LossSpec::FiniteAction { .. } => {
            let means: Vec<f64> = outs.iter().map(|c| stats::mean(c)).collect();
            let best = best_action(&means);
            let fitted: Vec<&[f64]> = models.iter().map(|m| m.fitted()).collect();
            let value = finite_action_gain(&fitted, best);
            let se = if cfg.se_draws > 0 {
                let bases: Vec<DMatrix<f64>> =
                    models.iter().map(|m| m.basis_matrix(&x)).collect::<Result<_>>()?;
                let draws: Vec<DMatrix<f64>> = models
                    .iter()
                    .enumerate()
                    .map(|(i, m)| m.coefficient_draws(cfg.se_draws, seed_for(i)))
                    .collect::<Result<_>>()?;
                let vals: Vec<f64> = (0..cfg.se_draws)
                    .into_par_iter()
                    .map(|r| {
                        let g: Vec<Vec<f64>> = bases
                            .iter()
                            .zip(&draws)
                            .map(|(b, d)| (b * d.row(r).transpose()).iter().copied().collect())
                            .collect();
                        let refs: Vec<&[f64]> = g.iter().map(Vec::as_slice).collect();
                        let means: Vec<f64> = refs.iter().map(|c| stats::mean(c)).collect();
                        finite_action_gain(&refs, best_action(&means))
                    })
                    .collect();
                sd_of(&vals)
            } else {
                None
            };
            Ok(VoiEstimate::new(value, baseline, se, k, warnings))
        }
        _ => {
            let resid: Vec<&[f64]> = models.iter().map(|m| m.resid()).collect();
            let rcov = covariance_matrix(&resid);
            let value = baseline - loss.functional(&rcov, &mut warnings);
            let se = if cfg.se_draws > 0 {
                Some(multi_output_se(loss, &models, &x, baseline, cfg)?).flatten()
            } else {
                None
            };
            Ok(VoiEstimate::new(value, baseline, se, k, warnings))
        }
    }
}

/// Re-evaluates the residual covariance for perturbed coefficients using
/// cross-moments of residuals and basis columns, so no K-length work is
/// repeated per draw.
fn multi_output_se(
    loss: &LossSpec,
    models: &[MarsModel],
    x: &[&[f64]],
    baseline: f64,
    cfg: &VoiConfig,
) -> Result<Option<f64>> {
    let s = models.len();
    let kf = models[0].fitted().len() as f64 - 1.0;
    let bases: Vec<DMatrix<f64>> = models.iter().map(|m| centred_basis(m, x)).collect::<Result<_>>()?;
    let res: Vec<nalgebra::DVector<f64>> = models
        .iter()
        .map(|m| nalgebra::DVector::from_vec(centred(m.resid())))
        .collect();
    // c_rb[i][j] = Cov(resid_i, B_j), c_bb[i][j] = Cov(B_i, B_j).
    let c_rb: Vec<Vec<nalgebra::DVector<f64>>> = (0..s)
        .map(|i| (0..s).map(|j| bases[j].tr_mul(&res[i]) / kf).collect())
        .collect();
    let c_bb: Vec<Vec<DMatrix<f64>>> = (0..s)
        .map(|i| (0..s).map(|j| bases[i].tr_mul(&bases[j]) / kf).collect())
        .collect();
    let c_rr = covariance_matrix(&models.iter().map(|m| m.resid()).collect::<Vec<_>>());
    let draws: Vec<DMatrix<f64>> = models
        .iter()
        .enumerate()
        .map(|(i, m)| m.coefficient_draws(cfg.se_draws, cfg.seed.wrapping_add(i as u64)))
        .collect::<Result<_>>()?;
    let vals: Vec<f64> = (0..cfg.se_draws)
        .map(|r| {
            let delta: Vec<nalgebra::DVector<f64>> = (0..s)
                .map(|i| {
                    let coef = nalgebra::DVector::from_column_slice(&models[i].coefficients);
                    draws[i].row(r).transpose() - coef
                })
                .collect();
            let cov = DMatrix::from_fn(s, s, |i, j| {
                c_rr[(i, j)] - c_rb[i][j].dot(&delta[j]) - c_rb[j][i].dot(&delta[i])
                    + (delta[i].transpose() * &c_bb[i][j] * &delta[j])[(0, 0)]
            });
            baseline - loss.functional(&cov, &mut Vec::new())
        })
        .collect();
    Ok(sd_of(&vals))
}

/// Expected value of partial perfect information about `inputs`.
pub fn evppi(
    table: &SampleTable,
    inputs: &[String],
    loss: &LossSpec,
    cfg: &VoiConfig,
) -> Result<VoiEstimate> {
    if inputs.is_empty() {
        return Err(VoiError::InvalidArgument("no inputs given".into()));
    }
    regression_voi(table, inputs, loss, cfg)
}

/// EVPPI for every (input group, output) pair with scalar quadratic loss.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvppiGrid {
    pub groups: Vec<Vec<String>>,
    pub outputs: Vec<String>,
    /// `cells[g][o]`; a failed cell holds its error message.
    pub cells: Vec<Vec<std::result::Result<VoiEstimate, String>>>,
}

impl EvppiGrid {
    pub fn cell(&self, group: usize, output: usize) -> Option<&VoiEstimate> {
        self.cells.get(group)?.get(output)?.as_ref().ok()
    }

    pub fn group_label(group: &[String]) -> String {
        group.join("+")
    }

    /// Group index with the largest proportion for an output.
    pub fn column_argmax(&self, output: usize) -> Option<usize> {
        (0..self.groups.len())
            .filter_map(|g| Some((g, self.cell(g, output)?.proportion?)))
            .fold(None, |best: Option<(usize, f64)>, (g, p)| match best {
                Some((_, bp)) if bp >= p => best,
                _ => Some((g, p)),
            })
            .map(|(g, _)| g)
    }
}

pub fn evppi_grid(
    table: &SampleTable,
    groups: &[Vec<String>],
    outputs: &[String],
    cfg: &VoiConfig,
) -> EvppiGrid {
    let jobs: Vec<(usize, usize)> = (0..groups.len())
        .flat_map(|g| (0..outputs.len()).map(move |o| (g, o)))
        .collect();
    let results: Vec<std::result::Result<VoiEstimate, String>> = jobs
        .par_iter()
        .map(|&(g, o)| {
            evppi(table, &groups[g], &LossSpec::scalar(outputs[o].clone()), cfg).map_err(|e| {
                warn!("EVPPI cell ({}, {}) failed: {e}", EvppiGrid::group_label(&groups[g]), outputs[o]);
                e.to_string()
            })
        })
        .collect();
    let mut it = results.into_iter();
    let cells = groups
        .iter()
        .map(|_| (0..outputs.len()).map(|_| it.next().expect("one result per cell")).collect())
        .collect();
    EvppiGrid {
        groups: groups.to_vec(),
        outputs: outputs.to_vec(),
        cells,
    }
}

/// Expected value of sample information, given statistic columns already
/// present in `table`.
pub fn evsi(
    table: &SampleTable,
    statistics: &[String],
    loss: &LossSpec,
    cfg: &VoiConfig,
) -> Result<VoiEstimate> {
    if statistics.is_empty() {
        return Err(VoiError::InvalidArgument("no statistic columns given".into()));
    }
    regression_voi(table, statistics, loss, cfg)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: u64,
    pub estimate: std::result::Result<VoiEstimate, String>,
}

/// EVSI of `design` at each sample size in `grid`.
pub fn evsi_curve(
    table: &SampleTable,
    design: &DesignSpec,
    grid: &[u64],
    loss: &LossSpec,
    cfg: &VoiConfig,
) -> Result<Vec<CurvePoint>> {
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(VoiError::InvalidArgument(
            "sample-size grid must be strictly increasing".into(),
        ));
    }
    loss.validate(table)?;
    Ok(grid
        .iter()
        .map(|&n| {
            let d = design.with_n(n);
            let estimate = simulate_statistics(&d, table)
                .and_then(|stat| {
                    let joined = table.hstack(&stat)?;
                    evsi(&joined, &[d.statistic_name()], loss, cfg)
                })
                .map_err(|e| {
                    warn!("EVSI at n = {n} failed: {e}");
                    e.to_string()
                });
            CurvePoint { n, estimate }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnbsRow {
    pub n: u64,
    pub value: f64,
    pub cost: f64,
    pub net: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnbsResult {
    pub rows: Vec<EnbsRow>,
    pub optimal_n: u64,
    /// Set when no sample size has positive net benefit.
    pub do_not_sample: bool,
}

/// Expected net benefit of sampling over `(n, EVSI)` pairs. Values and
/// costs must be in the same units.
pub fn enbs(curve: &[(u64, f64)], fixed: f64, per_unit: f64) -> EnbsResult {
    let rows: Vec<EnbsRow> = curve
        .iter()
        .map(|&(n, value)| {
            let cost = if n == 0 { 0.0 } else { fixed + per_unit * n as f64 };
            EnbsRow {
                n,
                value,
                cost,
                net: value - cost,
            }
        })
        .collect();
    let best = rows
        .iter()
        .filter(|r| r.net.is_finite())
        .fold(None, |b: Option<&EnbsRow>, r| match b {
            Some(b) if b.net > r.net || (b.net == r.net && b.n <= r.n) => Some(b),
            _ => Some(r),
        });
    match best {
        Some(b) if b.net > 0.0 => EnbsResult {
            optimal_n: b.n,
            rows,
            do_not_sample: false,
        },
        _ => EnbsResult {
            optimal_n: 0,
            rows,
            do_not_sample: true,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designs::DesignKind;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Beta, StandardNormal};

    fn normals(k: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    }

    fn names(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn constant_columns_have_zero_loss() {
        let t = SampleTable::from_pairs(vec![("a", vec![2.0; 10]), ("b", vec![-1.0; 10])]).unwrap();
        let outs = names(&["a", "b"]);
        for loss in [
            LossSpec::scalar("a"),
            LossSpec::TraceA { outputs: outs.clone() },
            LossSpec::WeightedA {
                outputs: outs.clone(),
                weights: vec![1.0, 2.0],
            },
            LossSpec::DCriterion {
                outputs: outs.clone(),
                standardized: false,
            },
        ] {
            assert_eq!(expected_loss(&t, &loss).unwrap(), 0.0);
        }
    }

    #[test]
    fn diagonal_trace_and_determinant() {
        // Columns with exact sample variances 4 and 9 and zero covariance.
        let a = vec![2.0, -2.0, 2.0, -2.0];
        let b = vec![3.0, 3.0, -3.0, -3.0];
        let scale = |c: Vec<f64>| -> Vec<f64> {
            let v = stats::variance(&c);
            c.iter().map(|x| x / v.sqrt()).collect()
        };
        let a: Vec<f64> = scale(a).iter().map(|x| 2.0 * x).collect();
        let b: Vec<f64> = scale(b).iter().map(|x| 3.0 * x).collect();
        let t = SampleTable::from_pairs(vec![("a", a), ("b", b)]).unwrap();
        let outs = names(&["a", "b"]);
        let tr = expected_loss(&t, &LossSpec::TraceA { outputs: outs.clone() }).unwrap();
        assert!((tr - 13.0).abs() < 1e-12);
        let det = expected_loss(
            &t,
            &LossSpec::DCriterion {
                outputs: outs.clone(),
                standardized: false,
            },
        )
        .unwrap();
        assert!((det - 36.0).abs() < 1e-10);
        let std_det = expected_loss(
            &t,
            &LossSpec::DCriterion {
                outputs: outs,
                standardized: true,
            },
        )
        .unwrap();
        assert!((std_det - 6.0).abs() < 1e-10);
    }

    #[test]
    fn finite_action_baseline_is_min_mean() {
        let t = SampleTable::from_pairs(vec![
            ("d1", vec![3.0, 3.4]),
            ("d2", vec![2.6, 3.0]),
            ("d3", vec![4.0, 4.0]),
        ])
        .unwrap();
        let l = LossSpec::FiniteAction {
            losses: names(&["d1", "d2", "d3"]),
        };
        assert!((expected_loss(&t, &l).unwrap() - 2.8).abs() < 1e-15);
    }

    #[test]
    fn scalar_evpi_is_variance() {
        let x = normals(1000, 1);
        let t = SampleTable::from_pairs(vec![("x", x.clone())]).unwrap();
        let e = evpi(&t, &LossSpec::scalar("x")).unwrap();
        assert_eq!(e.value, stats::variance(&x));
        assert_eq!(e.proportion, Some(1.0));
    }

    #[test]
    fn identical_actions_have_no_value() {
        let x = normals(1000, 2);
        let t = SampleTable::from_pairs(vec![("a", x.clone()), ("b", x)]).unwrap();
        let e = evpi(&t, &LossSpec::FiniteAction { losses: names(&["a", "b"]) }).unwrap();
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn finite_action_truncated_normal() {
        // Loss a1 ~ N(0,1) versus constant 0.3: E a1 = 0 < 0.3 so action 1 is
        // chosen now; perfect information gains E[max(0, a1 - 0.3)].
        let k = 1_000_000;
        let a = normals(k, 3);
        let t = SampleTable::from_pairs(vec![("a1", a), ("a2", vec![0.3; k])]).unwrap();
        let e = evpi(&t, &LossSpec::FiniteAction { losses: names(&["a1", "a2"]) }).unwrap();
        let c: f64 = 0.3;
        let phi = (-c * c / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let tail = 0.5 * statrs::function::erf::erfc(c / std::f64::consts::SQRT_2);
        let exact = phi - c * tail;
        assert!((e.value - exact).abs() < 0.003, "{} vs {exact}", e.value);
    }

    fn sum_table(k: usize) -> SampleTable {
        let p1 = normals(k, 11);
        let p2 = normals(k, 12);
        let noise = normals(k, 13);
        let a: Vec<f64> = p1.iter().zip(&p2).map(|(x, y)| x + y).collect();
        SampleTable::from_pairs(vec![("phi1", p1), ("phi2", p2), ("noise", noise), ("alpha", a)]).unwrap()
    }

    #[test]
    fn evppi_identities() {
        let t = sum_table(100_000);
        let cfg = VoiConfig::default();
        let half = evppi(&t, &names(&["phi1"]), &LossSpec::scalar("alpha"), &cfg).unwrap();
        assert!((half.proportion.unwrap() - 0.5).abs() < 0.02);
        let none = evppi(&t, &names(&["noise"]), &LossSpec::scalar("alpha"), &cfg).unwrap();
        assert!(none.proportion.unwrap() <= 0.02);
        let both = evppi(&t, &names(&["phi1", "phi2"]), &LossSpec::scalar("alpha"), &cfg).unwrap();
        assert!(both.proportion.unwrap() >= 0.95 && both.proportion.unwrap() <= 1.0 + 1e-9);
        assert!(half.se.unwrap() > 0.0 && half.se.unwrap() < 0.01 * half.value);
    }

    #[test]
    fn evppi_of_output_itself_and_constants() {
        let t = sum_table(10_000);
        let cfg = VoiConfig::default();
        let own = evppi(&t, &names(&["alpha"]), &LossSpec::scalar("alpha"), &cfg).unwrap();
        let p = own.proportion.unwrap();
        assert!((0.95..=1.0 + 1e-9).contains(&p), "{p}");
        let t2 = t.hstack(&SampleTable::from_pairs(vec![("c", vec![1.0; 10_000])]).unwrap()).unwrap();
        let e = evppi(&t2, &names(&["c"]), &LossSpec::scalar("alpha"), &cfg).unwrap();
        assert_eq!(e.value, 0.0);
        assert!(!e.warnings.is_empty());
    }

    #[test]
    fn self_grid_diagonal() {
        let t = sum_table(20_000);
        let t = t
            .hstack(&SampleTable::from_pairs(vec![("phi1_copy", t.column("phi1").unwrap().to_vec())]).unwrap())
            .unwrap();
        let g = evppi_grid(
            &t,
            &[names(&["phi1_copy"]), names(&["phi2"])],
            &names(&["phi1", "alpha", "noise"]),
            &VoiConfig::default(),
        );
        assert_eq!(g.cells.len(), 2);
        assert_eq!(g.cells[0].len(), 3);
        assert!(g.cell(0, 0).unwrap().proportion.unwrap() > 0.99);
        for row in &g.cells {
            for c in row {
                let p = c.as_ref().unwrap().proportion.unwrap();
                assert!((-0.02..=1.02).contains(&p));
            }
        }
    }

    #[test]
    fn grid_records_failures() {
        let t = sum_table(2000);
        let g = evppi_grid(&t, &[names(&["phi1"]), names(&["missing"])], &names(&["alpha"]), &VoiConfig::default());
        assert!(g.cells[0][0].is_ok());
        assert!(g.cells[1][0].as_ref().unwrap_err().contains("missing"));
    }

    #[test]
    fn multi_output_kinds() {
        let t = sum_table(50_000);
        let outs = names(&["alpha", "phi2"]);
        let cfg = VoiConfig::default();
        let tr = evppi(&t, &names(&["phi1"]), &LossSpec::TraceA { outputs: outs.clone() }, &cfg).unwrap();
        // Learning phi1 removes var(phi1) from alpha and nothing from phi2.
        assert!((tr.value - 1.0).abs() < 0.05, "{}", tr.value);
        let base_sum: f64 = outs
            .iter()
            .map(|o| expected_loss(&t, &LossSpec::scalar(o.clone())).unwrap())
            .sum();
        assert_eq!(tr.baseline, base_sum);
        let w = evppi(
            &t,
            &names(&["phi1"]),
            &LossSpec::WeightedA {
                outputs: outs.clone(),
                weights: vec![2.0, 0.0],
            },
            &cfg,
        )
        .unwrap();
        assert!((w.value - 4.0).abs() < 0.2);
        let d = evppi(
            &t,
            &names(&["phi1"]),
            &LossSpec::DCriterion {
                outputs: outs,
                standardized: false,
            },
            &cfg,
        )
        .unwrap();
        // det [[2,1],[1,1]] = 1 before; after learning phi1 residuals are
        // (phi2, phi2) with singular covariance.
        assert!((d.baseline - 1.0).abs() < 0.05);
        assert!((d.value - d.baseline).abs() < 0.02);
        assert!(tr.se.is_some() && d.se.is_some());
    }

    #[test]
    fn determinant_of_independent_outputs() {
        let k = 100_000;
        let a: Vec<f64> = normals(k, 21).iter().map(|x| 2.0 * x).collect();
        let b: Vec<f64> = normals(k, 22).iter().map(|x| 3.0 * x).collect();
        let t = SampleTable::from_pairs(vec![("a", a.clone()), ("b", b.clone())]).unwrap();
        let det = expected_loss(
            &t,
            &LossSpec::DCriterion {
                outputs: names(&["a", "b"]),
                standardized: false,
            },
        )
        .unwrap();
        let prod = stats::variance(&a) * stats::variance(&b);
        assert!((det / prod - 1.0).abs() < 0.02);
    }

    #[test]
    fn finite_action_evppi() {
        let k = 50_000;
        let phi = normals(k, 31);
        let eps = normals(k, 32);
        let a1: Vec<f64> = phi.iter().zip(&eps).map(|(p, e)| p + 0.5 * e).collect();
        let t = SampleTable::from_pairs(vec![("phi", phi), ("a1", a1), ("a2", vec![0.3; k])]).unwrap();
        let loss = LossSpec::FiniteAction { losses: names(&["a1", "a2"]) };
        let e = evppi(&t, &names(&["phi"]), &loss, &VoiConfig::default()).unwrap();
        let full = evpi(&t, &loss).unwrap();
        // E[max(0, phi - 0.3)] with phi ~ N(0,1).
        let c: f64 = 0.3;
        let phi_c = (-c * c / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let exact = phi_c - c * 0.5 * statrs::function::erf::erfc(c / std::f64::consts::SQRT_2);
        assert!((e.value - exact).abs() < 0.01, "{} vs {exact}", e.value);
        assert!(e.value <= full.value);
        assert!(e.se.unwrap() > 0.0);
    }

    fn beta_binomial_evsi(n: u64) -> f64 {
        // Uniform prior: var(p) = 1/12; posterior Beta(y+1, n-y+1) with y
        // uniform on 0..=n.
        let nf = n as f64;
        let post_var: f64 = (0..=n)
            .map(|y| {
                let (a, b) = (y as f64 + 1.0, nf - y as f64 + 1.0);
                a * b / ((a + b).powi(2) * (a + b + 1.0)) / (nf + 1.0)
            })
            .sum();
        1.0 / 12.0 - post_var
    }

    fn conjugate_table(k: usize, seed: u64) -> SampleTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let beta = Beta::new(1.0, 1.0).unwrap();
        let p: Vec<f64> = (0..k).map(|_| rng.sample(beta)).collect();
        SampleTable::from_pairs(vec![("p", p)]).unwrap()
    }

    #[test]
    fn conjugate_evsi_n20() {
        let t = conjugate_table(50_000, 41);
        let d = DesignSpec::new(DesignKind::Binomial { parameter: "p".into() }, 20, 3);
        let s = simulate_statistics(&d, &t).unwrap();
        let joined = t.hstack(&s).unwrap();
        let e = evsi(&joined, &[d.statistic_name()], &LossSpec::scalar("p"), &VoiConfig::default()).unwrap();
        let exact = beta_binomial_evsi(20);
        assert!((e.value / exact - 1.0).abs() < 0.05, "{} vs {exact}", e.value);
    }

    #[test]
    fn evsi_curve_behaviour() {
        let t = conjugate_table(20_000, 42);
        let d = DesignSpec::new(DesignKind::Binomial { parameter: "p".into() }, 0, 5);
        let cfg = VoiConfig::default();
        let curve = evsi_curve(&t, &d, &[0, 10, 100, 1000], &LossSpec::scalar("p"), &cfg).unwrap();
        let est: Vec<&VoiEstimate> = curve.iter().map(|c| c.estimate.as_ref().unwrap()).collect();
        assert_eq!(est[0].value, 0.0);
        for w in est.windows(2) {
            let slack = 2.0 * (w[0].se.unwrap().powi(2) + w[1].se.unwrap().powi(2)).sqrt();
            assert!(w[1].value >= w[0].value - slack);
        }
        assert!(evsi_curve(&t, &d, &[10, 10], &LossSpec::scalar("p"), &cfg).is_err());
    }

    #[test]
    fn evsi_approaches_evppi() {
        let t = conjugate_table(20_000, 43);
        let t = t
            .hstack(&SampleTable::from_pairs(vec![("q", t.column("p").unwrap().to_vec())]).unwrap())
            .unwrap();
        let cfg = VoiConfig::default();
        let ppi = evppi(&t, &names(&["q"]), &LossSpec::scalar("p"), &cfg).unwrap();
        let d = DesignSpec::new(DesignKind::Binomial { parameter: "q".into() }, 1_000_000, 6);
        let s = simulate_statistics(&d, &t).unwrap();
        let e = evsi(&t.hstack(&s).unwrap(), &[d.statistic_name()], &LossSpec::scalar("p"), &cfg).unwrap();
        assert!((e.value / ppi.value - 1.0).abs() < 0.05, "{e:?} {ppi:?}");
    }

    #[test]
    fn enbs_examples() {
        let grid = [10u64, 50, 100, 200, 500];
        let curve: Vec<(u64, f64)> = grid.iter().map(|&n| (n, 10.0 * n as f64 / (n as f64 + 100.0))).collect();
        let r = enbs(&curve, 0.0, 0.02);
        assert_eq!(r.optimal_n, 100);
        assert!(!r.do_not_sample);
        let free = enbs(&curve, 0.0, 0.0);
        assert_eq!(free.optimal_n, 500);
        let dear = enbs(&curve, 0.0, 10.0);
        assert_eq!(dear.optimal_n, 0);
        assert!(dear.do_not_sample);
        // Ties go to the smaller n.
        let flat = enbs(&[(10, 1.0), (20, 1.0)], 0.0, 0.0);
        assert_eq!(flat.optimal_n, 10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn finite_action_shift_invariance(
            cols in prop::collection::vec(prop::collection::vec(-1000i32..1000, 50), 2..5),
            shift in -1000i32..1000,
        ) {
            let mk = |s: i32| {
                SampleTable::from_pairs(
                    cols.iter()
                        .enumerate()
                        .map(|(i, c)| (format!("d{i}"), c.iter().map(|&v| f64::from(v + s)).collect()))
                        .collect(),
                )
                .unwrap()
            };
            let loss = LossSpec::FiniteAction {
                losses: (0..cols.len()).map(|i| format!("d{i}")).collect(),
            };
            let a = evpi(&mk(0), &loss).unwrap();
            let b = evpi(&mk(shift), &loss).unwrap();
            prop_assert_eq!(a.value, b.value);
        }

        #[test]
        fn trace_is_sum_of_variances(seed in 0u64..1000, s in 1usize..5) {
            let cols: Vec<(String, Vec<f64>)> = (0..s).map(|i| (format!("c{i}"), normals(200, seed * 10 + i as u64))).collect();
            let t = SampleTable::from_pairs(cols.clone()).unwrap();
            let tr = expected_loss(&t, &LossSpec::TraceA { outputs: cols.iter().map(|c| c.0.clone()).collect() }).unwrap();
            let sum: f64 = cols.iter().map(|c| stats::variance(&c.1)).sum();
            prop_assert_eq!(tr, sum);
        }

        #[test]
        fn evppi_bounded_by_evpi(seed in 0u64..10_000, w in 0.0f64..3.0, nonlin in 0.0f64..2.0) {
            let k = 3000;
            let x = normals(k, seed);
            let e = normals(k, seed + 7);
            let y: Vec<f64> = x.iter().zip(&e).map(|(x, e)| w * x + nonlin * (x * x) + e).collect();
            let t = SampleTable::from_pairs(vec![("x", x), ("y", y)]).unwrap();
            let loss = LossSpec::scalar("y");
            let est = evppi(&t, &["x".to_string()], &loss, &VoiConfig::default()).unwrap();
            let full = evpi(&t, &loss).unwrap();
            let se = est.se.unwrap_or(0.0);
            prop_assert!(est.value >= -3.0 * se);
            prop_assert!(est.value <= full.value + 3.0 * se);
        }
    }
}
