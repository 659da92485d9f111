//! Adaptive random-walk Metropolis on the unconstrained parameter space.
//!
//! Each iteration performs a Metropolis-within-Gibbs sweep (one Gaussian
//! proposal per coordinate, with per-coordinate scales tuned by Robbins-Monro
//! toward `target_accept`) followed, when enabled, by one joint move drawn
//! from the adapted empirical covariance of the chain. All adaptation happens
//! during burn-in; the kept draws come from a fixed kernel.
//!
//! Chains use independent ChaCha streams derived from one seed, so results do
//! not depend on how chains are scheduled onto threads.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VoiError};
use crate::hiv::{self, HivModel, HivOutputs, HivParams, Scenario};
use crate::samples::{SampleTable, TableMeta};
use crate::stats;

pub const INIT_ATTEMPTS: usize = 100;
const BLOCK_TARGET_ACCEPT: f64 = 0.234;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub chains: usize,
    /// Post-burn-in iterations per chain (kept draws = iterations / thin).
    pub iterations: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
    /// Per-coordinate acceptance rate targeted during burn-in.
    pub target_accept: f64,
    /// Standard deviation of the initial jitter on the unconstrained scale.
    pub init_jitter: f64,
    /// Add a joint move with adapted full covariance after each sweep.
    pub block_update: bool,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            chains: 4,
            iterations: 37_500,
            burnin: 20_000,
            thin: 1,
            seed: 1,
            target_accept: 0.44,
            init_jitter: 0.1,
            block_update: true,
        }
    }
}

impl ChainConfig {
    /// Default settings resized to `draws` pooled post-burn-in draws.
    pub fn with_total_draws(draws: usize, chains: usize) -> Self {
        let chains = chains.max(1);
        ChainConfig {
            chains,
            iterations: draws.div_ceil(chains),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(VoiError::InvalidArgument(m.to_string()));
        if self.chains == 0 {
            return bad("chains must be at least 1");
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if self.thin == 0 {
            return bad("thin must be at least 1");
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad("target_accept must lie in (0, 1)");
        }
        if !(self.init_jitter >= 0.0) {
            return bad("init_jitter must be nonnegative");
        }
        Ok(())
    }

    pub fn kept_per_chain(&self) -> usize {
        self.iterations / self.thin
    }
}

/// A log density over an unconstrained real vector.
pub trait Target: Sync {
    fn dim(&self) -> usize;
    fn log_density(&self, u: &[f64]) -> f64;
    /// Starting point before jitter; may itself be random.
    fn initial_point(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;
}

/// Kept draws of one chain on the unconstrained scale.
#[derive(Debug, Clone)]
pub struct ChainRun {
    pub draws: Vec<Vec<f64>>,
    /// Mean per-coordinate acceptance rate after burn-in.
    pub acceptance: f64,
    /// Acceptance rate of the joint move after burn-in (NaN when disabled).
    pub block_acceptance: f64,
}

/// Running mean and covariance (Welford).
struct RunningCov {
    n: f64,
    mean: Vec<f64>,
    m2: DMatrix<f64>,
}

impl RunningCov {
    fn new(d: usize) -> Self {
        RunningCov {
            n: 0.0,
            mean: vec![0.0; d],
            m2: DMatrix::zeros(d, d),
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1.0;
        let d = x.len();
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl / self.n;
        }
        for i in 0..d {
            let di = x[i] - self.mean[i];
            for j in 0..d {
                self.m2[(i, j)] += delta[j] * di;
            }
        }
    }

    fn covariance(&self) -> Option<DMatrix<f64>> {
        (self.n > 2.0).then(|| {
            let c = &self.m2 / (self.n - 1.0);
            (&c + c.transpose()) * 0.5
        })
    }
}

struct BlockProposal {
    chol: DMatrix<f64>,
    log_scale: f64,
}

impl BlockProposal {
    fn from_cov(cov: &DMatrix<f64>, log_scale: f64) -> Option<Self> {
        let d = cov.nrows();
        let ridge = 1e-10 * (0..d).map(|i| cov[(i, i)]).fold(0.0, f64::max).max(1e-300);
        let reg = cov + DMatrix::identity(d, d) * ridge;
        reg.cholesky().map(|c| BlockProposal {
            chol: c.l(),
            log_scale,
        })
    }

    fn propose(&self, x: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let d = x.len();
        let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let step = &self.chol * z * self.log_scale.exp();
        x.iter().zip(step.iter()).map(|(a, s)| a + s).collect()
    }
}

fn run_one_chain<T: Target>(target: &T, cfg: &ChainConfig, chain: usize) -> Result<ChainRun> {
    let d = target.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain as u64 + 1);

    let (mut x, mut lp) = (0..INIT_ATTEMPTS)
        .find_map(|_| {
            let mut x = target.initial_point(&mut rng);
            for v in x.iter_mut() {
                *v += cfg.init_jitter * rng.sample::<f64, _>(StandardNormal);
            }
            let lp = target.log_density(&x);
            lp.is_finite().then_some((x, lp))
        })
        .ok_or(VoiError::Initialisation(INIT_ATTEMPTS))?;

    let mut log_scales = vec![(0.1f64).ln(); d];
    let mut block: Option<BlockProposal> = None;
    let mut block_log_scale = (2.38 / (d as f64).sqrt()).ln();
    let mut running = RunningCov::new(d);
    let cov_start = cfg.burnin / 4;
    let block_start = cfg.burnin / 2;

    let total = cfg.burnin + cfg.iterations;
    let mut kept = Vec::with_capacity(cfg.kept_per_chain());
    let (mut acc, mut tries, mut bacc, mut btries) = (0usize, 0usize, 0usize, 0usize);
    let mut proposal = x.clone();

    for it in 0..total {
        let adapting = it < cfg.burnin;
        let eta = ((it + 1) as f64).powf(-0.6);

        for j in 0..d {
            proposal.copy_from_slice(&x);
            proposal[j] += log_scales[j].exp() * rng.sample::<f64, _>(StandardNormal);
            let lp_new = target.log_density(&proposal);
            let log_ratio = lp_new - lp;
            let accepted = lp_new.is_finite() && rng.random::<f64>().ln() < log_ratio;
            if accepted {
                x[j] = proposal[j];
                lp = lp_new;
            }
            if adapting {
                let alpha = if lp_new.is_finite() {
                    log_ratio.min(0.0).exp()
                } else {
                    0.0
                };
                log_scales[j] += eta * (alpha - cfg.target_accept);
            } else {
                tries += 1;
                acc += usize::from(accepted);
            }
        }

        if cfg.block_update {
            if let Some(b) = &block {
                let y = b.propose(&x, &mut rng);
                let lp_new = target.log_density(&y);
                let log_ratio = lp_new - lp;
                let accepted = lp_new.is_finite() && rng.random::<f64>().ln() < log_ratio;
                if accepted {
                    x = y;
                    lp = lp_new;
                }
                if adapting {
                    let alpha = if lp_new.is_finite() {
                        log_ratio.min(0.0).exp()
                    } else {
                        0.0
                    };
                    block_log_scale += eta * (alpha - BLOCK_TARGET_ACCEPT);
                    if let Some(b) = block.as_mut() {
                        b.log_scale = block_log_scale;
                    }
                } else {
                    btries += 1;
                    bacc += usize::from(accepted);
                }
            }
            if adapting && it >= cov_start {
                running.push(&x);
                let refresh = it >= block_start && (it - block_start) % 500 == 0;
                if refresh || it + 1 == cfg.burnin {
                    if let Some(cov) = running.covariance() {
                        if let Some(b) = BlockProposal::from_cov(&cov, block_log_scale) {
                            block = Some(b);
                        }
                    }
                }
            }
        }

        if !adapting && (it - cfg.burnin + 1) % cfg.thin == 0 {
            kept.push(x.clone());
        }
    }

    Ok(ChainRun {
        draws: kept,
        acceptance: if tries > 0 { acc as f64 / tries as f64 } else { f64::NAN },
        block_acceptance: if btries > 0 {
            bacc as f64 / btries as f64
        } else {
            f64::NAN
        },
    })
}

/// Run `cfg.chains` independent chains on `target`; results are ordered by
/// chain index regardless of scheduling.
pub fn sample_target<T: Target>(target: &T, cfg: &ChainConfig) -> Result<Vec<ChainRun>> {
    cfg.validate()?;
    (0..cfg.chains)
        .into_par_iter()
        .map(|c| run_one_chain(target, cfg, c))
        .collect()
}

impl Target for HivModel {
    fn dim(&self) -> usize {
        HivModel::dim(self)
    }

    fn log_density(&self, u: &[f64]) -> f64 {
        self.log_density_unconstrained(u)
    }

    /// Empirical frequencies for data-dominated founders and prior draws for
    /// founders informed mainly by their priors.
    fn initial_point(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut p = HivParams::empirical(&self.data, self.scenario);
        let mut unit = || rng.random_range(0.05..0.95);
        p.a_h = unit();
        p.a_delta = [unit(), unit(), unit()];
        p.a_op = unit();
        let (lo, hi) = hiv::a_un_bounds();
        p.a_un = lo + (hi - lo) * unit();
        hiv::to_unconstrained(&p, self.scenario)
    }
}

/// The HIV posterior in working coordinates aligned with what the data pin
/// down. Slots 5..9 of the unconstrained vector (logit a_H and the three
/// logit a_delta) are replaced by
///
/// * `ln p_H`,
/// * `ln mu_D` (total diagnosed count),
/// * log-ratios of the per-group diagnosed counts against the last free group,
/// * logit a_delta of any group whose diagnosed count does not enter `mu_D`
///   through a_delta (group G under scenario B, group P when excluded).
///
/// All other coordinates are shared with [`hiv::to_unconstrained`]. The map
/// is a bijection on the support and the density carries its Jacobian, so
/// the stationary distribution is unchanged; only the random-walk geometry
/// improves, since `mu_D` and `p_H` are tightly identified while the split of
/// diagnoses across groups is not.
pub struct WorkingHiv<'a> {
    model: &'a HivModel,
    free: Vec<usize>,
    fixed: Vec<usize>,
}

const SLOT_AH: usize = 5;
const SLOT_AD: usize = 6;

impl<'a> WorkingHiv<'a> {
    pub fn new(model: &'a HivModel) -> Self {
        let (free, fixed) = (0..3).partition(|&g| {
            !(g == 0 && model.scenario == Scenario::GumcadDiagnosed)
                && !(g == 2 && !model.data.include_pmsm)
        });
        WorkingHiv { model, free, fixed }
    }

    fn diagnosed(out: &HivOutputs, g: usize) -> f64 {
        [out.mu_dg, out.mu_dn, out.mu_dp][g]
    }

    /// Diagnosed count that does not depend on any a_delta.
    fn pinned(&self, out: &HivOutputs) -> f64 {
        if self.model.scenario == Scenario::GumcadDiagnosed {
            out.mu_dg
        } else {
            0.0
        }
    }

    pub fn to_working(&self, u: &[f64]) -> Option<Vec<f64>> {
        let (p, _) = hiv::from_unconstrained(u, self.model.scenario);
        let out = self.model.outputs(&p)?;
        let logs: Vec<f64> = self
            .free
            .iter()
            .map(|&g| Self::diagnosed(&out, g).ln())
            .collect();
        let last = *logs.last()?;
        let mut v = u.to_vec();
        v[SLOT_AH] = out.p_h.ln();
        let mut slot = SLOT_AD;
        v[slot] = out.mu_d.ln();
        for l in &logs[..logs.len() - 1] {
            slot += 1;
            v[slot] = l - last;
        }
        for &g in &self.fixed {
            slot += 1;
            v[slot] = u[SLOT_AD + g];
        }
        v.iter().all(|x| x.is_finite()).then_some(v)
    }

    /// Map back to the unconstrained vector; also returns `ln |dv/du|`.
    pub fn from_working(&self, v: &[f64]) -> Option<(Vec<f64>, f64)> {
        let mut u = v.to_vec();
        let m = self.free.len();
        for (i, &g) in self.fixed.iter().enumerate() {
            u[SLOT_AD + g] = v[SLOT_AD + m + i];
        }
        for &g in &self.free {
            u[SLOT_AD + g] = 0.0;
        }
        u[SLOT_AH] = 0.0;
        // Counts per person and undiagnosed prevalence do not involve the
        // replaced coordinates.
        let (p0, _) = hiv::from_unconstrained(&u, self.model.scenario);
        let out0 = self.model.outputs(&p0)?;
        let r = [out0.r_g, out0.r_n, out0.r_p];
        let pibar = [out0.pibar_g, out0.pibar_n, out0.pibar_p];
        let pinned = self.pinned(&out0);

        let total = v[SLOT_AD].exp();
        let free_total = total - pinned;
        if !(free_total > 0.0) {
            return None;
        }
        let ratios = &v[SLOT_AD + 1..SLOT_AD + m];
        let norm = ln_1p_sum_exp(ratios);
        let last = free_total.ln() - norm;

        let mut log_jac = (free_total / total).ln();
        let mut mu_dg = pinned;
        for (i, &g) in self.free.iter().enumerate() {
            let l = if i + 1 == m { last } else { last + ratios[i] };
            if g == 0 {
                mu_dg = l.exp();
            }
            let delta = stats::logistic(l - (r[g] * pibar[g]).ln());
            let a = delta / (1.0 - pibar[g]);
            if !(a > 0.0 && a < 1.0) {
                return None;
            }
            u[SLOT_AD + g] = stats::logit(a);
            log_jac += ((1.0 - a) / (1.0 - delta)).ln();
        }
        let a_h = v[SLOT_AH].exp() * total / mu_dg;
        if !(a_h > 0.0 && a_h < 1.0) {
            return None;
        }
        u[SLOT_AH] = stats::logit(a_h);
        log_jac += (1.0 - a_h).ln();
        (u.iter().all(|x| x.is_finite()) && log_jac.is_finite()).then_some((u, log_jac))
    }
}

/// `ln(1 + sum exp(xs))` without overflow.
fn ln_1p_sum_exp(xs: &[f64]) -> f64 {
    let shift = xs.iter().fold(0.0f64, |m, &x| m.max(x));
    let s = (-shift).exp() + xs.iter().map(|x| (x - shift).exp()).sum::<f64>();
    shift + s.ln()
}

impl Target for WorkingHiv<'_> {
    fn dim(&self) -> usize {
        HivModel::dim(self.model)
    }

    fn log_density(&self, v: &[f64]) -> f64 {
        match self.from_working(v) {
            Some((u, log_jac)) => {
                let lp = self.model.log_density_unconstrained(&u);
                if lp.is_finite() {
                    lp - log_jac
                } else {
                    f64::NEG_INFINITY
                }
            }
            None => f64::NEG_INFINITY,
        }
    }

    fn initial_point(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let u = self.model.initial_point(rng);
        self.to_working(&u)
            .unwrap_or_else(|| vec![f64::NAN; u.len()])
    }
}

/// Convergence summary per variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub names: Vec<String>,
    /// Split R-hat; `None` when there is a single chain.
    pub rhat: Vec<Option<f64>>,
    pub ess: Vec<f64>,
    /// Post-burn-in acceptance rate per chain (coordinate-wise moves).
    pub acceptance: Vec<f64>,
    /// Post-burn-in acceptance rate per chain of the joint move.
    pub block_acceptance: Vec<f64>,
}

impl Diagnostics {
    pub fn max_rhat(&self) -> Option<f64> {
        self.rhat.iter().flatten().copied().reduce(f64::max)
    }

    pub fn rhat_of(&self, name: &str) -> Option<f64> {
        let j = self.names.iter().position(|n| n == name)?;
        self.rhat[j]
    }

    pub fn ess_of(&self, name: &str) -> Option<f64> {
        let j = self.names.iter().position(|n| n == name)?;
        Some(self.ess[j])
    }
}

/// Split R-hat: each chain is cut in half and
/// `R = sqrt(1 + B / (n W))`, where `B / n` is the variance of the half-chain
/// means and `W` the mean within-half variance. Unlike the textbook form this
/// omits the `(n - 1) / n` shrinkage of `W`, so `R >= 1` always and `R = 1`
/// exactly when all half-chain means coincide.
pub fn split_rhat(chains: &[&[f64]]) -> Option<f64> {
    if chains.len() < 2 {
        return None;
    }
    let n = chains.iter().map(|c| c.len()).min()? / 2;
    if n < 2 {
        return None;
    }
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| [&c[..n], &c[n..2 * n]])
        .collect();
    let means: Vec<f64> = halves.iter().map(|h| stats::mean(h)).collect();
    let within = halves.iter().map(|h| stats::variance(h)).sum::<f64>() / halves.len() as f64;
    let between_over_n = stats::variance(&means);
    if within <= 0.0 {
        return Some(if between_over_n == 0.0 { 1.0 } else { f64::INFINITY });
    }
    Some((1.0 + between_over_n / within).sqrt())
}

fn autocovariance(x: &[f64], planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = x.len();
    let m = stats::mean(x);
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .map(|v| Complex::new(v - m, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    buf[..n].iter().map(|c| c.re / (size as f64 * n as f64)).collect()
}

/// Multi-chain effective sample size with Geyer's initial monotone sequence.
pub fn effective_sample_size(chains: &[&[f64]]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if m == 0 || n < 4 {
        return (m * n) as f64;
    }
    let mut planner = FftPlanner::new();
    let acov: Vec<Vec<f64>> = chains.iter().map(|c| autocovariance(&c[..n], &mut planner)).collect();
    let means: Vec<f64> = chains.iter().map(|c| stats::mean(&c[..n])).collect();
    let nf = n as f64;
    let within = acov.iter().map(|a| a[0] * nf / (nf - 1.0)).sum::<f64>() / m as f64;
    let between_over_n = if m > 1 { stats::variance(&means) } else { 0.0 };
    let var_plus = within * (nf - 1.0) / nf + between_over_n;
    if var_plus <= 0.0 {
        return (m * n) as f64;
    }
    let rho = |t: usize| {
        let mean_acov = acov.iter().map(|a| a[t]).sum::<f64>() / m as f64;
        1.0 - (within - mean_acov) / var_plus
    };
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let pair = rho(t) + rho(t + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
        t += 2;
    }
    let total = (m * n) as f64;
    (total / tau.max(1.0 / total.log10().max(1.0))).min(total)
}

/// Diagnostics for every column of a pooled table whose rows are `chains`
/// equal consecutive blocks.
pub fn diagnostics(table: &SampleTable, chains: usize) -> Result<Diagnostics> {
    let k = table.nrows();
    if chains == 0 || k % chains != 0 {
        return Err(VoiError::InvalidArgument(format!(
            "{k} rows cannot be split into {chains} equal chains"
        )));
    }
    if chains < 2 {
        warn!("single chain: R-hat omitted");
    }
    let per = k / chains;
    let (rhat, ess) = table
        .columns()
        .iter()
        .map(|col| {
            let split: Vec<&[f64]> = col.chunks(per).collect();
            (split_rhat(&split), effective_sample_size(&split))
        })
        .unzip();
    Ok(Diagnostics {
        names: table.names().to_vec(),
        rhat,
        ess,
        acceptance: Vec::new(),
        block_acceptance: Vec::new(),
    })
}

/// Sample the HIV posterior and push every draw through the graph.
///
/// The returned table holds every founder and every derived output as named
/// columns, chain 0 first.
pub fn run_chains(model: &HivModel, cfg: &ChainConfig) -> Result<(SampleTable, Diagnostics)> {
    let working = WorkingHiv::new(model);
    let mut runs = sample_target(&working, cfg)?;
    for run in runs.iter_mut() {
        for d in run.draws.iter_mut() {
            let (u, _) = working.from_working(d).ok_or_else(|| {
                VoiError::InvalidArgument("sampler emitted a draw outside the support".into())
            })?;
            *d = u;
        }
    }
    let table = pushforward(model, &runs)?;
    let mut diag = diagnostics(&table, cfg.chains)?;
    diag.acceptance = runs.iter().map(|r| r.acceptance).collect();
    diag.block_acceptance = runs.iter().map(|r| r.block_acceptance).collect();

    let mut meta = TableMeta {
        seed: Some(cfg.seed),
        chains: Some(cfg.chains),
        burnin: Some(cfg.burnin),
        thin: Some(cfg.thin),
        scenario: Some(model.scenario.tag().to_string()),
        ..Default::default()
    };
    if model.data.is_synthetic() {
        meta.extra.insert(
            "synthetic_fields".into(),
            serde_json::json!(model.data.synthetic),
        );
    }
    let rhat: serde_json::Map<String, serde_json::Value> = diag
        .names
        .iter()
        .zip(&diag.rhat)
        .filter_map(|(n, r)| r.map(|r| (n.clone(), serde_json::json!(r))))
        .collect();
    meta.extra.insert("rhat".into(), serde_json::Value::Object(rhat));
    Ok((table.with_meta(meta), diag))
}

/// Column names produced by [`run_chains`] for a scenario.
pub fn hiv_column_names(scenario: Scenario) -> Vec<String> {
    HivParams::names(scenario)
        .into_iter()
        .chain(HivOutputs::NAMES)
        .map(str::to_string)
        .collect()
}

fn pushforward(model: &HivModel, runs: &[ChainRun]) -> Result<SampleTable> {
    let names = hiv_column_names(model.scenario);
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for run in runs {
        for u in &run.draws {
            let (p, _) = hiv::from_unconstrained(u, model.scenario);
            let out = model.outputs(&p).ok_or_else(|| {
                VoiError::InvalidArgument("sampler emitted a rejected draw".into())
            })?;
            for (col, v) in columns.iter_mut().zip(p.values().into_iter().chain(out.values())) {
                col.push(v);
            }
        }
    }
    SampleTable::new(names, columns)
}
