//! Regression of Monte Carlo outputs on inputs: MARS (hinge-basis forward
//! selection with GCV pruning) and a total-degree-3 polynomial fallback.
//!
//! The forward pass keeps an orthonormal basis of the current terms. For a
//! candidate parent term `B` and predictor `x`, the hinge pair
//! `{B (x - t)+, B (t - x)+}` spans the same space as `{B x, B (x - t)+}`
//! once `B` is in the model, so each candidate costs one orthogonalised
//! linear column plus a sweep over knots in sorted order that accumulates
//! the inner products needed to score `B (x - t)+` for every `t` at once.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VoiError};
use crate::stats;

/// Columns whose orthogonal remainder falls below this fraction of their
/// squared norm are treated as linearly dependent.
const DEPENDENCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Mars,
    Polynomial,
}

impl std::str::FromStr for Backend {
    type Err = VoiError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mars" => Ok(Backend::Mars),
            "polynomial" => Ok(Backend::Polynomial),
            _ => Err(VoiError::InvalidArgument(format!("unknown backend {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_terms: usize,
    pub max_degree: usize,
    /// GCV cost per knot.
    pub penalty: f64,
    /// Forward pass stops when the relative RSS improvement drops below this.
    pub threshold: f64,
    pub backend: Backend,
    /// Knot candidates per predictor.
    pub max_knots: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_terms: 21,
            max_degree: 2,
            penalty: 3.0,
            threshold: 1e-4,
            backend: Backend::Mars,
            max_knots: 1023,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_terms < 1 || self.max_degree < 1 {
            return Err(VoiError::InvalidArgument(
                "max_terms and max_degree must be at least 1".into(),
            ));
        }
        if !(self.penalty >= 0.0) || !(self.threshold >= 0.0) || self.max_knots < 1 {
            return Err(VoiError::InvalidArgument(
                "penalty, threshold and max_knots must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Factor {
    /// `max(0, sign * (x - knot)) / scale`
    Hinge { var: usize, knot: f64, sign: i8 },
    /// `((x - center) / scale)^exp`
    Power { var: usize, exp: u32 },
}

impl Factor {
    fn var(&self) -> usize {
        match *self {
            Factor::Hinge { var, .. } | Factor::Power { var, .. } => var,
        }
    }
}

/// Product of factors; the empty product is the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Term {
    pub factors: Vec<Factor>,
}

impl Term {
    fn degree(&self) -> usize {
        self.factors.len()
    }

    fn uses(&self, v: usize) -> bool {
        self.factors.iter().any(|f| f.var() == v)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarsModel {
    pub backend: Backend,
    /// Number of predictor columns expected by `predict`.
    pub n_predictors: usize,
    pub centers: Vec<f64>,
    pub scales: Vec<f64>,
    pub terms: Vec<Term>,
    pub coefficients: Vec<f64>,
    pub gcv: f64,
    pub rss: f64,
    /// Residual variance estimate `RSS / (K - terms)`.
    pub sigma2: f64,
    /// Whether the backward pass removed any forward-pass term.
    pub pruned: bool,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(skip)]
    fitted: Vec<f64>,
    #[serde(skip)]
    resid: Vec<f64>,
    /// Upper-triangular `R` with `B'B = R'R` over the retained terms.
    #[serde(skip)]
    gram_root: Option<DMatrix<f64>>,
    /// Covariance (K - 1 denominator) of the retained basis columns.
    #[serde(skip)]
    basis_cov: Option<DMatrix<f64>>,
}

impl MarsModel {
    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn fitted(&self) -> &[f64] {
        &self.fitted
    }

    pub fn resid(&self) -> &[f64] {
        &self.resid
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn factor_value(&self, f: &Factor, x: f64) -> f64 {
        match *f {
            Factor::Hinge { var, knot, sign } => {
                (f64::from(sign) * (x - knot)).max(0.0) / self.scales[var]
            }
            Factor::Power { var, exp } => {
                ((x - self.centers[var]) / self.scales[var]).powi(exp as i32)
            }
        }
    }

    fn term_column(&self, term: &Term, x: &[&[f64]]) -> Vec<f64> {
        let k = x.first().map_or(0, |c| c.len());
        let mut col = vec![1.0; k];
        for f in &term.factors {
            let xv = x[f.var()];
            for (c, &xi) in col.iter_mut().zip(xv) {
                *c *= self.factor_value(f, xi);
            }
        }
        col
    }

    fn check_columns(&self, x: &[&[f64]]) -> Result<usize> {
        if x.len() != self.n_predictors {
            return Err(VoiError::ColumnMismatch {
                expected: self.n_predictors,
                got: x.len(),
            });
        }
        let k = x.first().map_or(0, |c| c.len());
        if x.iter().any(|c| c.len() != k) {
            return Err(VoiError::InvalidArgument(
                "predictor columns differ in length".into(),
            ));
        }
        Ok(k)
    }

    /// Evaluated basis, one column per retained term (K x terms).
    pub fn basis_matrix(&self, x: &[&[f64]]) -> Result<DMatrix<f64>> {
        let k = self.check_columns(x)?;
        let mut b = DMatrix::zeros(k, self.terms.len());
        for (j, t) in self.terms.iter().enumerate() {
            b.set_column(j, &DVector::from_vec(self.term_column(t, x)));
        }
        Ok(b)
    }

    pub fn predict(&self, x: &[&[f64]]) -> Result<Vec<f64>> {
        let k = self.check_columns(x)?;
        let mut out = vec![0.0; k];
        for (t, &beta) in self.terms.iter().zip(&self.coefficients) {
            let col = self.term_column(t, x);
            for (o, c) in out.iter_mut().zip(&col) {
                *o += beta * c;
            }
        }
        Ok(out)
    }

    /// Covariance of the retained basis columns over the training inputs.
    pub fn basis_covariance(&self) -> Result<&DMatrix<f64>> {
        self.basis_cov.as_ref().ok_or_else(|| VoiError::Singular("basis Gram matrix is singular".into()))
    }

    /// Draws from `N(beta, sigma2 (B'B)^-1)`, one row per draw.
    pub fn coefficient_draws(&self, n_draws: usize, seed: u64) -> Result<DMatrix<f64>> {
        let root = self.gram_root.as_ref().ok_or_else(|| VoiError::Singular("basis Gram matrix is singular".into()))?;
        let s = self.terms.len();
        if (0..s).any(|i| root[(i, i)].abs() <= 0.0) {
            return Err(VoiError::Singular("basis Gram matrix is singular".into()));
        }
        let sigma = self.sigma2.max(0.0).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = DMatrix::zeros(n_draws, s);
        for d in 0..n_draws {
            let z = DVector::from_iterator(s, (0..s).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let step = root.solve_upper_triangular(&z).ok_or_else(|| VoiError::Singular("basis Gram matrix is singular".into()))?;
            for j in 0..s {
                out[(d, j)] = self.coefficients[j] + sigma * step[j];
            }
        }
        Ok(out)
    }
}

/// Orthonormal basis grown by modified Gram-Schmidt with one
/// reorthogonalisation pass. `r[j]` holds the coordinates of accepted column
/// `j` in the basis.
struct Ortho {
    q: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
}

impl Ortho {
    fn new() -> Self {
        Ortho {
            q: Vec::new(),
            r: Vec::new(),
        }
    }

    fn len(&self) -> usize {
        self.q.len()
    }

    /// Orthogonalise `col` against the basis; returns coordinates and the
    /// normalised remainder, or `None` when `col` is numerically dependent.
    fn project(&self, col: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
        let mut v = col.to_vec();
        let mut coords = vec![0.0; self.q.len()];
        for _ in 0..2 {
            for (j, q) in self.q.iter().enumerate() {
                let c = dot(q, &v);
                coords[j] += c;
                axpy(-c, q, &mut v);
            }
        }
        let norm2 = dot(&v, &v);
        (coords, v, norm2)
    }

    fn add(&mut self, col: &[f64]) -> bool {
        let total = dot(col, col);
        if total <= 0.0 {
            return false;
        }
        let (mut coords, mut v, norm2) = self.project(col);
        if norm2 <= DEPENDENCE_TOL * total {
            return false;
        }
        let norm = norm2.sqrt();
        for x in v.iter_mut() {
            *x /= norm;
        }
        coords.push(norm);
        self.q.push(v);
        self.r.push(coords);
        true
    }

    /// Upper-triangular matrix of coordinates (basis x columns).
    fn r_matrix(&self) -> DMatrix<f64> {
        let m = self.q.len();
        let mut r = DMatrix::zeros(m, m);
        for (j, c) in self.r.iter().enumerate() {
            for (i, &v) in c.iter().enumerate() {
                r[(i, j)] = v;
            }
        }
        r
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Predictor prepared for knot sweeps.
struct Predictor {
    /// Standardised values.
    xs: Vec<f64>,
    /// Indices sorting `xs` ascending.
    order: Vec<usize>,
    /// Knot candidates as (original value, standardised value, last sorted
    /// position with value <= knot).
    knots: Vec<(f64, f64, usize)>,
}

fn prepare(x: &[f64], center: f64, scale: f64, max_knots: usize) -> Predictor {
    let k = x.len();
    let xs: Vec<f64> = x.iter().map(|v| (v - center) / scale).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    let ranks: Vec<usize> = if k <= max_knots {
        (0..k).collect()
    } else {
        (0..max_knots)
            .map(|i| ((i as u128 * (k - 1) as u128) / (max_knots - 1).max(1) as u128) as usize)
            .collect()
    };
    let mut knots: Vec<(f64, f64, usize)> = Vec::with_capacity(ranks.len());
    for r in ranks {
        let value = x[order[r]];
        if knots.last().is_some_and(|&(v, _, _)| v == value) {
            continue;
        }
        // Last sorted position holding this value.
        let mut end = r;
        while end + 1 < k && x[order[end + 1]] == value {
            end += 1;
        }
        knots.push((value, (value - center) / scale, end));
    }
    Predictor { xs, order, knots }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    score: f64,
    parent: usize,
    var: usize,
    knot: usize,
}

/// Best knot for one (parent, predictor) pair.
fn sweep(
    parent: &[f64],
    pred: &Predictor,
    basis: &Ortho,
    resid: &[f64],
) -> Option<(f64, usize)> {
    let k = parent.len();
    // Linear column B x, orthogonalised.
    let lin: Vec<f64> = parent.iter().zip(&pred.xs).map(|(b, x)| b * x).collect();
    let lin_norm2 = dot(&lin, &lin);
    let mut extra: Option<Vec<f64>> = None;
    let mut lin_gain = 0.0;
    let mut r = resid.to_vec();
    if lin_norm2 > 0.0 {
        let (_, mut v, n2) = basis.project(&lin);
        if n2 > DEPENDENCE_TOL * lin_norm2 {
            let n = n2.sqrt();
            v.iter_mut().for_each(|x| *x /= n);
            let c = dot(&v, &r);
            lin_gain = c * c;
            axpy(-c, &v, &mut r);
            extra = Some(v);
        }
    }
    let rr = dot(&r, &r);

    // Sorted, nonzero-parent positions only.
    let qs: Vec<&Vec<f64>> = basis.q.iter().chain(extra.iter()).collect();
    let m = qs.len();
    let mut acc_q0 = vec![0.0; m];
    let mut acc_q1 = vec![0.0; m];
    let (mut ar0, mut ar1, mut a20, mut a21, mut a22) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut proj = vec![0.0; m];
    let mut best: Option<(f64, usize)> = None;
    let mut ptr = k;
    for (ki, &(_, t, end)) in pred.knots.iter().enumerate().rev() {
        while ptr > end + 1 {
            ptr -= 1;
            let i = pred.order[ptr];
            let b = parent[i];
            if b == 0.0 {
                continue;
            }
            let x = pred.xs[i];
            let bx = b * x;
            ar0 += r[i] * b;
            ar1 += r[i] * bx;
            a20 += b * b;
            a21 += b * bx;
            a22 += bx * bx;
            for j in 0..m {
                let qv = qs[j][i];
                acc_q0[j] += qv * b;
                acc_q1[j] += qv * bx;
            }
        }
        let hh = a22 - 2.0 * t * a21 + t * t * a20;
        if hh <= 0.0 {
            continue;
        }
        let mut pp = 0.0;
        for j in 0..m {
            proj[j] = acc_q1[j] - t * acc_q0[j];
            pp += proj[j] * proj[j];
        }
        let perp = hh - pp;
        let hinge_gain = if perp > 1e-8 * hh {
            let rh = ar1 - t * ar0;
            (rh * rh / perp).min(rr)
        } else {
            0.0
        };
        let score = lin_gain + hinge_gain;
        // Ties favour the smaller knot: the sweep runs downward.
        if score > 0.0 && best.is_none_or(|(s, _)| score >= s) {
            best = Some((score, ki));
        }
    }
    if best.is_none() && lin_gain > 0.0 {
        // Only the linear part helps; the lowest knot reproduces it.
        best = pred.knots.first().map(|_| (lin_gain, 0));
    }
    best
}

/// `min ||z - R_S beta||^2` and the minimiser, via QR of the selected columns.
fn subset_fit(r: &DMatrix<f64>, z: &DVector<f64>, cols: &[usize]) -> (f64, DVector<f64>, DMatrix<f64>) {
    let m = r.nrows();
    let mut a = DMatrix::zeros(m, cols.len());
    for (jj, &j) in cols.iter().enumerate() {
        a.set_column(jj, &r.column(j));
    }
    let qr = a.qr();
    let (q, rt) = (qr.q(), qr.r());
    let qtz = q.transpose() * z;
    let beta = rt
        .solve_upper_triangular(&qtz)
        .unwrap_or_else(|| DVector::zeros(cols.len()));
    let fit = &q * &qtz;
    let resid2 = (z - fit).norm_squared();
    (resid2, beta, rt)
}

fn gcv(rss: f64, k: usize, terms: usize, penalty: f64) -> f64 {
    let kf = k as f64;
    let c = terms as f64 + penalty * (terms as f64 - 1.0);
    if c >= kf {
        return f64::INFINITY;
    }
    rss / kf / (1.0 - c / kf).powi(2)
}

fn monomials(p: usize, degree: u32) -> Vec<Vec<(usize, u32)>> {
    fn rec(p: usize, start: usize, left: u32, cur: &mut Vec<(usize, u32)>, out: &mut Vec<Vec<(usize, u32)>>) {
        out.push(cur.clone());
        if left == 0 {
            return;
        }
        for v in start..p {
            for e in 1..=left {
                cur.push((v, e));
                rec(p, v + 1, left - e, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    rec(p, 0, degree, &mut Vec::new(), &mut out);
    out.sort_by_key(|m| m.iter().map(|&(_, e)| e).sum::<u32>());
    out
}

/// Fit `y` on the predictor columns `x`.
pub fn fit(x: &[&[f64]], y: &[f64], cfg: &FitConfig) -> Result<MarsModel> {
    cfg.validate()?;
    let k = y.len();
    let p = x.len();
    if p == 0 {
        return Err(VoiError::InvalidArgument("at least one predictor is required".into()));
    }
    if x.iter().any(|c| c.len() != k) {
        return Err(VoiError::InvalidArgument(
            "predictor and target lengths differ".into(),
        ));
    }
    if k <= 3 * p {
        return Err(VoiError::InsufficientDraws { draws: k, predictors: p });
    }
    if x.iter().chain(std::iter::once(&y)).any(|c| c.iter().any(|v| !v.is_finite())) {
        return Err(VoiError::InvalidData("non-finite value in regression input".into()));
    }

    let mut warnings = Vec::new();
    let mut max_terms = cfg.max_terms;
    if k <= 10 * max_terms {
        max_terms = ((k - 1) / 10).max(1);
        warnings.push(format!(
            "{k} draws support at most {max_terms} terms; max_terms reduced"
        ));
    }
    let centers: Vec<f64> = x.iter().map(|c| stats::mean(c)).collect();
    let mut scales: Vec<f64> = x.iter().map(|c| stats::variance(c).sqrt()).collect();
    let mut active = Vec::new();
    for (j, s) in scales.iter_mut().enumerate() {
        if *s > 0.0 && s.is_finite() {
            active.push(j);
        } else {
            warnings.push(format!("predictor {j} is constant and was dropped"));
            *s = 1.0;
        }
    }
    let backend = if cfg.backend == Backend::Polynomial || (p == 1 && k < 500) {
        Backend::Polynomial
    } else {
        Backend::Mars
    };

    let y_mean = stats::mean(y);
    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let tss = dot(&yc, &yc);

    let mut model = MarsModel {
        backend,
        n_predictors: p,
        centers,
        scales,
        terms: Vec::new(),
        coefficients: Vec::new(),
        gcv: 0.0,
        rss: 0.0,
        sigma2: 0.0,
        pruned: false,
        warnings: Vec::new(),
        fitted: Vec::new(),
        resid: Vec::new(),
        gram_root: None,
        basis_cov: None,
    };

    let mut basis = Ortho::new();
    let mut terms: Vec<Term> = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let intercept = vec![1.0; k];
    basis.add(&intercept);
    terms.push(Term::default());
    columns.push(intercept);

    let try_add = |model: &MarsModel, term: Term, basis: &mut Ortho, terms: &mut Vec<Term>, columns: &mut Vec<Vec<f64>>| {
        let col = model.term_column(&term, x);
        if basis.add(&col) {
            terms.push(term);
            columns.push(col);
            true
        } else {
            false
        }
    };

    let mut dropped = 0usize;
    match backend {
        Backend::Polynomial => {
            let mut monos = monomials(active.len(), 3);
            monos.retain(|m| !m.is_empty());
            for m in monos {
                let term = Term {
                    factors: m
                        .iter()
                        .map(|&(v, e)| Factor::Power { var: active[v], exp: e })
                        .collect(),
                };
                if !try_add(&model, term, &mut basis, &mut terms, &mut columns) {
                    dropped += 1;
                }
            }
        }
        Backend::Mars if tss > 0.0 && !active.is_empty() => {
            let preds: Vec<Option<Predictor>> = (0..p)
                .map(|j| {
                    active
                        .contains(&j)
                        .then(|| prepare(x[j], model.centers[j], model.scales[j], cfg.max_knots))
                })
                .collect();
            let mut resid = yc.clone();
            let mut rss = tss;
            while terms.len() + 2 <= max_terms {
                let pairs: Vec<(usize, usize)> = active
                    .iter()
                    .flat_map(|&v| (0..terms.len()).map(move |m| (v, m)))
                    .filter(|&(v, m)| terms[m].degree() < cfg.max_degree && !terms[m].uses(v))
                    .collect();
                let found: Vec<Option<Candidate>> = pairs
                    .par_iter()
                    .map(|&(v, m)| {
                        let pred = preds[v].as_ref()?;
                        sweep(&columns[m], pred, &basis, &resid).map(|(score, knot)| Candidate {
                            score,
                            parent: m,
                            var: v,
                            knot,
                        })
                    })
                    .collect();
                let Some(best) = found.into_iter().flatten().fold(None, |b: Option<Candidate>, c| {
                    match b {
                        Some(b) if b.score >= c.score => Some(b),
                        _ => Some(c),
                    }
                }) else {
                    break;
                };
                if best.score / rss < cfg.threshold {
                    break;
                }
                let knot = preds[best.var].as_ref().map(|p| p.knots[best.knot].0).unwrap_or(0.0);
                let before = terms.len();
                for sign in [1i8, -1] {
                    let mut term = terms[best.parent].clone();
                    term.factors.push(Factor::Hinge { var: best.var, knot, sign });
                    if !try_add(&model, term, &mut basis, &mut terms, &mut columns) {
                        dropped += 1;
                    }
                }
                if terms.len() == before {
                    break;
                }
                for q in &basis.q[before..] {
                    let c = dot(q, &resid);
                    axpy(-c, q, &mut resid);
                }
                let new_rss = dot(&resid, &resid);
                let gain = rss - new_rss;
                rss = new_rss;
                if gain / (rss + gain) < cfg.threshold || rss < 1e-12 * tss {
                    break;
                }
            }
        }
        Backend::Mars => {}
    }
    if dropped > 0 {
        log::debug!("{dropped} linearly dependent basis terms dropped");
    }

    // Backward pass on the triangular factor.
    let r = basis.r_matrix();
    let z = DVector::from_iterator(basis.len(), basis.q.iter().map(|q| dot(q, &yc)));
    let full_rss = {
        let mut e = yc.clone();
        for q in &basis.q {
            axpy(-dot(q, &e), q, &mut e);
        }
        dot(&e, &e)
    };
    let mut current: Vec<usize> = (0..terms.len()).collect();
    let mut best_subset = current.clone();
    let mut best_gcv = gcv(full_rss, k, current.len(), cfg.penalty);
    if backend == Backend::Mars {
        while current.len() > 1 {
            let mut choice: Option<(f64, usize)> = None;
            for (pos, &j) in current.iter().enumerate().skip(1) {
                let cols: Vec<usize> = current.iter().copied().filter(|&c| c != j).collect();
                let (extra, _, _) = subset_fit(&r, &z, &cols);
                let rss = full_rss + extra;
                if choice.is_none_or(|(b, _)| rss < b) {
                    choice = Some((rss, pos));
                }
            }
            let (rss, pos) = choice.expect("nonempty");
            current.remove(pos);
            let g = gcv(rss, k, current.len(), cfg.penalty);
            if g <= best_gcv {
                best_gcv = g;
                best_subset = current.clone();
            }
        }
    }
    model.pruned = best_subset.len() < terms.len();

    let (_, beta, rt) = subset_fit(&r, &z, &best_subset);
    model.terms = best_subset.iter().map(|&j| terms[j].clone()).collect();
    model.coefficients = beta.iter().copied().collect();
    model.coefficients[0] += y_mean;
    model.gcv = best_gcv;
    let s = model.terms.len();

    let mut cov = DMatrix::zeros(s, s);
    let centred: Vec<Vec<f64>> = best_subset
        .iter()
        .map(|&j| {
            let m = stats::mean(&columns[j]);
            columns[j].iter().map(|v| v - m).collect()
        })
        .collect();
    for a in 0..s {
        for b in a..s {
            let c = dot(&centred[a], &centred[b]) / (k as f64 - 1.0);
            cov[(a, b)] = c;
            cov[(b, a)] = c;
        }
    }
    model.basis_cov = Some(cov);
    // The QR sign convention may give negative diagonals; only R'R matters.
    model.gram_root = Some(rt);

    let fitted = model.predict(x)?;
    let resid: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    model.rss = dot(&resid, &resid);
    model.sigma2 = if k > s { model.rss / (k - s) as f64 } else { 0.0 };
    model.fitted = fitted;
    model.resid = resid;
    for w in &warnings {
        warn!("{w}");
    }
    model.warnings = warnings;
    Ok(model)
}
