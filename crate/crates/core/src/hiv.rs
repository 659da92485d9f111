//! HIV prevalence evidence synthesis for men who have sex with men in London.
//!
//! The model is a directed acyclic graph: founder parameters with priors
//! ([`HivParams`]), deterministic functions of them ([`HivOutputs`]) and
//! likelihood terms tying both to seven data sources ([`HivData`]):
//!
//! * ONS population count and NATSAL subgroup counts (Poisson + multinomial),
//! * SOPHID prevalent diagnoses and HANDD new GUM diagnoses,
//! * the GUMCAD testing cascade `g1 >= g2 >= ... >= g5`,
//! * the GUM Anon unlinked survey,
//! * the GMSHS community survey, used through an odds ratio.
//!
//! Three structural scenarios are supported (see [`Scenario`]).
//!
//! PMSM (men who no longer have sex with men) enter the multinomial through
//! `rho_P`; their undiagnosed prevalence is `pmsm_factor * pibar_N` and their
//! diagnosed fraction mirrors the NGMSM construction. That factor is a
//! stand-in and is flagged as synthetic in the shipped data file.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Result, VoiError};
use crate::stats::{log_logistic, logistic, logit, odds};

const SYNTHETIC_LONDON_2012: &str = include_str!("../../../data/synthetic_london_2012.json");

/// Upper bound on the prevalence among GUM attenders who are tested.
pub const GAMMA4_MAX: f64 = 0.15;
const A_S_PRIOR_SD: f64 = 0.018;
const LOG_MU_POP_PRIOR_SD: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    /// Undiagnosed GMSM prevalence from the GUMCAD cascade.
    #[serde(rename = "base")]
    Base,
    /// Undiagnosed GMSM prevalence from GUM Anon alone (flat prior on `pibar_G`).
    #[serde(rename = "a")]
    GumAnonOnly,
    /// GUMCAD also defines diagnosed GMSM prevalence directly.
    #[serde(rename = "b")]
    GumcadDiagnosed,
}

impl Scenario {
    pub fn tag(self) -> &'static str {
        match self {
            Scenario::Base => "base",
            Scenario::GumAnonOnly => "a",
            Scenario::GumcadDiagnosed => "b",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Scenario {
    type Err = VoiError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "base" => Ok(Scenario::Base),
            "a" | "gum_anon_only" => Ok(Scenario::GumAnonOnly),
            "b" | "gumcad_diagnosed" => Ok(Scenario::GumcadDiagnosed),
            other => Err(VoiError::InvalidArgument(format!(
                "unknown scenario `{other}` (expected base, a or b)"
            ))),
        }
    }
}

fn default_pmsm_factor() -> f64 {
    0.25
}

fn default_true() -> bool {
    true
}

/// Observed counts. Field names in JSON follow the conventional notation
/// (`y_G`, `g1`, `gAN`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HivData {
    pub y_pop: u64,
    #[serde(rename = "y_G")]
    pub y_g: u64,
    #[serde(rename = "y_N")]
    pub y_n: u64,
    #[serde(rename = "y_P")]
    pub y_p: u64,
    #[serde(rename = "n_NAT")]
    pub n_nat: u64,
    #[serde(rename = "y_M")]
    pub y_m: u64,
    #[serde(rename = "y_H")]
    pub y_h: u64,
    pub g1: u64,
    pub g2: u64,
    pub g3: u64,
    pub g4: u64,
    pub g5: u64,
    #[serde(rename = "gA")]
    pub g_a: u64,
    #[serde(rename = "gAN")]
    pub g_an: u64,
    #[serde(rename = "y_GM_G")]
    pub y_gm_g: u64,
    #[serde(rename = "n_GM_G")]
    pub n_gm_g: u64,
    #[serde(rename = "y_GM_N")]
    pub y_gm_n: u64,
    #[serde(rename = "n_GM_N")]
    pub n_gm_n: u64,
    /// `pibar_P = pmsm_factor * pibar_N`.
    #[serde(default = "default_pmsm_factor")]
    pub pmsm_factor: f64,
    /// Whether PMSM case counts enter `mu_D` and `mu_U`.
    #[serde(default = "default_true")]
    pub include_pmsm: bool,
    /// Fields whose values are not published and were set synthetically.
    #[serde(default)]
    pub synthetic: Vec<String>,
}

const REQUIRED_FIELDS: [&str; 18] = [
    "y_pop", "y_G", "y_N", "y_P", "n_NAT", "y_M", "y_H", "g1", "g2", "g3", "g4", "g5", "gA",
    "gAN", "y_GM_G", "n_GM_G", "y_GM_N", "n_GM_N",
];

impl HivData {
    /// The shipped data set. `y_pop`, `y_M` and `y_H` are synthetic.
    pub fn synthetic_london_2012() -> HivData {
        HivData::from_json(SYNTHETIC_LONDON_2012).expect("embedded data file is valid")
    }

    pub fn from_json(text: &str) -> Result<HivData> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let obj = value
            .as_object()
            .ok_or_else(|| VoiError::InvalidData("expected a JSON object".into()))?;
        let missing: Vec<String> = REQUIRED_FIELDS
            .iter()
            .filter(|f| !obj.contains_key(**f))
            .map(|f| f.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(VoiError::MissingFields(missing));
        }
        let data: HivData = serde_json::from_value(value)?;
        data.validate()?;
        Ok(data)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<HivData> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| VoiError::io(path, e))?;
        HivData::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(VoiError::InvalidData(what.to_string()))
            }
        };
        check(
            self.y_g + self.y_n + self.y_p <= self.n_nat,
            "y_G + y_N + y_P exceeds n_NAT",
        )?;
        check(self.y_h <= self.y_m, "y_H exceeds y_M")?;
        check(
            self.g2 <= self.g1 && self.g3 <= self.g2 && self.g4 <= self.g3 && self.g5 <= self.g4,
            "GUMCAD cascade counts must be non-increasing",
        )?;
        check(self.g_a <= self.g_an, "gA exceeds gAN")?;
        check(self.y_gm_g <= self.n_gm_g, "y_GM_G exceeds n_GM_G")?;
        check(self.y_gm_n <= self.n_gm_n, "y_GM_N exceeds n_GM_N")?;
        check(
            self.pmsm_factor.is_finite() && self.pmsm_factor >= 0.0,
            "pmsm_factor must be a nonnegative number",
        )
    }

    pub fn is_synthetic(&self) -> bool {
        !self.synthetic.is_empty()
    }
}

/// Founder parameters on their natural scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HivParams {
    pub mu_pop: f64,
    /// NATSAL subgroup proportions (GMSM, NGMSM, PMSM); the remainder is non-MSM.
    pub rho: [f64; 3],
    pub a_s: f64,
    pub a_h: f64,
    /// `a_delta` for (G, N, P).
    pub a_delta: [f64; 3],
    pub gamma: [f64; 4],
    pub a_un: f64,
    pub a_op: f64,
    /// GMSHS positivity in (GMSM, NGMSM).
    pub p_gm: [f64; 2],
    /// Scenario (a) only: flat-prior undiagnosed GMSM prevalence.
    pub pibar_g_free: Option<f64>,
}

impl HivParams {
    /// Founder column names in the order used by [`HivParams::values`].
    pub fn names(scenario: Scenario) -> Vec<&'static str> {
        let mut names = vec![
            "mu_pop", "rho_G", "rho_N", "rho_P", "a_S", "a_H", "a_deltaG", "a_deltaN", "a_deltaP",
            "gamma1", "gamma2", "gamma3", "gamma4", "a_UN", "a_OP", "p_GM_G", "p_GM_N",
        ];
        if scenario == Scenario::GumAnonOnly {
            names.push("pibar_G_free");
        }
        names
    }

    pub fn values(&self) -> Vec<f64> {
        let mut v = vec![
            self.mu_pop,
            self.rho[0],
            self.rho[1],
            self.rho[2],
            self.a_s,
            self.a_h,
            self.a_delta[0],
            self.a_delta[1],
            self.a_delta[2],
            self.gamma[0],
            self.gamma[1],
            self.gamma[2],
            self.gamma[3],
            self.a_un,
            self.a_op,
            self.p_gm[0],
            self.p_gm[1],
        ];
        if let Some(p) = self.pibar_g_free {
            v.push(p);
        }
        v
    }

    /// All bounded founders at the centre of their prior support, with
    /// `rho = (0.01, 0.04, 0.01)` and `mu_pop = y_pop`.
    pub fn reference(data: &HivData, scenario: Scenario) -> HivParams {
        HivParams {
            mu_pop: data.y_pop as f64,
            rho: [0.01, 0.04, 0.01],
            a_s: 0.0,
            a_h: 0.5,
            a_delta: [0.5; 3],
            gamma: [0.5, 0.5, 0.5, GAMMA4_MAX / 2.0],
            a_un: (0.5f64.ln() + 1.5f64.ln()) / 2.0,
            a_op: 0.5,
            p_gm: [0.5, 0.5],
            pibar_g_free: (scenario == Scenario::GumAnonOnly).then_some(0.5),
        }
    }

    /// Empirical-frequency starting point for the data-dominated founders.
    pub fn empirical(data: &HivData, scenario: Scenario) -> HivParams {
        let frac = |y: u64, n: u64| (y as f64 + 0.5) / (n as f64 + 1.0);
        let nat = data.n_nat as f64 + 2.0;
        let gamma = [
            frac(data.g2, data.g1),
            frac(data.g3, data.g2),
            frac(data.g4, data.g3),
            frac(data.g5, data.g4).min(0.9 * GAMMA4_MAX),
        ];
        let pibar_g_free = (scenario == Scenario::GumAnonOnly).then(|| {
            let pi_gd: f64 = gamma.iter().product();
            (frac(data.g_a, data.g_an) * gamma[0] - pi_gd).max(0.005)
        });
        HivParams {
            mu_pop: data.y_pop.max(1) as f64,
            rho: [
                (data.y_g as f64 + 0.5) / nat,
                (data.y_n as f64 + 0.5) / nat,
                (data.y_p as f64 + 0.5) / nat,
            ],
            a_s: 0.0,
            a_h: 0.5,
            a_delta: [0.5; 3],
            gamma,
            a_un: 0.0,
            a_op: 0.5,
            p_gm: [frac(data.y_gm_g, data.n_gm_g), frac(data.y_gm_n, data.n_gm_n)],
            pibar_g_free,
        }
    }
}

/// Derived quantities of interest, per subgroup and in total.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HivOutputs {
    pub pi_g: f64,
    pub pi_n: f64,
    pub pi_p: f64,
    pub delta_g: f64,
    pub delta_n: f64,
    pub delta_p: f64,
    pub pidelta_g: f64,
    pub pidelta_n: f64,
    pub pidelta_p: f64,
    pub pibar_g: f64,
    pub pibar_n: f64,
    pub pibar_p: f64,
    pub r_g: f64,
    pub r_n: f64,
    pub r_p: f64,
    pub mu_g: f64,
    pub mu_n: f64,
    pub mu_p: f64,
    pub mu_dg: f64,
    pub mu_dn: f64,
    pub mu_dp: f64,
    pub mu_ug: f64,
    pub mu_un: f64,
    pub mu_up: f64,
    pub mu_d: f64,
    pub mu_u: f64,
    pub mu: f64,
    pub mu_m: f64,
    pub p_h: f64,
    pub p_un: f64,
    pub a_ex: f64,
    pub pi_un: f64,
    pub pi_op: f64,
    pub pi_gd: f64,
    pub pi_ga: f64,
    pub or_gm: f64,
}

impl HivOutputs {
    pub const NAMES: [&'static str; 36] = [
        "pi_G", "pi_N", "pi_P", "delta_G", "delta_N", "delta_P", "pidelta_G", "pidelta_N",
        "pidelta_P", "pibar_G", "pibar_N", "pibar_P", "r_G", "r_N", "r_P", "mu_G", "mu_N", "mu_P",
        "mu_DG", "mu_DN", "mu_DP", "mu_UG", "mu_UN", "mu_UP", "mu_D", "mu_U", "mu", "mu_M", "p_H",
        "p_UN", "a_EX", "pi_UN", "pi_OP", "pi_GD", "pi_GA", "or_GM",
    ];

    /// The outputs of interest for the sensitivity grid: diagnosed and
    /// undiagnosed prevalences and case counts per group, and totals.
    pub const OF_INTEREST: [&'static str; 11] = [
        "pidelta_G", "pidelta_N", "pibar_G", "pibar_N", "mu_DG", "mu_DN", "mu_UG", "mu_UN", "mu_U",
        "mu_D", "mu",
    ];

    pub fn values(&self) -> [f64; 36] {
        [
            self.pi_g,
            self.pi_n,
            self.pi_p,
            self.delta_g,
            self.delta_n,
            self.delta_p,
            self.pidelta_g,
            self.pidelta_n,
            self.pidelta_p,
            self.pibar_g,
            self.pibar_n,
            self.pibar_p,
            self.r_g,
            self.r_n,
            self.r_p,
            self.mu_g,
            self.mu_n,
            self.mu_p,
            self.mu_dg,
            self.mu_dn,
            self.mu_dp,
            self.mu_ug,
            self.mu_un,
            self.mu_up,
            self.mu_d,
            self.mu_u,
            self.mu,
            self.mu_m,
            self.p_h,
            self.p_un,
            self.a_ex,
            self.pi_un,
            self.pi_op,
            self.pi_gd,
            self.pi_ga,
            self.or_gm,
        ]
    }
}

/// Push founders through the graph. `None` marks a draw that must be
/// rejected (`gamma1 = 0`, or a scenario-(b) prevalence above one).
pub fn derived_outputs(
    params: &HivParams,
    scenario: Scenario,
    pmsm_factor: f64,
    include_pmsm: bool,
) -> Option<HivOutputs> {
    let [g1, g2, g3, g4] = params.gamma;
    if g1 <= 0.0 {
        return None;
    }
    let p_un = logistic(logit(g4) + params.a_un);
    let a_ex = params.a_op * (GAMMA4_MAX - g4);
    let pi_un = g1 * (1.0 - g2) * p_un;
    let pi_op = g1 * g2 * (1.0 - g3) * (g4 + a_ex);
    let pibar_g = match scenario {
        Scenario::GumAnonOnly => params.pibar_g_free?,
        Scenario::Base | Scenario::GumcadDiagnosed => pi_un + pi_op,
    };
    let pi_gd = g1 * g2 * g3 * g4;
    let pi_ga = (pibar_g + pi_gd) / g1;
    let or_gm = odds(params.p_gm[1]) / odds(params.p_gm[0]);
    let o_n = odds(pibar_g) * or_gm;
    let pibar_n = o_n / (1.0 + o_n);
    let pibar_p = pmsm_factor * pibar_n;

    // pi = pibar / (1 - delta) with delta = a_delta * (1 - pibar) keeps
    // delta < 1 - pibar by construction.
    let split = |a: f64, pibar: f64| {
        let delta = a * (1.0 - pibar);
        let pi = pibar / (1.0 - delta);
        (delta, pi, pi * delta)
    };
    let (delta_g, pi_g, pidelta_g) = match scenario {
        Scenario::GumcadDiagnosed => {
            let pidelta = (1.0 - g1) + pi_gd;
            let pi = pibar_g + pidelta;
            if pi > 1.0 || pi <= 0.0 {
                return None;
            }
            (pidelta / pi, pi, pidelta)
        }
        _ => split(params.a_delta[0], pibar_g),
    };
    let (delta_n, pi_n, pidelta_n) = split(params.a_delta[1], pibar_n);
    let (delta_p, pi_p, pidelta_p) = split(params.a_delta[2], pibar_p);

    let [rho_g, rho_n, rho_p] = params.rho;
    let (r_g, r_n, r_p) = (
        rho_g * params.mu_pop,
        rho_n * params.mu_pop,
        rho_p * params.mu_pop,
    );
    let (mu_g, mu_n, mu_p) = (pi_g * r_g, pi_n * r_n, pi_p * r_p);
    let (mu_dg, mu_dn, mu_dp) = (pidelta_g * r_g, pidelta_n * r_n, pidelta_p * r_p);
    let (mu_ug, mu_un, mu_up) = (pibar_g * r_g, pibar_n * r_n, pibar_p * r_p);
    let pmsm = if include_pmsm { 1.0 } else { 0.0 };
    let mu_d = mu_dg + mu_dn + pmsm * mu_dp;
    let mu_u = mu_ug + mu_un + pmsm * mu_up;
    let mu = mu_dg + mu_dn + mu_ug + mu_un;
    let mu_m = params.a_s.exp() * mu_d;
    let p_h = if mu_d > 0.0 {
        params.a_h * mu_dg / mu_d
    } else {
        0.0
    };

    Some(HivOutputs {
        pi_g,
        pi_n,
        pi_p,
        delta_g,
        delta_n,
        delta_p,
        pidelta_g,
        pidelta_n,
        pidelta_p,
        pibar_g,
        pibar_n,
        pibar_p,
        r_g,
        r_n,
        r_p,
        mu_g,
        mu_n,
        mu_p,
        mu_dg,
        mu_dn,
        mu_dp,
        mu_ug,
        mu_un,
        mu_up,
        mu_d,
        mu_u,
        mu,
        mu_m,
        p_h,
        p_un,
        a_ex,
        pi_un,
        pi_op,
        pi_gd,
        pi_ga,
        or_gm,
    })
}

fn in_unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

/// Sum of founder log prior densities; `-inf` outside the support.
pub fn log_prior(params: &HivParams, scenario: Scenario) -> f64 {
    let p = params;
    let simplex_ok = p.rho.iter().all(|&r| r >= 0.0) && p.rho.iter().sum::<f64>() <= 1.0;
    let units = [
        p.a_h,
        p.a_delta[0],
        p.a_delta[1],
        p.a_delta[2],
        p.gamma[0],
        p.gamma[1],
        p.gamma[2],
        p.a_op,
        p.p_gm[0],
        p.p_gm[1],
    ];
    let (un_lo, un_hi) = a_un_bounds();
    if !(p.mu_pop > 0.0
        && simplex_ok
        && units.iter().all(|&u| in_unit(u))
        && (0.0..=GAMMA4_MAX).contains(&p.gamma[3])
        && (un_lo..=un_hi).contains(&p.a_un)
        && p.a_s.is_finite())
    {
        return f64::NEG_INFINITY;
    }
    match (scenario, p.pibar_g_free) {
        (Scenario::GumAnonOnly, Some(x)) if in_unit(x) => {}
        (Scenario::GumAnonOnly, _) => return f64::NEG_INFINITY,
        _ => {}
    }

    let ln_sqrt_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let z = p.mu_pop.ln() / LOG_MU_POP_PRIOR_SD;
    let mut lp = -0.5 * z * z - LOG_MU_POP_PRIOR_SD.ln() - ln_sqrt_2pi;
    // Dirichlet(1, 1, 1, 1) density is Gamma(4) on the simplex.
    lp += 6f64.ln();
    // exp(a_S) ~ N(1, sd^2), expressed as a density on a_S.
    let e = p.a_s.exp();
    let z = (e - 1.0) / A_S_PRIOR_SD;
    lp += -0.5 * z * z - A_S_PRIOR_SD.ln() - ln_sqrt_2pi + p.a_s;
    lp -= GAMMA4_MAX.ln();
    lp -= (un_hi - un_lo).ln();
    lp
}

pub fn a_un_bounds() -> (f64, f64) {
    (0.5f64.ln(), 1.5f64.ln())
}

/// Which likelihood terms are active. Everything is on in normal use; tests
/// switch terms off to isolate parts of the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LikelihoodTerms {
    pub population: bool,
    pub natsal: bool,
    pub sophid: bool,
    pub handd: bool,
    pub gumcad: bool,
    pub gum_anon: bool,
    pub gmshs: bool,
}

impl LikelihoodTerms {
    pub fn all() -> Self {
        LikelihoodTerms {
            population: true,
            natsal: true,
            sophid: true,
            handd: true,
            gumcad: true,
            gum_anon: true,
            gmshs: true,
        }
    }

    pub fn none() -> Self {
        LikelihoodTerms {
            population: false,
            natsal: false,
            sophid: false,
            handd: false,
            gumcad: false,
            gum_anon: false,
            gmshs: false,
        }
    }
}

impl Default for LikelihoodTerms {
    fn default() -> Self {
        Self::all()
    }
}

pub fn ln_choose(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// `y log p + (n - y) log(1 - p)` without the binomial coefficient.
pub fn binomial_kernel(y: u64, n: u64, p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return f64::NEG_INFINITY;
    }
    let (y, f) = (y as f64, (n - y) as f64);
    let a = if y > 0.0 { y * p.ln() } else { 0.0 };
    let b = if f > 0.0 { f * (1.0 - p).ln() } else { 0.0 };
    a + b
}

pub fn binomial_log_pmf(y: u64, n: u64, p: f64) -> f64 {
    ln_choose(n, y) + binomial_kernel(y, n, p)
}

fn poisson_kernel(y: u64, mu: f64) -> f64 {
    if !(mu > 0.0) || !mu.is_finite() {
        return f64::NEG_INFINITY;
    }
    y as f64 * mu.ln() - mu
}

pub fn poisson_log_pmf(y: u64, mu: f64) -> f64 {
    poisson_kernel(y, mu) - ln_gamma(y as f64 + 1.0)
}

/// The HIV model bound to one data set and scenario. Cheap to clone and
/// safe to share between chains.
#[derive(Debug, Clone)]
pub struct HivModel {
    pub data: HivData,
    pub scenario: Scenario,
    pub terms: LikelihoodTerms,
    /// Normalising constants per term, added when the term is active.
    consts: TermConstants,
}

#[derive(Debug, Clone, Copy)]
struct TermConstants {
    population: f64,
    natsal: f64,
    sophid: f64,
    handd: f64,
    gumcad: f64,
    gum_anon: f64,
    gmshs: f64,
}

impl HivModel {
    pub fn new(data: HivData, scenario: Scenario) -> Result<Self> {
        Self::with_terms(data, scenario, LikelihoodTerms::all())
    }

    pub fn with_terms(data: HivData, scenario: Scenario, terms: LikelihoodTerms) -> Result<Self> {
        data.validate()?;
        let d = &data;
        let rest = d.n_nat - d.y_g - d.y_n - d.y_p;
        let consts = TermConstants {
            population: -ln_gamma(d.y_pop as f64 + 1.0),
            natsal: ln_gamma(d.n_nat as f64 + 1.0)
                - [d.y_g, d.y_n, d.y_p, rest]
                    .iter()
                    .map(|&y| ln_gamma(y as f64 + 1.0))
                    .sum::<f64>(),
            sophid: -ln_gamma(d.y_m as f64 + 1.0),
            handd: ln_choose(d.y_m, d.y_h),
            gumcad: ln_choose(d.g1, d.g2)
                + ln_choose(d.g2, d.g3)
                + ln_choose(d.g3, d.g4)
                + ln_choose(d.g4, d.g5),
            gum_anon: ln_choose(d.g_an, d.g_a),
            gmshs: ln_choose(d.n_gm_g, d.y_gm_g) + ln_choose(d.n_gm_n, d.y_gm_n),
        };
        Ok(HivModel {
            data,
            scenario,
            terms,
            consts,
        })
    }

    pub fn outputs(&self, params: &HivParams) -> Option<HivOutputs> {
        derived_outputs(
            params,
            self.scenario,
            self.data.pmsm_factor,
            self.data.include_pmsm,
        )
    }

    pub fn log_prior(&self, params: &HivParams) -> f64 {
        log_prior(params, self.scenario)
    }

    /// Sum of the active likelihood terms; `-inf` for rejected draws.
    pub fn log_likelihood(&self, params: &HivParams) -> f64 {
        let Some(out) = self.outputs(params) else {
            return f64::NEG_INFINITY;
        };
        let (d, t, c) = (&self.data, &self.terms, &self.consts);
        if out.pi_ga > 1.0 || out.p_h > 1.0 {
            return f64::NEG_INFINITY;
        }
        let mut ll = 0.0;
        if t.population {
            ll += c.population + poisson_kernel(d.y_pop, params.mu_pop);
        }
        if t.natsal {
            let rest = 1.0 - params.rho.iter().sum::<f64>();
            let counts = [d.y_g, d.y_n, d.y_p, d.n_nat - d.y_g - d.y_n - d.y_p];
            let probs = [params.rho[0], params.rho[1], params.rho[2], rest];
            ll += c.natsal;
            for (&y, &p) in counts.iter().zip(&probs) {
                if y > 0 {
                    if p <= 0.0 {
                        return f64::NEG_INFINITY;
                    }
                    ll += y as f64 * p.ln();
                }
            }
        }
        if t.sophid {
            ll += c.sophid + poisson_kernel(d.y_m, out.mu_m);
        }
        if t.handd {
            ll += c.handd + binomial_kernel(d.y_h, d.y_m, out.p_h);
        }
        if t.gumcad {
            let g = params.gamma;
            ll += c.gumcad
                + binomial_kernel(d.g2, d.g1, g[0])
                + binomial_kernel(d.g3, d.g2, g[1])
                + binomial_kernel(d.g4, d.g3, g[2])
                + binomial_kernel(d.g5, d.g4, g[3]);
        }
        if t.gum_anon {
            ll += c.gum_anon + binomial_kernel(d.g_a, d.g_an, out.pi_ga);
        }
        if t.gmshs {
            ll += c.gmshs
                + binomial_kernel(d.y_gm_g, d.n_gm_g, params.p_gm[0])
                + binomial_kernel(d.y_gm_n, d.n_gm_n, params.p_gm[1]);
        }
        if ll.is_nan() {
            f64::NEG_INFINITY
        } else {
            ll
        }
    }

    pub fn log_posterior(&self, params: &HivParams) -> f64 {
        let lp = self.log_prior(params);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        lp + self.log_likelihood(params)
    }

    /// Number of unconstrained coordinates.
    pub fn dim(&self) -> usize {
        unconstrained_dim(self.scenario)
    }

    /// Log posterior of the unconstrained vector, including the log-Jacobian.
    pub fn log_density_unconstrained(&self, u: &[f64]) -> f64 {
        let (params, log_jac) = from_unconstrained(u, self.scenario);
        let lp = self.log_posterior(&params);
        if lp.is_finite() {
            lp + log_jac
        } else {
            f64::NEG_INFINITY
        }
    }
}

pub fn unconstrained_dim(scenario: Scenario) -> usize {
    if scenario == Scenario::GumAnonOnly {
        18
    } else {
        17
    }
}

/// Bounded scalar `(lo, hi)` mapped to the real line by a rescaled logit.
fn bounded_to(x: f64, lo: f64, hi: f64) -> f64 {
    logit((x - lo) / (hi - lo))
}

fn bounded_from(u: f64, lo: f64, hi: f64) -> (f64, f64) {
    let s = logistic(u);
    let x = lo + (hi - lo) * s;
    let log_jac = (hi - lo).ln() + log_logistic(u) + log_logistic(-u);
    (x, log_jac)
}

/// Map founders to unconstrained coordinates:
/// `[log mu_pop, stick(rho) x3, a_S, logit(a_H), logit(a_delta) x3,
///   logit(gamma1..3), scaled logit(gamma4), scaled logit(a_UN), logit(a_OP),
///   logit(p_GM) x2, (logit(pibar_G_free))]`.
pub fn to_unconstrained(params: &HivParams, scenario: Scenario) -> Vec<f64> {
    let p = params;
    let mut u = Vec::with_capacity(unconstrained_dim(scenario));
    u.push(p.mu_pop.ln());
    // Stick-breaking over the 4-simplex (G, N, P, rest), centred so that
    // u = 0 maps to equal proportions.
    let mut remaining = 1.0;
    for (k, &x) in p.rho.iter().enumerate() {
        let z = x / remaining;
        u.push(logit(z) + ((3 - k) as f64).ln());
        remaining -= x;
    }
    u.push(p.a_s);
    u.push(logit(p.a_h));
    u.extend(p.a_delta.iter().map(|&a| logit(a)));
    u.extend(p.gamma[..3].iter().map(|&g| logit(g)));
    u.push(bounded_to(p.gamma[3], 0.0, GAMMA4_MAX));
    let (lo, hi) = a_un_bounds();
    u.push(bounded_to(p.a_un, lo, hi));
    u.push(logit(p.a_op));
    u.extend(p.p_gm.iter().map(|&q| logit(q)));
    if scenario == Scenario::GumAnonOnly {
        u.push(logit(p.pibar_g_free.unwrap_or(0.5)));
    }
    u
}

/// Inverse of [`to_unconstrained`], returning the log absolute Jacobian
/// determinant of the map from unconstrained to natural coordinates.
pub fn from_unconstrained(u: &[f64], scenario: Scenario) -> (HivParams, f64) {
    debug_assert_eq!(u.len(), unconstrained_dim(scenario));
    let mut log_jac = 0.0;
    // The prior is stated on log(mu_pop), which is the coordinate itself.
    let mu_pop = u[0].exp();
    let mut rho = [0.0; 3];
    let mut remaining = 1.0;
    for k in 0..3 {
        let v = u[1 + k] - ((3 - k) as f64).ln();
        let z = logistic(v);
        rho[k] = remaining * z;
        log_jac += log_logistic(v) + log_logistic(-v) + remaining.ln();
        remaining -= rho[k];
    }
    let mut unit = |x: f64| {
        let (v, lj) = bounded_from(x, 0.0, 1.0);
        log_jac += lj;
        v
    };
    let a_s = u[4];
    let a_h = unit(u[5]);
    let a_delta = [unit(u[6]), unit(u[7]), unit(u[8])];
    let g123 = [unit(u[9]), unit(u[10]), unit(u[11])];
    let a_op = unit(u[14]);
    let p_gm = [unit(u[15]), unit(u[16])];
    let pibar_g_free = (scenario == Scenario::GumAnonOnly).then(|| unit(u[17]));
    let (g4, lj4) = bounded_from(u[12], 0.0, GAMMA4_MAX);
    let (lo, hi) = a_un_bounds();
    let (a_un, lj_un) = bounded_from(u[13], lo, hi);
    log_jac += lj4 + lj_un;
    (
        HivParams {
            mu_pop,
            rho,
            a_s,
            a_h,
            a_delta,
            gamma: [g123[0], g123[1], g123[2], g4],
            a_un,
            a_op,
            p_gm,
            pibar_g_free,
        },
        log_jac,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn data() -> HivData {
        HivData::synthetic_london_2012()
    }

    fn random_support_point(rng: &mut impl Rng, scenario: Scenario) -> HivParams {
        let mut e: [f64; 4] = [0.0; 4];
        for x in e.iter_mut() {
            *x = -rng.random::<f64>().max(1e-12).ln();
        }
        let s: f64 = e.iter().sum();
        let (lo, hi) = a_un_bounds();
        let u = |rng: &mut dyn rand::RngCore| rng.random_range(0.001..0.999);
        HivParams {
            mu_pop: rng.random_range(1e3..1e7),
            rho: [e[0] / s, e[1] / s, e[2] / s],
            a_s: rng.random_range(-0.1..0.1),
            a_h: u(rng),
            a_delta: [u(rng), u(rng), u(rng)],
            gamma: [u(rng), u(rng), u(rng), GAMMA4_MAX * u(rng)],
            a_un: lo + (hi - lo) * u(rng),
            a_op: u(rng),
            p_gm: [u(rng), u(rng)],
            pibar_g_free: (scenario == Scenario::GumAnonOnly).then(|| u(rng)),
        }
    }

    #[test]
    fn shipped_data_is_flagged_synthetic() {
        let d = data();
        assert!(d.is_synthetic());
        for f in ["y_pop", "y_M", "y_H"] {
            assert!(d.synthetic.iter().any(|s| s == f));
        }
        assert_eq!((d.g1, d.g_a, d.g_an), (35121, 4, 85));
    }

    #[test]
    fn missing_fields_are_listed() {
        let err = HivData::from_json(r#"{"y_pop": 1, "g1": 3}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("y_M") && msg.contains("gAN") && !msg.contains("g1,"), "{msg}");
    }

    #[test]
    fn invalid_cascade_is_rejected() {
        let mut d = data();
        d.g3 = d.g2 + 1;
        assert!(d.validate().is_err());
    }

    #[test]
    fn certain_cascade_closes_both_leaks() {
        let mut p = HivParams::reference(&data(), Scenario::Base);
        p.gamma = [0.9, 1.0, 1.0, 0.1];
        let out = derived_outputs(&p, Scenario::Base, 0.25, true).unwrap();
        assert_eq!(out.pi_un, 0.0);
        assert_eq!(out.pi_op, 0.0);
        assert_eq!(out.pibar_g, 0.0);
    }

    #[test]
    fn unit_odds_ratio_copies_prevalence() {
        let mut p = HivParams::reference(&data(), Scenario::Base);
        p.p_gm = [0.3, 0.3];
        let out = derived_outputs(&p, Scenario::Base, 0.25, true).unwrap();
        assert_eq!(out.or_gm, 1.0);
        assert!((out.pibar_n - out.pibar_g).abs() <= 1e-15 * out.pibar_g);
    }

    #[test]
    fn cascade_arithmetic() {
        let mut p = HivParams::reference(&data(), Scenario::Base);
        p.gamma = [0.9, 0.8, 0.7, 0.1];
        p.a_un = 0.0;
        p.a_op = 0.5;
        let out = derived_outputs(&p, Scenario::Base, 0.25, true).unwrap();
        // Hand evaluation.
        let pi_un: f64 = 0.9 * 0.2 * 0.1;
        let a_ex: f64 = 0.5 * (0.15 - 0.1);
        let pi_op: f64 = 0.9 * 0.8 * 0.3 * (0.1 + a_ex);
        let pi_gd: f64 = 0.9 * 0.8 * 0.7 * 0.1;
        assert!((pi_un - 0.018).abs() < 1e-15);
        assert!((a_ex - 0.025).abs() < 1e-15);
        assert!((pi_op - 0.027).abs() < 1e-15);
        assert!((pi_gd - 0.0504).abs() < 1e-15);
        assert!((out.pi_un - 0.018).abs() < 1e-12);
        assert!((out.a_ex - 0.025).abs() < 1e-12);
        assert!((out.pi_op - 0.027).abs() < 1e-12);
        assert!((out.pibar_g - 0.045).abs() < 1e-12);
        assert!((out.pi_gd - 0.0504).abs() < 1e-12);
        assert!((out.pi_ga - 0.106).abs() < 1e-12);
    }

    #[test]
    fn zero_gamma1_rejects() {
        let d = data();
        let mut p = HivParams::reference(&d, Scenario::Base);
        p.gamma[0] = 0.0;
        assert!(derived_outputs(&p, Scenario::Base, 0.25, true).is_none());
        let m = HivModel::new(d, Scenario::Base).unwrap();
        assert_eq!(m.log_posterior(&p), f64::NEG_INFINITY);
    }

    #[test]
    fn prior_support() {
        let d = data();
        let mut p = HivParams::reference(&d, Scenario::Base);
        assert!(log_prior(&p, Scenario::Base).is_finite());
        p.rho = [0.5, 0.4, 0.2];
        assert_eq!(log_prior(&p, Scenario::Base), f64::NEG_INFINITY);
        let mut p = HivParams::reference(&d, Scenario::Base);
        p.gamma[3] = 0.2;
        assert_eq!(log_prior(&p, Scenario::Base), f64::NEG_INFINITY);
        let p = HivParams::reference(&d, Scenario::Base);
        assert_eq!(log_prior(&p, Scenario::GumAnonOnly), f64::NEG_INFINITY);
    }

    #[test]
    fn prior_matches_hand_sum() {
        let d = data();
        let p = HivParams::reference(&d, Scenario::GumAnonOnly);
        // Independent recomputation from the analytic densities.
        let lognormal = {
            let sd = 1000.0f64;
            let x = (d.y_pop as f64).ln();
            -0.5 * (x / sd).powi(2) - (sd * (2.0 * std::f64::consts::PI).sqrt()).ln()
        };
        let dirichlet = (1.0f64 * 2.0 * 3.0).ln();
        let a_s = {
            // a_S = 0 -> exp(a_S) = 1 at the mode of N(1, 0.018^2), Jacobian exp(0) = 1
            -(0.018f64 * (2.0 * std::f64::consts::PI).sqrt()).ln()
        };
        let uniforms = -(0.15f64).ln() - (1.5f64.ln() - 0.5f64.ln()).ln();
        let expected = lognormal + dirichlet + a_s + uniforms;
        let got = log_prior(&p, Scenario::GumAnonOnly);
        assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
    }

    #[test]
    fn gumcad_term_peaks_at_empirical_ratio() {
        let d = data();
        let mut best = (f64::NEG_INFINITY, 0.0);
        for i in 1..2000 {
            let g = 0.95 + 0.05 * i as f64 / 2000.0;
            let v = binomial_log_pmf(d.g2, d.g1, g);
            if v > best.0 {
                best = (v, g);
            }
        }
        let mle = 34187.0 / 35121.0;
        assert!((best.1 - mle).abs() <= 0.05 / 2000.0, "{} vs {mle}", best.1);
    }

    #[test]
    fn gum_anon_term_peaks_at_four_in_85() {
        let mut best = (f64::NEG_INFINITY, 0.0);
        for i in 1..10_000 {
            let p = i as f64 / 10_000.0;
            let v = binomial_log_pmf(4, 85, p);
            if v > best.0 {
                best = (v, p);
            }
        }
        assert!((best.1 - 4.0 / 85.0).abs() <= 1e-4);
    }

    #[test]
    fn binomial_terms_peak_at_empirical_frequencies() {
        // Perturbing a probability away from y/n lowers the term.
        for (y, n) in [(20u64, 493u64), (20, 452), (855, 29529)] {
            let p = y as f64 / n as f64;
            let at = binomial_log_pmf(y, n, p);
            assert!(at > binomial_log_pmf(y, n, p * 1.01));
            assert!(at > binomial_log_pmf(y, n, p * 0.99));
        }
    }

    #[test]
    fn posterior_composition() {
        let d = data();
        let p = HivParams::reference(&d, Scenario::Base);
        let off = HivModel::with_terms(d.clone(), Scenario::Base, LikelihoodTerms::none()).unwrap();
        assert_eq!(off.log_posterior(&p), off.log_prior(&p));
        let m = HivModel::new(d.clone(), Scenario::Base).unwrap();
        let lp = m.log_posterior(&p);
        assert!(lp.is_finite());
        // Independent recomputation of the full log posterior at the reference point.
        let out = derived_outputs(&p, Scenario::Base, d.pmsm_factor, true).unwrap();
        let rest = d.n_nat - d.y_g - d.y_n - d.y_p;
        let multinom = statrs::distribution::Multinomial::new(
            vec![p.rho[0], p.rho[1], p.rho[2], 1.0 - p.rho.iter().sum::<f64>()],
            d.n_nat,
        )
        .unwrap();
        use statrs::distribution::{Binomial, Discrete, Poisson};
        let bin = |y: u64, n: u64, q: f64| Binomial::new(q, n).unwrap().ln_pmf(y);
        let pois = |y: u64, mu: f64| Poisson::new(mu).unwrap().ln_pmf(y);
        let ll = pois(d.y_pop, p.mu_pop)
            + multinom.ln_pmf(&nalgebra::DVector::from_vec(vec![d.y_g, d.y_n, d.y_p, rest]))
            + pois(d.y_m, out.mu_m)
            + bin(d.y_h, d.y_m, out.p_h)
            + bin(d.g2, d.g1, 0.5)
            + bin(d.g3, d.g2, 0.5)
            + bin(d.g4, d.g3, 0.5)
            + bin(d.g5, d.g4, 0.075)
            + bin(d.g_a, d.g_an, out.pi_ga)
            + bin(d.y_gm_g, d.n_gm_g, 0.5)
            + bin(d.y_gm_n, d.n_gm_n, 0.5);
        let expected = log_prior(&p, Scenario::Base) + ll;
        assert!(
            (lp - expected).abs() < 1e-6 * expected.abs(),
            "{lp} vs {expected}"
        );
        let mut bad = p;
        bad.gamma[3] = 0.3;
        assert_eq!(m.log_posterior(&bad), f64::NEG_INFINITY);
    }

    #[test]
    fn scenario_a_matches_base_when_linked() {
        let d = data();
        let base = HivModel::new(d.clone(), Scenario::Base).unwrap();
        let a = HivModel::new(d.clone(), Scenario::GumAnonOnly).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let p = random_support_point(&mut rng, Scenario::Base);
            let out = base.outputs(&p).unwrap();
            let pa = HivParams {
                pibar_g_free: Some(out.pi_un + out.pi_op),
                ..p
            };
            let (lb, la) = (base.log_likelihood(&p), a.log_likelihood(&pa));
            assert!(lb == la || (lb - la).abs() <= 1e-12 * lb.abs(), "{lb} {la}");
        }
    }

    #[test]
    fn scenario_b_uses_cascade_for_diagnosed_prevalence() {
        let d = data();
        let mut p = HivParams::reference(&d, Scenario::GumcadDiagnosed);
        p.gamma = [0.97, 0.9, 0.95, 0.03];
        let out = derived_outputs(&p, Scenario::GumcadDiagnosed, 0.25, true).unwrap();
        let expected = 0.03 + 0.97 * 0.9 * 0.95 * 0.03;
        assert!((out.pidelta_g - expected).abs() < 1e-15);
        p.a_delta[0] = 0.1;
        let out2 = derived_outputs(&p, Scenario::GumcadDiagnosed, 0.25, true).unwrap();
        assert_eq!(out.pidelta_g, out2.pidelta_g);
    }

    #[test]
    fn output_identities_hold_on_support() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for scenario in [Scenario::Base, Scenario::GumAnonOnly] {
            for _ in 0..1000 {
                let p = random_support_point(&mut rng, scenario);
                let o = derived_outputs(&p, scenario, 0.25, true).unwrap();
                for (pi, pd, pb, d) in [
                    (o.pi_g, o.pidelta_g, o.pibar_g, o.delta_g),
                    (o.pi_n, o.pidelta_n, o.pibar_n, o.delta_n),
                    (o.pi_p, o.pidelta_p, o.pibar_p, o.delta_p),
                ] {
                    assert!((pd + pb - pi).abs() <= 1e-12 * pi.max(1e-300));
                    assert!(d < 1.0 - pb);
                    assert!((0.0..=1.0).contains(&pi));
                }
                for (m, md, mu) in [
                    (o.mu_g, o.mu_dg, o.mu_ug),
                    (o.mu_n, o.mu_dn, o.mu_un),
                    (o.mu_p, o.mu_dp, o.mu_up),
                ] {
                    assert!((md + mu - m).abs() <= 1e-12 * m.max(1e-300));
                    assert!(md >= 0.0 && mu >= 0.0);
                }
                assert!((o.mu_u - (o.mu_ug + o.mu_un + o.mu_up)).abs() <= 1e-12 * o.mu_u);
            }
        }
    }

    #[test]
    fn gamma4_midpoint_maps_to_zero() {
        let d = data();
        let p = HivParams::reference(&d, Scenario::Base);
        let u = to_unconstrained(&p, Scenario::Base);
        assert!(u[12].abs() < 1e-15);
        // rho = (1/4, 1/4, 1/4) is the centre of the stick-breaking map
        let mut q = p;
        q.rho = [0.25; 3];
        let u = to_unconstrained(&q, Scenario::Base);
        for k in 1..4 {
            assert!(u[k].abs() < 1e-12, "{}", u[k]);
        }
    }

    #[test]
    fn transform_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for scenario in [Scenario::Base, Scenario::GumAnonOnly] {
            for _ in 0..1000 {
                let p = random_support_point(&mut rng, scenario);
                let u = to_unconstrained(&p, scenario);
                assert_eq!(u.len(), unconstrained_dim(scenario));
                let (q, lj) = from_unconstrained(&u, scenario);
                assert!(lj.is_finite());
                let (a, b) = (p.values(), q.values());
                for (x, y) in a.iter().zip(&b) {
                    let err = (x - y).abs() / x.abs().max(1.0);
                    assert!(err < 1e-10, "{x} vs {y}");
                }
            }
        }
    }

    /// Log |det J| of the map from unconstrained coordinates to the natural
    /// parameters on which the priors are stated (log mu_pop, the three free
    /// simplex coordinates, a_S and the bounded scalars), by central
    /// differences.
    fn finite_difference_log_jacobian(u: &[f64], scenario: Scenario) -> f64 {
        let natural = |u: &[f64]| -> Vec<f64> {
            let (p, _) = from_unconstrained(u, scenario);
            let mut v = p.values();
            v[0] = p.mu_pop.ln();
            v
        };
        let n = u.len();
        let h = 1e-6;
        let mut jac = nalgebra::DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let (mut up, mut dn) = (u.to_vec(), u.to_vec());
            up[j] += h;
            dn[j] -= h;
            let (fu, fd) = (natural(&up), natural(&dn));
            for i in 0..n {
                jac[(i, j)] = (fu[i] - fd[i]) / (2.0 * h);
            }
        }
        jac.determinant().abs().ln()
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for scenario in [Scenario::Base, Scenario::GumAnonOnly] {
            for _ in 0..10 {
                let p = random_support_point(&mut rng, scenario);
                let u = to_unconstrained(&p, scenario);
                let (_, analytic) = from_unconstrained(&u, scenario);
                let fd = finite_difference_log_jacobian(&u, scenario);
                let rel = ((analytic - fd) / fd.abs().max(1.0)).abs();
                assert!(rel < 1e-5, "analytic {analytic} fd {fd}");
            }
        }
    }

    #[test]
    fn scenario_tags() {
        for s in [Scenario::Base, Scenario::GumAnonOnly, Scenario::GumcadDiagnosed] {
            assert_eq!(s.tag().parse::<Scenario>().unwrap(), s);
        }
        assert!("c".parse::<Scenario>().is_err());
    }

    fn scenario_of(i: u8) -> Scenario {
        [Scenario::Base, Scenario::GumAnonOnly, Scenario::GumcadDiagnosed][i as usize % 3]
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(256))]

        #[test]
        fn prop_group_splits_add_up(seed in proptest::prelude::any::<u64>(), s in 0u8..3) {
            let scenario = scenario_of(s);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let p = random_support_point(&mut rng, scenario);
            // Scenario (b) can leave the support; those draws are rejected upstream.
            if let Some(o) = derived_outputs(&p, scenario, 0.25, true) {
                for (pi, pd, pb, d) in [
                    (o.pi_g, o.pidelta_g, o.pibar_g, o.delta_g),
                    (o.pi_n, o.pidelta_n, o.pibar_n, o.delta_n),
                    (o.pi_p, o.pidelta_p, o.pibar_p, o.delta_p),
                ] {
                    proptest::prop_assert!((pd + pb - pi).abs() <= 1e-12 * pi.max(1e-300));
                    proptest::prop_assert!(d < 1.0 - pb, "delta {d} pibar {pb}");
                }
                for (m, md, mu) in [(o.mu_g, o.mu_dg, o.mu_ug), (o.mu_n, o.mu_dn, o.mu_un), (o.mu_p, o.mu_dp, o.mu_up)] {
                    proptest::prop_assert!((md + mu - m).abs() <= 1e-12 * m.max(1e-300));
                }
            }
        }

        #[test]
        fn prop_linked_scenario_a_matches_base(seed in proptest::prelude::any::<u64>()) {
            let d = data();
            let base = HivModel::new(d.clone(), Scenario::Base).unwrap();
            let a = HivModel::new(d, Scenario::GumAnonOnly).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let p = random_support_point(&mut rng, Scenario::Base);
            let out = base.outputs(&p).unwrap();
            let pa = HivParams { pibar_g_free: Some(out.pi_un + out.pi_op), ..p };
            let (lb, la) = (base.log_likelihood(&p), a.log_likelihood(&pa));
            proptest::prop_assert!(lb == la || (lb - la).abs() <= 1e-12 * lb.abs());
        }

        #[test]
        fn prop_unconstrained_round_trip(seed in proptest::prelude::any::<u64>(), s in 0u8..3) {
            let scenario = scenario_of(s);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let p = random_support_point(&mut rng, scenario);
            let (q, lj) = from_unconstrained(&to_unconstrained(&p, scenario), scenario);
            proptest::prop_assert!(lj.is_finite());
            for (x, y) in p.values().iter().zip(q.values()) {
                proptest::prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1e-6));
            }
        }
    }
}
