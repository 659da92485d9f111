//! Small numerical helpers shared across modules.
//!
//! Variances use the unbiased `K - 1` denominator throughout, so that the
//! decomposition `var(y) = var(fitted) + sum(resid^2) / (K - 1)` holds exactly
//! for any least-squares fit with an intercept.

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Two-pass unbiased variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    let (ss, comp) = xs.iter().fold((0.0, 0.0), |(ss, c), &x| {
        let d = x - m;
        (ss + d * d, c + d)
    });
    // corrected two-pass algorithm
    (ss - comp * comp / n as f64) / (n - 1) as f64
}

pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let mx = mean(xs);
    let my = mean(ys);
    let (s, cx, cy) = xs
        .iter()
        .zip(ys)
        .fold((0.0, 0.0, 0.0), |(s, cx, cy), (&x, &y)| {
            let dx = x - mx;
            let dy = y - my;
            (s + dx * dy, cx + dx, cy + dy)
        });
    (s - cx * cy / n as f64) / (n - 1) as f64
}

/// Sum of squares divided by `K - 1`; the residual analogue of `variance`.
pub fn mean_square_k1(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    xs.iter().map(|x| x * x).sum::<f64>() / (xs.len() - 1) as f64
}

/// Type-7 empirical quantile (linear interpolation between order statistics)
/// of an already sorted slice.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn odds(p: f64) -> f64 {
    p / (1.0 - p)
}

/// `log(sigmoid(u))`, stable for large |u|.
pub fn log_logistic(u: f64) -> f64 {
    if u >= 0.0 {
        -(-u).exp().ln_1p()
    } else {
        u - u.exp().ln_1p()
    }
}
