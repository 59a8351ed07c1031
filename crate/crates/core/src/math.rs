//! Small numeric helpers shared by the bound and estimator code.

/// Pairwise (cascade) summation. Deterministic for a fixed input order and
/// considerably more accurate than a running sum on long inputs.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Arithmetic mean via pairwise summation. Returns 0 for an empty slice.
pub fn pairwise_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    pairwise_sum(values) / values.len() as f64
}

/// log(sum(exp(x_i))) with max-shift. Required wherever exp(-tau * risk)
/// appears: naive exponentiation underflows once tau * risk exceeds ~745.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let shifted: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    max + pairwise_sum(&shifted).ln()
}

/// Minimizes a unimodal function on (lo, hi) by golden-section search.
/// Returns (argmin, min). `rel_tol` bounds the final bracket width relative
/// to the interval length.
pub fn golden_section_min<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, rel_tol: f64) -> (f64, f64) {
    debug_assert!(lo < hi);
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut a = lo;
    let mut b = hi;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let tol = rel_tol * (hi - lo);
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Sample mean and unbiased variance in one pass (Welford).
pub fn mean_var(values: &[f64]) -> (f64, f64) {
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &v) in values.iter().enumerate() {
        let delta = v - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (v - mean);
    }
    let var = if values.len() > 1 {
        m2 / (values.len() - 1) as f64
    } else {
        0.0
    };
    (mean, var)
}
