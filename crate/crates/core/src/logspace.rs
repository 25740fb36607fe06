//! Log-space arithmetic shared by the dynamic programs.

pub const NEG_INF: f64 = f64::NEG_INFINITY;

/// `ln(exp(a) + exp(b))` without overflow; `-inf` is the additive identity.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == NEG_INF {
        return b;
    }
    if b == NEG_INF {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Log-sum-exp over a slice, accumulated in slice order.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(NEG_INF, f64::max);
    if max == NEG_INF {
        return NEG_INF;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Log-softmax of a slice of logits. An empty slice yields an empty vector.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(logits);
    logits.iter().map(|&l| l - z).collect()
}

/// Natural logs of a split `(rho, 1 - rho)`.
#[inline]
pub fn ln_pair(rho: f64) -> (f64, f64) {
    (rho.ln(), (-rho).ln_1p())
}

/// Reusable buffer for accumulating log-space terms in a fixed order.
#[derive(Debug, Default)]
pub(crate) struct Accumulator {
    terms: Vec<f64>,
}

impl Accumulator {
    pub fn clear(&mut self) {
        self.terms.clear();
    }

    #[inline]
    pub fn push(&mut self, v: f64) {
        if v != NEG_INF {
            self.terms.push(v);
        }
    }

    pub fn total(&self) -> f64 {
        log_sum_exp(&self.terms)
    }
}
