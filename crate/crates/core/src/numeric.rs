//! Compensated summation and moment accumulation.
//!
//! Every mean and standard deviation in this crate goes through these
//! helpers. Reductions over parallel work happen on partial accumulators
//! folded in a fixed block order, which is what makes pipeline output
//! independent of the number of worker threads.

/// Neumaier (improved Kahan) compensated summation.
///
/// Carries a running compensation term so that adding values of mixed
/// magnitude loses far less precision than a naive fold. The `total` is
/// deterministic for a fixed order of `add` calls.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.comp += (self.sum - t) + value;
        } else {
            self.comp += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// One-pass accumulator for count, mean and population standard deviation.
///
/// Tracks compensated sums of x and x^2. Values here are bounded (scores in
/// [0, 1], measure values of modest magnitude), so the textbook
/// E[x^2] - mean^2 form is adequate once the sums themselves are compensated.
#[derive(Debug, Clone, Copy, Default)]
pub struct Moments {
    n: u64,
    sum: NeumaierSum,
    sum_sq: NeumaierSum,
}

impl Moments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        self.n += 1;
        self.sum.add(value);
        self.sum_sq.add(value * value);
    }

    /// Folds another accumulator into this one. Call in a fixed order
    /// (ascending block index) when combining parallel partials.
    pub fn merge(&mut self, other: &Moments) {
        self.n += other.n;
        self.sum.add(other.sum.total());
        self.sum_sq.add(other.sum_sq.total());
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        self.sum.total() / self.n as f64
    }

    /// Population standard deviation (divides by n, not n - 1).
    pub fn population_stddev(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let mean = self.mean();
        let var = self.sum_sq.total() / self.n as f64 - mean * mean;
        var.max(0.0).sqrt()
    }
}

/// Compensated sum of a slice, in slice order.
pub fn sum(values: &[f64]) -> f64 {
    let mut acc = NeumaierSum::new();
    for &v in values {
        acc.add(v);
    }
    acc.total()
}

/// Mean and population standard deviation of a slice.
pub fn mean_stddev(values: &[f64]) -> (f64, f64) {
    let mut m = Moments::new();
    for &v in values {
        m.add(v);
    }
    (m.mean(), m.population_stddev())
}
