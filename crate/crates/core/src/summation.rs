//! Deterministic reductions over the momentum grid.
//!
//! Every sum over modes goes through here. The pairwise variants are used in
//! the stepper's hot loop; [`Neumaier`] is for iterator-shaped reductions in
//! the diagnostics. Both have a fixed evaluation order, so repeated runs are
//! bit-identical.

use num_complex::Complex64;

const BLOCK: usize = 64;

/// Pairwise sum with an unrolled base case. Error grows like `O(log n)`.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= BLOCK {
        // Eight independent lanes; the compiler keeps them in vector registers.
        let mut lanes = [0.0; 8];
        let mut chunks = values.chunks_exact(8);
        for c in &mut chunks {
            for j in 0..8 {
                lanes[j] += c[j];
            }
        }
        let mut tail = 0.0;
        for v in chunks.remainder() {
            tail += v;
        }
        let quads = [lanes[0] + lanes[4], lanes[1] + lanes[5], lanes[2] + lanes[6], lanes[3] + lanes[7]];
        return ((quads[0] + quads[2]) + (quads[1] + quads[3])) + tail;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Complex counterpart of [`pairwise_sum`].
pub fn pairwise_sum_complex(values: &[Complex64]) -> Complex64 {
    if values.len() <= BLOCK {
        let mut re = [0.0; 4];
        let mut im = [0.0; 4];
        let mut chunks = values.chunks_exact(4);
        for c in &mut chunks {
            for j in 0..4 {
                re[j] += c[j].re;
                im[j] += c[j].im;
            }
        }
        let mut tail = Complex64::new(0.0, 0.0);
        for v in chunks.remainder() {
            tail += v;
        }
        return Complex64::new(
            (re[0] + re[1]) + (re[2] + re[3]),
            (im[0] + im[1]) + (im[2] + im[3]),
        ) + tail;
    }
    let mid = values.len() / 2;
    pairwise_sum_complex(&values[..mid]) + pairwise_sum_complex(&values[mid..])
}

/// Streaming form of [`pairwise_sum`] for data produced block by block.
///
/// Feed consecutive blocks of [`PAIRWISE_BLOCK`] values (the last may be
/// shorter); for a power-of-two total the result is bit-identical to
/// `pairwise_sum` over the whole slice.
#[derive(Debug, Clone, Default)]
pub struct PairwiseStack {
    /// `(level, partial)` with strictly decreasing levels.
    stack: Vec<(u32, f64)>,
}

/// Block length expected by [`PairwiseStack::push_block`].
pub const PAIRWISE_BLOCK: usize = BLOCK;

impl PairwiseStack {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.stack.clear();
    }

    pub fn push_block(&mut self, block: &[f64]) {
        let mut level = 0;
        let mut value = pairwise_sum(block);
        while let Some(&(top, partial)) = self.stack.last() {
            if top != level {
                break;
            }
            self.stack.pop();
            value = partial + value;
            level += 1;
        }
        self.stack.push((level, value));
    }

    pub fn value(&self) -> f64 {
        self.stack.iter().rev().fold(None, |acc: Option<f64>, &(_, v)| Some(acc.map_or(v, |a| v + a))).unwrap_or(0.0)
    }
}

/// Neumaier's variant of Kahan compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Neumaier {
    sum: f64,
    compensation: f64,
}

impl Neumaier {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for Neumaier {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Neumaier::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

/// Compensated complex sum: independent accumulators for both components.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierComplex {
    re: Neumaier,
    im: Neumaier,
}

impl NeumaierComplex {
    pub fn add(&mut self, value: Complex64) {
        self.re.add(value.re);
        self.im.add(value.im);
    }

    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re.value(), self.im.value())
    }
}

impl FromIterator<Complex64> for NeumaierComplex {
    fn from_iter<I: IntoIterator<Item = Complex64>>(iter: I) -> Self {
        let mut acc = NeumaierComplex::default();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}
