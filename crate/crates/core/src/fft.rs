//! Unnormalized multi-dimensional FFTs on cubic periodic lattices, and the
//! integer momentum labels of the lattice sites.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub(crate) struct FftNd {
    sites: usize,
    d: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    buffer: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl FftNd {
    pub fn new(sites: usize, d: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(sites);
        let inverse = planner.plan_fft_inverse(sites);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        FftNd {
            sites,
            d,
            forward,
            inverse,
            buffer: vec![Complex64::default(); sites.pow(d as u32)],
            scratch: vec![Complex64::default(); scratch_len],
        }
    }

    pub fn volume(&self) -> usize {
        self.sites.pow(self.d as u32)
    }

    /// `X(k) = Σ_x e^{−2πi k·x/L} x(x)`.
    pub fn forward(&mut self, data: &mut [Complex64]) {
        let plan = Arc::clone(&self.forward);
        self.run(data, plan.as_ref());
    }

    /// `x(x) = Σ_k e^{+2πi k·x/L} X(k)`, without the `1/L^d`.
    pub fn inverse(&mut self, data: &mut [Complex64]) {
        let plan = Arc::clone(&self.inverse);
        self.run(data, plan.as_ref());
    }

    fn run(&mut self, data: &mut [Complex64], plan: &dyn Fft<f64>) {
        let l = self.sites;
        let total = self.volume();
        assert_eq!(data.len(), total);
        for axis in 0..self.d {
            let stride = l.pow((self.d - 1 - axis) as u32);
            if stride == 1 {
                plan.process_with_scratch(data, &mut self.scratch);
                continue;
            }
            let block = stride * l;
            // gather every line along `axis` into consecutive chunks
            let mut line = 0;
            for outer in (0..total).step_by(block) {
                for inner in 0..stride {
                    let base = outer + inner;
                    for k in 0..l {
                        self.buffer[line * l + k] = data[base + k * stride];
                    }
                    line += 1;
                }
            }
            plan.process_with_scratch(&mut self.buffer, &mut self.scratch);
            let mut line = 0;
            for outer in (0..total).step_by(block) {
                for inner in 0..stride {
                    let base = outer + inner;
                    for k in 0..l {
                        data[base + k * stride] = self.buffer[line * l + k];
                    }
                    line += 1;
                }
            }
        }
    }
}

/// Signed momentum label of index `i` on an axis of `sites` points, and
/// whether it is the Nyquist mode.
pub(crate) fn signed_mode(i: usize, sites: usize) -> (i64, bool) {
    let half = sites / 2;
    if sites.is_multiple_of(2) && i == half {
        (half as i64, true)
    } else if i < half || (sites % 2 == 1 && i == half) {
        (i as i64, false)
    } else {
        (i as i64 - sites as i64, false)
    }
}
