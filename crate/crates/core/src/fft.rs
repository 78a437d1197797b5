//! N-dimensional FFT over row-major buffers, built on rustfft.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

type Plans = HashMap<(usize, bool), Arc<dyn Fft<f64>>>;

thread_local! {
    static PLANNER: RefCell<(FftPlanner<f64>, Plans)> = RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|cell| {
        let mut guard = cell.borrow_mut();
        let (planner, plans) = &mut *guard;
        plans
            .entry((len, inverse))
            .or_insert_with(|| {
                if inverse {
                    planner.plan_fft_inverse(len)
                } else {
                    planner.plan_fft_forward(len)
                }
            })
            .clone()
    })
}

/// In-place transform along every axis. The inverse is normalised by the
/// total sample count so that `inverse(forward(x)) == x`.
pub fn fft_nd(data: &mut [Complex64], shape: &[usize], inverse: bool) {
    let total: usize = shape.iter().product();
    assert_eq!(total, data.len(), "buffer length does not match shape");
    let dim = shape.len();
    let mut scratch = Vec::new();
    for axis in 0..dim {
        let len = shape[axis];
        if len == 1 {
            continue;
        }
        let fft = plan(len, inverse);
        let stride: usize = shape[axis + 1..].iter().product();
        if stride == 1 {
            fft.process(data);
            continue;
        }
        let outer = total / (len * stride);
        scratch.resize(total, Complex64::new(0.0, 0.0));
        // gather lines contiguously
        let mut pos = 0;
        for o in 0..outer {
            let base = o * len * stride;
            for s in 0..stride {
                for k in 0..len {
                    scratch[pos + k] = data[base + k * stride + s];
                }
                pos += len;
            }
        }
        fft.process(&mut scratch[..total]);
        let mut pos = 0;
        for o in 0..outer {
            let base = o * len * stride;
            for s in 0..stride {
                for k in 0..len {
                    data[base + k * stride + s] = scratch[pos + k];
                }
                pos += len;
            }
        }
    }
    if inverse {
        let norm = 1.0 / total as f64;
        for v in data.iter_mut() {
            *v *= norm;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_3d() {
        let shape = [4, 8, 2];
        let mut data: Vec<Complex64> = (0..64)
            .map(|i| Complex64::new((i as f64).sin(), (i as f64 * 0.3).cos()))
            .collect();
        let orig = data.clone();
        fft_nd(&mut data, &shape, false);
        fft_nd(&mut data, &shape, true);
        for (a, b) in data.iter().zip(orig.iter()) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn matches_direct_dft_2d() {
        let shape = [4, 8];
        let data: Vec<Complex64> = (0..32)
            .map(|i| Complex64::new((i as f64 * 1.7).sin(), (i as f64 * 0.4).cos()))
            .collect();
        let mut fast = data.clone();
        fft_nd(&mut fast, &shape, false);
        for k0 in 0..4 {
            for k1 in 0..8 {
                let mut acc = Complex64::new(0.0, 0.0);
                for i0 in 0..4 {
                    for i1 in 0..8 {
                        let ph = -2.0 * std::f64::consts::PI
                            * (k0 as f64 * i0 as f64 / 4.0 + k1 as f64 * i1 as f64 / 8.0);
                        acc += data[i0 * 8 + i1] * Complex64::from_polar(1.0, ph);
                    }
                }
                assert!((acc - fast[k0 * 8 + k1]).norm() < 1e-12);
            }
        }
    }
}
