//! Seeded field generators.
//!
//! Every random stream comes from one `u64` seed through ChaCha8 with an
//! explicit stream id, so a given (seed, stream) pair always yields the
//! same samples regardless of thread count or call order elsewhere.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::field::{self, ScalarField, VectorField};
use crate::grid::{Grid, C64};

pub type FieldRng = ChaCha8Rng;

pub fn rng(seed: u64, stream: u64) -> FieldRng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Random trigonometric polynomial using lattice modes with `|m_i| <= max_mode`,
/// zero mean, scaled so that its largest sample is `amp`.
pub fn band_limited(g: &Grid, rng: &mut FieldRng, max_mode: i64, amp: f64) -> ScalarField {
    let mut s = vec![C64::new(0.0, 0.0); g.size()];
    for (idx, v) in s.iter_mut().enumerate() {
        let m = g.mode(idx);
        if !m.is_zero() && !m.nyquist && m.m.iter().all(|x| x.abs() <= max_mode) {
            // gentle spectral decay keeps the sample smooth
            let damp = 1.0 / (1.0 + m.m.iter().map(|x| (x * x) as f64).sum::<f64>());
            *v = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * damp;
        }
    }
    let mut f = g.ifft(&s);
    field::remove_mean(&mut f);
    let peak = field::max_abs(&f);
    if peak > 0.0 {
        f.iter_mut().for_each(|x| *x *= amp / peak);
    }
    f
}

pub fn band_limited_vec(g: &Grid, rng: &mut FieldRng, max_mode: i64, amp: f64) -> VectorField {
    [
        band_limited(g, rng, max_mode, amp),
        band_limited(g, rng, max_mode, amp),
        band_limited(g, rng, max_mode, amp),
    ]
}

/// `exp(-|x - c|^2 / (2 w^2))` summed over the neighbouring periodic
/// images, with `c` given as an offset from the box center. The image sum
/// makes the sample smooth across the box faces, so its spectrum is the
/// sampled Gaussian transform with no slowly decaying jump part.
pub fn gaussian(g: &Grid, c: [f64; 3], width: f64) -> ScalarField {
    let s = 0.5 / (width * width);
    let len = g.len();
    let active = [0, 1, 2].map(|a| g.is_active(a));
    g.sample_centered(|x| {
        let mut prod = 1.0;
        for a in 0..3 {
            let d = x[a] - c[a];
            prod *= if active[a] {
                (-1..=1).map(|n| (-(d + n as f64 * len[a]).powi(2) * s).exp()).sum::<f64>()
            } else {
                (-d * d * s).exp()
            };
        }
        prod
    })
}

/// Sum of a few Gaussian bumps with random signs, offsets and widths.
/// Localized around the box center; the mean is left untouched.
pub fn bumps(g: &Grid, rng: &mut FieldRng, count: usize, width: f64, spread: f64, amp: f64) -> ScalarField {
    let mut f = field::zeros(g.size());
    for _ in 0..count {
        let c = [0, 1, 2].map(|a| if g.is_active(a) { rng.gen_range(-spread..=spread) } else { 0.0 });
        let w = width * rng.gen_range(0.9..1.1);
        let a = rng.gen_range(-1.0..1.0);
        field::axpy(&mut f, a, &gaussian(g, c, w));
    }
    let peak = field::max_abs(&f);
    if peak > 0.0 {
        f.iter_mut().for_each(|x| *x *= amp / peak);
    }
    f
}

/// Mean-free localized field: random bumps minus a centered Gaussian of the
/// same width carrying their integral, so the result still decays.
pub fn bumps_mean_free(
    g: &Grid,
    rng: &mut FieldRng,
    count: usize,
    width: f64,
    spread: f64,
    amp: f64,
) -> ScalarField {
    let mut f = bumps(g, rng, count, width, spread, 1.0);
    let m = field::mean(&f) * g.volume();
    let base = gaussian(g, [0.0; 3], width);
    let mass = field::mean(&base) * g.volume();
    field::axpy(&mut f, -m / mass, &base);
    field::remove_mean(&mut f);
    let peak = field::max_abs(&f);
    if peak > 0.0 {
        f.iter_mut().for_each(|x| *x *= amp / peak);
    }
    f
}

pub fn bumps_vec(g: &Grid, rng: &mut FieldRng, count: usize, width: f64, spread: f64, amp: f64) -> VectorField {
    [0, 1, 2].map(|_| bumps_mean_free(g, rng, count, width, spread, amp))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_and_stream_reproduce() {
        let g = Grid::cubic(8, 6.0).unwrap();
        let a = band_limited(&g, &mut rng(7, 1), 2, 1.0);
        let b = band_limited(&g, &mut rng(7, 1), 2, 1.0);
        let c = band_limited(&g, &mut rng(7, 2), 2, 1.0);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn band_limited_is_mean_free_with_requested_peak() {
        let g = Grid::cubic(16, 6.0).unwrap();
        let f = band_limited(&g, &mut rng(1, 0), 3, 0.25);
        assert!(field::mean(&f).abs() < 1e-15);
        assert!((field::max_abs(&f) - 0.25).abs() < 1e-14);
        let s = g.fft(&f);
        for (i, v) in s.iter().enumerate() {
            if g.mode(i).m.iter().any(|m| m.abs() > 3) {
                assert!(v.norm() < 1e-10);
            }
        }
    }

    #[test]
    fn mean_free_bumps_have_zero_mean() {
        let g = Grid::cubic(32, 16.0 * std::f64::consts::PI).unwrap();
        let f = bumps_mean_free(&g, &mut rng(3, 0), 4, 4.0, 6.0, 1e-3);
        assert!(field::mean(&f).abs() < 1e-18);
        assert!((field::max_abs(&f) - 1e-3).abs() < 1e-15);
    }
}
