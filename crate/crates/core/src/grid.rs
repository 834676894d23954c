//! Periodic box, wavenumber lattice and 3-D FFTs.
//!
//! Samples are stored x-fastest: `idx = i + nx * (j + ny * k)`. Forward
//! transforms are unnormalized, inverse transforms divide by the number
//! of points.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{NskError, Result};
use crate::par;

pub type C64 = Complex64;

/// One lattice mode as seen by a spectral multiplier.
#[derive(Clone, Copy, Debug)]
pub struct Mode {
    /// Wavenumber vector. Zero on an axis whose index is the Nyquist index.
    pub k: [f64; 3],
    /// Signed mode index per axis.
    pub m: [i64; 3],
    /// True when any axis sits at its Nyquist index.
    pub nyquist: bool,
}

impl Mode {
    pub fn k2(&self) -> f64 {
        self.k[0] * self.k[0] + self.k[1] * self.k[1] + self.k[2] * self.k[2]
    }

    pub fn is_zero(&self) -> bool {
        self.m == [0, 0, 0]
    }
}

#[derive(Clone)]
pub struct Grid {
    n: [usize; 3],
    len: [f64; 3],
    k: [Vec<f64>; 3],
    m: [Vec<i64>; 3],
    fwd: [Arc<dyn Fft<f64>>; 3],
    inv: [Arc<dyn Fft<f64>>; 3],
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid").field("n", &self.n).field("len", &self.len).finish()
    }
}

impl Grid {
    /// Cubic 3-D box with `n` points and length `l` per axis.
    pub fn cubic(n: usize, l: f64) -> Result<Grid> {
        Grid::new([n, n, n], [l, l, l])
    }

    /// General box. An axis with a single point is inactive, which gives the
    /// debug 1-D and 2-D modes; active axes need a power of two >= 8.
    pub fn new(n: [usize; 3], len: [f64; 3]) -> Result<Grid> {
        let mut active = 0;
        for a in 0..3 {
            if n[a] == 1 {
                continue;
            }
            active += 1;
            if n[a] < 8 || !n[a].is_power_of_two() {
                return Err(NskError::Config(format!(
                    "axis {a} has {} points; need a power of two >= 8",
                    n[a]
                )));
            }
            if !(len[a] > 0.0 && len[a].is_finite()) {
                return Err(NskError::Config(format!("axis {a} has length {}", len[a])));
            }
        }
        if active == 0 {
            return Err(NskError::Config("grid has no active axis".into()));
        }
        let mut planner = FftPlanner::new();
        let fwd = n.map(|na| planner.plan_fft_forward(na));
        let inv = n.map(|na| planner.plan_fft_inverse(na));
        let mut k: [Vec<f64>; 3] = Default::default();
        let mut m: [Vec<i64>; 3] = Default::default();
        for a in 0..3 {
            let na = n[a];
            for i in 0..na {
                let mi = if i < na / 2 || na == 1 { i as i64 } else { i as i64 - na as i64 };
                m[a].push(mi);
                let nyq = na > 1 && i == na / 2;
                k[a].push(if nyq { 0.0 } else { 2.0 * PI * mi as f64 / len[a] });
            }
        }
        Ok(Grid { n, len, k, m, fwd, inv })
    }

    pub fn n(&self) -> [usize; 3] {
        self.n
    }

    pub fn len(&self) -> [f64; 3] {
        self.len
    }

    pub fn size(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn is_active(&self, axis: usize) -> bool {
        self.n[axis] > 1
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.len[axis] / self.n[axis] as f64
    }

    /// Quadrature weight of one sample (product over active axes).
    pub fn cell_volume(&self) -> f64 {
        (0..3).filter(|&a| self.is_active(a)).map(|a| self.spacing(a)).product()
    }

    pub fn volume(&self) -> f64 {
        (0..3).filter(|&a| self.is_active(a)).map(|a| self.len[a]).product()
    }

    /// Smallest spacing over active axes.
    pub fn min_spacing(&self) -> f64 {
        (0..3)
            .filter(|&a| self.is_active(a))
            .map(|a| self.spacing(a))
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest resolved derivative order for norm evaluation.
    pub fn derivative_budget(&self) -> usize {
        let nmin = (0..3).filter(|&a| self.is_active(a)).map(|a| self.n[a]).min().unwrap_or(8);
        match nmin {
            0..=15 => 3,
            16..=31 => 4,
            32..=63 => 6,
            _ => 8,
        }
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n[0] * (j + self.n[1] * k)
    }

    pub fn unindex(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.n[0];
        let r = idx / self.n[0];
        [i, r % self.n[1], r / self.n[1]]
    }

    /// Physical coordinate of a sample, in `[0, L)` per axis.
    pub fn coord(&self, idx: usize) -> [f64; 3] {
        let ijk = self.unindex(idx);
        [0, 1, 2].map(|a| if self.is_active(a) { ijk[a] as f64 * self.spacing(a) } else { 0.0 })
    }

    pub fn center(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| if self.is_active(a) { 0.5 * self.len[a] } else { 0.0 })
    }

    /// Offset from the box center.
    pub fn offset(&self, idx: usize) -> [f64; 3] {
        let x = self.coord(idx);
        let c = self.center();
        [x[0] - c[0], x[1] - c[1], x[2] - c[2]]
    }

    /// Euclidean distance from the box center.
    pub fn radius(&self, idx: usize) -> f64 {
        let d = self.offset(idx);
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    }

    pub fn half_diagonal(&self) -> f64 {
        let c = self.center();
        (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()
    }

    /// Sample a function of position.
    pub fn sample(&self, f: impl Fn([f64; 3]) -> f64 + Sync + Send) -> Vec<f64> {
        par::map_range(self.size(), |idx| f(self.coord(idx)))
    }

    /// Sample a function of the offset from the box center.
    pub fn sample_centered(&self, f: impl Fn([f64; 3]) -> f64 + Sync + Send) -> Vec<f64> {
        par::map_range(self.size(), |idx| f(self.offset(idx)))
    }

    pub fn mode(&self, idx: usize) -> Mode {
        let [i, j, k] = self.unindex(idx);
        let ijk = [i, j, k];
        let nyquist = (0..3).any(|a| self.n[a] > 1 && ijk[a] == self.n[a] / 2);
        Mode {
            k: [self.k[0][i], self.k[1][j], self.k[2][k]],
            m: [self.m[0][i], self.m[1][j], self.m[2][k]],
            nyquist,
        }
    }

    /// True wavenumber of a lattice index, Nyquist included.
    pub fn lattice_xi(&self, m: [i64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| 2.0 * PI * m[a] as f64 / self.len[a])
    }

    /// Two-thirds rule: modes kept after a product.
    pub fn keeps(&self, mode: &Mode) -> bool {
        (0..3).all(|a| (mode.m[a].unsigned_abs() as f64) <= self.n[a] as f64 / 3.0)
    }

    /// Multiply a spectrum mode-wise.
    pub fn apply(&self, s: &[C64], mult: impl Fn(&Mode) -> C64 + Sync + Send) -> Vec<C64> {
        let mut out = s.to_vec();
        self.apply_in_place(&mut out, mult);
        out
    }

    pub fn apply_in_place(&self, s: &mut [C64], mult: impl Fn(&Mode) -> C64 + Sync + Send) {
        let nx = self.n[0];
        par::for_chunks(s, nx, |row, c| {
            let base = row * nx;
            for (i, v) in c.iter_mut().enumerate() {
                *v *= mult(&self.mode(base + i));
            }
        });
    }

    pub fn dealias_in_place(&self, s: &mut [C64]) {
        self.apply_in_place(s, |m| {
            if self.keeps(m) && !m.nyquist {
                C64::new(1.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
    }

    fn transform(&self, data: &mut [C64], plans: &[Arc<dyn Fft<f64>>; 3]) {
        let [nx, ny, nz] = self.n;
        let nxy = nx * ny;
        assert_eq!(data.len(), self.size(), "buffer does not match grid");
        if nx > 1 {
            let p = &plans[0];
            par::for_chunks(data, nxy, |_, slab| p.process(slab));
        }
        if ny > 1 {
            let p = &plans[1];
            let mut tmp = vec![C64::new(0.0, 0.0); data.len()];
            {
                let src = &*data;
                par::for_chunks(&mut tmp, ny, |line, c| {
                    let z = line / nx;
                    let x = line % nx;
                    for (y, v) in c.iter_mut().enumerate() {
                        *v = src[x + nx * (y + ny * z)];
                    }
                });
            }
            par::for_chunks(&mut tmp, ny * nx, |_, c| p.process(c));
            par::for_chunks(data, nx, |row, c| {
                let z = row / ny;
                let y = row % ny;
                for (x, v) in c.iter_mut().enumerate() {
                    *v = tmp[(z * nx + x) * ny + y];
                }
            });
        }
        if nz > 1 {
            let p = &plans[2];
            let mut tmp = vec![C64::new(0.0, 0.0); data.len()];
            {
                let src = &*data;
                par::for_chunks(&mut tmp, nz, |line, c| {
                    for (z, v) in c.iter_mut().enumerate() {
                        *v = src[line + nxy * z];
                    }
                });
            }
            par::for_chunks(&mut tmp, nz * nx.max(1), |_, c| p.process(c));
            par::for_chunks(data, nxy, |z, c| {
                for (l, v) in c.iter_mut().enumerate() {
                    *v = tmp[l * nz + z];
                }
            });
        }
    }

    pub fn forward_in_place(&self, data: &mut [C64]) {
        self.transform(data, &self.fwd);
    }

    pub fn inverse_in_place(&self, data: &mut [C64]) {
        self.transform(data, &self.inv);
        let s = 1.0 / self.size() as f64;
        par::for_chunks(data, self.n[0], |_, c| c.iter_mut().for_each(|v| *v *= s));
    }

    pub fn fft(&self, f: &[f64]) -> Vec<C64> {
        let mut d: Vec<C64> = f.iter().map(|&x| C64::new(x, 0.0)).collect();
        self.forward_in_place(&mut d);
        d
    }

    /// Real part of the inverse transform.
    pub fn ifft(&self, s: &[C64]) -> Vec<f64> {
        let mut d = s.to_vec();
        self.inverse_in_place(&mut d);
        d.into_iter().map(|v| v.re).collect()
    }

    fn neg_index(&self, idx: usize) -> usize {
        let [i, j, k] = self.unindex(idx);
        let [nx, ny, nz] = self.n;
        self.index((nx - i) % nx, (ny - j) % ny, (nz - k) % nz)
    }

    /// Two real transforms for the price of one complex transform.
    pub fn fft_pair(&self, a: &[f64], b: &[f64]) -> (Vec<C64>, Vec<C64>) {
        let mut z: Vec<C64> = a.iter().zip(b).map(|(&x, &y)| C64::new(x, y)).collect();
        self.forward_in_place(&mut z);
        let n = z.len();
        let mut sa = vec![C64::new(0.0, 0.0); n];
        let mut sb = vec![C64::new(0.0, 0.0); n];
        for idx in 0..n {
            let zc = z[self.neg_index(idx)].conj();
            sa[idx] = (z[idx] + zc) * 0.5;
            sb[idx] = (z[idx] - zc) * C64::new(0.0, -0.5);
        }
        (sa, sb)
    }

    /// Inverse of two Hermitian spectra in one complex transform.
    pub fn ifft_pair(&self, a: &[C64], b: &[C64]) -> (Vec<f64>, Vec<f64>) {
        let mut z: Vec<C64> = a.iter().zip(b).map(|(&x, &y)| x + C64::new(0.0, 1.0) * y).collect();
        self.inverse_in_place(&mut z);
        (z.iter().map(|v| v.re).collect(), z.iter().map(|v| v.im).collect())
    }

    /// Inverse of many Hermitian spectra, paired internally.
    pub fn ifft_many(&self, specs: &[Vec<C64>]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(specs.len());
        let mut it = specs.chunks(2);
        for pair in &mut it {
            if pair.len() == 2 {
                let (a, b) = self.ifft_pair(&pair[0], &pair[1]);
                out.push(a);
                out.push(b);
            } else {
                out.push(self.ifft(&pair[0]));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn rejects_small_or_odd_sizes() {
        assert!(Grid::cubic(4, 1.0).is_err());
        assert!(Grid::cubic(12, 1.0).is_err());
        assert!(Grid::cubic(8, 1.0).is_ok());
    }

    #[test]
    fn round_trip_is_exact() {
        let g = Grid::new([16, 8, 32], [2.0, 3.0, 5.0]).unwrap();
        let f: Vec<f64> = (0..g.size()).map(|i| ((i * 7919) % 101) as f64 / 101.0 - 0.5).collect();
        let back = g.ifft(&g.fft(&f));
        assert!(max_abs_diff(&f, &back) < 1e-13);
    }

    #[test]
    fn single_mode_lands_on_its_index() {
        let g = Grid::cubic(8, 2.0 * PI).unwrap();
        let f = g.sample(|x| (2.0 * x[1]).cos());
        let s = g.fft(&f);
        let n = g.size() as f64;
        let idx = g.index(0, 2, 0);
        assert!((s[idx].re - n / 2.0).abs() < 1e-10);
        assert_eq!(g.mode(idx).m, [0, 2, 0]);
    }

    #[test]
    fn paired_transforms_match_single() {
        let g = Grid::cubic(8, 1.0).unwrap();
        let a: Vec<f64> = (0..g.size()).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..g.size()).map(|i| (i as f64 * 0.11).cos()).collect();
        let (sa, sb) = g.fft_pair(&a, &b);
        let ra = g.fft(&a);
        let rb = g.fft(&b);
        for i in 0..g.size() {
            assert!((sa[i] - ra[i]).norm() < 1e-10);
            assert!((sb[i] - rb[i]).norm() < 1e-10);
        }
        let (ba, bb) = g.ifft_pair(&sa, &sb);
        assert!(max_abs_diff(&a, &ba) < 1e-13);
        assert!(max_abs_diff(&b, &bb) < 1e-13);
    }

    #[test]
    fn debug_two_dimensional_mode() {
        let g = Grid::new([16, 16, 1], [2.0 * PI, 2.0 * PI, 1.0]).unwrap();
        assert!((g.cell_volume() - (2.0 * PI / 16.0).powi(2)).abs() < 1e-14);
        let f = g.sample(|x| x[0].sin() * x[1].cos());
        let back = g.ifft(&g.fft(&f));
        assert!(max_abs_diff(&f, &back) < 1e-13);
    }

    #[test]
    fn dealias_keeps_two_thirds() {
        let g = Grid::cubic(32, 1.0).unwrap();
        let kept = (0..g.size()).filter(|&i| g.keeps(&g.mode(i))).count();
        assert_eq!(kept, 21 * 21 * 21);
    }
}
