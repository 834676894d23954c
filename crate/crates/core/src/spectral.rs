//! Spectral differential operators, Fourier symbols and the Helmholtz split.
//!
//! Every operator of order >= 1 drops Nyquist content so that real fields
//! stay real and `div(grad f) == laplacian(f)` holds to round-off.

use crate::error::{NskError, Result};
use crate::field::{ScalarField, TensorField, VectorField};
use crate::grid::{Grid, Mode, C64};

const I: C64 = C64 { re: 0.0, im: 1.0 };
const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Multiplier of `d^alpha` at one mode.
pub fn deriv_mult(mode: &Mode, alpha: [usize; 3]) -> C64 {
    let order = alpha[0] + alpha[1] + alpha[2];
    if order == 0 {
        return ONE;
    }
    if mode.nyquist {
        return ZERO;
    }
    let mut out = ONE;
    for a in 0..3 {
        for _ in 0..alpha[a] {
            out *= I * mode.k[a];
        }
    }
    out
}

pub fn derivative_spec(g: &Grid, s: &[C64], alpha: [usize; 3]) -> Vec<C64> {
    g.apply(s, |m| deriv_mult(m, alpha))
}

pub fn derivative(g: &Grid, f: &[f64], alpha: [usize; 3]) -> ScalarField {
    g.ifft(&derivative_spec(g, &g.fft(f), alpha))
}

fn unit(a: usize) -> [usize; 3] {
    let mut e = [0; 3];
    e[a] = 1;
    e
}

pub fn grad_spec(g: &Grid, s: &[C64]) -> VectorField {
    let specs: Vec<Vec<C64>> = (0..3).map(|a| derivative_spec(g, s, unit(a))).collect();
    let mut out = g.ifft_many(&specs).into_iter();
    [out.next().unwrap(), out.next().unwrap(), out.next().unwrap()]
}

pub fn grad(g: &Grid, f: &[f64]) -> VectorField {
    grad_spec(g, &g.fft(f))
}

/// Spectrum of the divergence.
pub fn div_spec(g: &Grid, v: &VectorField) -> Vec<C64> {
    let (s0, s1) = g.fft_pair(&v[0], &v[1]);
    let s2 = g.fft(&v[2]);
    let mut out = derivative_spec(g, &s0, unit(0));
    let d1 = derivative_spec(g, &s1, unit(1));
    let d2 = derivative_spec(g, &s2, unit(2));
    for i in 0..out.len() {
        out[i] += d1[i] + d2[i];
    }
    out
}

pub fn div(g: &Grid, v: &VectorField) -> ScalarField {
    g.ifft(&div_spec(g, v))
}

pub fn laplacian_mult(m: &Mode) -> C64 {
    if m.nyquist {
        ZERO
    } else {
        C64::new(-m.k2(), 0.0)
    }
}

pub fn laplacian(g: &Grid, f: &[f64]) -> ScalarField {
    g.ifft(&g.apply(&g.fft(f), laplacian_mult))
}

pub fn vector_laplacian(g: &Grid, v: &VectorField) -> VectorField {
    let (s0, s1) = g.fft_pair(&v[0], &v[1]);
    let s2 = g.fft(&v[2]);
    let specs = vec![
        g.apply(&s0, laplacian_mult),
        g.apply(&s1, laplacian_mult),
        g.apply(&s2, laplacian_mult),
    ];
    let mut out = g.ifft_many(&specs).into_iter();
    [out.next().unwrap(), out.next().unwrap(), out.next().unwrap()]
}

pub fn grad_div(g: &Grid, v: &VectorField) -> VectorField {
    grad_spec(g, &div_spec(g, v))
}

pub fn grad_laplacian(g: &Grid, f: &[f64]) -> VectorField {
    grad_spec(g, &g.apply(&g.fft(f), laplacian_mult))
}

/// `t[3 * i + j] = d_i d_j f`
pub fn hessian(g: &Grid, f: &[f64]) -> TensorField {
    let s = g.fft(f);
    let pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
    let specs: Vec<Vec<C64>> = pairs
        .iter()
        .map(|&(i, j)| {
            let mut a = [0; 3];
            a[i] += 1;
            a[j] += 1;
            derivative_spec(g, &s, a)
        })
        .collect();
    let fields = g.ifft_many(&specs);
    let mut out: TensorField = Default::default();
    for (p, &(i, j)) in pairs.iter().enumerate() {
        out[3 * i + j] = fields[p].clone();
        out[3 * j + i] = fields[p].clone();
    }
    out
}

/// Velocity gradient `t[3 * i + j] = d_i v_j`.
pub fn grad_vec(g: &Grid, v: &VectorField) -> TensorField {
    let mut out: TensorField = Default::default();
    for j in 0..3 {
        let gj = grad(g, &v[j]);
        for i in 0..3 {
            out[3 * i + j] = gj[i].clone();
        }
    }
    out
}

/// `(a . grad) u`
pub fn advect(g: &Grid, a: &VectorField, u: &[f64]) -> ScalarField {
    let gu = grad(g, u);
    crate::field::dot(a, &gu)
}

/// `(a . grad) v` componentwise.
pub fn advect_vec(g: &Grid, a: &VectorField, v: &VectorField) -> VectorField {
    [advect(g, a, &v[0]), advect(g, a, &v[1]), advect(g, a, &v[2])]
}

/// Row divergence of a tensor field, `(div T)_i = sum_j d_j T_ij`.
pub fn div_tensor(g: &Grid, t: &TensorField) -> VectorField {
    let mut out = crate::field::zeros_vec(g.size());
    for i in 0..3 {
        let row = [t[3 * i].clone(), t[3 * i + 1].clone(), t[3 * i + 2].clone()];
        out[i] = div(g, &row);
    }
    out
}

/// Two-thirds truncation.
pub fn dealias(g: &Grid, f: &[f64]) -> ScalarField {
    let mut s = g.fft(f);
    g.dealias_in_place(&mut s);
    g.ifft(&s)
}

pub fn dealias_vec(g: &Grid, v: &VectorField) -> VectorField {
    [dealias(g, &v[0]), dealias(g, &v[1]), dealias(g, &v[2])]
}

/// Removes the Nyquist modes, which no derivative resolves.
pub fn drop_nyquist(g: &Grid, f: &[f64]) -> ScalarField {
    let s = g.apply(&g.fft(f), |m| if m.nyquist { ZERO } else { ONE });
    g.ifft(&s)
}

/// Fourier multipliers used by the solvers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelSymbol {
    /// `1 / (1 + c |xi|^2)`, inverse of `1 - c Delta`.
    Bessel { c: f64 },
    /// `-1 / |xi|^2`, convolution with `E0 = -1 / (4 pi |x|)`.
    Newtonian,
}

impl KernelSymbol {
    pub fn name(&self) -> &'static str {
        match self {
            KernelSymbol::Bessel { .. } => "bessel",
            KernelSymbol::Newtonian => "newtonian",
        }
    }

    pub fn eval(&self, xi: [f64; 3]) -> f64 {
        let k2 = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
        match *self {
            KernelSymbol::Bessel { c } => 1.0 / (1.0 + c * k2),
            KernelSymbol::Newtonian => -1.0 / k2,
        }
    }

    pub fn singular_at_zero(&self) -> bool {
        matches!(self, KernelSymbol::Newtonian)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ZeroModePolicy {
    /// Zero mode of the output set to 0.
    Drop,
    /// Regular symbols multiply the mean; singular symbols pass it through.
    Keep,
    /// Fail if a singular symbol meets a nonzero mean.
    Error,
}

fn mean_tol(f: &[f64]) -> f64 {
    1e-12 * crate::field::max_abs(f).max(1e-300)
}

pub fn apply_symbol_spec(
    g: &Grid,
    s: &[C64],
    sym: KernelSymbol,
    policy: ZeroModePolicy,
) -> Vec<C64> {
    g.apply(s, |m| {
        if m.is_zero() {
            return match policy {
                ZeroModePolicy::Drop | ZeroModePolicy::Error => ZERO,
                ZeroModePolicy::Keep if sym.singular_at_zero() => ONE,
                ZeroModePolicy::Keep => C64::new(sym.eval([0.0; 3]), 0.0),
            };
        }
        if m.nyquist {
            return ZERO;
        }
        C64::new(sym.eval(m.k), 0.0)
    })
}

pub fn apply_symbol(
    g: &Grid,
    f: &[f64],
    sym: KernelSymbol,
    policy: ZeroModePolicy,
) -> Result<ScalarField> {
    let m = crate::field::mean(f);
    if policy == ZeroModePolicy::Error && sym.singular_at_zero() && m.abs() > mean_tol(f) {
        return Err(NskError::ZeroModeSingular { mean: m });
    }
    Ok(g.ifft(&apply_symbol_spec(g, &g.fft(f), sym, policy)))
}

fn check_mean_free(v: &VectorField) -> Result<()> {
    for c in v {
        let m = crate::field::mean(c);
        if m.abs() > mean_tol(c) {
            return Err(NskError::NonZeroMean { mean: m });
        }
    }
    Ok(())
}

/// `v = w + grad p` with `div w = 0` and mean-free `p`.
pub fn helmholtz(g: &Grid, v: &VectorField) -> Result<(VectorField, ScalarField)> {
    check_mean_free(v)?;
    let ds = div_spec(g, v);
    let ps = g.apply(&ds, |m| {
        if m.is_zero() || m.nyquist {
            ZERO
        } else {
            C64::new(-1.0 / m.k2(), 0.0)
        }
    });
    let p = g.ifft(&ps);
    let gp = grad_spec(g, &ps);
    let w = crate::field::vec_sub(v, &gp);
    Ok((w, p))
}

/// Solenoidal Stokes solve: `-mu Delta w = P f` with `P` the Leray
/// projector, i.e. convolution with the Stokeslet. The gradient part of
/// `f` is the caller's business (see [`helmholtz`]), so the second
/// viscosity does not enter.
pub fn oseen_solve(g: &Grid, f: &VectorField, mu: f64) -> Result<VectorField> {
    check_mean_free(f)?;
    let (s0, s1) = g.fft_pair(&f[0], &f[1]);
    let s2 = g.fft(&f[2]);
    let n = g.size();
    let mut out = [vec![ZERO; n], vec![ZERO; n], vec![ZERO; n]];
    for idx in 0..n {
        let m = g.mode(idx);
        if m.is_zero() || m.nyquist {
            continue;
        }
        let k2 = m.k2();
        let fh = [s0[idx], s1[idx], s2[idx]];
        let kf = (fh[0] * m.k[0] + fh[1] * m.k[1] + fh[2] * m.k[2]) / k2;
        for i in 0..3 {
            out[i][idx] = (fh[i] - kf * m.k[i]) / (mu * k2);
        }
    }
    let mut r = g.ifft_many(&out).into_iter();
    Ok([r.next().unwrap(), r.next().unwrap(), r.next().unwrap()])
}

/// Squared L2 norm from the spectrum (Parseval).
pub fn parseval_norm2(g: &Grid, s: &[C64]) -> f64 {
    let n = g.size() as f64;
    s.iter().map(|c| c.norm_sqr()).sum::<f64>() * g.cell_volume() / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field;
    use std::f64::consts::PI;

    fn grid() -> Grid {
        Grid::cubic(16, 2.0 * PI).unwrap()
    }

    fn err(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn gradient_of_sine() {
        let g = grid();
        let f = g.sample(|x| x[0].sin());
        let gr = grad(&g, &f);
        assert!(err(&gr[0], &g.sample(|x| x[0].cos())) < 1e-12);
        assert!(field::max_abs(&gr[1]) < 1e-12);
        assert!(field::max_abs(&gr[2]) < 1e-12);
    }

    #[test]
    fn div_grad_is_laplacian() {
        let g = grid();
        let f = g.sample(|x| x[0].sin() + x[1].cos());
        let dg = div(&g, &grad(&g, &f));
        assert!(err(&dg, &g.sample(|x| -x[0].sin() - x[1].cos())) < 1e-12);
        assert!(err(&dg, &laplacian(&g, &f)) < 1e-12);
    }

    #[test]
    fn grad_laplacian_of_sine() {
        let g = grid();
        let f = g.sample(|x| x[0].sin());
        let gl = grad_laplacian(&g, &f);
        assert!(err(&gl[0], &g.sample(|x| -x[0].cos())) < 1e-12);
    }

    #[test]
    fn hessian_is_symmetric_and_correct() {
        let g = grid();
        let f = g.sample(|x| x[0].sin() * x[1].sin());
        let h = hessian(&g, &f);
        assert!(err(&h[1], &h[3]) < 1e-14);
        assert!(err(&h[1], &g.sample(|x| x[0].cos() * x[1].cos())) < 1e-12);
    }

    #[test]
    fn helmholtz_of_gradient_and_of_shear() {
        let g = grid();
        let f = g.sample(|x| x[0].sin());
        let v = grad(&g, &f);
        let (w, p) = helmholtz(&g, &v).unwrap();
        assert!(field::vec_max_abs(&w) < 1e-12);
        assert!(err(&p, &f) < 1e-12);

        let v = [g.sample(|x| x[1].sin()), field::zeros(g.size()), field::zeros(g.size())];
        let (w, p) = helmholtz(&g, &v).unwrap();
        assert!(field::max_abs(&p) < 1e-12);
        assert!(err(&w[0], &v[0]) < 1e-12);
    }

    #[test]
    fn helmholtz_rejects_mean() {
        let g = grid();
        let v = [field::constant(g.size(), 1.0), field::zeros(g.size()), field::zeros(g.size())];
        assert!(matches!(helmholtz(&g, &v), Err(NskError::NonZeroMean { .. })));
    }

    #[test]
    fn bessel_halves_unit_mode() {
        let g = grid();
        let f = g.sample(|x| x[0].sin());
        let out = apply_symbol(&g, &f, KernelSymbol::Bessel { c: 1.0 }, ZeroModePolicy::Keep).unwrap();
        assert!(err(&out, &field::scale(&f, 0.5)) < 1e-13);
    }

    #[test]
    fn inverse_laplacian_and_zero_mode() {
        let g = grid();
        let f = g.sample(|x| -x[0].sin());
        let out = apply_symbol(&g, &f, KernelSymbol::Newtonian, ZeroModePolicy::Error).unwrap();
        assert!(err(&out, &g.sample(|x| x[0].sin())) < 1e-13);
        let c = field::constant(g.size(), 2.0);
        let r = apply_symbol(&g, &c, KernelSymbol::Newtonian, ZeroModePolicy::Error);
        assert!(matches!(r, Err(NskError::ZeroModeSingular { .. })));
    }

    #[test]
    fn oseen_transverse_mode() {
        let g = grid();
        let f = [g.sample(|x| x[1].cos()), field::zeros(g.size()), field::zeros(g.size())];
        let w = oseen_solve(&g, &f, 1.0).unwrap();
        assert!(err(&w[0], &f[0]) < 1e-13);
        let z = oseen_solve(&g, &field::zeros_vec(g.size()), 1.0).unwrap();
        assert!(field::vec_max_abs(&z) == 0.0);
    }

    #[test]
    fn parseval_matches_quadrature() {
        let g = Grid::new([16, 8, 8], [3.0, 2.0, 1.0]).unwrap();
        let f: Vec<f64> = (0..g.size()).map(|i| ((i * 31) % 17) as f64 - 8.0).collect();
        let q: f64 = f.iter().map(|x| x * x).sum::<f64>() * g.cell_volume();
        let p = parseval_norm2(&g, &g.fft(&f));
        assert!((p - q).abs() < 1e-12 * q);
    }
}
