//! Weighted Sobolev, Lebesgue and decay norms.
//!
//! Weights are `1 + |x - c|` with `c` the box center. Every weighted quantity
//! comes back as a [`Measure`] that also carries the share attributable to the
//! boundary shell (points within 10% of a face), which is the part of the
//! whole-space integral the periodic box cannot represent faithfully.
//!
//! `grad^k f` means the set `{ d^alpha f : |alpha| = k }`, each multi-index once.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{NskError, Result};
use crate::field::{self, ScalarField, VectorField};
use crate::grid::{Grid, C64};
use crate::par;
use crate::spectral::{self, deriv_mult};

/// Fraction of the half box treated as the boundary shell.
const SHELL: f64 = 0.4;
const BATCH: usize = 8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Measure {
    pub value: f64,
    /// Share of the integrand (or of the sup) carried by the boundary shell, in `[0, 1]`.
    pub tail: f64,
}

impl Measure {
    pub const ZERO: Measure = Measure { value: 0.0, tail: 0.0 };

    /// Sum of values; the tail is the worst of the parts.
    pub fn plus(self, o: Measure) -> Measure {
        Measure { value: self.value + o.value, tail: self.tail.max(o.tail) }
    }
}

impl std::iter::Sum for Measure {
    fn sum<I: Iterator<Item = Measure>>(it: I) -> Measure {
        it.fold(Measure::ZERO, Measure::plus)
    }
}

/// Per-point weight `1 + |x - c|` and the boundary-shell mask.
#[derive(Clone, Debug)]
pub struct Weights {
    pub w: Vec<f64>,
    pub shell: Vec<bool>,
}

impl Weights {
    pub fn new(g: &Grid) -> Weights {
        let len = g.len();
        let w = par::map_range(g.size(), |i| 1.0 + g.radius(i).min(g.half_diagonal()));
        let shell = par::map_range(g.size(), |i| {
            let d = g.offset(i);
            (0..3).any(|a| g.is_active(a) && d[a].abs() > SHELL * len[a])
        });
        Weights { w, shell }
    }
}

/// All multi-indices of total order `k` over the active axes.
pub fn multi_indices(g: &Grid, k: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for a in 0..=k {
        for b in 0..=k - a {
            let c = k - a - b;
            let alpha = [a, b, c];
            if (0..3).all(|ax| g.is_active(ax) || alpha[ax] == 0) {
                out.push(alpha);
            }
        }
    }
    out
}

fn check_budget(g: &Grid, order: usize) -> Result<()> {
    let budget = g.derivative_budget();
    if order > budget {
        return Err(NskError::DerivativeBudgetExceeded { order, budget });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default)]
struct Acc {
    total: f64,
    shell: f64,
}

impl Acc {
    fn add(&mut self, o: Acc) {
        self.total += o.total;
        self.shell += o.shell;
    }
    fn max(&mut self, o: Acc) {
        self.total = self.total.max(o.total);
        self.shell = self.shell.max(o.shell);
    }
}

/// Streamed derivative statistics of a set of components.
///
/// `l2` requests `(order, p)` pairs for `int w^(2p) |grad^order u|^2`.
struct Stats {
    l2: BTreeMap<(usize, i32), Acc>,
}

impl Stats {
    fn compute(
        g: &Grid,
        wt: &Weights,
        comps: &[&[f64]],
        l2: &[(usize, i32)],
    ) -> Result<Stats> {
        let mut orders: Vec<usize> = l2.iter().map(|r| r.0).collect();
        orders.sort_unstable();
        orders.dedup();
        if let Some(&top) = orders.last() {
            check_budget(g, top)?;
        }
        let specs: Vec<Vec<C64>> = comps.iter().map(|c| g.fft(c)).collect();
        let dv = g.cell_volume();
        let mut out = Stats { l2: BTreeMap::new() };
        for &o in &orders {
            let p2: Vec<i32> = l2.iter().filter(|r| r.0 == o).map(|r| r.1).collect();
            let jobs: Vec<(usize, [usize; 3])> = (0..specs.len())
                .flat_map(|c| multi_indices(g, o).into_iter().map(move |a| (c, a)))
                .collect();
            let mut acc2 = vec![Acc::default(); p2.len()];
            for batch in jobs.chunks(BATCH) {
                let fields: Vec<Vec<f64>> = if o == 0 {
                    batch.iter().map(|(c, _)| comps[*c].to_vec()).collect()
                } else {
                    let ds: Vec<Vec<C64>> = batch
                        .iter()
                        .map(|(c, a)| spectral::derivative_spec(g, &specs[*c], *a))
                        .collect();
                    g.ifft_many(&ds)
                };
                let parts = par::map_range(fields.len(), |f| {
                    let u = &fields[f];
                    let mut a2 = vec![Acc::default(); p2.len()];
                    for (i, &x) in u.iter().enumerate() {
                        let w = wt.w[i];
                        let sh = wt.shell[i];
                        for (k, &p) in p2.iter().enumerate() {
                            let v = x * x * w.powi(2 * p);
                            a2[k].total += v;
                            if sh {
                                a2[k].shell += v;
                            }
                        }
                    }
                    a2
                });
                for a2 in parts {
                    for k in 0..p2.len() {
                        acc2[k].add(a2[k]);
                    }
                }
            }
            for (k, &p) in p2.iter().enumerate() {
                out.l2.insert((o, p), Acc { total: acc2[k].total * dv, shell: acc2[k].shell * dv });
            }
        }
        Ok(out)
    }

    /// `|| w^p (grad^o1 u, grad^o2 u, ...) ||_{L2}` over the listed pairs.
    fn l2(&self, keys: &[(usize, i32)]) -> Measure {
        let mut a = Acc::default();
        for k in keys {
            a.add(self.l2[k]);
        }
        sq_measure(a)
    }
}

fn sq_measure(a: Acc) -> Measure {
    let value = a.total.sqrt();
    let tail = if a.total > 0.0 { a.shell / a.total } else { 0.0 };
    Measure { value, tail }
}

fn ratio_measure(a: Acc) -> Measure {
    let tail = if a.total > 0.0 { a.shell / a.total } else { 0.0 };
    Measure { value: a.total, tail }
}

/// `|| w^p grad^order u ||_{L2}` for a list of components.
pub fn weighted_l2(g: &Grid, wt: &Weights, comps: &[&[f64]], order: usize, p: i32) -> Result<Measure> {
    let st = Stats::compute(g, wt, comps, &[(order, p)])?;
    Ok(st.l2(&[(order, p)]))
}

/// `|| w^p (grad^o u)_{o in orders} ||_{L inf}`, grid maxima refined by a
/// per-axis parabolic vertex estimate around the discrete argmax.
pub fn weighted_linf(g: &Grid, wt: &Weights, comps: &[&[f64]], orders: &[usize], p: i32) -> Result<Measure> {
    if let Some(&top) = orders.iter().max() {
        check_budget(g, top)?;
    }
    let mut best = Acc::default();
    for &o in orders {
        for c in comps {
            let fields: Vec<ScalarField> = if o == 0 {
                vec![c.to_vec()]
            } else {
                let s = g.fft(c);
                let ds: Vec<Vec<C64>> = multi_indices(g, o)
                    .into_iter()
                    .map(|a| g.apply(&s, |m| deriv_mult(m, a)))
                    .collect();
                g.ifft_many(&ds)
            };
            for f in &fields {
                best.max(refined_max(g, wt, f, p));
            }
        }
    }
    Ok(ratio_measure(best))
}

fn refined_max(g: &Grid, wt: &Weights, f: &[f64], p: i32) -> Acc {
    let h = |i: usize| f[i].abs() * wt.w[i].powi(p);
    let mut acc = Acc::default();
    let mut arg = 0;
    for i in 0..f.len() {
        let v = h(i);
        if v > acc.total {
            acc.total = v;
            arg = i;
        }
        if wt.shell[i] && v > acc.shell {
            acc.shell = v;
        }
    }
    if acc.total == 0.0 {
        return acc;
    }
    let ijk = g.unindex(arg);
    let n = g.n();
    let peak = acc.total;
    let mut lift = 0.0;
    for a in 0..3 {
        if !g.is_active(a) {
            continue;
        }
        let mut lo = ijk;
        let mut hi = ijk;
        lo[a] = (ijk[a] + n[a] - 1) % n[a];
        hi[a] = (ijk[a] + 1) % n[a];
        let fm = h(g.index(lo[0], lo[1], lo[2]));
        let fp = h(g.index(hi[0], hi[1], hi[2]));
        let curv = 2.0 * peak - fm - fp;
        if curv > 0.0 {
            lift += (fp - fm).powi(2) / (8.0 * curv);
        }
    }
    // never move more than the local variation allows
    acc.total = peak + lift.min(0.5 * peak);
    acc
}

/// `|| w^p u ||_{L1}`; `p` may be negative.
pub fn weighted_l1(g: &Grid, wt: &Weights, comps: &[&[f64]], p: i32) -> Measure {
    let mut a = Acc::default();
    for c in comps {
        for (i, &x) in c.iter().enumerate() {
            let v = x.abs() * wt.w[i].powi(p);
            a.total += v;
            if wt.shell[i] {
                a.shell += v;
            }
        }
    }
    let dv = g.cell_volume();
    ratio_measure(Acc { total: a.total * dv, shell: a.shell * dv })
}

/// `(sum_i ||u_i||_{L6}^6)^{1/6}`.
pub fn l6(g: &Grid, wt: &Weights, comps: &[&[f64]]) -> Measure {
    let mut a = Acc::default();
    for c in comps {
        for (i, &x) in c.iter().enumerate() {
            let v = x.powi(6);
            a.total += v;
            if wt.shell[i] {
                a.shell += v;
            }
        }
    }
    let dv = g.cell_volume();
    let value = (a.total * dv).powf(1.0 / 6.0);
    let tail = if a.total > 0.0 { a.shell / a.total } else { 0.0 };
    Measure { value, tail }
}

/// Sum over `|alpha| = l` of `prod k_i^(2 alpha_i)`: complete homogeneous
/// symmetric polynomial of degree `l` in the squared wavenumbers.
fn derivative_weight(k2: [f64; 3], l: usize) -> f64 {
    // h_l(a,b,c) via the recursion on variables
    let mut h = vec![1.0; l + 1];
    for j in 1..=l {
        h[j] = h[j - 1] * k2[0];
    }
    for &x in &k2[1..] {
        for j in 1..=l {
            h[j] += x * h[j - 1];
        }
    }
    h[l]
}

/// `||u||_k = (sum_{l <= k} ||grad^l u||^2)^{1/2}`, summed over components.
pub fn sobolev_norm(g: &Grid, comps: &[&[f64]], k: usize) -> Result<f64> {
    check_budget(g, k)?;
    let mut total = 0.0;
    for c in comps {
        let s = g.fft(c);
        let mut acc = 0.0;
        for (idx, v) in s.iter().enumerate() {
            let m = g.mode(idx);
            let k2 = [m.k[0] * m.k[0], m.k[1] * m.k[1], m.k[2] * m.k[2]];
            let mut w = 1.0;
            if !m.nyquist {
                for l in 1..=k {
                    w += derivative_weight(k2, l);
                }
            }
            acc += w * v.norm_sqr();
        }
        total += acc;
    }
    Ok((total * g.cell_volume() / g.size() as f64).sqrt())
}

/// `sum_i ||d_i u||_k^2` over components: the squared `H^k` norm of the gradient.
pub fn gradient_sobolev_sq(g: &Grid, comps: &[&[f64]], k: usize) -> Result<f64> {
    check_budget(g, k + 1)?;
    let mut total = 0.0;
    for c in comps {
        let s = g.fft(c);
        for (idx, v) in s.iter().enumerate() {
            let m = g.mode(idx);
            if m.nyquist {
                continue;
            }
            let k2 = [m.k[0] * m.k[0], m.k[1] * m.k[1], m.k[2] * m.k[2]];
            let mut w = 1.0;
            for l in 1..=k {
                w += derivative_weight(k2, l);
            }
            total += m.k2() * w * v.norm_sqr();
        }
    }
    Ok(total * g.cell_volume() / g.size() as f64)
}

pub fn sobolev_scalar(g: &Grid, f: &[f64], k: usize) -> Result<f64> {
    sobolev_norm(g, &[f], k)
}

pub fn sobolev_vec(g: &Grid, v: &VectorField, k: usize) -> Result<f64> {
    sobolev_norm(g, &[&v[0], &v[1], &v[2]], k)
}

/// `||(sigma, v, theta)||_{j,k,l} = ||sigma||_j + ||v||_k + ||theta||_l`.
pub fn triple_norm(g: &Grid, sigma: &[f64], v: &VectorField, theta: &[f64], j: usize, k: usize, l: usize) -> Result<f64> {
    Ok(sobolev_scalar(g, sigma, j)? + sobolev_vec(g, v, k)? + sobolev_scalar(g, theta, l)?)
}

/// The energy-space quantity `||sigma||_j^2 + ||v||_k^2 + ||theta||_l^2`.
pub fn triple_norm_sq(g: &Grid, sigma: &[f64], v: &VectorField, theta: &[f64], j: usize, k: usize, l: usize) -> Result<f64> {
    Ok(sobolev_scalar(g, sigma, j)?.powi(2) + sobolev_vec(g, v, k)?.powi(2) + sobolev_scalar(g, theta, l)?.powi(2))
}

/// `||u||_{J hat}`: L6 plus the weighted sup norms of u, grad u, grad^2 u.
pub fn norm_jhat(g: &Grid, wt: &Weights, comps: &[&[f64]]) -> Result<Measure> {
    Ok(l6(g, wt, comps)
        .plus(weighted_linf(g, wt, comps, &[0], 1)?)
        .plus(weighted_linf(g, wt, comps, &[1], 2)?)
        .plus(weighted_linf(g, wt, comps, &[2], 2)?))
}

pub fn norm_i(g: &Grid, wt: &Weights, sigma: &[f64], k: usize) -> Result<Measure> {
    check_budget(g, k + 2)?;
    let l2: Vec<(usize, i32)> =
        (1..=k).flat_map(|nu| (0..3).map(move |j| (nu + j, nu as i32))).collect();
    let st = Stats::compute(g, wt, &[sigma], &l2)?;
    let mut m = l6(g, wt, &[sigma]);
    for nu in 1..=k {
        let p = nu as i32;
        m = m.plus(st.l2(&[(nu, p), (nu + 1, p), (nu + 2, p)]));
    }
    Ok(m.plus(weighted_linf(g, wt, &[sigma], &[0], 2)?)
        .plus(weighted_linf(g, wt, &[sigma], &[1], 2)?))
}

pub fn norm_j(g: &Grid, wt: &Weights, v: &VectorField, k: usize) -> Result<Measure> {
    let comps = [&v[0][..], &v[1][..], &v[2][..]];
    check_budget(g, k.max(2))?;
    let l2: Vec<(usize, i32)> = (1..=k).map(|nu| (nu, nu as i32 - 1)).collect();
    let st = Stats::compute(g, wt, &comps, &l2)?;
    let mut m = norm_jhat(g, wt, &comps)?;
    for nu in 1..=k {
        m = m.plus(st.l2(&[(nu, nu as i32 - 1)]));
    }
    Ok(m)
}

pub fn norm_n(g: &Grid, wt: &Weights, theta: &[f64], k: usize) -> Result<Measure> {
    check_budget(g, (k + 1).max(2))?;
    let l2: Vec<(usize, i32)> =
        (1..=k).flat_map(|nu| [(nu, nu as i32 - 1), (nu + 1, nu as i32 - 1)]).collect();
    let st = Stats::compute(g, wt, &[theta], &l2)?;
    let mut m = norm_jhat(g, wt, &[theta])?;
    for nu in 1..=k {
        let p = nu as i32 - 1;
        m = m.plus(st.l2(&[(nu, p), (nu + 1, p)]));
    }
    Ok(m)
}

/// `Lambda^{j,k,l} = I^j(sigma) + J^k(v) + N^l(theta)`.
pub fn norm_lambda(
    g: &Grid,
    wt: &Weights,
    sigma: &[f64],
    v: &VectorField,
    theta: &[f64],
    jkl: [usize; 3],
) -> Result<Measure> {
    Ok(norm_i(g, wt, sigma, jkl[0])?
        .plus(norm_j(g, wt, v, jkl[1])?)
        .plus(norm_n(g, wt, theta, jkl[2])?))
}

/// Data in divergence form, `U = div U1 + U2`, listed by components.
pub struct Decomposed<'a> {
    pub u: Vec<&'a [f64]>,
    pub u1: Vec<&'a [f64]>,
    pub u2: Vec<&'a [f64]>,
}

/// The forcing norm `||U||_L`.
pub fn norm_l_script(g: &Grid, wt: &Weights, d: &Decomposed) -> Result<Measure> {
    let l2: Vec<(usize, i32)> = (1..=3).map(|nu| (nu, nu as i32 + 1)).collect();
    let st = Stats::compute(g, wt, &d.u, &l2)?;
    let mut m = Measure::ZERO;
    for nu in 1..=3 {
        m = m.plus(st.l2(&[(nu, nu as i32 + 1)]));
    }
    Ok(m.plus(weighted_linf(g, wt, &d.u, &[0, 1], 3)?)
        .plus(weighted_linf(g, wt, &d.u1, &[0], 2)?)
        .plus(weighted_l1(g, wt, &d.u2, 0)))
}

#[derive(Clone, Debug, Serialize)]
pub struct DotVerdict {
    /// `||w^3 V1||_inf + ||w^-1 V2||_L1`
    pub size: f64,
    pub residual: f64,
    pub member: bool,
}

/// Checks `div v = div V1 + V2` and the smallness of the witnesses.
pub fn check_dot_lambda(
    g: &Grid,
    wt: &Weights,
    v: &VectorField,
    v1: &VectorField,
    v2: &[f64],
    eps: f64,
) -> Result<DotVerdict> {
    let dv = spectral::div(g, v);
    let d1 = spectral::div(g, v1);
    let r: ScalarField = dv.iter().zip(&d1).zip(v2).map(|((a, b), c)| a - b - c).collect();
    let residual = (r.iter().map(|x| x * x).sum::<f64>() * g.cell_volume()).sqrt();
    let scale = (dv.iter().map(|x| x * x).sum::<f64>() * g.cell_volume()).sqrt().max(1.0);
    if residual >= 1e-10 * scale {
        return Err(NskError::DecompositionMismatch { residual });
    }
    let size = weighted_linf(g, wt, &[&v1[0], &v1[1], &v1[2]], &[0], 3)?.value
        + weighted_l1(g, wt, &[v2], -1).value;
    Ok(DotVerdict { size, residual, member: size <= eps })
}

/// Flat name -> value map; every weighted entry also gets `<name>_tail`.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
#[serde(transparent)]
pub struct NormReport {
    pub entries: BTreeMap<String, f64>,
}

impl NormReport {
    pub fn put(&mut self, name: &str, m: Measure) {
        self.entries.insert(name.to_string(), m.value);
        self.entries.insert(format!("{name}_tail"), m.tail);
    }

    pub fn set(&mut self, name: &str, v: f64) {
        self.entries.insert(name.to_string(), v);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.get(name).copied()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("maps of floats serialize")
    }
}

/// Norm summary of a stationary triple.
pub fn state_report(g: &Grid, sigma: &[f64], v: &VectorField, theta: &[f64]) -> Result<NormReport> {
    let wt = Weights::new(g);
    let mut r = NormReport::default();
    let i4 = norm_i(g, &wt, sigma, 4)?;
    let j5 = norm_j(g, &wt, v, 5)?;
    let n5 = norm_n(g, &wt, theta, 5)?;
    r.put("I4", i4);
    r.put("J5", j5);
    r.put("N5", n5);
    r.put("Lambda_455", i4.plus(j5).plus(n5));
    r.set("H_433", triple_norm(g, sigma, v, theta, 4, 3, 3)?);
    r.put("L6_sigma", l6(g, &wt, &[sigma]));
    for k in 0..=g.derivative_budget().min(6) {
        r.set(&format!("H{k}_sigma"), sobolev_scalar(g, sigma, k)?);
        r.set(&format!("H{k}_v"), sobolev_vec(g, v, k)?);
        r.set(&format!("H{k}_theta"), sobolev_scalar(g, theta, k)?);
    }
    Ok(r)
}

/// `F^{5,5,5} = N^5(rho* - rho bar) + J^5(v*) + N^5(theta* - theta bar)`.
pub fn norm_f555(
    g: &Grid,
    wt: &Weights,
    sigma_star: &[f64],
    v_star: &VectorField,
    theta_star: &[f64],
) -> Result<Measure> {
    Ok(norm_n(g, wt, sigma_star, 5)?
        .plus(norm_j(g, wt, v_star, 5)?)
        .plus(norm_n(g, wt, theta_star, 5)?))
}

/// `max |u|` over all components; used for time series.
pub fn linf_plain(comps: &[&[f64]]) -> f64 {
    comps.iter().map(|c| field::max_abs(c)).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn torus(n: usize) -> Grid {
        Grid::cubic(n, 2.0 * PI).unwrap()
    }

    #[test]
    fn sine_l2_norm_is_analytic() {
        let g = torus(16);
        let f = g.sample(|x| x[0].sin());
        let exact = ((2.0 * PI).powi(3) / 2.0).sqrt();
        assert!((sobolev_scalar(&g, &f, 0).unwrap() - exact).abs() < 1e-12 * exact);
        let h1 = sobolev_scalar(&g, &f, 1).unwrap();
        assert!((h1 * h1 - 2.0 * exact * exact).abs() < 1e-10 * exact * exact);
    }

    #[test]
    fn derivative_weight_counts_each_multi_index_once() {
        // |alpha| = 2 in 3-d: six multi-indices
        assert_eq!(derivative_weight([1.0, 1.0, 1.0], 2), 6.0);
        assert_eq!(derivative_weight([1.0, 1.0, 1.0], 3), 10.0);
        assert_eq!(derivative_weight([2.0, 0.0, 0.0], 3), 8.0);
    }

    #[test]
    fn spectral_and_physical_derivative_norms_agree() {
        let g = torus(16);
        let f = random::band_limited(&g, &mut random::rng(5, 0), 3, 1.0);
        let wt = Weights::new(&g);
        for k in 0..=3 {
            let direct = weighted_l2(&g, &wt, &[&f], k, 0).unwrap().value;
            let lo = if k == 0 { 0.0 } else { sobolev_scalar(&g, &f, k - 1).unwrap().powi(2) };
            let spec = (sobolev_scalar(&g, &f, k).unwrap().powi(2) - lo).sqrt();
            assert!((direct - spec).abs() < 1e-10 * spec, "order {k}");
        }
    }

    #[test]
    fn zero_fields_have_zero_norms() {
        let g = Grid::cubic(32, 16.0 * PI).unwrap();
        let wt = Weights::new(&g);
        let z = field::zeros(g.size());
        let zv = field::zeros_vec(g.size());
        assert_eq!(norm_lambda(&g, &wt, &z, &zv, &z, [4, 5, 5]).unwrap().value, 0.0);
        assert_eq!(triple_norm(&g, &z, &zv, &z, 4, 3, 3).unwrap(), 0.0);
        let v = check_dot_lambda(&g, &wt, &zv, &zv, &z, 1e-12).unwrap();
        assert!(v.member);
    }

    #[test]
    fn budget_is_enforced() {
        let g = Grid::cubic(16, 16.0 * PI).unwrap();
        let wt = Weights::new(&g);
        let z = field::zeros(g.size());
        assert!(matches!(
            norm_i(&g, &wt, &z, 4),
            Err(NskError::DerivativeBudgetExceeded { order: 6, budget: 4 })
        ));
        assert!(sobolev_scalar(&g, &z, 5).is_err());
    }

    #[test]
    fn lambda_is_the_sum_of_its_parts_and_halves_under_scaling() {
        let g = Grid::cubic(32, 16.0 * PI).unwrap();
        let wt = Weights::new(&g);
        let mut r = random::rng(11, 0);
        let s = random::bumps_mean_free(&g, &mut r, 3, 4.0, 5.0, 1e-3);
        let v = random::bumps_vec(&g, &mut r, 3, 4.0, 5.0, 1e-3);
        let t = random::bumps_mean_free(&g, &mut r, 3, 4.0, 5.0, 1e-3);
        let lam = norm_lambda(&g, &wt, &s, &v, &t, [4, 5, 5]).unwrap().value;
        let parts = norm_i(&g, &wt, &s, 4).unwrap().value
            + norm_j(&g, &wt, &v, 5).unwrap().value
            + norm_n(&g, &wt, &t, 5).unwrap().value;
        assert!((lam - parts).abs() < 1e-14 * lam);
        let half = norm_lambda(
            &g,
            &wt,
            &field::scale(&s, 0.5),
            &field::vec_scale(&v, 0.5),
            &field::scale(&t, 0.5),
            [4, 5, 5],
        )
        .unwrap()
        .value;
        assert!((half - 0.5 * lam).abs() < 1e-12 * lam);
    }

    #[test]
    fn families_grow_with_k() {
        let g = Grid::cubic(32, 16.0 * PI).unwrap();
        let wt = Weights::new(&g);
        let s = random::bumps_mean_free(&g, &mut random::rng(2, 0), 3, 4.0, 5.0, 1.0);
        let v = random::bumps_vec(&g, &mut random::rng(2, 1), 3, 4.0, 5.0, 1.0);
        for k in 1..4 {
            assert!(norm_i(&g, &wt, &s, k).unwrap().value <= norm_i(&g, &wt, &s, k + 1).unwrap().value);
            assert!(norm_j(&g, &wt, &v, k).unwrap().value <= norm_j(&g, &wt, &v, k + 1).unwrap().value);
            assert!(norm_n(&g, &wt, &s, k).unwrap().value <= norm_n(&g, &wt, &s, k + 1).unwrap().value);
            assert!(sobolev_scalar(&g, &s, k).unwrap() <= sobolev_scalar(&g, &s, k + 1).unwrap());
        }
    }

    #[test]
    fn gaussian_sup_terms_are_stable_under_refinement() {
        let l = 16.0 * PI;
        let mut vals = Vec::new();
        for n in [64, 128] {
            let g = Grid::cubic(n, l).unwrap();
            let wt = Weights::new(&g);
            let s = random::gaussian(&g, [0.7, -0.3, 0.2], 4.0);
            let a = weighted_linf(&g, &wt, &[&s], &[0], 2).unwrap().value;
            let b = weighted_linf(&g, &wt, &[&s], &[1], 2).unwrap().value;
            vals.push((a, b));
        }
        let (a0, b0) = vals[0];
        let (a1, b1) = vals[1];
        assert!((a0 - a1).abs() < 1e-3 * a1, "{a0} {a1}");
        assert!((b0 - b1).abs() < 1e-3 * b1, "{b0} {b1}");
    }

    #[test]
    fn tails_are_small_for_localized_fields() {
        let g = Grid::cubic(32, 16.0 * PI).unwrap();
        let wt = Weights::new(&g);
        let s = random::gaussian(&g, [0.0; 3], 4.0);
        let m = norm_i(&g, &wt, &s, 3).unwrap();
        assert!(m.tail < 1e-3, "{}", m.tail);
        let shifted = g.sample(|x| (x[0] * 2.0 * PI / g.len()[0]).sin());
        assert!(weighted_l1(&g, &wt, &[&shifted], 0).tail > 0.1);
    }

    #[test]
    fn decomposition_mismatch_is_reported() {
        let g = Grid::cubic(16, 2.0 * PI).unwrap();
        let wt = Weights::new(&g);
        let v = [g.sample(|x| x[0].sin()), field::zeros(g.size()), field::zeros(g.size())];
        let zero = field::zeros_vec(g.size());
        // div v = cos x1, witnessed fully by V2
        let v2 = g.sample(|x| x[0].cos());
        let ok = check_dot_lambda(&g, &wt, &v, &zero, &v2, 1e6).unwrap();
        assert!(ok.member && ok.residual < 1e-12);
        let bad = check_dot_lambda(&g, &wt, &v, &zero, &field::zeros(g.size()), 1e6);
        assert!(matches!(bad, Err(NskError::DecompositionMismatch { .. })));
    }

    #[test]
    fn report_serializes_flat() {
        let g = Grid::cubic(32, 16.0 * PI).unwrap();
        let z = field::zeros(g.size());
        let zv = field::zeros_vec(g.size());
        let r = state_report(&g, &z, &zv, &z).unwrap();
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for key in ["I4", "J5", "N5", "Lambda_455", "H_433", "I4_tail"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn weighted_norms_are_homogeneous(seed in 0u64..1000, c in -3.0f64..3.0) {
            let g = Grid::cubic(16, 8.0 * PI).unwrap();
            let wt = Weights::new(&g);
            let f = random::band_limited(&g, &mut random::rng(seed, 0), 2, 1.0);
            let cf = field::scale(&f, c);
            let a = norm_n(&g, &wt, &f, 2).unwrap().value;
            let b = norm_n(&g, &wt, &cf, 2).unwrap().value;
            prop_assert!((b - c.abs() * a).abs() <= 1e-12 * a.max(1e-300) * 10.0);
            let s0 = sobolev_scalar(&g, &f, 3).unwrap();
            let s1 = sobolev_scalar(&g, &cf, 3).unwrap();
            prop_assert!((s1 - c.abs() * s0).abs() <= 1e-12 * s0 * 10.0);
        }
    }
}
