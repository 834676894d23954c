//! Stationary solutions by Picard iteration on the linearized problem.
//!
//! The linear problem is
//!
//! ```text
//! div v + a.grad sigma - eps Lap sigma + eps sigma = g
//! -mu Lap v - (mu+mu') grad div v + grad sigma
//!     - kappa g1 grad Lap sigma - kappa g2 grad Lap theta + eps v = f
//! -alpha Lap theta + eps theta = h
//! ```
//!
//! Everything but `a.grad sigma` has constant coefficients and is solved
//! exactly per Fourier mode: a scalar solve for `theta`, a 2x2 block for
//! `(sigma, xi.v)` and a diagonal Stokes solve for the transverse velocity.
//! The advection term is lagged to the right side.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{NskError, Result};
use crate::field::{self, ScalarField, VectorField};
use crate::forcing::{self, EquationResiduals, ForcingData, PressureState};
use crate::grid::{Grid, Mode};
use crate::model::{self, eos_eval, EquationOfState, PhysParams, StationaryCoeffs};
use crate::norms::{self, Weights};
use crate::spectral::{self, KernelSymbol, ZeroModePolicy};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Outer stop: Lambda norm of the update, relative once the iterate's
    /// own Lambda norm exceeds 1.
    pub tol: f64,
    pub max_outer: usize,
    /// Largest forcing budget the outer iteration accepts.
    pub budget_threshold: f64,
    /// Two-thirds truncation of the nonlinear right-hand sides.
    pub dealias: bool,
    pub damping: f64,
    pub inner_tol: f64,
    pub inner_max: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-10,
            max_outer: 100,
            budget_threshold: 1e-2,
            dealias: true,
            damping: 0.5,
            inner_tol: 1e-12,
            inner_max: 200,
        }
    }
}

/// Ratio above which an outer step counts as stalling, and how many in a
/// row end the iteration.
const STALL_RATIO: f64 = 0.95;
const STALL_COUNT: usize = 3;

/// Constant coefficients of the linear operator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearCoeffs {
    pub mu: f64,
    pub mu_prime: f64,
    pub kappa: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub alpha_tilde: f64,
}

impl LinearCoeffs {
    pub fn new(params: &PhysParams, sc: &StationaryCoeffs) -> LinearCoeffs {
        LinearCoeffs {
            mu: params.mu,
            mu_prime: params.mu_prime,
            kappa: params.kappa,
            gamma1: sc.gamma1,
            gamma2: sc.gamma2,
            alpha_tilde: params.alpha_tilde,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LinearSolution {
    pub sigma: ScalarField,
    pub v: VectorField,
    pub vartheta: ScalarField,
    /// The mass right-hand side actually solved, `g - a.grad sigma` after
    /// truncation and mean removal; `div v` equals it to round-off.
    pub mass_rhs: ScalarField,
    pub inner_iterations: usize,
}

const I: C64 = C64::new(0.0, 1.0);
const ZERO: C64 = C64::new(0.0, 0.0);

/// Mode-wise solve of the constant-coefficient block for given `R` (mass),
/// `f` and `theta` spectra.
fn mode_solve(lc: &LinearCoeffs, m: &Mode, eps: f64, r: C64, f: [C64; 3], th: C64) -> (C64, [C64; 3]) {
    if m.is_zero() || m.nyquist {
        return (ZERO, [ZERO; 3]);
    }
    let k2 = m.k2();
    let kk = k2.sqrt();
    let xi = [m.k[0] / kk, m.k[1] / kk, m.k[2] / kk];
    let fpar = f[0] * xi[0] + f[1] * xi[1] + f[2] * xi[2];
    let fpar_eff = fpar - I * (lc.kappa * lc.gamma2 * kk * k2) * th;
    let a = (2.0 * lc.mu + lc.mu_prime) * k2 + eps;
    let b = I * (kk * (1.0 + lc.kappa * lc.gamma1 * k2));
    let c = I * kk;
    let d = eps * (1.0 + k2);
    let det = a * d - b * c;
    let u = (d * fpar_eff - b * r) / det;
    let sigma = (a * r - c * fpar_eff) / det;
    let tr = lc.mu * k2 + eps;
    let v = [0, 1, 2].map(|i| u * xi[i] + (f[i] - fpar * xi[i]) / tr);
    (sigma, v)
}

fn theta_solve(lc: &LinearCoeffs, m: &Mode, eps: f64, h: C64) -> C64 {
    if m.is_zero() || m.nyquist {
        ZERO
    } else {
        h / (lc.alpha_tilde * m.k2() + eps)
    }
}

fn h2_spec(g: &Grid, modes: &[Mode], s: &[C64]) -> f64 {
    let n = g.size() as f64;
    let sum: f64 = modes.iter().zip(s).map(|(m, c)| (1.0 + m.k2()).powi(2) * c.norm_sqr()).sum();
    (sum * g.cell_volume() / n).sqrt()
}

fn project(g: &Grid, s: &mut [C64]) {
    g.apply_in_place(s, |m| if m.is_zero() || m.nyquist { ZERO } else { C64::new(1.0, 0.0) });
}

/// Solves the linear problem. `a = None` means no advection.
#[allow(clippy::too_many_arguments)]
pub fn solve_linearized(
    g: &Grid,
    lc: &LinearCoeffs,
    a: Option<&VectorField>,
    gm: &[f64],
    f: &VectorField,
    h: &[f64],
    eps: f64,
    opts: &SolverOptions,
) -> Result<LinearSolution> {
    if !(eps >= 0.0) {
        return Err(NskError::Config(format!("regularization eps = {eps} must be >= 0")));
    }
    let n = g.size();
    let modes: Vec<Mode> = (0..n).map(|i| g.mode(i)).collect();
    let (f0, f1) = g.fft_pair(&f[0], &f[1]);
    let (f2, hs) = g.fft_pair(&f[2], h);
    let ths: Vec<C64> = modes.iter().zip(&hs).map(|(m, &x)| theta_solve(lc, m, eps, x)).collect();
    let mut gs = g.fft(gm);
    project(g, &mut gs);

    let solve = |rs: &[C64]| -> (Vec<C64>, [Vec<C64>; 3]) {
        let mut sig = vec![ZERO; n];
        let mut vs = [vec![ZERO; n], vec![ZERO; n], vec![ZERO; n]];
        for idx in 0..n {
            let (s, v) = mode_solve(lc, &modes[idx], eps, rs[idx], [f0[idx], f1[idx], f2[idx]], ths[idx]);
            sig[idx] = s;
            for i in 0..3 {
                vs[i][idx] = v[i];
            }
        }
        (sig, vs)
    };

    let a = a.filter(|a| field::vec_max_abs(a) > 0.0);
    let mut rs = gs.clone();
    let mut iters = 1;
    if let Some(a) = a {
        // damped Picard on sigma with the advection lagged
        let lag = |sig: &[C64]| -> Vec<C64> {
            let gr = spectral::grad_spec(g, sig);
            let adv: ScalarField = (0..n).map(|k| a[0][k] * gr[0][k] + a[1][k] * gr[1][k] + a[2][k] * gr[2][k]).collect();
            let mut s = g.fft(&adv);
            if opts.dealias {
                g.dealias_in_place(&mut s);
            }
            let mut r: Vec<C64> = gs.iter().zip(&s).map(|(x, y)| x - y).collect();
            project(g, &mut r);
            r
        };
        let mut sig = solve(&gs).0;
        let first = h2_spec(g, &modes, &sig);
        let mut update = f64::INFINITY;
        while iters < opts.inner_max {
            let r = lag(&sig);
            let next = solve(&r).0;
            let diff: Vec<C64> = next.iter().zip(&sig).map(|(x, y)| x - y).collect();
            update = h2_spec(g, &modes, &diff);
            iters += 1;
            if !update.is_finite() || update > 1e3 * first.max(f64::MIN_POSITIVE) {
                return Err(NskError::InnerLoopDiverged { iterations: iters, update });
            }
            for (s, d) in sig.iter_mut().zip(&diff) {
                *s += opts.damping * d;
            }
            if update < opts.inner_tol {
                break;
            }
        }
        if update >= opts.inner_tol && update >= 1e-8 * h2_spec(g, &modes, &sig) {
            return Err(NskError::InnerLoopDiverged { iterations: iters, update });
        }
        rs = lag(&sig);
    }
    let (sig, vs) = solve(&rs);
    let mut out = g.ifft_many(&[sig, vs[0].clone(), vs[1].clone(), vs[2].clone(), ths, rs]).into_iter();
    let sigma = out.next().unwrap();
    let v = [out.next().unwrap(), out.next().unwrap(), out.next().unwrap()];
    let vartheta = out.next().unwrap();
    let mass_rhs = out.next().unwrap();
    Ok(LinearSolution { sigma, v, vartheta, mass_rhs, inner_iterations: iters })
}

/// Relative residual of the full linear system at a candidate solution,
/// each equation measured against the norm of its data.
#[allow(clippy::too_many_arguments)]
pub fn linear_residual(
    g: &Grid,
    lc: &LinearCoeffs,
    a: Option<&VectorField>,
    gm: &[f64],
    f: &VectorField,
    h: &[f64],
    eps: f64,
    s: &LinearSolution,
) -> [f64; 3] {
    let n = g.size();
    // residuals live in the solver's range: no mean, no Nyquist modes
    let l2 = |x: &[f64]| (spectral::drop_nyquist(g, x).iter().map(|y| y * y).sum::<f64>() * g.cell_volume()).sqrt();
    let rel = |r: f64, d: f64| if d > 0.0 { r / d } else { r };

    let mut mass = spectral::div(g, &s.v);
    if let Some(a) = a {
        field::axpy(&mut mass, 1.0, &spectral::advect(g, a, &s.sigma));
    }
    let ls = spectral::laplacian(g, &s.sigma);
    for k in 0..n {
        mass[k] += eps * (s.sigma[k] - ls[k]) - gm[k];
    }
    field::remove_mean(&mut mass);

    let lap = spectral::vector_laplacian(g, &s.v);
    let gd = spectral::grad_div(g, &s.v);
    let gs = spectral::grad(g, &s.sigma);
    let gls = spectral::grad_laplacian(g, &s.sigma);
    let glt = spectral::grad_laplacian(g, &s.vartheta);
    let mut mom2 = 0.0;
    let mut fn2 = 0.0;
    for i in 0..3 {
        let mut r: ScalarField = (0..n)
            .map(|k| {
                -lc.mu * lap[i][k] - (lc.mu + lc.mu_prime) * gd[i][k] + gs[i][k]
                    - lc.kappa * lc.gamma1 * gls[i][k]
                    - lc.kappa * lc.gamma2 * glt[i][k]
                    + eps * s.v[i][k]
                    - f[i][k]
            })
            .collect();
        field::remove_mean(&mut r);
        mom2 += l2(&r).powi(2);
        fn2 += l2(&f[i]).powi(2);
    }
    let lt = spectral::laplacian(g, &s.vartheta);
    let mut en: ScalarField = (0..n).map(|k| -lc.alpha_tilde * lt[k] + eps * s.vartheta[k] - h[k]).collect();
    field::remove_mean(&mut en);
    [rel(l2(&mass), l2(gm)), rel(mom2.sqrt(), fn2.sqrt()), rel(l2(&en), l2(h))]
}

/// The same zero-advection solve assembled from convolution kernels:
/// `theta = E0 * (-h/alpha)`, `v = w + grad p` with `w` the Stokeslet
/// solve and `p = E0 * g`, and `sigma` from the Bessel potential of
/// `E0 * div f + kappa g2 Lap theta + (2 mu + mu') Lap p`.
pub fn solve_representation(
    g: &Grid,
    lc: &LinearCoeffs,
    gm: &[f64],
    f: &VectorField,
    h: &[f64],
) -> Result<(ScalarField, VectorField, ScalarField)> {
    let newton = |x: &[f64]| spectral::apply_symbol(g, x, KernelSymbol::Newtonian, ZeroModePolicy::Error);
    let vartheta = newton(&field::scale(h, -1.0 / lc.alpha_tilde))?;
    let w = spectral::oseen_solve(g, f, lc.mu)?;
    let p = newton(gm)?;
    let v = field::vec_add(&w, &spectral::grad(g, &p));
    let phi = newton(&spectral::div(g, f))?;
    let lt = spectral::laplacian(g, &vartheta);
    let lp = spectral::laplacian(g, &p);
    let src: ScalarField = (0..g.size())
        .map(|k| phi[k] + lc.kappa * lc.gamma2 * lt[k] + (2.0 * lc.mu + lc.mu_prime) * lp[k])
        .collect();
    let sigma = spectral::apply_symbol(g, &src, KernelSymbol::Bessel { c: lc.kappa * lc.gamma1 }, ZeroModePolicy::Drop)?;
    Ok((sigma, v, vartheta))
}

/// A stationary iterate with its divergence witnesses,
/// `div v = div V1 + V2`.
#[derive(Clone, Debug, PartialEq)]
pub struct StationaryState {
    pub sigma: ScalarField,
    pub v: VectorField,
    pub vartheta: ScalarField,
    pub rho: ScalarField,
    pub v1: VectorField,
    pub v2: ScalarField,
}

impl StationaryState {
    pub fn pressure_state(&self) -> PressureState {
        PressureState { sigma: self.sigma.clone(), v: self.v.clone(), vartheta: self.vartheta.clone() }
    }
}

/// One stationary problem: grid, model and solver options.
pub struct Problem<'a> {
    pub grid: &'a Grid,
    pub params: PhysParams,
    pub eos: &'a dyn EquationOfState,
    pub coeffs: StationaryCoeffs,
    pub lin: LinearCoeffs,
    pub opts: SolverOptions,
    pub weights: Weights,
}

impl<'a> Problem<'a> {
    pub fn new(grid: &'a Grid, params: PhysParams, eos: &'a dyn EquationOfState, opts: SolverOptions) -> Result<Self> {
        params.validate()?;
        let coeffs = model::stationary_coeffs(&params, eos)?;
        let lin = LinearCoeffs::new(&params, &coeffs);
        Ok(Problem { grid, params, eos, coeffs, lin, opts, weights: Weights::new(grid) })
    }

    pub fn zero_state(&self) -> StationaryState {
        let n = self.grid.size();
        StationaryState {
            sigma: field::zeros(n),
            v: field::zeros_vec(n),
            vartheta: field::zeros(n),
            rho: field::constant(n, self.params.rho_bar),
            v1: field::zeros_vec(n),
            v2: field::zeros(n),
        }
    }

    /// Wraps a pressure-variable triple as a trial: `V1 = 0`, `V2 = div v`.
    pub fn trial(&self, s: &PressureState) -> Result<StationaryState> {
        let (rho, _, _) = forcing::primitive(&self.params, self.eos, s)?;
        Ok(StationaryState {
            sigma: s.sigma.clone(),
            v: s.v.clone(),
            vartheta: s.vartheta.clone(),
            rho,
            v1: field::zeros_vec(self.grid.size()),
            v2: spectral::div(self.grid, &s.v),
        })
    }

    /// Lambda^{4,5,5} norm of a difference of two iterates.
    pub fn lambda_distance(&self, x: &StationaryState, y: &StationaryState) -> Result<f64> {
        let g = self.grid;
        let ds = field::sub(&x.sigma, &y.sigma);
        let dv = field::vec_sub(&x.v, &y.v);
        let dt = field::sub(&x.vartheta, &y.vartheta);
        Ok(norms::norm_lambda(g, &self.weights, &ds, &dv, &dt, [4, 5, 5])?.value)
    }

    pub fn lambda_norm(&self, x: &StationaryState) -> Result<f64> {
        Ok(norms::norm_lambda(self.grid, &self.weights, &x.sigma, &x.v, &x.vartheta, [4, 5, 5])?.value)
    }

    fn witness_distance(&self, x: &StationaryState, y: &StationaryState) -> Result<f64> {
        let g = self.grid;
        let d1 = field::vec_sub(&x.v1, &y.v1);
        let d2 = field::sub(&x.v2, &y.v2);
        Ok(norms::weighted_linf(g, &self.weights, &[&d1[0], &d1[1], &d1[2]], &[0], 3)?.value
            + norms::weighted_l1(g, &self.weights, &[&d2], -1).value)
    }
}

/// Right-hand side of one outer step, frozen at the trial.
#[derive(Clone, Debug)]
pub struct TRhs {
    pub a: VectorField,
    pub g: ScalarField,
    pub f: VectorField,
    pub h: ScalarField,
}

/// Truncates `x - lin` to two thirds and adds `lin` back, so that only the
/// nonlinear part of a right-hand side is dealiased.
fn dealias_remainder(g: &Grid, x: &mut [f64], lin: &[f64]) {
    let rem = field::sub(x, lin);
    let d = spectral::dealias(g, &rem);
    for k in 0..x.len() {
        x[k] = lin[k] + d[k];
    }
}

/// Coefficient field and right-hand sides of the linear problem at a trial.
///
/// Mass: `g = -(rho_theta/rho) v.grad theta + G/rho`, with advection
/// coefficient `a = (rho_P/rho) v`.
///
/// Momentum: `-rho (v.grad)v + kappa (rho grad Lap rho - g1 grad Lap sigma
/// - g2 grad Lap theta) + rho F - v G`.
///
/// Energy, after eliminating `div v` with the mass balance:
/// `-eta1 v.grad theta - eta2 v.grad sigma + eta3 G + Psi + Phi + H
/// + (|v|^2/2) G - C_V theta G`, where `eta1 = rho C_V + theta rho_theta^2 /
/// (rho rho_P)`.
pub fn assemble_t_rhs(pb: &Problem, trial: &PressureState, fd: &ForcingData) -> Result<TRhs> {
    let g = pb.grid;
    let p = &pb.params;
    let n = g.size();
    let sc = &pb.coeffs;
    let v = &trial.v;

    let mut rho = vec![0.0; n];
    let mut rp = vec![0.0; n];
    let mut rt = vec![0.0; n];
    for k in 0..n {
        let (r, a, b) = eos_eval(pb.eos, p, sc.p_bar + trial.sigma[k], p.theta_bar + trial.vartheta[k])?;
        rho[k] = r;
        rp[k] = a;
        rt[k] = b;
    }
    let a: VectorField = std::array::from_fn(|i| (0..n).map(|k| rp[k] / rho[k] * v[i][k]).collect());
    let drho = forcing::density_perturbation(p, pb.eos, trial);

    let gth = spectral::grad(g, &trial.vartheta);
    let gsi = spectral::grad(g, &trial.sigma);
    let vdt = field::dot(v, &gth);
    let vds = field::dot(v, &gsi);

    let mut gm: ScalarField = (0..n).map(|k| -rt[k] / rho[k] * vdt[k] + fd.g[k] / rho[k]).collect();

    let adv = spectral::advect_vec(g, v, v);
    let glr = spectral::grad_laplacian(g, &drho);
    let gls = spectral::grad_laplacian(g, &trial.sigma);
    let glt = spectral::grad_laplacian(g, &trial.vartheta);
    let mut f: VectorField = std::array::from_fn(|i| {
        (0..n)
            .map(|k| {
                -rho[k] * adv[i][k]
                    + p.kappa * (rho[k] * glr[i][k] - sc.gamma1 * gls[i][k] - sc.gamma2 * glt[i][k])
                    + rho[k] * fd.f[i][k]
                    - v[i][k] * fd.g[k]
            })
            .collect()
    });

    let gv = spectral::grad_vec(g, v);
    let psi = model::dissipation_from_grad(&gv, p);
    let gr = spectral::grad(g, &drho);
    let lr = spectral::laplacian(g, &drho);
    let phi = model::capillary_heating_from(&rho, &gr, &lr, &gv, p.kappa);
    let mut h: ScalarField = (0..n)
        .map(|k| {
            let th = p.theta_bar + trial.vartheta[k];
            let e1 = StationaryCoeffs::eta1_consistent(p.c_v, rho[k], th, rp[k], rt[k]);
            let e2 = th * rt[k] / rho[k];
            let e3 = th * rt[k] / (rho[k] * rp[k]);
            let v2 = v[0][k] * v[0][k] + v[1][k] * v[1][k] + v[2][k] * v[2][k];
            -e1 * vdt[k] - e2 * vds[k] + e3 * fd.g[k] + psi[k] + phi[k] + fd.h[k] + 0.5 * v2 * fd.g[k]
                - p.c_v * th * fd.g[k]
        })
        .collect();

    if pb.opts.dealias {
        // the data enter at the reference state untruncated
        let lin_g = field::scale(&fd.g, 1.0 / p.rho_bar);
        dealias_remainder(g, &mut gm, &lin_g);
        for i in 0..3 {
            let lin_f = field::scale(&fd.f[i], p.rho_bar);
            dealias_remainder(g, &mut f[i], &lin_f);
        }
        let c = sc.eta3_bar - p.c_v * p.theta_bar;
        let lin_h: ScalarField = (0..n).map(|k| fd.h[k] + c * fd.g[k]).collect();
        dealias_remainder(g, &mut h, &lin_h);
    }
    field::remove_mean(&mut gm);
    for c in f.iter_mut() {
        field::remove_mean(c);
    }
    field::remove_mean(&mut h);
    Ok(TRhs { a, g: gm, f, h })
}

/// One outer step `T(trial)`.
pub fn apply_t(pb: &Problem, trial: &PressureState, fd: &ForcingData) -> Result<StationaryState> {
    let g = pb.grid;
    let rhs = assemble_t_rhs(pb, trial, fd)?;
    let sol = solve_linearized(g, &pb.lin, Some(&rhs.a), &rhs.g, &rhs.f, &rhs.h, 0.0, &pb.opts)?;
    let out = PressureState { sigma: sol.sigma, v: sol.v, vartheta: sol.vartheta };
    let (rho, _, _) = forcing::primitive(&pb.params, pb.eos, &out)?;
    let asig = field::vec_mul(&out.sigma, &rhs.a);
    let v1 = field::vec_scale(&asig, -1.0);
    let v2 = field::add(&sol.mass_rhs, &spectral::div(g, &asig));
    Ok(StationaryState { sigma: out.sigma, v: out.v, vartheta: out.vartheta, rho, v1, v2 })
}

/// Empirical contraction of `T` between two trials, measured in the
/// Lambda norm plus the witness terms. Identical trials give 0.
pub fn contraction_factor(pb: &Problem, t1: &StationaryState, t2: &StationaryState, fd: &ForcingData) -> Result<f64> {
    if t1 == t2 {
        return Ok(0.0);
    }
    let a = apply_t(pb, &t1.pressure_state(), fd)?;
    let b = apply_t(pb, &t2.pressure_state(), fd)?;
    let num = pb.lambda_distance(&a, &b)? + pb.witness_distance(&a, &b)?;
    let den = pb.lambda_distance(t1, t2)? + pb.witness_distance(t1, t2)?;
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IterRecord {
    pub iter: usize,
    pub lambda_update: f64,
    /// Ratio of consecutive updates; NaN on the first step.
    pub contraction_ratio: f64,
    pub residual_mass: f64,
    pub residual_momentum: f64,
    pub residual_energy: f64,
}

pub const HISTORY_COLUMNS: [&str; 6] =
    ["iter", "lambda_update", "contraction_ratio", "residual_mass", "residual_momentum", "residual_energy"];

/// Iteration history as CSV; floats use the shortest round-trip form.
pub fn history_csv(rows: &[IterRecord]) -> String {
    let mut s = HISTORY_COLUMNS.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.iter, r.lambda_update, r.contraction_ratio, r.residual_mass, r.residual_momentum, r.residual_energy
        ));
    }
    s
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub converged: bool,
    pub iterations: usize,
    pub history: Vec<IterRecord>,
    /// Residuals of the full stationary equations, recomputed on the final state.
    pub residuals: EquationResiduals,
    pub lambda_norm: f64,
    pub decomposition_residual: f64,
    pub budget: f64,
    pub budget_threshold: f64,
    pub budget_usage: f64,
}

impl ConvergenceReport {
    pub fn updates(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.lambda_update).collect()
    }

    pub fn ratios(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.contraction_ratio).collect()
    }
}

/// Picard iteration from the zero state. Fails with `BudgetExceeded` when
/// the forcing is too large to expect contraction and `NotContracting`
/// when three consecutive update ratios exceed 0.95.
pub fn run_fixed_point(pb: &Problem, fd: &ForcingData) -> Result<(StationaryState, ConvergenceReport)> {
    let g = pb.grid;
    let budget = forcing::forcing_smallness(g, fd)?.budget.value;
    if budget > pb.opts.budget_threshold {
        return Err(NskError::BudgetExceeded { budget, threshold: pb.opts.budget_threshold });
    }
    let mut state = pb.zero_state();
    let mut history = Vec::new();
    let mut prev = f64::NAN;
    let mut stalls = 0;
    let mut converged = false;
    for iter in 1..=pb.opts.max_outer {
        let next = apply_t(pb, &state.pressure_state(), fd)?;
        let update = pb.lambda_distance(&next, &state)?;
        let ratio = update / prev;
        let res = forcing::stationary_residuals(g, &pb.params, pb.eos, &next.pressure_state(), fd)?;
        history.push(IterRecord {
            iter,
            lambda_update: update,
            contraction_ratio: ratio,
            residual_mass: res.mass,
            residual_momentum: res.momentum,
            residual_energy: res.energy,
        });
        // the weighted norm amplifies round-off, so large iterates are
        // judged relative to their own size
        let scale = pb.lambda_norm(&next)?.max(1.0);
        state = next;
        if !update.is_finite() {
            return Err(NskError::NotContracting { ratios: history.iter().map(|r| r.contraction_ratio).collect() });
        }
        if update < pb.opts.tol * scale {
            converged = true;
            break;
        }
        stalls = if ratio > STALL_RATIO { stalls + 1 } else { 0 };
        if stalls >= STALL_COUNT {
            let n = history.len();
            return Err(NskError::NotContracting {
                ratios: history[n - STALL_COUNT..].iter().map(|r| r.contraction_ratio).collect(),
            });
        }
        prev = update;
    }
    let residuals = forcing::stationary_residuals(g, &pb.params, pb.eos, &state.pressure_state(), fd)?;
    let dv = spectral::div(g, &state.v);
    let d1 = spectral::div(g, &state.v1);
    let mism: ScalarField = (0..g.size()).map(|k| dv[k] - d1[k] - state.v2[k]).collect();
    let report = ConvergenceReport {
        converged,
        iterations: history.len(),
        history,
        residuals,
        lambda_norm: pb.lambda_norm(&state)?,
        decomposition_residual: field::max_abs(&mism),
        budget,
        budget_threshold: pb.opts.budget_threshold,
        budget_usage: budget / pb.opts.budget_threshold,
    };
    Ok((state, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forcing::{build_forcing, mms_stationary, ForcingSpec};
    use crate::model::Eos;
    use crate::random;
    use std::f64::consts::PI;

    const IDEAL: Eos = Eos::IdealGas { r: 1.0 };

    fn lc() -> LinearCoeffs {
        let p = PhysParams::default();
        LinearCoeffs::new(&p, &model::stationary_coeffs(&p, &IDEAL).unwrap())
    }

    fn box2pi(n: usize) -> Grid {
        Grid::cubic(n, 2.0 * PI).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn zero_data_give_zero_solution() {
        let g = box2pi(8);
        let n = g.size();
        let s = solve_linearized(&g, &lc(), None, &field::zeros(n), &field::zeros_vec(n), &field::zeros(n), 0.0, &SolverOptions::default())
            .unwrap();
        assert_eq!(field::max_abs(&s.sigma), 0.0);
        assert_eq!(field::vec_max_abs(&s.v), 0.0);
        assert_eq!(field::max_abs(&s.vartheta), 0.0);
    }

    #[test]
    fn heat_mode_drives_pressure_through_capillarity() {
        let g = box2pi(16);
        let n = g.size();
        let l = lc();
        assert_eq!((l.gamma1, l.gamma2), (1.0, -1.0));
        let sin = g.sample(|x| x[0].sin());
        let h = field::scale(&sin, l.alpha_tilde);
        let s = solve_linearized(&g, &l, None, &field::zeros(n), &field::zeros_vec(n), &h, 0.0, &SolverOptions::default()).unwrap();
        assert!(close(&s.vartheta, &sin, 1e-13));
        assert!(close(&s.sigma, &field::scale(&sin, 0.5), 1e-13));
        assert!(field::vec_max_abs(&s.v) < 1e-14);
    }

    #[test]
    fn transverse_force_gives_shear_flow() {
        let g = box2pi(16);
        let n = g.size();
        let c = g.sample(|x| x[1].cos());
        let f = [c.clone(), field::zeros(n), field::zeros(n)];
        let s = solve_linearized(&g, &lc(), None, &field::zeros(n), &f, &field::zeros(n), 0.0, &SolverOptions::default()).unwrap();
        assert!(close(&s.v[0], &c, 1e-13));
        assert!(field::max_abs(&s.v[1]) < 1e-14 && field::max_abs(&s.v[2]) < 1e-14);
        assert!(field::max_abs(&s.sigma) < 1e-14 && field::max_abs(&s.vartheta) < 1e-14);
    }

    fn random_data(g: &Grid, seed: u64) -> (ScalarField, VectorField, ScalarField) {
        let mut r = random::rng(seed, 0);
        (
            random::band_limited(g, &mut r, 3, 1.0),
            random::band_limited_vec(g, &mut r, 3, 1.0),
            random::band_limited(g, &mut r, 3, 1.0),
        )
    }

    #[test]
    fn modewise_solve_satisfies_the_system() {
        let g = Grid::cubic(16, 8.0).unwrap();
        let (gm, f, h) = random_data(&g, 4);
        let a = field::vec_scale(&random::band_limited_vec(&g, &mut random::rng(4, 1), 2, 1.0), 0.05);
        for eps in [0.0, 1e-2] {
            let s = solve_linearized(&g, &lc(), Some(&a), &gm, &f, &h, eps, &SolverOptions { dealias: false, ..Default::default() })
                .unwrap();
            assert!(s.inner_iterations > 1);
            let r = linear_residual(&g, &lc(), Some(&a), &gm, &f, &h, eps, &s);
            assert!(r.iter().all(|x| *x < 1e-9), "{r:?} at eps {eps}");
        }
    }

    #[test]
    fn large_advection_is_refused() {
        let g = Grid::cubic(16, 8.0).unwrap();
        let (gm, f, h) = random_data(&g, 5);
        let a = field::vec_scale(&random::band_limited_vec(&g, &mut random::rng(5, 1), 2, 1.0), 50.0);
        let e = solve_linearized(&g, &lc(), Some(&a), &gm, &f, &h, 0.0, &SolverOptions::default()).unwrap_err();
        assert_eq!(e.kind(), "InnerLoopDiverged");
    }

    #[test]
    fn representation_path_matches_modewise_solve() {
        let g = Grid::cubic(16, 8.0).unwrap();
        for seed in 0..3 {
            let (gm, f, h) = random_data(&g, seed);
            let s = solve_linearized(&g, &lc(), None, &gm, &f, &h, 0.0, &SolverOptions::default()).unwrap();
            let (sig, v, th) = solve_representation(&g, &lc(), &gm, &f, &h).unwrap();
            assert!(close(&s.sigma, &sig, 1e-12));
            assert!(close(&s.vartheta, &th, 1e-12));
            for i in 0..3 {
                assert!(close(&s.v[i], &v[i], 1e-12));
            }
        }
    }

    #[test]
    fn regularized_solve_approaches_the_limit() {
        let g = Grid::cubic(16, 8.0).unwrap();
        let (gm, f, h) = random_data(&g, 9);
        let o = SolverOptions::default();
        let s0 = solve_linearized(&g, &lc(), None, &gm, &f, &h, 0.0, &o).unwrap();
        let mut last = f64::INFINITY;
        for eps in [1e-2, 1e-3, 1e-4] {
            let s = solve_linearized(&g, &lc(), None, &gm, &f, &h, eps, &o).unwrap();
            let d = field::max_abs(&field::sub(&s.sigma, &s0.sigma));
            assert!(d < last);
            last = d;
        }
    }

    fn grid32() -> Grid {
        Grid::cubic(32, 16.0 * PI).unwrap()
    }

    #[test]
    fn zero_trial_passes_data_through() {
        let g = grid32();
        let pb = Problem::new(&g, PhysParams::default(), &IDEAL, SolverOptions::default()).unwrap();
        let fd = build_forcing(&g, &ForcingSpec::default(), 1).unwrap();
        let r = assemble_t_rhs(&pb, &PressureState::zeros(g.size()), &fd).unwrap();
        let sc = pb.coeffs;
        let p = pb.params;
        assert_eq!(field::vec_max_abs(&r.a), 0.0);
        let c = sc.eta3_bar - p.c_v * p.theta_bar;
        let mut want_h: ScalarField = (0..g.size()).map(|k| fd.h[k] + c * fd.g[k]).collect();
        field::remove_mean(&mut want_h);
        assert!(close(&r.g, &field::scale(&fd.g, 1.0 / p.rho_bar), 1e-18));
        assert!(close(&r.h, &want_h, 1e-16));
        for i in 0..3 {
            assert!(close(&r.f[i], &field::scale(&fd.f[i], p.rho_bar), 1e-18));
        }
        let zero = assemble_t_rhs(&pb, &PressureState::zeros(g.size()), &ForcingData::zeros(g.size())).unwrap();
        assert_eq!(field::max_abs(&zero.g) + field::vec_max_abs(&zero.f) + field::max_abs(&zero.h), 0.0);
    }

    /// Smooth mean-free triple inside the solver's range (no Nyquist modes).
    fn exact_state(g: &Grid, seed: u64, amp: f64, width: f64) -> PressureState {
        let mut r = random::rng(seed, 7);
        let dn = |f: ScalarField| spectral::drop_nyquist(g, &f);
        PressureState {
            sigma: dn(random::bumps_mean_free(g, &mut r, 3, width, 3.0, amp)),
            v: random::bumps_vec(g, &mut r, 3, width, 3.0, amp).map(dn),
            vartheta: dn(random::bumps_mean_free(g, &mut r, 3, width, 3.0, amp)),
        }
    }

    fn rel_sup(a: &StationaryState, b: &StationaryState) -> f64 {
        let ds = field::max_abs(&field::sub(&a.sigma, &b.sigma)) / field::max_abs(&b.sigma);
        let dv = field::vec_max_abs(&field::vec_sub(&a.v, &b.v)) / field::vec_max_abs(&b.v);
        let dt = field::max_abs(&field::sub(&a.vartheta, &b.vartheta)) / field::max_abs(&b.vartheta);
        ds.max(dv).max(dt)
    }

    #[test]
    fn resting_trial_keeps_only_capillary_and_force() {
        let g = grid32();
        let pb = Problem::new(&g, PhysParams::default(), &IDEAL, SolverOptions { dealias: false, ..Default::default() }).unwrap();
        let mut t = exact_state(&g, 3, 1e-2, 5.0);
        t.v = field::zeros_vec(g.size());
        let fd = build_forcing(&g, &ForcingSpec::default(), 2).unwrap();
        let r = assemble_t_rhs(&pb, &t, &fd).unwrap();
        assert_eq!(field::vec_max_abs(&r.a), 0.0);
        // displayed form: product-rule capillary differences
        let (rho, _, _) = forcing::primitive(&pb.params, &IDEAL, &t).unwrap();
        let n = g.size();
        let mut rp = vec![0.0; n];
        let mut rt = vec![0.0; n];
        for k in 0..n {
            let (_, a, b) = eos_eval(&IDEAL, &pb.params, pb.coeffs.p_bar + t.sigma[k], 1.0 + t.vartheta[k]).unwrap();
            rp[k] = a;
            rt[k] = b;
        }
        let kappa = pb.params.kappa;
        let sc = pb.coeffs;
        let mut want = field::zeros_vec(n);
        for (x, xp, gam) in [(&t.sigma, &rp, sc.gamma1), (&t.vartheta, &rt, sc.gamma2)] {
            let gx = spectral::grad(&g, x);
            let hx = spectral::hessian(&g, x);
            let lx = spectral::laplacian(&g, x);
            let gp = spectral::grad(&g, xp);
            let hp = spectral::hessian(&g, xp);
            let glx = spectral::grad_laplacian(&g, x);
            for i in 0..3 {
                for k in 0..n {
                    let mut s = gp[i][k] * lx[k];
                    for j in 0..3 {
                        s += gx[j][k] * hp[3 * i + j][k] + gp[j][k] * hx[3 * i + j][k];
                    }
                    want[i][k] += kappa * rho[k] * s + kappa * (rho[k] * xp[k] - gam) * glx[i][k];
                }
            }
        }
        for i in 0..3 {
            for k in 0..n {
                want[i][k] += rho[k] * fd.f[i][k];
            }
            field::remove_mean(&mut want[i]);
        }
        let scale = field::vec_max_abs(&r.f);
        let err = field::vec_max_abs(&field::vec_sub(&r.f, &want));
        assert!(err < 1e-8 * scale, "{err:e} vs {scale:e}");
    }

    #[test]
    fn zero_forcing_fixes_the_origin() {
        let g = grid32();
        let pb = Problem::new(&g, PhysParams::default(), &IDEAL, SolverOptions::default()).unwrap();
        let fd = ForcingData::zeros(g.size());
        let t = apply_t(&pb, &PressureState::zeros(g.size()), &fd).unwrap();
        assert_eq!(t, pb.zero_state());
        let (s, rep) = run_fixed_point(&pb, &fd).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations, 1);
        assert_eq!(s, pb.zero_state());
        let z = pb.zero_state();
        assert_eq!(contraction_factor(&pb, &z, &z, &fd).unwrap(), 0.0);
    }

    #[test]
    fn manufactured_state_is_a_fixed_point() {
        let g = grid32();
        let exact = exact_state(&g, 11, 1e-3, 5.0);
        let raw = Problem::new(&g, PhysParams::default(), &IDEAL, SolverOptions { dealias: false, ..Default::default() }).unwrap();
        let (fd, res) = mms_stationary(&g, &raw.params, &IDEAL, &exact).unwrap();
        assert!(res.max() < 1e-12, "{res:?}");
        let ex = raw.trial(&exact).unwrap();
        let t = apply_t(&raw, &exact, &fd).unwrap();
        assert!(rel_sup(&t, &ex) < 1e-10, "{:e}", rel_sup(&t, &ex));
        // the weighted norm sees round-off amplified by (1+|x|)^4 and six derivatives
        let lam = raw.lambda_distance(&t, &ex).unwrap() / raw.lambda_norm(&ex).unwrap();
        assert!(lam < 1e-6, "{lam:e}");
        let dv = spectral::div(&g, &t.v);
        let d1 = spectral::div(&g, &t.v1);
        let mism: ScalarField = (0..g.size()).map(|k| dv[k] - d1[k] - t.v2[k]).collect();
        assert!(field::max_abs(&mism) < 1e-16);

        // truncating the products moves the fixed point by the truncated tail only
        let dealiased = Problem::new(&g, PhysParams::default(), &IDEAL, SolverOptions::default()).unwrap();
        let t = apply_t(&dealiased, &exact, &fd).unwrap();
        assert!(rel_sup(&t, &ex) < 1e-5, "{:e}", rel_sup(&t, &ex));
    }

    #[test]
    fn iteration_recovers_manufactured_state() {
        let g = grid32();
        let opts = SolverOptions { budget_threshold: f64::INFINITY, dealias: false, ..Default::default() };
        let pb = Problem::new(&g, PhysParams::default(), &IDEAL, opts).unwrap();
        let exact = exact_state(&g, 12, 1e-3, 5.0);
        let (fd, _) = mms_stationary(&g, &pb.params, &IDEAL, &exact).unwrap();
        let (s, rep) = run_fixed_point(&pb, &fd).unwrap();
        assert!(rep.converged, "{:?}", rep.updates());
        let ex = pb.trial(&exact).unwrap();
        let err = pb.lambda_distance(&s, &ex).unwrap() / pb.lambda_norm(&ex).unwrap();
        assert!(err < 1e-6, "Lambda error {err:e}");
        assert!(rel_sup(&s, &ex) < 1e-10);
        assert!(rep.residuals.max() < 1e-8, "{:?}", rep.residuals);
        assert!(rep.history.iter().skip(1).all(|r| r.contraction_ratio < 0.5));
        let csv = history_csv(&rep.history);
        assert!(csv.starts_with("iter,lambda_update,contraction_ratio,"));
        assert_eq!(csv.lines().count(), rep.iterations + 1);
    }

    #[test]
    fn oversized_forcing_is_refused_up_front() {
        let g = grid32();
        let pb = Problem::new(&g, PhysParams::default(), &IDEAL, SolverOptions::default()).unwrap();
        let fd = build_forcing(&g, &ForcingSpec { amplitude: 1.0, ..Default::default() }, 3).unwrap();
        assert_eq!(run_fixed_point(&pb, &fd).unwrap_err().kind(), "BudgetExceeded");
    }
}


