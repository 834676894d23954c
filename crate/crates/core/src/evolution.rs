//! Time integration of the perturbation system around a stationary state,
//! and the energy functional that monitors its decay.
//!
//! Variables here are density based: `sigma = rho - rho*`, `w = v - v*`,
//! `vartheta = theta - theta*`. The stationary solver's `sigma` is a
//! pressure perturbation. [`PerturbationState::from_total`] is the crossing
//! point between the two and checks the density map on the way through.
//!
//! The scheme is first-order IMEX Euler. The implicit block is the
//! linearization at the reference state `(rho_bar, theta_bar)`: viscosity,
//! capillarity, heat conduction and the four exchange terms. It is solved
//! mode by mode. Everything else (the `f`, `h` sources, coefficient
//! deviations, transport by `v*`) is explicit.

use serde::{Deserialize, Serialize};

use crate::error::{NskError, Result};
use crate::field::{self, ScalarField, VectorField};
use crate::forcing::{self, ForcingData, PressureState};
use crate::grid::{Grid, C64};
use crate::model::{self, EquationOfState, EvolutionCoeffs, PhysParams, PointCoeffs};
use crate::norms;
use crate::spectral;
use crate::stationary::StationaryState;

/// Largest accepted defect of the density map between the two conventions.
pub const FIREWALL_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionOptions {
    pub dt: f64,
    pub t_end: f64,
    /// Keep the `rho div w`, `A grad sigma - kappa grad Lap sigma`,
    /// `B grad vartheta` and `E div w` couplings. Switching them off
    /// changes the model and is meant for isolated heat or shear checks.
    pub exchange: bool,
    /// Add the residual of the full equations at the background as a
    /// constant source, so the run advances the full system rather than
    /// assuming the background is exact.
    pub steady_residual_source: bool,
    /// Two-thirds truncation of the explicit terms.
    pub dealias: bool,
    /// Largest accepted `||init||_{4,3,3}`.
    pub delta_threshold: f64,
    /// Blow-up once `||.||_{4,3,3}` exceeds this multiple of its initial value.
    pub growth_limit: f64,
}

impl Default for EvolutionOptions {
    fn default() -> Self {
        EvolutionOptions {
            dt: 0.05,
            t_end: 5.0,
            exchange: true,
            steady_residual_source: true,
            dealias: true,
            delta_threshold: 1e-3,
            growth_limit: 10.0,
        }
    }
}

/// Random localized initial perturbation: mean-free Gaussian bumps in every
/// field, rescaled to a given `||.||_{4,3,3}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitSpec {
    pub norm: f64,
    pub width: f64,
    pub spread: f64,
    pub bumps: usize,
    pub stream: u64,
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec { norm: 1e-3, width: 1.5, spread: 3.0, bumps: 3, stream: 900 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationState {
    pub sigma: ScalarField,
    pub w: VectorField,
    pub vartheta: ScalarField,
    pub t: f64,
}

impl PerturbationState {
    pub fn zeros(n: usize) -> Self {
        PerturbationState { sigma: field::zeros(n), w: field::zeros_vec(n), vartheta: field::zeros(n), t: 0.0 }
    }

    pub fn random(g: &Grid, spec: &InitSpec, seed: u64) -> Result<Self> {
        let mut r = crate::random::rng(seed, spec.stream);
        let mut f = || {
            spectral::drop_nyquist(g, &crate::random::bumps_mean_free(g, &mut r, spec.bumps, spec.width, spec.spread, 1.0))
        };
        let s = PerturbationState { sigma: f(), w: [f(), f(), f()], vartheta: f(), t: 0.0 };
        let h = s.h433(g)?;
        Ok(if h > 0.0 { s.scaled(spec.norm / h) } else { s })
    }

    pub fn h433(&self, g: &Grid) -> Result<f64> {
        norms::triple_norm(g, &self.sigma, &self.w, &self.vartheta, 4, 3, 3)
    }

    pub fn linf(&self) -> f64 {
        norms::linf_plain(&[&self.sigma, &self.w[0], &self.w[1], &self.w[2], &self.vartheta])
    }

    pub fn scaled(&self, c: f64) -> Self {
        PerturbationState {
            sigma: field::scale(&self.sigma, c),
            w: field::vec_scale(&self.w, c),
            vartheta: field::scale(&self.vartheta, c),
            t: self.t,
        }
    }

    /// `||grad sigma||_4^2 + ||grad w||_3^2 + ||grad vartheta||_3^2`
    pub fn dissipation(&self, g: &Grid) -> Result<f64> {
        Ok(norms::gradient_sobolev_sq(g, &[&self.sigma], 4)?
            + norms::gradient_sobolev_sq(g, &[&self.w[0], &self.w[1], &self.w[2]], 3)?
            + norms::gradient_sobolev_sq(g, &[&self.vartheta], 3)?)
    }

    /// Perturbation of a full pressure-variable state about `steady`.
    pub fn from_total(
        params: &PhysParams,
        eos: &dyn EquationOfState,
        total: &PressureState,
        steady: &SteadyBackground,
    ) -> Result<Self> {
        let drho = forcing::density_perturbation(params, eos, total);
        let out = PerturbationState {
            sigma: field::sub(&drho, &steady.drho),
            w: field::vec_sub(&total.v, &steady.v),
            vartheta: field::sub(&total.vartheta, &steady.dtheta),
            t: 0.0,
        };
        let defect = firewall_defect(params, eos, &out.to_total(params, eos, steady), steady, &out);
        if !(defect < FIREWALL_TOL) {
            return Err(NskError::ConventionMismatch { defect });
        }
        Ok(out)
    }

    /// The full state in the stationary solver's pressure variables.
    pub fn to_total(&self, params: &PhysParams, eos: &dyn EquationOfState, steady: &SteadyBackground) -> PressureState {
        let n = self.sigma.len();
        let sigma = (0..n)
            .map(|k| eos_pressure_shift(eos, params, steady.drho[k] + self.sigma[k], steady.dtheta[k] + self.vartheta[k]))
            .collect();
        PressureState { sigma, v: field::vec_add(&steady.v, &self.w), vartheta: field::add(&steady.dtheta, &self.vartheta) }
    }
}

fn eos_pressure_shift(eos: &dyn EquationOfState, p: &PhysParams, drho: f64, dtheta: f64) -> f64 {
    eos.pressure_shift(p.rho_bar, p.theta_bar, drho, dtheta)
}

/// `max |rho(P_bar + sigma_P, theta_bar + vartheta) - rho* - sigma_rho|`
/// for a pressure-variable state and its claimed density perturbation.
pub fn firewall_defect(
    params: &PhysParams,
    eos: &dyn EquationOfState,
    total: &PressureState,
    steady: &SteadyBackground,
    pert: &PerturbationState,
) -> f64 {
    let drho = forcing::density_perturbation(params, eos, total);
    (0..drho.len()).map(|k| (drho[k] - steady.drho[k] - pert.sigma[k]).abs()).fold(0.0, f64::max)
}

/// Right-hand side triple, one entry per equation.
#[derive(Clone, Debug, PartialEq)]
pub struct Rhs {
    pub sigma: ScalarField,
    pub w: VectorField,
    pub vartheta: ScalarField,
}

impl Rhs {
    fn zeros(n: usize) -> Rhs {
        Rhs { sigma: field::zeros(n), w: field::zeros_vec(n), vartheta: field::zeros(n) }
    }

    pub fn max_abs(&self) -> f64 {
        norms::linf_plain(&[&self.sigma, &self.w[0], &self.w[1], &self.w[2], &self.vartheta])
    }
}

/// The stationary state `(rho*, v*, theta*)` with everything the stepper
/// reuses at every step.
#[derive(Clone, Debug)]
pub struct SteadyBackground {
    pub rho: ScalarField,
    pub drho: ScalarField,
    pub v: VectorField,
    pub theta: ScalarField,
    pub dtheta: ScalarField,
    pub coeffs: EvolutionCoeffs,
    grad_rho: VectorField,
    grad_theta: VectorField,
    lap_theta: ScalarField,
    div_v: ScalarField,
    /// `mu Lap v* + (mu + mu') grad div v*`
    visc: VectorField,
    psi: ScalarField,
    phi: ScalarField,
    /// Time derivative the full equations assign to the background.
    pub residual: Rhs,
}

fn viscous_operator(g: &Grid, params: &PhysParams, v: &VectorField) -> VectorField {
    let lap = spectral::vector_laplacian(g, v);
    let gd = spectral::grad_div(g, v);
    std::array::from_fn(|i| {
        lap[i].iter().zip(&gd[i]).map(|(l, d)| params.mu * l + (params.mu + params.mu_prime) * d).collect()
    })
}

fn norm2_at(v: &VectorField, k: usize) -> f64 {
    v[0][k] * v[0][k] + v[1][k] * v[1][k] + v[2][k] * v[2][k]
}

impl SteadyBackground {
    /// Background from density and temperature perturbations of the
    /// reference state.
    pub fn new(
        g: &Grid,
        params: &PhysParams,
        eos: &dyn EquationOfState,
        drho: ScalarField,
        v: VectorField,
        dtheta: ScalarField,
        fd: &ForcingData,
    ) -> Result<Self> {
        let n = g.size();
        let rho = field::map(&drho, |x| params.rho_bar + x);
        let theta = field::map(&dtheta, |x| params.theta_bar + x);
        let coeffs = model::evolution_coeffs(eos, params, &rho, &theta)?;
        let grad_rho = spectral::grad(g, &drho);
        let grad_theta = spectral::grad(g, &dtheta);
        let lap_theta = spectral::laplacian(g, &dtheta);
        let gv = spectral::grad_vec(g, &v);
        let div_v = model::trace(&gv);
        let visc = viscous_operator(g, params, &v);
        let psi = model::dissipation_from_grad(&gv, params);
        let lap_rho = spectral::laplacian(g, &drho);
        let phi = model::capillary_heating_from(&rho, &grad_rho, &lap_rho, &gv, params.kappa);

        // residual of the full equations, written as time derivatives
        let mut rs = field::sub(&fd.g, &spectral::div(g, &field::vec_mul(&rho, &v)));
        let adv = spectral::advect_vec(g, &v, &v);
        let cap = spectral::grad_laplacian(g, &drho);
        let mut rw: VectorField = std::array::from_fn(|i| {
            (0..n)
                .map(|k| {
                    fd.f[i][k] - adv[i][k] - v[i][k] * fd.g[k] / rho[k] + visc[i][k] / rho[k]
                        - coeffs.a[k] * grad_rho[i][k]
                        - coeffs.b[k] * grad_theta[i][k]
                        + params.kappa * cap[i][k]
                })
                .collect()
        });
        let mut rt: ScalarField = (0..n)
            .map(|k| {
                let vg = v[0][k] * grad_theta[0][k] + v[1][k] * grad_theta[1][k] + v[2][k] * grad_theta[2][k];
                coeffs.d[k]
                    * (fd.h[k] + psi[k] + phi[k] + 0.5 * norm2_at(&v, k) * fd.g[k]
                        - params.c_v * theta[k] * fd.g[k])
                    + params.alpha_tilde * coeffs.d[k] * lap_theta[k]
                    - coeffs.e[k] * div_v[k]
                    - vg
            })
            .collect();
        // the stationary solve balances the equations up to their means
        field::remove_mean(&mut rs);
        rw.iter_mut().for_each(|c| {
            field::remove_mean(c);
        });
        field::remove_mean(&mut rt);

        Ok(SteadyBackground {
            rho,
            drho,
            v,
            theta,
            dtheta,
            coeffs,
            grad_rho,
            grad_theta,
            lap_theta,
            div_v,
            visc,
            psi,
            phi,
            residual: Rhs { sigma: rs, w: rw, vartheta: rt },
        })
    }

    /// The reference state at rest.
    pub fn constant(g: &Grid, params: &PhysParams, eos: &dyn EquationOfState) -> Result<Self> {
        let n = g.size();
        Self::new(g, params, eos, field::zeros(n), field::zeros_vec(n), field::zeros(n), &ForcingData::zeros(n))
    }

    /// Converts a stationary solution (pressure variables) to a background.
    pub fn from_stationary(
        g: &Grid,
        params: &PhysParams,
        eos: &dyn EquationOfState,
        st: &StationaryState,
        fd: &ForcingData,
    ) -> Result<Self> {
        let ps = st.pressure_state();
        let drho = forcing::density_perturbation(params, eos, &ps);
        let bg = Self::new(g, params, eos, drho, ps.v.clone(), ps.vartheta.clone(), fd)?;
        let defect = firewall_defect(params, eos, &ps, &bg, &PerturbationState::zeros(g.size()));
        if !(defect < FIREWALL_TOL) {
            return Err(NskError::ConventionMismatch { defect });
        }
        Ok(bg)
    }
}

/// `f(t)` of the perturbation momentum equation.
pub fn assemble_f(
    g: &Grid,
    params: &PhysParams,
    eos: &dyn EquationOfState,
    state: &PerturbationState,
    steady: &SteadyBackground,
    fd: &ForcingData,
    dealias: bool,
) -> Result<VectorField> {
    let n = g.size();
    let (sig, w, th) = (&state.sigma, &state.w, &state.vartheta);
    let rho = field::add(&steady.rho, sig);
    let sec = model::secants(eos, params, &steady.rho, &steady.theta, sig, th)?;
    let vt = field::vec_add(&steady.v, w);
    let a1 = spectral::advect_vec(g, &steady.v, w);
    let a2 = spectral::advect_vec(g, w, &vt);
    let lw = viscous_operator(g, params, w);
    let f: VectorField = std::array::from_fn(|i| {
        (0..n)
            .map(|k| {
                let da = sec.a1[k] * sig[k] + sec.a2[k] * th[k];
                let db = sec.b1[k] * sig[k] + sec.b2[k] * th[k];
                let rs = steady.rho[k];
                // v / rho - v* / rho* without cancellation
                let dq = (w[i][k] * rs - steady.v[i][k] * sig[k]) / (rho[k] * rs);
                -a1[i][k] - a2[i][k] - da * steady.grad_rho[i][k] - db * steady.grad_theta[i][k] - dq * fd.g[k]
                    - sig[k] / (rs * rho[k]) * (steady.visc[i][k] + lw[i][k])
            })
            .collect()
    });
    Ok(if dealias { spectral::dealias_vec(g, &f) } else { f })
}

/// `h(t)` of the perturbation energy equation.
pub fn assemble_h(
    g: &Grid,
    params: &PhysParams,
    eos: &dyn EquationOfState,
    state: &PerturbationState,
    steady: &SteadyBackground,
    fd: &ForcingData,
    dealias: bool,
) -> Result<ScalarField> {
    let n = g.size();
    let (sig, w, th) = (&state.sigma, &state.w, &state.vartheta);
    let rho = field::add(&steady.rho, sig);
    let sec = model::secants(eos, params, &steady.rho, &steady.theta, sig, th)?;
    let vt = field::vec_add(&steady.v, w);
    let gth = spectral::grad(g, th);
    let grad_theta = field::vec_add(&steady.grad_theta, &gth);
    let lap_theta = field::add(&steady.lap_theta, &spectral::laplacian(g, th));
    let gv = spectral::grad_vec(g, &vt);
    let psi = model::dissipation_from_grad(&gv, params);
    let drho = field::add(&steady.drho, sig);
    let gr = spectral::grad(g, &drho);
    let lr = spectral::laplacian(g, &drho);
    let phi = model::capillary_heating_from(&rho, &gr, &lr, &gv, params.kappa);
    let h: ScalarField = (0..n)
        .map(|k| {
            let v = &steady.v;
            let adv1 = v[0][k] * gth[0][k] + v[1][k] * gth[1][k] + v[2][k] * gth[2][k];
            let adv2 = w[0][k] * grad_theta[0][k] + w[1][k] * grad_theta[1][k] + w[2][k] * grad_theta[2][k];
            let dd = sec.d1[k] * sig[k];
            let ds = steady.coeffs.d[k];
            let d = ds + dd;
            let de = sec.e1[k] * sig[k] + sec.e2[k] * th[k];
            // |v|^2 - |v*|^2 = w . (2 v* + w)
            let dv2 = (0..3).map(|i| w[i][k] * (2.0 * v[i][k] + w[i][k])).sum::<f64>();
            let kin = 0.5 * (dd * norm2_at(&vt, k) + ds * dv2);
            let heat = params.c_v * (dd * (steady.theta[k] + th[k]) + ds * th[k]);
            -adv1 - adv2 + params.alpha_tilde * dd * lap_theta[k]
                + dd * fd.h[k]
                + dd * (steady.psi[k] + steady.phi[k])
                + d * ((psi[k] - steady.psi[k]) + (phi[k] - steady.phi[k]))
                + (kin - heat) * fd.g[k]
                - de * steady.div_v[k]
        })
        .collect();
    Ok(if dealias { spectral::dealias(g, &h) } else { h })
}

/// Coefficients of the implicit block, frozen at the reference state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frozen {
    pub rho: f64,
    pub a: f64,
    pub b: f64,
    pub d: f64,
    pub e: f64,
    pub mu: f64,
    pub mu_prime: f64,
    pub kappa: f64,
    pub alpha_tilde: f64,
}

impl Frozen {
    pub fn new(params: &PhysParams, eos: &dyn EquationOfState) -> Frozen {
        let p: PointCoeffs = model::point_coeffs(eos, params.c_v, params.rho_bar, params.theta_bar);
        Frozen {
            rho: params.rho_bar,
            a: p.a,
            b: p.b,
            d: p.d,
            e: p.e,
            mu: params.mu,
            mu_prime: params.mu_prime,
            kappa: params.kappa,
            alpha_tilde: params.alpha_tilde,
        }
    }

    /// `I + dt L(k)` on `(sigma, w1, w2, w3, vartheta)` for one wavevector,
    /// where `u_t + L u = 0` is the frozen linear system.
    pub fn mode_matrix(&self, k: [f64; 3], dt: f64, exchange: bool) -> [[C64; 5]; 5] {
        let z = C64::new(0.0, 0.0);
        let i = C64::new(0.0, 1.0);
        let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
        let mut m = [[z; 5]; 5];
        for r in 0..5 {
            m[r][r] = C64::new(1.0, 0.0);
        }
        for a in 0..3 {
            m[1 + a][1 + a] += dt * self.mu * k2 / self.rho;
            for b in 0..3 {
                m[1 + a][1 + b] += dt * (self.mu + self.mu_prime) * k[a] * k[b] / self.rho;
            }
        }
        m[4][4] += dt * self.alpha_tilde * self.d * k2;
        if exchange {
            for a in 0..3 {
                m[0][1 + a] += dt * self.rho * i * k[a];
                m[1 + a][0] += dt * (self.a + self.kappa * k2) * i * k[a];
                m[1 + a][4] += dt * self.b * i * k[a];
                m[4][1 + a] += dt * self.e * i * k[a];
            }
        }
        m
    }

    /// Solves `(I + dt L(k)) x = b` by splitting `w` along and across `k`.
    pub fn solve_mode(&self, k: [f64; 3], dt: f64, exchange: bool, b: [C64; 5]) -> [C64; 5] {
        let i = C64::new(0.0, 1.0);
        let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
        if k2 == 0.0 {
            return b;
        }
        let kn = k2.sqrt();
        let kh = [k[0] / kn, k[1] / kn, k[2] / kn];
        let bu = kh[0] * b[1] + kh[1] * b[2] + kh[2] * b[3];
        let shear = 1.0 + dt * self.mu * k2 / self.rho;
        let dl = 1.0 + dt * (2.0 * self.mu + self.mu_prime) * k2 / self.rho;
        let dth = 1.0 + dt * self.alpha_tilde * self.d * k2;
        let (s, u, th) = if exchange {
            let cap = self.a + self.kappa * k2;
            let den = dl + dt * dt * k2 * (self.rho * cap + self.b * self.e / dth);
            let u = (bu - dt * i * kn * (cap * b[0] + self.b * b[4] / dth)) / den;
            (b[0] - dt * self.rho * i * kn * u, u, (b[4] - dt * self.e * i * kn * u) / dth)
        } else {
            (b[0], bu / dl, b[4] / dth)
        };
        let mut out = [s, b[1], b[2], b[3], th];
        for a in 0..3 {
            let perp = b[1 + a] - kh[a] * bu;
            out[1 + a] = perp / shear + kh[a] * u;
        }
        out
    }
}

/// A run's fixed context: grid, model, background, data and options.
pub struct Evolution<'a> {
    pub grid: &'a Grid,
    pub params: PhysParams,
    pub eos: &'a dyn EquationOfState,
    pub steady: &'a SteadyBackground,
    pub fd: &'a ForcingData,
    pub opts: EvolutionOptions,
    pub frozen: Frozen,
    pub energy: EnergyCoeffs,
}

impl<'a> Evolution<'a> {
    pub fn new(
        grid: &'a Grid,
        params: PhysParams,
        eos: &'a dyn EquationOfState,
        steady: &'a SteadyBackground,
        fd: &'a ForcingData,
        opts: EvolutionOptions,
    ) -> Result<Self> {
        params.validate()?;
        if !(opts.dt > 0.0 && opts.dt.is_finite()) || !(opts.t_end >= 0.0) {
            return Err(NskError::Config(format!("need dt > 0 and t_end >= 0, got {} and {}", opts.dt, opts.t_end)));
        }
        let energy = EnergyCoeffs::new(eos, &params);
        Ok(Evolution { grid, params, eos, steady, fd, opts, frozen: Frozen::new(&params, eos), energy })
    }

    /// `0.5 dx / max(|v*| + |w|)`, infinite at rest.
    pub fn cfl_bound(&self, state: &PerturbationState) -> f64 {
        let n = self.grid.size();
        let vmax = (0..n)
            .map(|k| norm2_at(&self.steady.v, k).sqrt() + norm2_at(&state.w, k).sqrt())
            .fold(0.0, f64::max);
        if vmax > 0.0 {
            0.5 * self.grid.min_spacing() / vmax
        } else {
            f64::INFINITY
        }
    }

    /// Explicit part of the right-hand side, residual source excluded.
    pub fn explicit_rhs(&self, state: &PerturbationState) -> Result<Rhs> {
        let g = self.grid;
        let (p, fz, st) = (&self.params, &self.frozen, self.steady);
        let n = g.size();
        let (sig, w, th) = (&state.sigma, &state.w, &state.vartheta);
        let rho = field::add(&st.rho, sig);
        let theta = field::add(&st.theta, th);
        p.admissible().check_fields(&rho, &theta)?;

        let f = assemble_f(g, p, self.eos, state, st, self.fd, false)?;
        let h = assemble_h(g, p, self.eos, state, st, self.fd, false)?;

        // mass: -div(sigma w) - div(drho* w) - div(v* sigma)
        let flux: VectorField = std::array::from_fn(|i| {
            (0..n).map(|k| (sig[k] + st.drho[k]) * w[i][k] + st.v[i][k] * sig[k]).collect()
        });
        let mut rs = field::scale(&spectral::div(g, &flux), -1.0);

        let gs = spectral::grad(g, sig);
        let gt = spectral::grad(g, th);
        let lw = viscous_operator(g, p, w);
        let dw = spectral::div(g, w);
        let lt = spectral::laplacian(g, th);
        let mut ca = vec![0.0; n];
        let mut cb = vec![0.0; n];
        let mut ce = vec![0.0; n];
        for k in 0..n {
            let c = model::point_coeffs(self.eos, p.c_v, rho[k], theta[k]);
            ca[k] = c.a - fz.a;
            cb[k] = c.b - fz.b;
            ce[k] = c.e - fz.e;
        }
        let mut rw: VectorField = std::array::from_fn(|i| {
            (0..n)
                .map(|k| {
                    let inv = -st.drho[k] / (st.rho[k] * fz.rho);
                    f[i][k] + inv * lw[i][k] - ca[k] * gs[i][k] - cb[k] * gt[i][k]
                })
                .collect()
        });
        let mut rt: ScalarField = (0..n)
            .map(|k| h[k] + p.alpha_tilde * (st.coeffs.d[k] - fz.d) * lt[k] - ce[k] * dw[k])
            .collect();

        if self.opts.dealias {
            rs = spectral::dealias(g, &rs);
            rw = spectral::dealias_vec(g, &rw);
            rt = spectral::dealias(g, &rt);
        }
        Ok(Rhs { sigma: rs, w: rw, vartheta: rt })
    }
}

/// One IMEX Euler step of length `dt`.
pub fn imex_step(ev: &Evolution, state: &PerturbationState, dt: f64) -> Result<PerturbationState> {
    let bound = ev.cfl_bound(state);
    if dt > bound {
        return Err(NskError::CflViolation { dt, bound });
    }
    let g = ev.grid;
    let n = g.size();
    let ex = ev.explicit_rhs(state)?;
    let mut b = Rhs::zeros(n);
    for k in 0..n {
        b.sigma[k] = state.sigma[k] + dt * ex.sigma[k];
        b.vartheta[k] = state.vartheta[k] + dt * ex.vartheta[k];
        for i in 0..3 {
            b.w[i][k] = state.w[i][k] + dt * ex.w[i][k];
        }
    }
    if ev.opts.steady_residual_source {
        let r = &ev.steady.residual;
        field::axpy(&mut b.sigma, dt, &r.sigma);
        field::vec_axpy(&mut b.w, dt, &r.w);
        field::axpy(&mut b.vartheta, dt, &r.vartheta);
    }

    let mut spec = [
        g.fft(&b.sigma),
        g.fft(&b.w[0]),
        g.fft(&b.w[1]),
        g.fft(&b.w[2]),
        g.fft(&b.vartheta),
    ];
    let z = C64::new(0.0, 0.0);
    for idx in 0..n {
        let m = g.mode(idx);
        let x = if m.nyquist {
            [z; 5]
        } else {
            ev.frozen.solve_mode(m.k, dt, ev.opts.exchange, std::array::from_fn(|c| spec[c][idx]))
        };
        for c in 0..5 {
            spec[c][idx] = x[c];
        }
    }
    let mut out = g.ifft_many(&spec).into_iter();
    let mut next = || out.next().unwrap();
    Ok(PerturbationState { sigma: next(), w: [next(), next(), next()], vartheta: next(), t: state.t + dt })
}

/// Weights of the energy functional and the extremes of its coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyCoeffs {
    pub a: [f64; 4],
    pub b: [f64; 4],
    /// Smallest and largest of `A-hat`, `A-tilde`, `B-tilde` and 1 over the admissible rectangle.
    pub b0: f64,
    pub b1: f64,
}

impl EnergyCoeffs {
    pub fn new(eos: &dyn EquationOfState, params: &PhysParams) -> EnergyCoeffs {
        let (b0, b1) = model::energy_bounds(eos, params, 32);
        EnergyCoeffs { a: [1.0; 4], b: [b0.min(1.0) / 8.0; 4], b0, b1 }
    }

    /// `a_nu <= a_{nu-1}` and `0 <= b_nu <= a_nu min(B0, 1) / 4`.
    pub fn admissible(&self) -> bool {
        let cap = self.b0.min(1.0) / 4.0;
        (1..4).all(|nu| self.a[nu] <= self.a[nu - 1])
            && (0..4).all(|nu| self.a[nu] > 0.0 && self.b[nu] >= 0.0 && self.b[nu] <= self.a[nu] * cap)
    }

    /// Lower and upper equivalence bounds for a given `||.||_{4,3,3}^2`.
    pub fn bounds(&self, norm_sq: f64) -> (f64, f64) {
        (self.a[3] / 4.0 * self.b0 * norm_sq, 2.0 * self.a[0] * norm_sq)
    }
}

/// The energy functional split into its bracket and cross terms, each
/// already multiplied by its weight.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub total: f64,
    pub bracket: [f64; 4],
    pub cross: [f64; 4],
}

/// `N = sum_nu a_nu [grad^nu (sigma, w, vartheta)] + b_nu <grad^nu w, grad^(nu+1) sigma>`.
///
/// The bracket is applied to each `d^alpha` with `|alpha| = nu`:
/// `||d^a sigma||^2 + <A-hat grad d^a sigma, grad d^a sigma> + <A-tilde d^a w, d^a w> + <B-tilde d^a vartheta, d^a vartheta>`,
/// with the coefficients evaluated at the current `(rho* + sigma, theta* + vartheta)`.
/// The cross term pairs `d^a w_i` with `d_i d^a sigma`.
pub fn energy_n(
    g: &Grid,
    params: &PhysParams,
    eos: &dyn EquationOfState,
    state: &PerturbationState,
    steady: &SteadyBackground,
    ec: &EnergyCoeffs,
) -> EnergyBreakdown {
    let n = g.size();
    let (mut ah, mut at, mut bt) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for k in 0..n {
        let c = model::point_coeffs(eos, params.c_v, steady.rho[k] + state.sigma[k], steady.theta[k] + state.vartheta[k]);
        ah[k] = c.a_hat;
        at[k] = c.a_tilde;
        bt[k] = c.b_tilde;
    }
    let ss = g.fft(&state.sigma);
    let sw = [g.fft(&state.w[0]), g.fft(&state.w[1]), g.fft(&state.w[2])];
    let st = g.fft(&state.vartheta);
    let dv = g.cell_volume();
    let mut out = EnergyBreakdown::default();
    for nu in 0..4 {
        let (mut br, mut cr) = (0.0, 0.0);
        for alpha in norms::multi_indices(g, nu) {
            let mut specs = vec![
                spectral::derivative_spec(g, &ss, alpha),
                spectral::derivative_spec(g, &st, alpha),
            ];
            for i in 0..3 {
                let mut ai = alpha;
                ai[i] += 1;
                specs.push(spectral::derivative_spec(g, &ss, ai));
                specs.push(spectral::derivative_spec(g, &sw[i], alpha));
            }
            let f = g.ifft_many(&specs);
            for k in 0..n {
                let mut grad2 = 0.0;
                let mut w2 = 0.0;
                let mut dot = 0.0;
                for i in 0..3 {
                    let ds = f[2 + 2 * i][k];
                    let dw = f[3 + 2 * i][k];
                    grad2 += ds * ds;
                    w2 += dw * dw;
                    dot += dw * ds;
                }
                br += f[0][k] * f[0][k] + ah[k] * grad2 + at[k] * w2 + bt[k] * f[1][k] * f[1][k];
                cr += dot;
            }
        }
        out.bracket[nu] = ec.a[nu] * br * dv;
        out.cross[nu] = ec.b[nu] * cr * dv;
    }
    out.total = out.bracket.iter().sum::<f64>() + out.cross.iter().sum::<f64>();
    out
}

/// One recorded instant of a stability run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LedgerRow {
    pub t: f64,
    pub h433: f64,
    pub linf: f64,
    pub energy: EnergyBreakdown,
    /// `int_0^t ||grad (sigma, w, vartheta)||_{4,3,3}^2`, trapezoidal.
    pub dissipation_integral: f64,
}

pub const LEDGER_COLUMNS: [&str; 13] = [
    "t",
    "H433",
    "Linf",
    "N_total",
    "N_bracket0",
    "N_bracket1",
    "N_bracket2",
    "N_bracket3",
    "N_cross0",
    "N_cross1",
    "N_cross2",
    "N_cross3",
    "dissipation_integral",
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyLedger {
    pub coeffs: EnergyCoeffs,
    pub rows: Vec<LedgerRow>,
}

impl EnergyLedger {
    /// Largest one-step growth of `N`, relative to `N(0)`; zero for a zero run.
    pub fn max_increase(&self) -> f64 {
        let n0 = self.rows.first().map_or(0.0, |r| r.energy.total);
        let worst = self.rows.windows(2).map(|p| p[1].energy.total - p[0].energy.total).fold(0.0, f64::max);
        if n0 > 0.0 {
            worst / n0
        } else {
            worst
        }
    }

    pub fn monotone(&self, tol: f64) -> bool {
        self.max_increase() <= tol
    }

    /// Smallest `C` with `||u(t)||^2 + int_0^t D <= C ||u(0)||^2` on every row.
    pub fn fitted_constant(&self) -> f64 {
        let h0 = self.rows.first().map_or(0.0, |r| r.h433);
        if h0 == 0.0 {
            return 0.0;
        }
        self.rows.iter().map(|r| (r.h433 * r.h433 + r.dissipation_integral) / (h0 * h0)).fold(0.0, f64::max)
    }

    /// Rows violating the norm equivalence of the energy functional.
    pub fn equivalence_failures(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| {
                let (lo, hi) = self.coeffs.bounds(r.h433 * r.h433);
                r.energy.total < lo * (1.0 - 1e-12) || r.energy.total > hi * (1.0 + 1e-12)
            })
            .count()
    }

    pub fn csv(&self) -> String {
        let mut s = LEDGER_COLUMNS.join(",");
        s.push('\n');
        for r in &self.rows {
            let e = &r.energy;
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.t,
                r.h433,
                r.linf,
                e.total,
                e.bracket[0],
                e.bracket[1],
                e.bracket[2],
                e.bracket[3],
                e.cross[0],
                e.cross[1],
                e.cross[2],
                e.cross[3],
                r.dissipation_integral
            ));
        }
        s
    }
}

fn record(ev: &Evolution, s: &PerturbationState, integral: f64) -> Result<LedgerRow> {
    Ok(LedgerRow {
        t: s.t,
        h433: s.h433(ev.grid)?,
        linf: s.linf(),
        energy: energy_n(ev.grid, &ev.params, ev.eos, s, ev.steady, &ev.energy),
        dissipation_integral: integral,
    })
}

/// Advances `init` to `t_end`, recording the energy ledger after every step.
/// `on_step` sees each new state, e.g. to write snapshots.
pub fn run_stability(
    ev: &Evolution,
    init: &PerturbationState,
    mut on_step: impl FnMut(usize, &PerturbationState) -> Result<()>,
) -> Result<(PerturbationState, EnergyLedger)> {
    let g = ev.grid;
    let h0 = init.h433(g)?;
    if h0 > ev.opts.delta_threshold * (1.0 + 1e-12) {
        return Err(NskError::InitTooLarge { norm: h0, threshold: ev.opts.delta_threshold });
    }
    let limit = ev.opts.growth_limit * if h0 > 0.0 { h0 } else { ev.opts.delta_threshold };
    let mut state = init.clone();
    let mut diss = state.dissipation(g)?;
    let mut integral = 0.0;
    let mut rows = vec![record(ev, &state, integral)?];
    let steps = (ev.opts.t_end / ev.opts.dt - 1e-9).ceil().max(0.0) as usize;
    on_step(0, &state)?;
    for step in 1..=steps {
        let t0 = init.t + (step - 1) as f64 * ev.opts.dt;
        let dt = ev.opts.dt.min(init.t + ev.opts.t_end - t0);
        state = imex_step(ev, &state, dt).map_err(|e| match e {
            NskError::OutOfAdmissibleRange { rho, theta } => NskError::BlowUpDetected {
                t: state.t,
                reason: format!("left the admissible rectangle at rho = {rho}, theta = {theta}"),
            },
            other => other,
        })?;
        let d = state.dissipation(g)?;
        integral += 0.5 * dt * (diss + d);
        diss = d;
        let row = record(ev, &state, integral)?;
        if !row.h433.is_finite() || row.h433 > limit {
            return Err(NskError::BlowUpDetected {
                t: state.t,
                reason: format!("norm {:e} above {:e}", row.h433, limit),
            });
        }
        rows.push(row);
        on_step(step, &state)?;
    }
    Ok((state, EnergyLedger { coeffs: ev.energy, rows }))
}
