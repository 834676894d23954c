//! Physical parameters, equation of state, derived coefficients and the
//! viscous and capillary stresses.

use serde::{Deserialize, Serialize};

use crate::error::{NskError, Result};
use crate::field::{self, ScalarField, TensorField, VectorField};
use crate::grid::Grid;
use crate::spectral;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysParams {
    pub mu: f64,
    pub mu_prime: f64,
    pub kappa: f64,
    pub alpha_tilde: f64,
    pub c_v: f64,
    pub rho_bar: f64,
    pub theta_bar: f64,
}

impl Default for PhysParams {
    fn default() -> Self {
        PhysParams {
            mu: 1.0,
            mu_prime: 0.0,
            kappa: 1.0,
            alpha_tilde: 1.0,
            c_v: 1.5,
            rho_bar: 1.0,
            theta_bar: 1.0,
        }
    }
}

impl PhysParams {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("mu", self.mu),
            ("kappa", self.kappa),
            ("alpha_tilde", self.alpha_tilde),
            ("c_v", self.c_v),
            ("rho_bar", self.rho_bar),
            ("theta_bar", self.theta_bar),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(NskError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.mu_prime.is_finite() || 2.0 / 3.0 * self.mu + self.mu_prime < 0.0 {
            return Err(NskError::Config("need 2 mu / 3 + mu_prime >= 0".into()));
        }
        Ok(())
    }

    /// Half-to-three-halves rectangle around the reference state.
    pub fn admissible(&self) -> Admissible {
        Admissible {
            rho: (0.5 * self.rho_bar, 1.5 * self.rho_bar),
            theta: (0.5 * self.theta_bar, 1.5 * self.theta_bar),
            margin: 0.1,
            rho_bar: self.rho_bar,
            theta_bar: self.theta_bar,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Admissible {
    pub rho: (f64, f64),
    pub theta: (f64, f64),
    /// Extra slack, as a fraction of the reference value.
    pub margin: f64,
    rho_bar: f64,
    theta_bar: f64,
}

impl Admissible {
    pub fn contains_extended(&self, rho: f64, theta: f64) -> bool {
        let dr = self.margin * self.rho_bar;
        let dt = self.margin * self.theta_bar;
        rho >= self.rho.0 - dr && rho <= self.rho.1 + dr && theta >= self.theta.0 - dt && theta <= self.theta.1 + dt
    }

    pub fn check(&self, rho: f64, theta: f64) -> Result<()> {
        if self.contains_extended(rho, theta) {
            Ok(())
        } else {
            Err(NskError::OutOfAdmissibleRange { rho, theta })
        }
    }

    pub fn check_fields(&self, rho: &[f64], theta: &[f64]) -> Result<()> {
        for (&r, &t) in rho.iter().zip(theta) {
            self.check(r, t)?;
        }
        Ok(())
    }

    /// `n x n` sample of the (non-extended) rectangle, corners included.
    pub fn samples(&self, n: usize) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let s = i as f64 / (n - 1) as f64;
                let t = j as f64 / (n - 1) as f64;
                out.push((
                    self.rho.0 + s * (self.rho.1 - self.rho.0),
                    self.theta.0 + t * (self.theta.1 - self.theta.0),
                ));
            }
        }
        out
    }
}

/// Pressure law with the partials needed by the solvers.
pub trait EquationOfState: Send + Sync + std::fmt::Debug {
    fn pressure(&self, rho: f64, theta: f64) -> f64;
    fn p_rho(&self, rho: f64, theta: f64) -> f64;
    fn p_theta(&self, rho: f64, theta: f64) -> f64;
    fn p_rho_rho(&self, rho: f64, theta: f64) -> f64;
    fn p_rho_theta(&self, rho: f64, theta: f64) -> f64;
    fn p_theta_theta(&self, rho: f64, theta: f64) -> f64;
    /// Inverse map `rho(P, theta)`.
    fn density(&self, p: f64, theta: f64) -> f64;

    /// `rho(p0 + dp, t0 + dt) - rho(p0, t0)`. Laws with a closed form
    /// override this to avoid the cancellation; density fields are
    /// differentiated through this shift.
    fn density_shift(&self, p0: f64, t0: f64, dp: f64, dt: f64) -> f64 {
        self.density(p0 + dp, t0 + dt) - self.density(p0, t0)
    }

    /// `P(rho0 + drho, t0 + dt) - P(rho0, t0)`.
    fn pressure_shift(&self, rho0: f64, t0: f64, drho: f64, dt: f64) -> f64 {
        self.pressure(rho0 + drho, t0 + dt) - self.pressure(rho0, t0)
    }
    fn rho_p(&self, p: f64, theta: f64) -> f64 {
        let rho = self.density(p, theta);
        1.0 / self.p_rho(rho, theta)
    }

    fn rho_theta(&self, p: f64, theta: f64) -> f64 {
        let rho = self.density(p, theta);
        -self.p_theta(rho, theta) / self.p_rho(rho, theta)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Eos {
    /// `P = R rho theta`
    IdealGas { r: f64 },
    /// `P = R rho theta - p_inf`
    StiffenedGas { r: f64, p_inf: f64 },
}

impl Default for Eos {
    fn default() -> Self {
        Eos::IdealGas { r: 1.0 }
    }
}

impl Eos {
    pub fn validate(&self, params: &PhysParams) -> Result<()> {
        let r = match *self {
            Eos::IdealGas { r } => r,
            Eos::StiffenedGas { r, .. } => r,
        };
        if !(r > 0.0) {
            return Err(NskError::Config("gas constant must be positive".into()));
        }
        let pbar = self.pressure(params.rho_bar, params.theta_bar);
        if !(pbar > 0.0) {
            return Err(NskError::Config(format!("reference pressure {pbar} is not positive")));
        }
        Ok(())
    }
}

impl EquationOfState for Eos {
    fn pressure(&self, rho: f64, theta: f64) -> f64 {
        match *self {
            Eos::IdealGas { r } => r * rho * theta,
            Eos::StiffenedGas { r, p_inf } => r * rho * theta - p_inf,
        }
    }
    fn p_rho(&self, _rho: f64, theta: f64) -> f64 {
        match *self {
            Eos::IdealGas { r } | Eos::StiffenedGas { r, .. } => r * theta,
        }
    }
    fn p_theta(&self, rho: f64, _theta: f64) -> f64 {
        match *self {
            Eos::IdealGas { r } | Eos::StiffenedGas { r, .. } => r * rho,
        }
    }
    fn p_rho_rho(&self, _rho: f64, _theta: f64) -> f64 {
        0.0
    }
    fn p_rho_theta(&self, _rho: f64, _theta: f64) -> f64 {
        match *self {
            Eos::IdealGas { r } | Eos::StiffenedGas { r, .. } => r,
        }
    }
    fn p_theta_theta(&self, _rho: f64, _theta: f64) -> f64 {
        0.0
    }
    fn density(&self, p: f64, theta: f64) -> f64 {
        match *self {
            Eos::IdealGas { r } => p / (r * theta),
            Eos::StiffenedGas { r, p_inf } => (p + p_inf) / (r * theta),
        }
    }
    fn density_shift(&self, p0: f64, t0: f64, dp: f64, dt: f64) -> f64 {
        let (r, pe) = match *self {
            Eos::IdealGas { r } => (r, p0),
            Eos::StiffenedGas { r, p_inf } => (r, p0 + p_inf),
        };
        (dp * t0 - pe * dt) / (r * t0 * (t0 + dt))
    }
    fn pressure_shift(&self, rho0: f64, t0: f64, drho: f64, dt: f64) -> f64 {
        let r = match *self {
            Eos::IdealGas { r } | Eos::StiffenedGas { r, .. } => r,
        };
        r * (drho * (t0 + dt) + rho0 * dt)
    }
}

/// Density and its partials at `(P, theta)`, with the admissibility check.
pub fn eos_eval(
    eos: &dyn EquationOfState,
    params: &PhysParams,
    p: f64,
    theta: f64,
) -> Result<(f64, f64, f64)> {
    let rho = eos.density(p, theta);
    params.admissible().check(rho, theta)?;
    let pr = eos.p_rho(rho, theta);
    let pt = eos.p_theta(rho, theta);
    Ok((rho, 1.0 / pr, -pt / pr))
}

/// Reference-state constants of the stationary problem.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct StationaryCoeffs {
    pub p_bar: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub eta1_bar: f64,
    pub eta2_bar: f64,
    pub eta3_bar: f64,
}

impl StationaryCoeffs {
    /// `(eta1, eta2, eta3)` as displayed with the stationary system.
    pub fn eta(c_v: f64, rho: f64, theta: f64, rho_p: f64, rho_theta: f64) -> (f64, f64, f64) {
        (
            rho * c_v - theta * rho_theta * rho_theta / (rho * rho_p),
            theta * rho_theta / rho,
            theta * rho_theta / (rho * rho_p),
        )
    }

    /// Coefficient of `(v . grad) theta` after eliminating `div v` with the
    /// mass equation and `P_theta = -rho_theta / rho_P`. Equals `rho C_P`
    /// for the ideal gas.
    pub fn eta1_consistent(c_v: f64, rho: f64, theta: f64, rho_p: f64, rho_theta: f64) -> f64 {
        rho * c_v + theta * rho_theta * rho_theta / (rho * rho_p)
    }
}

pub fn stationary_coeffs(params: &PhysParams, eos: &dyn EquationOfState) -> Result<StationaryCoeffs> {
    let p_bar = eos.pressure(params.rho_bar, params.theta_bar);
    let (rho, rho_p, rho_t) = eos_eval(eos, params, p_bar, params.theta_bar)?;
    let (e1, e2, e3) = StationaryCoeffs::eta(params.c_v, rho, params.theta_bar, rho_p, rho_t);
    Ok(StationaryCoeffs {
        p_bar,
        gamma1: rho * rho_p,
        gamma2: rho * rho_t,
        eta1_bar: e1,
        eta2_bar: e2,
        eta3_bar: e3,
    })
}

/// Pointwise coefficients of the perturbation system and its energy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointCoeffs {
    pub a: f64,
    pub b: f64,
    pub d: f64,
    pub e: f64,
    pub a_hat: f64,
    pub a_tilde: f64,
    pub b_tilde: f64,
}

pub fn point_coeffs(eos: &dyn EquationOfState, c_v: f64, rho: f64, theta: f64) -> PointCoeffs {
    let pr = eos.p_rho(rho, theta);
    let pt = eos.p_theta(rho, theta);
    PointCoeffs {
        a: pr / rho,
        b: pt / rho,
        d: 1.0 / (c_v * rho),
        e: theta * pt / (c_v * rho),
        a_hat: rho / pr,
        a_tilde: rho * rho / pr,
        b_tilde: c_v * rho * rho / (theta * pr),
    }
}

/// Partials of A, B, E (in rho then theta) and of D in rho.
fn coeff_partials(eos: &dyn EquationOfState, c_v: f64, rho: f64, theta: f64) -> [f64; 7] {
    let pr = eos.p_rho(rho, theta);
    let pt = eos.p_theta(rho, theta);
    let prr = eos.p_rho_rho(rho, theta);
    let prt = eos.p_rho_theta(rho, theta);
    let ptt = eos.p_theta_theta(rho, theta);
    let r2 = rho * rho;
    [
        prr / rho - pr / r2,
        prt / rho,
        prt / rho - pt / r2,
        ptt / rho,
        theta * (prt / rho - pt / r2) / c_v,
        (pt + theta * ptt) / (c_v * rho),
        -1.0 / (c_v * r2),
    ]
}

const GL8_X: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329_0,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL8_W: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362_0,
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Integral mean of `f` over `[0, 1]` by 8-node Gauss-Legendre.
pub fn integral_mean(f: impl Fn(f64) -> f64) -> f64 {
    let mut s = 0.0;
    for q in 0..8 {
        s += GL8_W[q] * f(0.5 * (GL8_X[q] + 1.0));
    }
    0.5 * s
}

/// Secant factors: `X(rho*+s, theta*+t) - X(rho*, theta*) = X1 s + X2 t`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PointSecants {
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    pub e1: f64,
    pub e2: f64,
    pub d1: f64,
}

/// The rho-step runs at the perturbed temperature and the theta-step at
/// the base density, so the two pieces telescope exactly.
pub fn point_secants(
    eos: &dyn EquationOfState,
    c_v: f64,
    rho_s: f64,
    theta_s: f64,
    sigma: f64,
    vartheta: f64,
) -> PointSecants {
    let mut out = [0.0; 7];
    for q in 0..8 {
        let s = 0.5 * (GL8_X[q] + 1.0);
        let w = 0.5 * GL8_W[q];
        let pr = coeff_partials(eos, c_v, rho_s + s * sigma, theta_s + vartheta);
        let pt = coeff_partials(eos, c_v, rho_s, theta_s + s * vartheta);
        out[0] += w * pr[0];
        out[1] += w * pt[1];
        out[2] += w * pr[2];
        out[3] += w * pt[3];
        out[4] += w * pr[4];
        out[5] += w * pt[5];
        // D depends on rho only, so its theta-step vanishes.
        out[6] += w * coeff_partials(eos, c_v, rho_s + s * sigma, theta_s)[6];
    }
    PointSecants { a1: out[0], a2: out[1], b1: out[2], b2: out[3], e1: out[4], e2: out[5], d1: out[6] }
}

/// Field-wise coefficients.
#[derive(Clone, Debug)]
pub struct EvolutionCoeffs {
    pub a: ScalarField,
    pub b: ScalarField,
    pub d: ScalarField,
    pub e: ScalarField,
    pub a_hat: ScalarField,
    pub a_tilde: ScalarField,
    pub b_tilde: ScalarField,
}

#[derive(Clone, Debug)]
pub struct Secants {
    pub a1: ScalarField,
    pub a2: ScalarField,
    pub b1: ScalarField,
    pub b2: ScalarField,
    pub e1: ScalarField,
    pub e2: ScalarField,
    pub d1: ScalarField,
}

pub fn evolution_coeffs(
    eos: &dyn EquationOfState,
    params: &PhysParams,
    rho: &[f64],
    theta: &[f64],
) -> Result<EvolutionCoeffs> {
    params.admissible().check_fields(rho, theta)?;
    let n = rho.len();
    let mut c = EvolutionCoeffs {
        a: vec![0.0; n],
        b: vec![0.0; n],
        d: vec![0.0; n],
        e: vec![0.0; n],
        a_hat: vec![0.0; n],
        a_tilde: vec![0.0; n],
        b_tilde: vec![0.0; n],
    };
    for i in 0..n {
        let p = point_coeffs(eos, params.c_v, rho[i], theta[i]);
        c.a[i] = p.a;
        c.b[i] = p.b;
        c.d[i] = p.d;
        c.e[i] = p.e;
        c.a_hat[i] = p.a_hat;
        c.a_tilde[i] = p.a_tilde;
        c.b_tilde[i] = p.b_tilde;
    }
    Ok(c)
}

pub fn secants(
    eos: &dyn EquationOfState,
    params: &PhysParams,
    rho_s: &[f64],
    theta_s: &[f64],
    sigma: &[f64],
    vartheta: &[f64],
) -> Result<Secants> {
    let adm = params.admissible();
    let n = rho_s.len();
    let mut s = Secants {
        a1: vec![0.0; n],
        a2: vec![0.0; n],
        b1: vec![0.0; n],
        b2: vec![0.0; n],
        e1: vec![0.0; n],
        e2: vec![0.0; n],
        d1: vec![0.0; n],
    };
    for i in 0..n {
        adm.check(rho_s[i] + sigma[i], theta_s[i] + vartheta[i])?;
        let p = point_secants(eos, params.c_v, rho_s[i], theta_s[i], sigma[i], vartheta[i]);
        s.a1[i] = p.a1;
        s.a2[i] = p.a2;
        s.b1[i] = p.b1;
        s.b2[i] = p.b2;
        s.e1[i] = p.e1;
        s.e2[i] = p.e2;
        s.d1[i] = p.d1;
    }
    Ok(s)
}

/// Extremes of `{A_hat, A_tilde, B_tilde, 1}` over an `n x n` sample of the
/// admissible rectangle.
pub fn energy_bounds(eos: &dyn EquationOfState, params: &PhysParams, n: usize) -> (f64, f64) {
    let mut lo: f64 = 1.0;
    let mut hi: f64 = 1.0;
    for (rho, theta) in params.admissible().samples(n) {
        let p = point_coeffs(eos, params.c_v, rho, theta);
        for v in [p.a_hat, p.a_tilde, p.b_tilde] {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    (lo, hi)
}

/// `K_ij = (kappa/2)(Delta rho^2 - |grad rho|^2) delta_ij - kappa d_i rho d_j rho`
pub fn korteweg_stress(g: &Grid, rho: &[f64], kappa: f64) -> TensorField {
    let gr = spectral::grad(g, rho);
    let lap_r2 = spectral::laplacian(g, &field::mul(rho, rho));
    let g2 = field::norm2(&gr);
    let iso: ScalarField = lap_r2.iter().zip(&g2).map(|(l, q)| 0.5 * kappa * (l - q)).collect();
    let mut t: TensorField = Default::default();
    for i in 0..3 {
        for j in 0..3 {
            let mut c = field::scale(&field::mul(&gr[i], &gr[j]), -kappa);
            if i == j {
                field::axpy(&mut c, 1.0, &iso);
            }
            t[3 * i + j] = c;
        }
    }
    t
}

/// `S_ij = (mu' div v - P) delta_ij + 2 mu d_ij(v)`
pub fn viscous_stress(g: &Grid, v: &VectorField, p: &[f64], params: &PhysParams) -> TensorField {
    let gv = spectral::grad_vec(g, v);
    let dv = trace(&gv);
    let mut t: TensorField = Default::default();
    for i in 0..3 {
        for j in 0..3 {
            let mut c: ScalarField =
                gv[3 * i + j].iter().zip(&gv[3 * j + i]).map(|(a, b)| params.mu * (a + b)).collect();
            if i == j {
                for k in 0..c.len() {
                    c[k] += params.mu_prime * dv[k] - p[k];
                }
            }
            t[3 * i + j] = c;
        }
    }
    t
}

pub fn trace(t: &TensorField) -> ScalarField {
    let mut out = field::add(&t[0], &t[4]);
    field::axpy(&mut out, 1.0, &t[8]);
    out
}

/// `Psi` from a velocity gradient `gv[3i+j] = d_i v_j`.
pub fn dissipation_from_grad(gv: &TensorField, params: &PhysParams) -> ScalarField {
    let n = gv[0].len();
    let mut out = vec![0.0; n];
    for k in 0..n {
        let dv = gv[0][k] + gv[4][k] + gv[8][k];
        let mut dd = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let d = 0.5 * (gv[3 * i + j][k] + gv[3 * j + i][k]);
                dd += d * d;
            }
        }
        out[k] = params.mu_prime * dv * dv + 2.0 * params.mu * dd;
    }
    out
}

/// `Psi(v) = mu' (div v)^2 + 2 mu Dv : Dv`
pub fn dissipation(g: &Grid, v: &VectorField, params: &PhysParams) -> ScalarField {
    dissipation_from_grad(&spectral::grad_vec(g, v), params)
}

/// `Phi` from precomputed pieces.
pub fn capillary_heating_from(
    rho: &[f64],
    grad_rho: &VectorField,
    lap_rho: &[f64],
    gv: &TensorField,
    kappa: f64,
) -> ScalarField {
    let n = rho.len();
    let mut out = vec![0.0; n];
    for k in 0..n {
        let gr = [grad_rho[0][k], grad_rho[1][k], grad_rho[2][k]];
        let g2 = gr[0] * gr[0] + gr[1] * gr[1] + gr[2] * gr[2];
        let dv = gv[0][k] + gv[4][k] + gv[8][k];
        let mut contr = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                contr += gr[i] * gr[j] * gv[3 * i + j][k];
            }
        }
        out[k] = kappa * ((0.5 * g2 + rho[k] * lap_rho[k]) * dv - contr);
    }
    out
}

/// `Phi(rho, v) = kappa (|grad rho|^2/2 + rho Delta rho) div v - kappa (grad rho x grad rho) : grad v`
pub fn capillary_heating(g: &Grid, rho: &[f64], v: &VectorField, params: &PhysParams) -> ScalarField {
    let gr = spectral::grad(g, rho);
    let lr = spectral::laplacian(g, rho);
    let gv = spectral::grad_vec(g, v);
    capillary_heating_from(rho, &gr, &lr, &gv, params.kappa)
}
