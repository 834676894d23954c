//! Three small operations on top of `nsk-core` for the static page in
//! `www/`. Everything runs single-threaded.

use nsk_core::evolution::Frozen;
use nsk_core::grid::C64;
use nsk_core::model::{Eos, PhysParams};
use nsk_core::stationary::{solve_linearized, Problem, SolverOptions};
use nsk_core::{field, Grid};
use wasm_bindgen::prelude::*;

const IDEAL: Eos = Eos::IdealGas { r: 1.0 };

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Fields of a planar linear response, row-major with x fastest.
#[wasm_bindgen]
pub struct Response {
    n: usize,
    sigma: Vec<f64>,
    speed: Vec<f64>,
    vartheta: Vec<f64>,
}

#[wasm_bindgen]
impl Response {
    #[wasm_bindgen(getter)]
    pub fn n(&self) -> usize {
        self.n
    }
    #[wasm_bindgen(getter)]
    pub fn sigma(&self) -> Vec<f64> {
        self.sigma.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn speed(&self) -> Vec<f64> {
        self.speed.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn vartheta(&self) -> Vec<f64> {
        self.vartheta.clone()
    }
}

/// Mean-free Gaussian at `c` with periodic images.
fn bump(g: &Grid, c: [f64; 2], width: f64) -> Vec<f64> {
    let l = g.len();
    let f = g.sample(|x| {
        let mut s = 0.0;
        for i in -1..=1 {
            for j in -1..=1 {
                let dx = x[0] - c[0] + i as f64 * l[0];
                let dy = x[1] - c[1] + j as f64 * l[1];
                s += (-(dx * dx + dy * dy) / (2.0 * width * width)).exp();
            }
        }
        s
    });
    let mean = f.iter().sum::<f64>() / f.len() as f64;
    field::map(&f, |v| v - mean)
}

/// Response of the linearized stationary operator on an `n x n` periodic
/// slab to a mass source, a swirling force and a heat source.
#[wasm_bindgen]
pub fn linear_response(n: usize, length: f64, width: f64, eps: f64) -> Result<Response, JsError> {
    let g = Grid::new([n, n, 1], [length; 3]).map_err(js_err)?;
    let pb = Problem::new(&g, PhysParams::default(), &IDEAL, SolverOptions::default()).map_err(js_err)?;
    let (q, h) = (0.25 * length, 0.5 * length);
    let gm = field::sub(&bump(&g, [q, q], width), &bump(&g, [3.0 * q, 3.0 * q], width));
    let swirl = bump(&g, [h, h], width);
    let f = [field::scale(&swirl, 1.0), field::scale(&swirl, -0.5), vec![0.0; g.size()]];
    let heat = bump(&g, [q, 3.0 * q], width);
    let s = solve_linearized(&g, &pb.lin, None, &gm, &f, &heat, eps, &pb.opts).map_err(js_err)?;
    let speed = (0..g.size()).map(|k| (s.v[0][k].powi(2) + s.v[1][k].powi(2) + s.v[2][k].powi(2)).sqrt()).collect();
    Ok(Response { n, sigma: s.sigma, speed, vartheta: s.vartheta })
}

/// Backward-Euler history of one Fourier mode of the frozen linear system,
/// started from a unit density pulse. Returns `|u_n|` for `n = 0..=steps`
/// followed by the undamped-shear reference `exp(-mu k^2 t / rho)`.
#[wasm_bindgen]
pub fn mode_decay(k: f64, dt: f64, steps: usize, exchange: bool) -> Vec<f64> {
    let fr = Frozen::new(&PhysParams::default(), &IDEAL);
    let kv = [k, 0.0, 0.0];
    let mut u = [C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.5, 0.0)];
    let norm = |u: &[C64; 5]| u.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let mut out = Vec::with_capacity(2 * (steps + 1));
    out.push(norm(&u));
    for _ in 0..steps {
        u = fr.solve_mode(kv, dt, exchange, u);
        out.push(norm(&u));
    }
    let u0 = out[0];
    out.extend((0..=steps).map(|s| u0 * (-fr.mu * k * k * s as f64 * dt / fr.rho).exp()));
    out
}

/// Decay constants of the Newtonian potential and the Stokeslet, as JSON.
#[wasm_bindgen]
pub fn kernel_decay(mu: f64) -> Result<String, JsError> {
    if !(mu > 0.0) {
        return Err(JsError::new("mu must be positive"));
    }
    serde_json::to_string(&nsk_core::verification::audit_kernel_decay(mu, 0)).map_err(js_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn response_is_finite_and_nonzero() {
        let r = linear_response(32, 20.0, 1.5, 0.0).unwrap_or_else(|_| panic!("solve failed"));
        assert_eq!(r.sigma.len(), 32 * 32);
        assert!(r.sigma.iter().chain(&r.speed).chain(&r.vartheta).all(|x| x.is_finite()));
        assert!(field::max_abs(&r.sigma) > 0.0 && field::max_abs(&r.speed) > 0.0);
    }

    #[test]
    fn modes_decay_monotonically() {
        for exchange in [false, true] {
            let h = mode_decay(0.5, 0.1, 50, exchange);
            assert_eq!(h.len(), 102);
            assert!(h[..51].windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)), "{h:?}");
            assert!(h[50] < h[0]);
        }
    }

    #[test]
    fn kernel_report_passes() {
        let v: serde_json::Value = serde_json::from_str(&kernel_decay(1.0).unwrap_or_else(|_| panic!())).unwrap();
        assert_eq!(v["pass"], true);
    }
}
