use fbtrain::beamforming::{solve_precoders, stream_mse_and_weight, weighted_covariance, ConstraintKind};
use fbtrain::linalg::{c, cn_vector, CVec, C64};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn mse(w: &CVec, observed: &[CVec], desired: usize, noise: f64) -> f64 {
    stream_mse_and_weight(w, observed, desired, noise).0
}

/// Plain gradient descent with backtracking on the real parametrization.
pub fn numerical_mse_minimum(observed: &[CVec], noise: f64) -> f64 {
    let n = observed[0].len();
    let eval = |x: &[f64]| -> f64 {
        let w = CVec::from_fn(n, |i, _| c(x[2 * i], x[2 * i + 1]));
        mse(&w, observed, 0, noise)
    };
    let mut x = vec![0.0; 2 * n];
    let mut fx = eval(&x);
    let mut step = 1.0;
    for _ in 0..20_000 {
        let h = 1e-7;
        let grad: Vec<f64> = (0..x.len())
            .map(|i| {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                (eval(&xp) - eval(&xm)) / (2.0 * h)
            })
            .collect();
        let g2: f64 = grad.iter().map(|g| g * g).sum();
        if g2 < 1e-22 {
            break;
        }
        loop {
            let trial: Vec<f64> = x.iter().zip(&grad).map(|(a, g)| a - step * g).collect();
            let ft = eval(&trial);
            if ft <= fx - 0.5 * step * g2 {
                x = trial;
                fx = ft;
                step *= 1.5;
                break;
            }
            step *= 0.5;
            if step < 1e-18 {
                return fx;
            }
        }
    }
    fx
}

/// Weighted MSE of the MISO toy up to terms independent of the precoders.
struct MisoToy {
    h: Vec<CVec>,
    w: Vec<C64>,
    omega: Vec<f64>,
}

impl MisoToy {
    fn objective(&self, m: &[CVec]) -> f64 {
        let mut f = 0.0;
        for k in 0..2 {
            let own = self.w[k].conj() * self.h[k].dot(&m[k]);
            f += self.omega[k] * (c(1.0, 0.0) - own).norm_sqr();
            let j = 1 - k;
            f += self.omega[k] * self.w[k].norm_sqr() * self.h[k].dot(&m[j]).norm_sqr();
        }
        f
    }

    /// Best value of precoder `j`'s terms for each power on `powers`, searched
    /// over unit directions and phases on a 2-degree grid.
    fn grid_profile(&self, j: usize, powers: &[f64]) -> Vec<f64> {
        let k = 1 - j;
        let step = 2f64.to_radians();
        let mut best = vec![f64::INFINITY; powers.len()];
        for ti in 0..=45 {
            let theta = ti as f64 * step;
            for pi in 0..180 {
                let phi = pi as f64 * step;
                let u = CVec::from_vec(vec![c(theta.cos(), 0.0), C64::from_polar(theta.sin(), phi)]);
                let leak = self.omega[k] * self.w[k].norm_sqr() * self.h[k].dot(&u).norm_sqr();
                let a0 = self.w[j].conj() * self.h[j].dot(&u);
                for si in 0..180 {
                    let a = a0 * C64::from_polar(1.0, si as f64 * step);
                    for (b, &p) in best.iter_mut().zip(powers) {
                        let s = p.sqrt();
                        let v = self.omega[j] * (1.0 - 2.0 * s * a.re + p * a.norm_sqr()) + p * leak;
                        if v < *b {
                            *b = v;
                        }
                    }
                }
            }
        }
        best
    }
}

/// Objective of `solve_precoders` on a random two-user MISO toy and the best
/// value found by the grid search.
pub fn miso_trial(r: &mut ChaCha8Rng, power: f64) -> (f64, f64) {
    let toy = MisoToy {
        h: (0..2).map(|_| cn_vector(r, 2, 1.0)).collect(),
        w: (0..2).map(|_| c(r.random_range(0.2..1.0), r.random_range(-0.5..0.5))).collect(),
        omega: (0..2).map(|_| r.random_range(0.5..3.0)).collect(),
    };
    // uplink cascades g = h^* w for single-antenna receivers
    let g: Vec<CVec> = (0..2).map(|k| toy.h[k].map(|z| z.conj()) * toy.w[k]).collect();
    let own: Vec<(CVec, f64)> = (0..2).map(|k| (g[k].clone(), toy.omega[k])).collect();
    let a = weighted_covariance(2, &own);
    let m = solve_precoders(&a, &own, power, ConstraintKind::PerBsTotal).unwrap();
    let ours = toy.objective(&[m.column(0).into_owned(), m.column(1).into_owned()]);

    let steps = 100;
    let powers: Vec<f64> = (0..=steps).map(|i| power * i as f64 / steps as f64).collect();
    let p0 = toy.grid_profile(0, &powers);
    let mut p1 = toy.grid_profile(1, &powers);
    for i in 1..p1.len() {
        p1[i] = p1[i].min(p1[i - 1]);
    }
    let grid = (0..=steps).map(|i| p0[i] + p1[steps - i]).fold(f64::INFINITY, f64::min);
    (ours, grid)
}
