//! Explicit Runge-Kutta integrators for complex linear systems.

use crate::{Complex64, Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dopri5Options {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for Dopri5Options {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-12,
            h_init: 1e-4,
            h_min: 1e-13,
            max_steps: 50_000_000,
        }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Dormand-Prince 5(4) with PI-free standard step control. The step size is
/// carried across calls to `advance`.
#[derive(Debug, Clone)]
pub struct Dopri5 {
    opts: Dopri5Options,
    h: f64,
    k: [Vec<Complex64>; 7],
    tmp: Vec<Complex64>,
    steps: usize,
}

impl Dopri5 {
    pub fn new(n: usize, opts: Dopri5Options) -> Self {
        let z = vec![Complex64::new(0.0, 0.0); n];
        Self {
            h: opts.h_init,
            opts,
            k: std::array::from_fn(|_| z.clone()),
            tmp: z,
            steps: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Integrate y' = f(t, y) from `t` to `t_end` in place.
    pub fn advance<F>(&mut self, f: &mut F, t: f64, y: &mut [Complex64], t_end: f64) -> Result<()>
    where
        F: FnMut(f64, &[Complex64], &mut [Complex64]),
    {
        let n = y.len();
        let mut t = t;
        if t_end <= t {
            return Ok(());
        }
        f(t, y, &mut self.k[0]);
        while t < t_end {
            let last = t_end - t <= self.h * (1.0 + 1e-12);
            let h = if last { t_end - t } else { self.h };
            if h < self.opts.h_min {
                if last {
                    // sliver left by rounding
                    for i in 0..n {
                        y[i] += self.k[0][i] * h;
                    }
                    return Ok(());
                }
                return Err(SimError::StepUnderflow { t_last: t });
            }
            self.steps += 1;
            if self.steps > self.opts.max_steps {
                return Err(SimError::StepUnderflow { t_last: t });
            }
            let err = self.trial(f, t, y, h);
            if err <= 1.0 {
                t = if last { t_end } else { t + h };
                // y_new is in tmp, derivative at the new point in k[6]
                y.copy_from_slice(&self.tmp);
                let (head, tail) = self.k.split_at_mut(6);
                head[0].copy_from_slice(&tail[0]);
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                if !last || h >= self.h {
                    self.h = h * fac;
                }
            } else {
                let fac = (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
                self.h = h * fac;
            }
        }
        Ok(())
    }

    /// One Dormand-Prince trial step; leaves the 5th order solution in `tmp`
    /// and returns the scaled error norm.
    fn trial<F>(&mut self, f: &mut F, t: f64, y: &[Complex64], h: f64) -> f64
    where
        F: FnMut(f64, &[Complex64], &mut [Complex64]),
    {
        let n = y.len();
        let stage = |k: &[Vec<Complex64>; 7], coef: &[f64], out: &mut Vec<Complex64>| {
            for i in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for (j, c) in coef.iter().enumerate() {
                    if *c != 0.0 {
                        acc += k[j][i] * *c;
                    }
                }
                out[i] = y[i] + acc * h;
            }
        };
        let mut tmp = std::mem::take(&mut self.tmp);
        stage(&self.k, &[A21], &mut tmp);
        f(t + C2 * h, &tmp, &mut self.k[1]);
        stage(&self.k, &[A31, A32], &mut tmp);
        f(t + C3 * h, &tmp, &mut self.k[2]);
        stage(&self.k, &[A41, A42, A43], &mut tmp);
        f(t + C4 * h, &tmp, &mut self.k[3]);
        stage(&self.k, &[A51, A52, A53, A54], &mut tmp);
        f(t + C5 * h, &tmp, &mut self.k[4]);
        stage(&self.k, &[A61, A62, A63, A64, A65], &mut tmp);
        f(t + h, &tmp, &mut self.k[5]);
        stage(&self.k, &[B1, 0.0, B3, B4, B5, B6], &mut tmp);
        f(t + h, &tmp, &mut self.k[6]);
        let mut acc = 0.0;
        for i in 0..n {
            let e = (self.k[0][i] * E1
                + self.k[2][i] * E3
                + self.k[3][i] * E4
                + self.k[4][i] * E5
                + self.k[5][i] * E6
                + self.k[6][i] * E7)
                * h;
            let sc = self.opts.atol + self.opts.rtol * y[i].norm().max(tmp[i].norm());
            acc += (e.norm() / sc).powi(2);
        }
        self.tmp = tmp;
        let err = (acc / n as f64).sqrt();
        if err.is_finite() {
            err
        } else {
            f64::INFINITY
        }
    }
}

/// Workspace for classical fixed-step RK4.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k: [Vec<Complex64>; 4],
    tmp: Vec<Complex64>,
}

impl Rk4 {
    pub fn new(n: usize) -> Self {
        let z = vec![Complex64::new(0.0, 0.0); n];
        Self {
            k: std::array::from_fn(|_| z.clone()),
            tmp: z,
        }
    }

    /// One step of size h. `f(stage, y, out)` evaluates the derivative at
    /// stage 0 (t), 1 and 2 (t + h/2) and 3 (t + h).
    pub fn step<F>(&mut self, f: &mut F, y: &mut [Complex64], h: f64)
    where
        F: FnMut(usize, &[Complex64], &mut [Complex64]),
    {
        let n = y.len();
        f(0, y, &mut self.k[0]);
        for i in 0..n {
            self.tmp[i] = y[i] + self.k[0][i] * (h / 2.0);
        }
        f(1, &self.tmp, &mut self.k[1]);
        for i in 0..n {
            self.tmp[i] = y[i] + self.k[1][i] * (h / 2.0);
        }
        f(2, &self.tmp, &mut self.k[2]);
        for i in 0..n {
            self.tmp[i] = y[i] + self.k[2][i] * h;
        }
        f(3, &self.tmp, &mut self.k[3]);
        for i in 0..n {
            y[i] += (self.k[0][i] + (self.k[1][i] + self.k[2][i]) * 2.0 + self.k[3][i]) * (h / 6.0);
        }
    }
}
