//! Fixed-step classical RK4 for smooth coefficient systems, run backward from
//! a terminal condition or forward from an initial one.

use ndarray::{Array1, Array2};

use crate::error::{domain, Error, Result};

type RhsFn<'a> = Box<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'a>;

/// `dy/dt = rhs(t, y)`; the right-hand side writes into its output slice.
pub struct OdeSystem<'a> {
    dim: usize,
    rhs: RhsFn<'a>,
}

impl<'a> OdeSystem<'a> {
    pub fn new<F>(dim: usize, rhs: F) -> Self
    where
        F: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'a,
    {
        Self { dim, rhs: Box::new(rhs) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, t: f64, y: &[f64], out: &mut [f64]) -> Result<()> {
        (self.rhs)(t, y, out);
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFiniteRhs { t })
        }
    }
}

/// Node values on a uniform grid with a linear interpolant between nodes.
#[derive(Debug, Clone)]
pub struct OdeSolution {
    pub times: Array1<f64>,
    /// `(steps+1) × dim`.
    pub values: Array2<f64>,
}

impl OdeSolution {
    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    /// Interpolated component `j` at `t`; `t` is clamped to the grid.
    pub fn component(&self, t: f64, j: usize) -> f64 {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.values[[0, j]];
        }
        if t >= self.times[n - 1] {
            return self.values[[n - 1, j]];
        }
        let i = self.times.as_slice().unwrap().partition_point(|s| *s <= t) - 1;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let w = (t - t0) / (t1 - t0);
        let (a, b) = (self.values[[i, j]], self.values[[i + 1, j]]);
        if w == 0.0 {
            a
        } else {
            a + w * (b - a)
        }
    }

    /// Interpolated state vector at `t`.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        (0..self.dim()).map(|j| self.component(t, j)).collect()
    }

    pub fn at_node(&self, i: usize) -> Vec<f64> {
        self.values.row(i).to_vec()
    }
}

fn check(system: &OdeSystem<'_>, y: &[f64], t0: f64, t1: f64, steps: usize) -> Result<()> {
    if !(t0 < t1) {
        return domain(format!("integration interval [{t0}, {t1}] is empty"));
    }
    if steps == 0 {
        return domain("at least one step is required");
    }
    if y.len() != system.dim {
        return domain(format!("boundary vector has length {}, system has dimension {}", y.len(), system.dim));
    }
    Ok(())
}

fn grid(t0: f64, t1: f64, steps: usize) -> Array1<f64> {
    let dt = (t1 - t0) / steps as f64;
    Array1::from_shape_fn(steps + 1, |k| if k == steps { t1 } else { t0 + k as f64 * dt })
}

struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    /// Advances `y` from `t` to `t + h` (h may be negative).
    fn step(&mut self, system: &OdeSystem<'_>, t: f64, h: f64, y: &mut [f64]) -> Result<()> {
        let n = y.len();
        system.eval(t, y, &mut self.k1)?;
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * h * self.k1[i];
        }
        system.eval(t + 0.5 * h, &self.tmp, &mut self.k2)?;
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * h * self.k2[i];
        }
        system.eval(t + 0.5 * h, &self.tmp, &mut self.k3)?;
        for i in 0..n {
            self.tmp[i] = y[i] + h * self.k3[i];
        }
        system.eval(t + h, &self.tmp, &mut self.k4)?;
        for i in 0..n {
            y[i] += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        Ok(())
    }
}

/// Integrates backward from `y(T) = terminal` to `t0`.
pub fn integrate_terminal(system: &OdeSystem<'_>, terminal: &[f64], t0: f64, horizon: f64, steps: usize) -> Result<OdeSolution> {
    check(system, terminal, t0, horizon, steps)?;
    let times = grid(t0, horizon, steps);
    let mut values = Array2::zeros((steps + 1, system.dim));
    let mut y = terminal.to_vec();
    values.row_mut(steps).assign(&Array1::from(y.clone()));
    let mut rk = Rk4::new(system.dim);
    for k in (0..steps).rev() {
        let h = times[k] - times[k + 1];
        rk.step(system, times[k + 1], h, &mut y)?;
        values.row_mut(k).assign(&Array1::from(y.clone()));
    }
    Ok(OdeSolution { times, values })
}

/// Integrates forward from `y(t0) = initial` to `T`.
pub fn integrate_initial(system: &OdeSystem<'_>, initial: &[f64], t0: f64, horizon: f64, steps: usize) -> Result<OdeSolution> {
    check(system, initial, t0, horizon, steps)?;
    let times = grid(t0, horizon, steps);
    let mut values = Array2::zeros((steps + 1, system.dim));
    let mut y = initial.to_vec();
    values.row_mut(0).assign(&Array1::from(y.clone()));
    let mut rk = Rk4::new(system.dim);
    for k in 0..steps {
        let h = times[k + 1] - times[k];
        rk.step(system, times[k], h, &mut y)?;
        values.row_mut(k + 1).assign(&Array1::from(y.clone()));
    }
    Ok(OdeSolution { times, values })
}
