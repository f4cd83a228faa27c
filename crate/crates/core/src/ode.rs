//! Fixed-step classical Runge-Kutta with reusable stage buffers.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Rk4 {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.tmp.len()
    }

    /// One step of size `dt` for the autonomous system `y' = f(y)`.
    pub fn step<F>(&mut self, f: &mut F, y: &mut [f64], dt: f64) -> Result<()>
    where
        F: FnMut(&[f64], &mut [f64]) -> Result<()>,
    {
        if y.len() != self.dim() {
            return Err(Error::Shape { expected: self.dim(), got: y.len() });
        }
        let half = 0.5 * dt;
        f(y, &mut self.k1)?;
        for ((t, yi), k) in self.tmp.iter_mut().zip(y.iter()).zip(&self.k1) {
            *t = yi + half * k;
        }
        f(&self.tmp, &mut self.k2)?;
        for ((t, yi), k) in self.tmp.iter_mut().zip(y.iter()).zip(&self.k2) {
            *t = yi + half * k;
        }
        f(&self.tmp, &mut self.k3)?;
        for ((t, yi), k) in self.tmp.iter_mut().zip(y.iter()).zip(&self.k3) {
            *t = yi + dt * k;
        }
        f(&self.tmp, &mut self.k4)?;
        let sixth = dt / 6.0;
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += sixth * (self.k1[i] + 2.0 * (self.k2[i] + self.k3[i]) + self.k4[i]);
        }
        Ok(())
    }

    /// Advances `y` by `span` using the fewest equal steps no longer than
    /// `max_dt`. Returns the number of steps taken.
    pub fn advance<F>(&mut self, f: &mut F, y: &mut [f64], span: f64, max_dt: f64) -> Result<usize>
    where
        F: FnMut(&[f64], &mut [f64]) -> Result<()>,
    {
        if !(max_dt > 0.0) || !max_dt.is_finite() {
            return Err(Error::Integration(format!("step size must be positive, got {max_dt}")));
        }
        if !(span >= 0.0) {
            return Err(Error::Integration(format!("cannot integrate backwards (span {span})")));
        }
        if span == 0.0 {
            return Ok(0);
        }
        let steps = (span / max_dt).ceil().max(1.0);
        if steps > 1e12 {
            return Err(Error::Integration("step size underflow".into()));
        }
        let steps = steps as usize;
        let dt = span / steps as f64;
        for _ in 0..steps {
            self.step(f, y, dt)?;
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration("state became non-finite".into()));
        }
        Ok(steps)
    }
}
