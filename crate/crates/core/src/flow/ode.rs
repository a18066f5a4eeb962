//! Classical fourth-order Runge-Kutta for any [`Linear`] state.

use crate::chart::Linear;
use crate::error::Result;
use crate::field::Field;

fn shifted<S: Linear>(s: &S, w: f64, k: &S) -> S {
    let mut r = *s;
    r.add_scaled(w, k);
    r
}

/// One RK4 step of `ds/dbeta = rhs(beta, s)`.
pub fn rk4_step<S: Linear>(s: &S, beta: f64, dt: f64, mut rhs: impl FnMut(f64, &S) -> Result<S>) -> Result<S> {
    let k1 = rhs(beta, s)?;
    let k2 = rhs(beta + 0.5 * dt, &shifted(s, 0.5 * dt, &k1))?;
    let k3 = rhs(beta + 0.5 * dt, &shifted(s, 0.5 * dt, &k2))?;
    let k4 = rhs(beta + dt, &shifted(s, dt, &k3))?;
    let mut out = *s;
    out.add_scaled(dt / 6.0, &k1);
    out.add_scaled(dt / 3.0, &k2);
    out.add_scaled(dt / 3.0, &k3);
    out.add_scaled(dt / 6.0, &k4);
    Ok(out)
}

/// Integrates with `steps` equal RK4 steps from `beta0` to `beta1`.
pub fn integrate_fixed<S: Linear>(
    s0: &S,
    beta0: f64,
    beta1: f64,
    steps: usize,
    mut rhs: impl FnMut(f64, &S) -> Result<S>,
) -> Result<S> {
    let dt = (beta1 - beta0) / steps as f64;
    let mut s = *s0;
    for i in 0..steps {
        s = rk4_step(&s, beta0 + i as f64 * dt, dt, &mut rhs)?;
    }
    Ok(s)
}

/// RK4 step for a grid field.
pub fn rk4_field_step<T: Linear>(
    s: &Field<T>,
    beta: f64,
    dt: f64,
    mut rhs: impl FnMut(f64, &Field<T>) -> Result<Field<T>>,
) -> Result<Field<T>> {
    let k1 = rhs(beta, s)?;
    let k2 = rhs(beta + 0.5 * dt, &s.axpy(0.5 * dt, &k1))?;
    let k3 = rhs(beta + 0.5 * dt, &s.axpy(0.5 * dt, &k2))?;
    let k4 = rhs(beta + dt, &s.axpy(dt, &k3))?;
    Ok(Field::combine(&[
        (1.0, s),
        (dt / 6.0, &k1),
        (dt / 3.0, &k2),
        (dt / 3.0, &k3),
        (dt / 6.0, &k4),
    ]))
}

/// Single-entry memo keyed by the evaluation parameter.
///
/// RK4 asks for the midpoint twice and for the endpoint again on the next step.
pub struct Memo<V> {
    slot: Option<(f64, V)>,
}

impl<V> Default for Memo<V> {
    fn default() -> Self {
        Memo { slot: None }
    }
}

impl<V> Memo<V> {
    pub fn get(&mut self, key: f64, make: impl FnOnce(f64) -> Result<V>) -> Result<&V> {
        if !matches!(&self.slot, Some((k, _)) if *k == key) {
            self.slot = Some((key, make(key)?));
        }
        Ok(&self.slot.as_ref().expect("filled above").1)
    }
}
