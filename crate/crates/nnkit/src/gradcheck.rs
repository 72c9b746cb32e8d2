//! Central finite-difference checks of [`Graph::backward`].

use crate::{Grads, Graph, ParamStore, Result, Var};

/// Denominator floor for the relative error, so that gradients that are
/// zero up to rounding compare on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub numel: usize,
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, REL_FLOOR)`.
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub params: Vec<ParamCheck>,
}

impl CheckReport {
    pub fn worst(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.params.iter().all(|p| p.max_rel_error < tol)
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the backward pass of the scalar built by `loss` against
/// `(L(p + h) - L(p - h)) / 2h` for every scalar of every parameter.
pub fn check_all<F>(store: &ParamStore, h: f64, loss: F) -> Result<CheckReport>
where
    F: for<'p> Fn(&mut Graph<'p>) -> Result<Var>,
{
    let mut grads = Grads::zeros_like(store);
    {
        let mut g = Graph::new(store);
        let l = loss(&mut g)?;
        g.backward(l, &mut grads)?;
    }
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(s);
        let l = loss(&mut g)?;
        Ok(g.value(l)[0])
    };
    let mut work = store.clone();
    let mut params = Vec::with_capacity(store.len());
    for id in store.ids() {
        let mut worst = 0.0f64;
        for k in 0..store.get(id).len() {
            let orig = store.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = orig + h;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig - h;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig;
            worst = worst.max(rel_error(grads.get(id)[k], (up - down) / (2.0 * h)));
        }
        params.push(ParamCheck { name: store.name(id).to_string(), numel: store.get(id).len(), max_rel_error: worst });
    }
    Ok(CheckReport { params })
}
