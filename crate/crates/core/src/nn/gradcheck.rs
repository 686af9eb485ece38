//! Central-difference gradient verification.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::graph::{Graph, Var};
use crate::nn::params::{Bound, GradStore, ParamStore};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug)]
pub struct GradcheckConfig {
    /// Finite-difference step.
    pub h: f64,
    /// Coordinates sampled per tensor when it is larger than this.
    pub max_coords: usize,
    /// Relative errors are `|a - n| / max(|a|, |n|, denom_floor)`.
    pub denom_floor: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            h: 1e-5,
            max_coords: 200,
            denom_floor: 1e-3,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub coords: usize,
    /// Coordinates whose perturbation crossed a relu/max-pool/clamp branch
    /// and were therefore not compared.
    pub skipped: usize,
    /// Location of the worst coordinate, `name[index]`.
    pub worst: String,
}

impl GradcheckReport {
    fn record(&mut self, name: &str, i: usize, analytic: f64, numeric: f64, floor: f64) {
        let abs = (analytic - numeric).abs();
        let rel = abs / analytic.abs().max(numeric.abs()).max(floor);
        self.coords += 1;
        self.max_abs_err = self.max_abs_err.max(abs);
        if rel > self.max_rel_err || self.worst.is_empty() {
            self.max_rel_err = self.max_rel_err.max(rel);
            self.worst = format!("{name}[{i}] analytic={analytic:.6e} numeric={numeric:.6e}");
        }
    }

    pub fn merge(&mut self, other: &GradcheckReport) {
        self.coords += other.coords;
        self.skipped += other.skipped;
        self.max_abs_err = self.max_abs_err.max(other.max_abs_err);
        if other.max_rel_err >= self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst.clone();
        }
    }
}

fn coords_to_check(len: usize, max: usize, rng: &mut RngStream) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        let mut c = rng.choose_distinct(len, max);
        c.sort_unstable();
        c
    }
}

fn finite_loss(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("gradcheck loss is {v} ({what})")))
    }
}

/// Checks gradients of a scalar closure with respect to every parameter of
/// `store`. The closure must be deterministic; it receives the (possibly
/// perturbed) store and returns the graph, its scalar output and the binding.
pub fn gradcheck_params<F>(
    store: &mut ParamStore,
    mut closure: F,
    cfg: GradcheckConfig,
    rng: &mut RngStream,
) -> Result<GradcheckReport>
where
    F: FnMut(&ParamStore) -> Result<(Graph, Var, Bound)>,
{
    let (g, loss, bound) = closure(store)?;
    finite_loss(g.value(loss).item(), "unperturbed")?;
    let pattern = g.branch_pattern();
    let grads = g.backward(loss)?;
    let mut analytic = GradStore::zeros_like(store);
    analytic.accumulate(&bound, &grads, 1.0);
    drop(g);

    let mut report = GradcheckReport::default();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let len = store.get(id).value.len();
        let name = store.get(id).name.clone();
        for i in coords_to_check(len, cfg.max_coords, rng) {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + cfg.h;
            let (gp, lp, _) = closure(store)?;
            let fp = finite_loss(gp.value(lp).item(), &name)?;
            let same_p = gp.branch_pattern() == pattern;
            store.get_mut(id).value.data_mut()[i] = orig - cfg.h;
            let (gm, lm, _) = closure(store)?;
            let fm = finite_loss(gm.value(lm).item(), &name)?;
            let same_m = gm.branch_pattern() == pattern;
            store.get_mut(id).value.data_mut()[i] = orig;
            if !(same_p && same_m) {
                report.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * cfg.h);
            report.record(&name, i, analytic.get(id).data()[i], numeric, cfg.denom_floor);
        }
    }
    Ok(report)
}

/// Checks gradients of a scalar function of free input matrices.
pub fn gradcheck_inputs<F>(
    inputs: &[Matrix],
    mut f: F,
    cfg: GradcheckConfig,
    rng: &mut RngStream,
) -> Result<GradcheckReport>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Matrix], f: &mut F| -> Result<(f64, u64)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|m| g.constant(m.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok((g.value(out).item(), g.branch_pattern()))
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|m| g.leaf(m.clone())).collect();
    let out = f(&mut g, &vars)?;
    finite_loss(g.value(out).item(), "unperturbed")?;
    let pattern = g.branch_pattern();
    let grads = g.backward(out)?;

    let mut report = GradcheckReport::default();
    let mut vals = inputs.to_vec();
    for (k, &v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(v, inputs[k].shape());
        for i in coords_to_check(inputs[k].len(), cfg.max_coords, rng) {
            let orig = vals[k].data()[i];
            vals[k].data_mut()[i] = orig + cfg.h;
            let (fp, pp) = eval(&vals, &mut f)?;
            vals[k].data_mut()[i] = orig - cfg.h;
            let (fm, pm) = eval(&vals, &mut f)?;
            vals[k].data_mut()[i] = orig;
            let (fp, fm) = (finite_loss(fp, "input")?, finite_loss(fm, "input")?);
            if pp != pattern || pm != pattern {
                report.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * cfg.h);
            report.record(&format!("input{k}"), i, analytic.data()[i], numeric, cfg.denom_floor);
        }
    }
    Ok(report)
}
