//! Maximum likelihood fits of partition models and mixed models, and
//! standard errors from numerical curvature.
//!
//! Untruncated factor groups use the profile identity `μₖ = ȳₖ − λ`, which
//! holds at the MLE, and maximize over λ alone on `[0, minₖ ȳₖ]`. Truncated
//! groups have no such identity and are fitted jointly over all log rates by
//! BFGS with analytic gradients.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dists::{log_add_exp, PmfKernel};
use crate::error::{Error, Result};
use crate::likelihood::{
    alternative_params, group_loglik, group_loglik_grad, mixed_loglik, model_loglik, CountMatrix,
    GroupKernel, GroupParams, MixedModelSpec,
};
use crate::optim::{bfgs, golden_section_max, BfgsOptions};
use crate::partitions::ModelPartition;
use crate::selection::aic;

/// Log rates at or below this map to a rate of exactly zero.
const LN_RATE_FLOOR: f64 = -23.0;
/// Log rates are capped here (rate ≈ 1.6e5) so boundary-seeking truncated
/// fits cannot run off to infinity.
const LN_RATE_CAP: f64 = 12.0;
/// Estimates closer than this to a bound are reported as boundary values.
pub const BOUNDARY_EPS: f64 = 1e-6;
/// Mixing probabilities are clamped to `[ε, 1 − ε]` inside the optimizer.
const PI_CLAMP: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub tol_loglik: f64,
    pub tol_param: f64,
    pub max_iters: usize,
    pub init_factor_rate: f64,
    /// Seed for the jittered restarts of joint fits.
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol_loglik: 1e-8,
            tol_param: 1e-8,
            max_iters: 500,
            init_factor_rate: 1e-3,
            seed: 0,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_loglik > 0.0 && self.tol_param > 0.0 && self.init_factor_rate > 0.0) {
            return Err(Error::InvalidParameter(
                "fit tolerances and the initial factor rate must be positive".into(),
            ));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be at least 1".into()));
        }
        Ok(())
    }

    fn bfgs(&self) -> BfgsOptions {
        BfgsOptions {
            max_iters: self.max_iters,
            ftol: self.tol_loglik,
            xtol: self.tol_param,
            gtol: 1e-6,
            max_step: 2.0,
        }
    }
}

/// Result of fitting one group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupFit {
    pub params: GroupParams,
    pub loglik: f64,
    pub converged: bool,
}

/// Mixing information carried by a fitted mixed model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedFit {
    pub moved_var: usize,
    pub alt_group: usize,
    pub pi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub partition: ModelPartition,
    pub mixed: Option<MixedFit>,
    pub params: Vec<GroupParams>,
    pub loglik: f64,
    pub aic: f64,
    pub n_params: usize,
    pub std_errors: Option<Vec<Option<f64>>>,
    pub converged: bool,
    pub n_obs: usize,
    pub trunc_bound: Option<u32>,
}

impl FittedModel {
    fn assemble(
        partition: ModelPartition,
        mixed: Option<MixedFit>,
        params: Vec<GroupParams>,
        loglik: f64,
        converged: bool,
        data: &CountMatrix,
    ) -> Self {
        let n_params = partition.param_count() + usize::from(mixed.is_some());
        Self {
            partition,
            mixed,
            params,
            loglik,
            aic: aic(loglik, n_params),
            n_params,
            std_errors: None,
            converged,
            n_obs: data.n_obs(),
            trunc_bound: data.trunc_bound(),
        }
    }

    /// Parameters as one vector: `π` first for mixed fits, then per group
    /// `λ` (factor groups only) followed by the members' `μ`.
    pub fn param_vector(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.mixed.iter().map(|m| m.pi).collect();
        v.extend(flatten(&self.params));
        v
    }

    /// Names matching [`param_vector`](Self::param_vector): `pi`,
    /// `lambda_<group>` (1-based canonical group), `mu_<variable>`.
    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.mixed.iter().map(|_| "pi".to_string()).collect();
        for (gi, (g, gp)) in self.partition.groups().iter().zip(&self.params).enumerate() {
            if gp.lambda.is_some() {
                names.push(format!("lambda_{}", gi + 1));
            }
            names.extend(g.iter().map(|v| format!("mu_{}", v + 1)));
        }
        names
    }

    /// Which entries of [`param_vector`](Self::param_vector) sit within
    /// [`BOUNDARY_EPS`] of a bound.
    pub fn boundary_mask(&self) -> Vec<bool> {
        let mut mask: Vec<bool> = self
            .mixed
            .iter()
            .map(|m| m.pi < BOUNDARY_EPS || m.pi > 1.0 - BOUNDARY_EPS)
            .collect();
        mask.extend(flatten(&self.params).iter().map(|&r| r <= BOUNDARY_EPS));
        mask
    }

    /// Log-likelihood at an arbitrary parameter vector in
    /// [`param_vector`](Self::param_vector) layout.
    pub fn loglik_at(&self, data: &CountMatrix, theta: &[f64]) -> Result<f64> {
        let offset = usize::from(self.mixed.is_some());
        if theta.len() != self.n_params {
            return Err(Error::InvalidParameter(format!(
                "{} values for {} parameters",
                theta.len(),
                self.n_params
            )));
        }
        let params = unflatten(&self.params, &theta[offset..]);
        match &self.mixed {
            None => model_loglik(data, &self.partition, &params),
            Some(m) => {
                let spec = MixedModelSpec::new(self.partition.clone(), m.moved_var, m.alt_group, theta[0])?;
                mixed_loglik(data, &spec, &params)
            }
        }
    }

    /// Identity check `λ̂ + μ̂ₖ = ȳₖ` for every member of every factor group;
    /// returns the largest absolute deviation.
    pub fn profile_identity_error(&self, data: &CountMatrix) -> f64 {
        let mut worst: f64 = 0.0;
        for (g, gp) in self.partition.groups().iter().zip(&self.params) {
            if let Some(l) = gp.lambda {
                for (&v, &mu) in g.iter().zip(&gp.mus) {
                    worst = worst.max((l + mu - data.col_mean(v)).abs());
                }
            }
        }
        worst
    }
}

pub(crate) fn flatten(params: &[GroupParams]) -> Vec<f64> {
    params
        .iter()
        .flat_map(|gp| gp.lambda.into_iter().chain(gp.mus.iter().copied()))
        .collect()
}

pub(crate) fn unflatten(template: &[GroupParams], values: &[f64]) -> Vec<GroupParams> {
    let mut it = values.iter().copied();
    template
        .iter()
        .map(|gp| GroupParams {
            lambda: gp.lambda.map(|_| it.next().expect("enough values")),
            mus: gp.mus.iter().map(|_| it.next().expect("enough values")).collect(),
        })
        .collect()
}

fn rate_from_log(t: f64) -> f64 {
    if t <= LN_RATE_FLOOR {
        0.0
    } else {
        t.min(LN_RATE_CAP).exp()
    }
}

fn log_from_rate(r: f64) -> f64 {
    if r <= 0.0 {
        LN_RATE_FLOOR - 1.0
    } else {
        r.ln().clamp(LN_RATE_FLOOR + 1e-9, LN_RATE_CAP)
    }
}

/// Gradient factor of `rate_from_log`: zero where the map is flat.
fn log_map_slope(t: f64) -> f64 {
    if t <= LN_RATE_FLOOR || t >= LN_RATE_CAP {
        0.0
    } else {
        1.0
    }
}

fn require_untruncated(data: &CountMatrix) -> Result<()> {
    if data.trunc_bound().is_some() {
        return Err(Error::InvalidData(
            "the profiled Poisson fit needs untruncated data".into(),
        ));
    }
    Ok(())
}

/// Profiled ML fit of an untruncated factor group: maximizes the group
/// log-likelihood over `λ ∈ [0, min ȳ]` with `μₖ = ȳₖ − λ`.
pub fn fit_group_poisson(data: &CountMatrix, vars: &[usize], opts: &FitOptions) -> Result<GroupFit> {
    require_untruncated(data)?;
    if vars.len() < 2 {
        return Err(Error::InvalidParameter(
            "profiled fit needs a group of at least two variables".into(),
        ));
    }
    let means: Vec<f64> = vars.iter().map(|&v| data.col_mean(v)).collect();
    let hi = means.iter().copied().fold(f64::INFINITY, f64::min);
    let params_at = |lambda: f64| GroupParams::factor(lambda, means.iter().map(|m| (m - lambda).max(0.0)).collect());
    let objective = |lambda: f64| group_loglik(data, vars, &params_at(lambda)).unwrap_or(f64::NEG_INFINITY);
    let (lambda, loglik) = golden_section_max(objective, 0.0, hi, opts.tol_param);
    if !loglik.is_finite() {
        return Err(Error::FitFailed {
            partition: group_label(vars),
            reason: "profile likelihood is not finite anywhere on [0, min mean]".into(),
        });
    }
    Ok(GroupFit {
        params: params_at(lambda),
        loglik,
        converged: true,
    })
}

/// Joint ML fit of one group over all rates in log coordinates. Works for
/// both truncated and untruncated data; a group of size one has no factor.
pub fn fit_group_joint(data: &CountMatrix, vars: &[usize], opts: &FitOptions) -> Result<GroupFit> {
    opts.validate()?;
    let means: Vec<f64> = vars.iter().map(|&v| data.col_mean(v)).collect();
    let has_factor = vars.len() >= 2;

    let to_params = |t: &[f64]| -> GroupParams {
        if has_factor {
            GroupParams::factor(rate_from_log(t[0]), t[1..].iter().map(|&x| rate_from_log(x)).collect())
        } else {
            GroupParams::singleton(rate_from_log(t[0]))
        }
    };
    let objective = |t: &[f64]| -> (f64, Vec<f64>) {
        match group_loglik_grad(data, vars, &to_params(t)) {
            Ok((ll, g)) if ll.is_finite() => (
                -ll,
                g.iter().zip(t).map(|(gi, ti)| -gi * log_map_slope(*ti)).collect(),
            ),
            _ => (f64::INFINITY, vec![0.0; t.len()]),
        }
    };

    let lambda0 = opts.init_factor_rate;
    let mut start: Vec<f64> = Vec::with_capacity(vars.len() + 1);
    if has_factor {
        start.push(log_from_rate(lambda0));
        start.extend(means.iter().map(|m| log_from_rate((m - lambda0).max(1e-3))));
    } else {
        start.push(log_from_rate(means[0].max(1e-3)));
    }

    let bfgs_opts = opts.bfgs();
    let mut best = bfgs(objective, &start, &bfgs_opts);
    if !best.converged {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ vars_hash(vars));
        for _ in 0..3 {
            let jittered: Vec<f64> = start.iter().map(|s| s + rng.random_range(-0.5..0.5)).collect();
            let attempt = bfgs(objective, &jittered, &bfgs_opts);
            let better = attempt.f < best.f - opts.tol_loglik;
            if better || (attempt.converged && attempt.f <= best.f + opts.tol_loglik) {
                best = attempt;
            }
            if best.converged {
                break;
            }
        }
    }
    if !best.f.is_finite() {
        return Err(Error::FitFailed {
            partition: group_label(vars),
            reason: "log-likelihood not finite at any start".into(),
        });
    }
    Ok(GroupFit {
        params: to_params(&best.x),
        loglik: -best.f,
        converged: best.converged,
    })
}

/// Joint fit of a truncated group.
pub fn fit_group_truncated(data: &CountMatrix, vars: &[usize], opts: &FitOptions) -> Result<GroupFit> {
    let Some(bound) = data.trunc_bound() else {
        return Err(Error::InvalidData("truncated fit needs a truncation bound".into()));
    };
    if vars.len() == 1 {
        return fit_singleton_truncated(data, vars[0], bound);
    }
    fit_group_joint(data, vars, opts)
}

/// The truncated singleton MLE solves `E_μ[Y | Y ≤ A] = ȳ`; the mean is
/// increasing in `μ`, so bisect on `ln μ`.
fn fit_singleton_truncated(data: &CountMatrix, var: usize, bound: u32) -> Result<GroupFit> {
    let mean = data.col_mean(var);
    let vars = [var];
    let finish = |mu: f64| -> Result<GroupFit> {
        let params = GroupParams::singleton(mu);
        let loglik = group_loglik(data, &vars, &params)?;
        Ok(GroupFit {
            params,
            loglik,
            converged: true,
        })
    };
    if mean == 0.0 || bound == 0 {
        return finish(0.0);
    }
    if mean >= bound as f64 {
        return finish(LN_RATE_CAP.exp());
    }
    let (mut lo, mut hi) = (LN_RATE_FLOOR, LN_RATE_CAP);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if PmfKernel::new(mid.exp(), Some(bound)).mean() < mean {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    finish((0.5 * (lo + hi)).exp())
}

/// Dispatches on group size and truncation mode.
pub fn fit_group(data: &CountMatrix, vars: &[usize], opts: &FitOptions) -> Result<GroupFit> {
    match (data.trunc_bound(), vars.len()) {
        (_, 0) => Err(Error::InvalidParameter("empty group".into())),
        (Some(_), _) => fit_group_truncated(data, vars, opts),
        (None, 1) => {
            let params = GroupParams::singleton(data.col_mean(vars[0]));
            let loglik = group_loglik(data, vars, &params)?;
            Ok(GroupFit {
                params,
                loglik,
                converged: true,
            })
        }
        (None, _) => fit_group_poisson(data, vars, opts),
    }
}

/// Per-run memo of group fits keyed by the (sorted) member list.
#[derive(Debug, Default)]
pub struct GroupFitCache {
    fits: HashMap<Vec<usize>, GroupFit>,
}

impl GroupFitCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.fits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fits.is_empty()
    }

    pub fn get_or_fit(&mut self, data: &CountMatrix, vars: &[usize], opts: &FitOptions) -> Result<GroupFit> {
        if let Some(fit) = self.fits.get(vars) {
            return Ok(fit.clone());
        }
        let fit = fit_group(data, vars, opts)?;
        self.fits.insert(vars.to_vec(), fit.clone());
        Ok(fit)
    }
}

fn check_dims(data: &CountMatrix, p: &ModelPartition) -> Result<()> {
    if p.n_vars() != data.n_vars() {
        return Err(Error::InvalidParameter(format!(
            "{}-variable partition {p} for a {}-column matrix",
            p.n_vars(),
            data.n_vars()
        )));
    }
    Ok(())
}

/// Fits every group of `p` independently and assembles the model.
pub fn fit_model(data: &CountMatrix, p: &ModelPartition, opts: &FitOptions) -> Result<FittedModel> {
    fit_model_cached(data, p, opts, &mut GroupFitCache::new())
}

pub fn fit_model_cached(
    data: &CountMatrix,
    p: &ModelPartition,
    opts: &FitOptions,
    cache: &mut GroupFitCache,
) -> Result<FittedModel> {
    opts.validate()?;
    check_dims(data, p)?;
    let mut params = Vec::with_capacity(p.n_groups());
    let mut loglik = 0.0;
    let mut converged = true;
    for g in p.groups() {
        let fit = cache.get_or_fit(data, g, opts).map_err(|e| match e {
            Error::FitFailed { reason, .. } => Error::FitFailed {
                partition: p.to_string(),
                reason,
            },
            other => other,
        })?;
        loglik += fit.loglik;
        converged &= fit.converged;
        params.push(fit.params);
    }
    Ok(FittedModel::assemble(p.clone(), None, params, loglik, converged, data))
}

/// Base-layout parameters that reproduce a fit of the alternative partition.
fn base_layout_from_alt(
    spec: &MixedModelSpec,
    alt: &ModelPartition,
    alt_fit: &FittedModel,
    init_factor_rate: f64,
) -> Vec<GroupParams> {
    let mu_of = |v: usize| -> f64 {
        let gi = alt.group_of(v).expect("variable in alternative partition");
        let pos = alt.groups()[gi].iter().position(|&w| w == v).expect("member");
        alt_fit.params[gi].mus[pos]
    };
    let lambda_of = |v: usize| -> Option<f64> { alt.group_of(v).and_then(|gi| alt_fit.params[gi].lambda) };
    spec.base
        .groups()
        .iter()
        .enumerate()
        .map(|(gi, g)| {
            let mus = g.iter().map(|&v| mu_of(v)).collect();
            let lambda = if g.len() < 2 {
                None
            } else if gi == spec.alt_group {
                lambda_of(spec.moved_var).or(Some(init_factor_rate))
            } else {
                let rep = g.iter().copied().find(|&v| v != spec.moved_var).expect("remaining member");
                Some(lambda_of(rep).unwrap_or(0.0))
            };
            GroupParams { lambda, mus }
        })
        .collect()
}

/// Log-likelihood and gradient of the mixture in optimizer coordinates
/// `[logit π, ln rates...]` (base layout).
struct MixedObjective<'a> {
    data: &'a CountMatrix,
    spec: MixedModelSpec,
    template: Vec<GroupParams>,
    /// For each alternative-branch group: its members and, per slot
    /// (`λ` first when present), the index into the base-layout rate vector.
    alt_slots: Vec<(Vec<usize>, Vec<usize>)>,
    alt_template: Vec<GroupParams>,
    base_offsets: Vec<usize>,
}

impl<'a> MixedObjective<'a> {
    fn new(data: &'a CountMatrix, spec: MixedModelSpec, template: Vec<GroupParams>) -> Result<Self> {
        let mut base_offsets = Vec::with_capacity(template.len());
        let mut offset = 0;
        for gp in &template {
            base_offsets.push(offset);
            offset += gp.n_params();
        }
        // Index of each variable's μ and each group's λ in base layout.
        let mut mu_index = vec![0usize; spec.base.n_vars()];
        let mut lambda_index = vec![None; spec.base.n_groups()];
        for (gi, (g, gp)) in spec.base.groups().iter().zip(&template).enumerate() {
            let mut slot = base_offsets[gi];
            if gp.lambda.is_some() {
                lambda_index[gi] = Some(slot);
                slot += 1;
            }
            for &v in g {
                mu_index[v] = slot;
                slot += 1;
            }
        }
        let (alt, alt_template) = alternative_params(&spec, &template)?;
        let alt_slots = alt
            .groups()
            .iter()
            .zip(&alt_template)
            .map(|(g, gp)| {
                let source_group = if g.contains(&spec.moved_var) {
                    spec.alt_group
                } else {
                    spec.base.group_of(g[0]).expect("member of base")
                };
                let mut slots = Vec::new();
                if gp.lambda.is_some() {
                    slots.push(lambda_index[source_group].expect("factor group"));
                }
                slots.extend(g.iter().map(|&v| mu_index[v]));
                (g.clone(), slots)
            })
            .collect();
        Ok(Self {
            data,
            spec,
            template,
            alt_slots,
            alt_template,
            base_offsets,
        })
    }

    fn pi_from(t: f64) -> f64 {
        (1.0 / (1.0 + (-t).exp())).clamp(PI_CLAMP, 1.0 - PI_CLAMP)
    }

    fn params_from(&self, t: &[f64]) -> Vec<GroupParams> {
        let rates: Vec<f64> = t.iter().map(|&x| rate_from_log(x)).collect();
        unflatten(&self.template, &rates)
    }

    fn eval(&self, t: &[f64]) -> (f64, Vec<f64>) {
        let pi = Self::pi_from(t[0]);
        let rates = &t[1..];
        let base_params = self.params_from(rates);
        let trunc = self.data.trunc_bound();
        let base_kernels: Vec<GroupKernel> = base_params.iter().map(|gp| GroupKernel::new(gp, trunc)).collect();
        let flat_rates: Vec<f64> = rates.iter().map(|&x| rate_from_log(x)).collect();
        let alt_params: Vec<GroupParams> = self
            .alt_slots
            .iter()
            .zip(&self.alt_template)
            .map(|((_, slots), gp)| {
                let mut vals = slots.iter().map(|&s| flat_rates[s]);
                GroupParams {
                    lambda: gp.lambda.map(|_| vals.next().expect("slot")),
                    mus: vals.collect(),
                }
            })
            .collect();
        let alt_kernels: Vec<GroupKernel> = alt_params.iter().map(|gp| GroupKernel::new(gp, trunc)).collect();

        let n_rates = rates.len();
        let mut total = 0.0;
        let mut grad = vec![0.0; n_rates + 1];
        let mut g_base = vec![0.0; n_rates];
        let mut g_alt = vec![0.0; n_rates];
        let (ln_pi, ln_1m) = (pi.ln(), (1.0 - pi).ln());
        for row in self.data.rows() {
            g_base.iter_mut().for_each(|x| *x = 0.0);
            g_alt.iter_mut().for_each(|x| *x = 0.0);
            let mut lb = 0.0;
            for (gi, (g, k)) in self.spec.base.groups().iter().zip(&base_kernels).enumerate() {
                let off = self.base_offsets[gi];
                let width = base_params[gi].n_params();
                lb += k.row_ln_grad(row, g, &mut g_base[off..off + width]);
            }
            let mut la = 0.0;
            let mut scratch = Vec::new();
            for ((g, slots), k) in self.alt_slots.iter().zip(&alt_kernels) {
                scratch.clear();
                scratch.resize(slots.len(), 0.0);
                la += k.row_ln_grad(row, g, &mut scratch);
                for (s, v) in slots.iter().zip(&scratch) {
                    g_alt[*s] += v;
                }
            }
            let mix = log_add_exp(ln_pi + lb, ln_1m + la);
            if !mix.is_finite() {
                return (f64::INFINITY, vec![0.0; t.len()]);
            }
            total += mix;
            let wb = (ln_pi + lb - mix).exp();
            let wa = 1.0 - wb;
            // d mix / d logit π = π(1 − π)(e^lb − e^la)/e^mix = wb(1 − π) − wa π
            grad[0] += wb * (1.0 - pi) - wa * pi;
            for j in 0..n_rates {
                grad[j + 1] += wb * g_base[j] + wa * g_alt[j];
            }
        }
        let slope_pi = if pi <= PI_CLAMP || pi >= 1.0 - PI_CLAMP { 0.0 } else { 1.0 };
        grad[0] *= -slope_pi;
        for j in 0..n_rates {
            grad[j + 1] *= -log_map_slope(rates[j]);
        }
        (-total, grad)
    }
}

/// Fits the two-branch mixture over `π` and all rates jointly. The π = 1
/// and π = 0 collapses (plain fits of the two partitions) are always
/// candidates, so the mixed log-likelihood never falls below either.
pub fn fit_mixed(
    data: &CountMatrix,
    base: &ModelPartition,
    moved_var: usize,
    alt_group: usize,
    opts: &FitOptions,
) -> Result<FittedModel> {
    opts.validate()?;
    check_dims(data, base)?;
    let spec = MixedModelSpec::new(base.clone(), moved_var, alt_group, 0.5)?;
    let alt = spec.alternative()?;

    let mut cache = GroupFitCache::new();
    let base_fit = fit_model_cached(data, base, opts, &mut cache)?;
    let alt_fit = fit_model_cached(data, &alt, opts, &mut cache)?;
    let alt_as_base = base_layout_from_alt(&spec, &alt, &alt_fit, opts.init_factor_rate);

    let objective = MixedObjective::new(data, spec.clone(), base_fit.params.clone())?;
    let mut candidates: Vec<(f64, Vec<GroupParams>, bool)> = Vec::new();

    let with_pi = |pi: f64| MixedModelSpec { pi, ..spec.clone() };
    candidates.push((1.0, base_fit.params.clone(), base_fit.converged));
    candidates.push((0.0, alt_as_base.clone(), alt_fit.converged));

    let logit = |p: f64| (p / (1.0 - p)).ln();
    for (pi0, start_params) in [(0.75, &base_fit.params), (0.25, &alt_as_base)] {
        let mut x0 = vec![logit(pi0)];
        x0.extend(flatten(start_params).iter().map(|&r| log_from_rate(r.max(opts.init_factor_rate))));
        let m = bfgs(|t| objective.eval(t), &x0, &opts.bfgs());
        if m.f.is_finite() {
            let pi = MixedObjective::pi_from(m.x[0]);
            candidates.push((pi, objective.params_from(&m.x[1..]), m.converged));
        }
    }

    let mut best: Option<(f64, f64, Vec<GroupParams>, bool)> = None;
    for (pi, params, converged) in candidates {
        let ll = mixed_loglik(data, &with_pi(pi), &params)?;
        if best.as_ref().is_none_or(|b| ll > b.0) {
            best = Some((ll, pi, params, converged));
        }
    }
    let (loglik, pi, params, converged) = best.expect("at least the collapse candidates");
    let mixed = MixedFit {
        moved_var,
        alt_group,
        pi,
    };
    Ok(FittedModel::assemble(base.clone(), Some(mixed), params, loglik, converged, data))
}

/// How parameter curvature turns into standard errors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeMode {
    /// `[∂²(−ℓ)/∂θⱼ²]^(−1/2)` per parameter.
    #[default]
    Diagonal,
    /// Square roots of the diagonal of the inverted full Hessian.
    FullInverse,
}

fn fd_step(theta: f64, is_rate: bool) -> f64 {
    let h = 1e-4 * theta.abs().max(1.0);
    if is_rate {
        h.min(0.5 * theta)
    } else {
        h
    }
}

/// Standard errors from the numerical curvature of `neg_loglik` at
/// `theta`. Entries with `skip[j]` set, or with non-positive curvature, are
/// `None`. `is_rate[j]` keeps the finite-difference stencil non-negative.
pub fn curvature_std_errors<F: Fn(&[f64]) -> f64>(
    neg_loglik: F,
    theta: &[f64],
    skip: &[bool],
    is_rate: &[bool],
    mode: SeMode,
) -> Vec<Option<f64>> {
    let n = theta.len();
    let f0 = neg_loglik(theta);
    let steps: Vec<f64> = (0..n).map(|j| fd_step(theta[j], is_rate[j])).collect();
    let shifted = |moves: &[(usize, f64)]| -> f64 {
        let mut t = theta.to_vec();
        for &(j, d) in moves {
            t[j] += d;
        }
        neg_loglik(&t)
    };
    let second = |j: usize| -> f64 {
        let h = steps[j];
        (shifted(&[(j, h)]) - 2.0 * f0 + shifted(&[(j, -h)])) / (h * h)
    };
    let active: Vec<usize> = (0..n).filter(|&j| !skip[j]).collect();
    let mut out = vec![None; n];
    match mode {
        SeMode::Diagonal => {
            for &j in &active {
                let c = second(j);
                if c.is_finite() && c > 0.0 {
                    out[j] = Some(c.powf(-0.5));
                }
            }
        }
        SeMode::FullInverse => {
            let k = active.len();
            let mut hess = DMatrix::<f64>::zeros(k, k);
            for a in 0..k {
                let j = active[a];
                hess[(a, a)] = second(j);
                for b in (a + 1)..k {
                    let i = active[b];
                    let (hj, hi) = (steps[j], steps[i]);
                    let v = (shifted(&[(j, hj), (i, hi)]) - shifted(&[(j, hj), (i, -hi)])
                        - shifted(&[(j, -hj), (i, hi)])
                        + shifted(&[(j, -hj), (i, -hi)]))
                        / (4.0 * hj * hi);
                    hess[(a, b)] = v;
                    hess[(b, a)] = v;
                }
            }
            if hess.iter().all(|v| v.is_finite()) {
                if let Some(inv) = hess.try_inverse() {
                    for (a, &j) in active.iter().enumerate() {
                        let d = inv[(a, a)];
                        if d.is_finite() && d > 0.0 {
                            out[j] = Some(d.sqrt());
                        }
                    }
                }
            }
        }
    }
    out
}

/// Standard errors of a fitted model's parameters
/// ([`FittedModel::param_vector`] layout). Boundary estimates get `None`.
pub fn standard_errors(fit: &FittedModel, data: &CountMatrix, mode: SeMode) -> Result<Vec<Option<f64>>> {
    if data.n_obs() != fit.n_obs || data.trunc_bound() != fit.trunc_bound || data.n_vars() != fit.partition.n_vars() {
        return Err(Error::InvalidData("standard errors need the data the model was fitted to".into()));
    }
    let theta = fit.param_vector();
    let mut skip = fit.boundary_mask();
    if !fit.converged {
        skip.iter_mut().for_each(|s| *s = true);
    }
    let mut is_rate = vec![true; theta.len()];
    if fit.mixed.is_some() {
        is_rate[0] = false;
    }
    let neg = |t: &[f64]| match fit.loglik_at(data, t) {
        Ok(ll) if ll.is_finite() => -ll,
        _ => f64::NAN,
    };
    Ok(curvature_std_errors(neg, &theta, &skip, &is_rate, mode))
}

/// Fills `fit.std_errors` in place.
pub fn attach_standard_errors(fit: &mut FittedModel, data: &CountMatrix, mode: SeMode) -> Result<()> {
    fit.std_errors = Some(standard_errors(fit, data, mode)?);
    Ok(())
}

fn group_label(vars: &[usize]) -> String {
    let members: Vec<String> = vars.iter().map(|v| (v + 1).to_string()).collect();
    format!("[{}]", members.join(" "))
}

fn vars_hash(vars: &[usize]) -> u64 {
    vars.iter()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, &v| (h ^ v as u64).wrapping_mul(0x0100_0000_01b3))
}
