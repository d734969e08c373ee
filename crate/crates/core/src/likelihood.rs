//! Log-likelihoods of factor models by exact convolution over each latent
//! factor.
//!
//! For a factor group with variables `k ∈ G`, one row contributes
//!
//! ```text
//! ln Σ_{u=0}^{min_k y_k} f(u; λ) · Π_k g(y_k − u; μ_k)
//! ```
//!
//! where `f` and `g` are Poisson pmfs, or truncated Poisson pmfs sharing the
//! data's bound `A` when the matrix is truncated.

use serde::{Deserialize, Serialize};

use crate::dists::{log_add_exp, PmfKernel};
use crate::error::{Error, Result};
use crate::partitions::ModelPartition;

/// `n_obs × n_vars` non-negative counts, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountMatrix {
    n_obs: usize,
    n_vars: usize,
    values: Vec<u32>,
    trunc_bound: Option<u32>,
}

impl CountMatrix {
    pub fn new(rows: Vec<Vec<u32>>, trunc_bound: Option<u32>) -> Result<Self> {
        let n_obs = rows.len();
        let n_vars = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n_vars) {
            return Err(Error::InvalidData(format!(
                "row {} has {} values, expected {n_vars}",
                i + 1,
                r.len()
            )));
        }
        Self::from_flat(n_obs, n_vars, rows.into_iter().flatten().collect(), trunc_bound)
    }

    pub fn from_flat(
        n_obs: usize,
        n_vars: usize,
        values: Vec<u32>,
        trunc_bound: Option<u32>,
    ) -> Result<Self> {
        if n_obs == 0 || n_vars == 0 {
            return Err(Error::InvalidData("empty count matrix".into()));
        }
        if values.len() != n_obs * n_vars {
            return Err(Error::InvalidData(format!(
                "{} values for a {n_obs}x{n_vars} matrix",
                values.len()
            )));
        }
        let m = Self {
            n_obs,
            n_vars,
            values,
            trunc_bound,
        };
        m.check_bound()?;
        Ok(m)
    }

    fn check_bound(&self) -> Result<()> {
        if let Some(bound) = self.trunc_bound {
            if let Some(&value) = self.values.iter().find(|&&v| v > bound) {
                return Err(Error::OutsideSupport { value, bound });
            }
        }
        Ok(())
    }

    /// Same counts under a different truncation mode.
    pub fn with_trunc(mut self, trunc_bound: Option<u32>) -> Result<Self> {
        self.trunc_bound = trunc_bound;
        self.check_bound()?;
        Ok(self)
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn trunc_bound(&self) -> Option<u32> {
        self.trunc_bound
    }

    pub fn max_value(&self) -> u32 {
        self.values.iter().copied().max().unwrap_or(0)
    }

    #[inline]
    pub fn get(&self, row: usize, var: usize) -> u32 {
        self.values[row * self.n_vars + var]
    }

    pub fn row(&self, row: usize) -> &[u32] {
        &self.values[row * self.n_vars..(row + 1) * self.n_vars]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u32]> {
        self.values.chunks_exact(self.n_vars)
    }

    pub fn column(&self, var: usize) -> impl Iterator<Item = u32> + '_ {
        self.rows().map(move |r| r[var])
    }

    pub fn col_mean(&self, var: usize) -> f64 {
        self.column(var).map(f64::from).sum::<f64>() / self.n_obs as f64
    }

    pub fn col_means(&self) -> Vec<f64> {
        (0..self.n_vars).map(|k| self.col_mean(k)).collect()
    }

    /// Sub-matrix of the given rows.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let values = rows.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        Self::from_flat(rows.len(), self.n_vars, values, self.trunc_bound)
    }

    /// Columns reordered so that new column `perm[k]` holds old column `k`.
    pub fn permute_columns(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n_vars {
            return Err(Error::InvalidData("permutation length mismatch".into()));
        }
        let mut values = vec![0; self.values.len()];
        for (i, r) in self.rows().enumerate() {
            for (k, &y) in r.iter().enumerate() {
                values[i * self.n_vars + perm[k]] = y;
            }
        }
        Self::from_flat(self.n_obs, self.n_vars, values, self.trunc_bound)
    }
}

/// Rates for one group: the factor rate (absent for an independent
/// variable) and one idiosyncratic rate per member.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupParams {
    pub lambda: Option<f64>,
    pub mus: Vec<f64>,
}

impl GroupParams {
    pub fn factor(lambda: f64, mus: Vec<f64>) -> Self {
        Self {
            lambda: Some(lambda),
            mus,
        }
    }

    pub fn singleton(mu: f64) -> Self {
        Self {
            lambda: None,
            mus: vec![mu],
        }
    }

    pub fn n_params(&self) -> usize {
        self.mus.len() + usize::from(self.lambda.is_some())
    }

    fn validate(&self, size: usize) -> Result<()> {
        if self.mus.len() != size {
            return Err(Error::InvalidParameter(format!(
                "{} idiosyncratic rates for a group of {size}",
                self.mus.len()
            )));
        }
        for r in self.lambda.iter().chain(&self.mus) {
            if !r.is_finite() || *r < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "rates must be finite and non-negative, got {r}"
                )));
            }
        }
        Ok(())
    }
}

/// Two-component mixture: with probability `pi` the base partition, else
/// the same partition with `moved_var` reassigned to group `alt_group`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedModelSpec {
    pub base: ModelPartition,
    pub moved_var: usize,
    pub alt_group: usize,
    pub pi: f64,
}

impl MixedModelSpec {
    pub fn new(base: ModelPartition, moved_var: usize, alt_group: usize, pi: f64) -> Result<Self> {
        let spec = Self {
            base,
            moved_var,
            alt_group,
            pi,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let home = self.home_group()?;
        let n_groups = self.base.n_groups();
        if self.alt_group >= n_groups {
            return Err(Error::GroupIndex {
                index: self.alt_group,
                n_groups,
            });
        }
        if self.alt_group == home {
            return Err(Error::InvalidParameter(
                "target group is the moved variable's own group".into(),
            ));
        }
        if self.base.groups()[self.alt_group].len() < 2 {
            return Err(Error::InvalidParameter(
                "target group must carry a common factor (two or more variables)".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.pi) {
            return Err(Error::InvalidParameter(format!(
                "mixing probability {} outside [0, 1]",
                self.pi
            )));
        }
        Ok(())
    }

    pub fn home_group(&self) -> Result<usize> {
        self.base.group_of(self.moved_var).ok_or_else(|| {
            Error::InvalidParameter(format!(
                "variable {} not in a {}-variable partition",
                self.moved_var + 1,
                self.base.n_vars()
            ))
        })
    }

    /// The partition of the `1 − π` branch.
    pub fn alternative(&self) -> Result<ModelPartition> {
        let home = self.home_group()?;
        let groups = self
            .base
            .groups()
            .iter()
            .enumerate()
            .map(|(gi, g)| {
                let mut g = g.clone();
                if gi == home {
                    g.retain(|&v| v != self.moved_var);
                } else if gi == self.alt_group {
                    g.push(self.moved_var);
                }
                g
            })
            .filter(|g| !g.is_empty())
            .collect();
        ModelPartition::new(self.base.n_vars(), groups)
    }
}

/// Precomputed kernels for one group.
///
/// Under truncation at `A` the observation model is `Y = min(U + X, A)`
/// with `U`, `X` truncated Poisson on `0..=A`: an observed `y < A` means
/// `X = y − u`, while `y = A` means `X ≥ A − u`.
pub(crate) struct GroupKernel {
    factor: Option<PmfKernel>,
    idio: Vec<PmfKernel>,
    bound: Option<u32>,
}

impl GroupKernel {
    pub(crate) fn new(params: &GroupParams, trunc: Option<u32>) -> Self {
        Self {
            factor: params.lambda.map(|l| PmfKernel::new(l, trunc)),
            idio: params.mus.iter().map(|&m| PmfKernel::new(m, trunc)).collect(),
            bound: trunc,
        }
    }

    #[inline]
    fn idio_ln(&self, k: &PmfKernel, y: u32, u: u32) -> f64 {
        match self.bound {
            Some(a) if y == a => k.ln_tail(a - u),
            _ => k.ln_pmf(y - u),
        }
    }

    /// Expected `X` given the observation and `u`.
    #[inline]
    fn idio_x(&self, k: &PmfKernel, y: u32, u: u32) -> f64 {
        match self.bound {
            Some(a) if y == a => k.tail_mean(a - u),
            _ => (y - u) as f64,
        }
    }

    /// Log-probability of one row's values for the group members.
    #[inline]
    pub(crate) fn row_ln(&self, row: &[u32], vars: &[usize]) -> f64 {
        match &self.factor {
            None => vars
                .iter()
                .zip(&self.idio)
                .map(|(&v, k)| self.idio_ln(k, row[v], 0))
                .sum(),
            Some(f) => {
                let z = vars.iter().map(|&v| row[v]).min().unwrap_or(0);
                let mut acc = f64::NEG_INFINITY;
                for u in 0..=z {
                    let mut t = f.ln_pmf(u);
                    for (&v, k) in vars.iter().zip(&self.idio) {
                        t += self.idio_ln(k, row[v], u);
                    }
                    acc = log_add_exp(acc, t);
                }
                acc
            }
        }
    }

    /// Row log-probability and its gradient with respect to the log rates,
    /// ordered `[ln λ, ln μ₁, ...]` (no `ln λ` slot without a factor).
    pub(crate) fn row_ln_grad(&self, row: &[u32], vars: &[usize], grad: &mut [f64]) -> f64 {
        match &self.factor {
            None => {
                let mut total = 0.0;
                for (j, (&v, k)) in vars.iter().zip(&self.idio).enumerate() {
                    total += self.idio_ln(k, row[v], 0);
                    grad[j] += self.idio_x(k, row[v], 0) - k.mean();
                }
                total
            }
            Some(f) => {
                let z = vars.iter().map(|&v| row[v]).min().unwrap_or(0);
                let terms: Vec<f64> = (0..=z)
                    .map(|u| {
                        f.ln_pmf(u)
                            + vars
                                .iter()
                                .zip(&self.idio)
                                .map(|(&v, k)| self.idio_ln(k, row[v], u))
                                .sum::<f64>()
                    })
                    .collect();
                let total = crate::dists::log_sum_exp(&terms);
                if total == f64::NEG_INFINITY {
                    return total;
                }
                grad[0] -= f.mean();
                for (j, k) in self.idio.iter().enumerate() {
                    grad[j + 1] -= k.mean();
                }
                for (u, t) in terms.iter().enumerate() {
                    let w = (t - total).exp();
                    if w == 0.0 {
                        continue;
                    }
                    grad[0] += w * u as f64;
                    for (j, (&v, k)) in vars.iter().zip(&self.idio).enumerate() {
                        grad[j + 1] += w * self.idio_x(k, row[v], u as u32);
                    }
                }
                total
            }
        }
    }
}

fn check_vars(data: &CountMatrix, vars: &[usize]) -> Result<()> {
    if vars.is_empty() {
        return Err(Error::InvalidParameter("empty group".into()));
    }
    if let Some(&v) = vars.iter().find(|&&v| v >= data.n_vars()) {
        return Err(Error::InvalidParameter(format!(
            "variable {} outside a {}-column matrix",
            v + 1,
            data.n_vars()
        )));
    }
    Ok(())
}

/// Log-likelihood of the columns `vars` under one group's parameters.
pub fn group_loglik(data: &CountMatrix, vars: &[usize], params: &GroupParams) -> Result<f64> {
    check_vars(data, vars)?;
    params.validate(vars.len())?;
    let kernel = GroupKernel::new(params, data.trunc_bound());
    Ok(data.rows().map(|r| kernel.row_ln(r, vars)).sum())
}

/// [`group_loglik`] plus its gradient with respect to the log rates.
pub fn group_loglik_grad(
    data: &CountMatrix,
    vars: &[usize],
    params: &GroupParams,
) -> Result<(f64, Vec<f64>)> {
    check_vars(data, vars)?;
    params.validate(vars.len())?;
    let kernel = GroupKernel::new(params, data.trunc_bound());
    let mut grad = vec![0.0; params.n_params()];
    let ll = data.rows().map(|r| kernel.row_ln_grad(r, vars, &mut grad)).sum();
    Ok((ll, grad))
}

fn check_model(p: &ModelPartition, params: &[GroupParams]) -> Result<()> {
    if params.len() != p.n_groups() {
        return Err(Error::InvalidParameter(format!(
            "{} parameter groups for a {}-group partition",
            params.len(),
            p.n_groups()
        )));
    }
    for (g, gp) in p.groups().iter().zip(params) {
        gp.validate(g.len())?;
        if (g.len() >= 2) != gp.lambda.is_some() {
            return Err(Error::InvalidParameter(format!(
                "group of size {} {} a factor rate",
                g.len(),
                if gp.lambda.is_some() { "must not have" } else { "needs" }
            )));
        }
    }
    Ok(())
}

/// Sum of group log-likelihoods over the partition.
pub fn model_loglik(data: &CountMatrix, p: &ModelPartition, params: &[GroupParams]) -> Result<f64> {
    Ok(model_row_logliks(data, p, params)?.iter().sum())
}

/// Per-row log-likelihoods under the partition model.
pub fn model_row_logliks(
    data: &CountMatrix,
    p: &ModelPartition,
    params: &[GroupParams],
) -> Result<Vec<f64>> {
    if p.n_vars() != data.n_vars() {
        return Err(Error::InvalidParameter(format!(
            "{}-variable partition for a {}-column matrix",
            p.n_vars(),
            data.n_vars()
        )));
    }
    check_model(p, params)?;
    let kernels: Vec<GroupKernel> = params
        .iter()
        .map(|gp| GroupKernel::new(gp, data.trunc_bound()))
        .collect();
    Ok(data
        .rows()
        .map(|r| {
            p.groups()
                .iter()
                .zip(&kernels)
                .map(|(g, k)| k.row_ln(r, g))
                .sum()
        })
        .collect())
}

/// Probability of one outcome vector `y`. Under truncation the support is
/// `{0..A}ᴺ`.
pub fn joint_pmf(
    p: &ModelPartition,
    params: &[GroupParams],
    trunc: Option<u32>,
    y: &[u32],
) -> Result<f64> {
    if y.len() != p.n_vars() {
        return Err(Error::InvalidParameter(format!(
            "outcome of length {} for {} variables",
            y.len(),
            p.n_vars()
        )));
    }
    check_model(p, params)?;
    if let Some(a) = trunc {
        if y.iter().any(|&v| v > a) {
            return Ok(0.0);
        }
    }
    let ln: f64 = p
        .groups()
        .iter()
        .zip(params)
        .map(|(g, gp)| GroupKernel::new(gp, trunc).row_ln(y, g))
        .sum();
    Ok(ln.exp())
}

/// Group parameters of the alternative branch: the moved variable's rate
/// travels with it to the target group; every λ and μ is shared.
pub(crate) fn alternative_params(
    spec: &MixedModelSpec,
    params: &[GroupParams],
) -> Result<(ModelPartition, Vec<GroupParams>)> {
    let home = spec.home_group()?;
    let alt = spec.alternative()?;
    let home_vars = &spec.base.groups()[home];
    let pos = home_vars
        .iter()
        .position(|&v| v == spec.moved_var)
        .expect("moved variable is in its home group");
    let moved_mu = params[home].mus[pos];

    // Per-variable (group id in base numbering, μ) for the alternative branch.
    let mut by_base_group: Vec<(Option<f64>, Vec<(usize, f64)>)> = spec
        .base
        .groups()
        .iter()
        .zip(params)
        .map(|(g, gp)| (gp.lambda, g.iter().copied().zip(gp.mus.iter().copied()).collect()))
        .collect();
    by_base_group[home].1.retain(|(v, _)| *v != spec.moved_var);
    by_base_group[spec.alt_group].1.push((spec.moved_var, moved_mu));

    let mut alt_params = Vec::with_capacity(alt.n_groups());
    for g in alt.groups() {
        let (lambda, members) = by_base_group
            .iter()
            .find(|(_, m)| m.iter().any(|(v, _)| *v == g[0]))
            .expect("every alternative group comes from a base group");
        let mus = g
            .iter()
            .map(|v| members.iter().find(|(w, _)| w == v).expect("member").1)
            .collect();
        alt_params.push(GroupParams {
            lambda: *lambda,
            mus,
        });
    }
    Ok((alt, alt_params))
}

/// Per-row log-likelihoods of the mixture.
pub fn mixed_row_logliks(
    data: &CountMatrix,
    spec: &MixedModelSpec,
    params: &[GroupParams],
) -> Result<Vec<f64>> {
    spec.validate()?;
    if spec.base.n_vars() != data.n_vars() {
        return Err(Error::InvalidParameter(
            "mixed-model partition does not match the data dimension".into(),
        ));
    }
    check_model(&spec.base, params)?;
    let home = spec.home_group()?;
    let trunc = data.trunc_bound();

    let base_kernels: Vec<GroupKernel> = params.iter().map(|gp| GroupKernel::new(gp, trunc)).collect();
    let (alt, alt_params) = alternative_params(spec, params)?;
    // Only the home and target groups differ between branches: in the
    // alternative they are the group holding the moved variable and what is
    // left of its home group.
    let base_home = &spec.base.groups()[home];
    let moved_groups: Vec<(Vec<usize>, GroupKernel)> = alt
        .groups()
        .iter()
        .zip(&alt_params)
        .filter(|(g, _)| g.contains(&spec.moved_var) || g.iter().all(|v| base_home.contains(v)))
        .map(|(g, gp)| (g.clone(), GroupKernel::new(gp, trunc)))
        .collect();

    let ln_pi = spec.pi.ln();
    let ln_1m_pi = (1.0 - spec.pi).ln();
    Ok(data
        .rows()
        .map(|r| {
            let mut shared = 0.0;
            let mut base_only = 0.0;
            for (gi, (g, k)) in spec.base.groups().iter().zip(&base_kernels).enumerate() {
                let ln = k.row_ln(r, g);
                if gi == home || gi == spec.alt_group {
                    base_only += ln;
                } else {
                    shared += ln;
                }
            }
            let alt_only: f64 = moved_groups.iter().map(|(g, k)| k.row_ln(r, g)).sum();
            let mixed = if spec.pi == 1.0 {
                base_only
            } else if spec.pi == 0.0 {
                alt_only
            } else {
                log_add_exp(ln_pi + base_only, ln_1m_pi + alt_only)
            };
            shared + mixed
        })
        .collect())
}

/// `Σᵢ ln[π·Lᵢ(base) + (1 − π)·Lᵢ(alternative)]`.
pub fn mixed_loglik(data: &CountMatrix, spec: &MixedModelSpec, params: &[GroupParams]) -> Result<f64> {
    Ok(mixed_row_logliks(data, spec, params)?.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fact(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    fn pois(rate: f64, y: i64) -> f64 {
        if y < 0 {
            return 0.0;
        }
        rate.powi(y as i32) * (-rate).exp() / fact(y as u32)
    }

    fn m(rows: &[&[u32]]) -> CountMatrix {
        CountMatrix::new(rows.iter().map(|r| r.to_vec()).collect(), None).unwrap()
    }

    #[test]
    fn count_matrix_validation() {
        assert!(CountMatrix::new(vec![vec![1, 2], vec![3]], None).is_err());
        assert!(CountMatrix::new(vec![], None).is_err());
        assert!(matches!(
            CountMatrix::new(vec![vec![1, 4]], Some(3)),
            Err(Error::OutsideSupport { value: 4, bound: 3 })
        ));
        let d = m(&[&[0, 1], &[2, 0], &[1, 1]]);
        assert_eq!((d.n_obs(), d.n_vars()), (3, 2));
        assert_eq!(d.col_means(), vec![1.0, 2.0 / 3.0]);
        assert_eq!(d.column(0).collect::<Vec<_>>(), vec![0, 2, 1]);
    }

    #[test]
    fn zero_row_is_single_term() {
        let d = m(&[&[0, 0]]);
        let gp = GroupParams::factor(0.7, vec![1.3, 0.4]);
        let ll = group_loglik(&d, &[0, 1], &gp).unwrap();
        assert!((ll + (0.7 + 1.3 + 0.4)).abs() < 1e-14);
    }

    #[test]
    fn singleton_is_independent_poisson() {
        let d = m(&[&[0], &[3], &[1], &[2]]);
        let ll = group_loglik(&d, &[0], &GroupParams::singleton(1.7)).unwrap();
        let direct: f64 = [0, 3, 1, 2].iter().map(|&y| pois(1.7, y).ln()).sum();
        assert!((ll - direct).abs() < 1e-12);
    }

    #[test]
    fn bivariate_one_one_matches_hand_expansion() {
        // u = 0: e^-0.5 * (0.5 e^-0.5)^2; u = 1: 0.5 e^-0.5 * (e^-0.5)^2
        let d = m(&[&[1, 1]]);
        let ll = group_loglik(&d, &[0, 1], &GroupParams::factor(0.5, vec![0.5, 0.5])).unwrap();
        let expected = ((-1.5f64).exp() * (0.25 + 0.5)).ln();
        assert!((ll - expected).abs() < 1e-14);
        // brute force over the latent factor and both noise terms
        let mut brute = 0.0;
        for u in 0..=5 {
            for x1 in 0..=5 {
                for x2 in 0..=5 {
                    if u + x1 == 1 && u + x2 == 1 {
                        brute += pois(0.5, u) * pois(0.5, x1) * pois(0.5, x2);
                    }
                }
            }
        }
        assert!((ll - brute.ln()).abs() < 1e-14);
    }

    #[test]
    fn all_zero_data() {
        let d = CountMatrix::from_flat(4, 5, vec![0; 20], None).unwrap();
        let p = ModelPartition::parse("[1 2 3][4 5]").unwrap();
        let params = vec![
            GroupParams::factor(0.2, vec![0.3, 0.4, 0.5]),
            GroupParams::factor(0.6, vec![0.7, 0.8]),
        ];
        let total = 0.2 + 0.3 + 0.4 + 0.5 + 0.6 + 0.7 + 0.8;
        let ll = model_loglik(&d, &p, &params).unwrap();
        assert!((ll + 4.0 * total).abs() < 1e-12);
    }

    #[test]
    fn parameter_validation() {
        let d = m(&[&[1, 2]]);
        assert!(group_loglik(&d, &[0, 1], &GroupParams::factor(f64::NAN, vec![1.0, 1.0])).is_err());
        assert!(group_loglik(&d, &[0, 1], &GroupParams::factor(1.0, vec![1.0])).is_err());
        assert!(group_loglik(&d, &[0, 5], &GroupParams::factor(1.0, vec![1.0, 1.0])).is_err());
        let p = ModelPartition::parse("[1 2]").unwrap();
        assert!(model_loglik(&d, &p, &[GroupParams { lambda: None, mus: vec![1.0, 1.0] }]).is_err());
    }

    #[test]
    fn truncated_data_uses_clipped_truncated_kernels() {
        let d = CountMatrix::new(vec![vec![2, 3], vec![0, 1], vec![3, 3]], Some(3)).unwrap();
        let gp = GroupParams::factor(0.54, vec![1.08, 0.9]);
        let ll = group_loglik(&d, &[0, 1], &gp).unwrap();
        let tp = |r: f64, y: i64| -> f64 {
            if !(0..=3).contains(&y) {
                return 0.0;
            }
            let z: f64 = (0..=3).map(|j| r.powi(j) / fact(j as u32)).sum();
            r.powi(y as i32) / fact(y as u32) / z
        };
        // Brute force over (u, x1, x2) with y = min(u + x, 3).
        let mut expected = 0.0;
        for row in [[2i64, 3], [0, 1], [3, 3]] {
            let mut s = 0.0;
            for u in 0..=3 {
                for x1 in 0..=3 {
                    for x2 in 0..=3 {
                        if (u + x1).min(3) == row[0] && (u + x2).min(3) == row[1] {
                            s += tp(0.54, u) * tp(1.08, x1) * tp(0.9, x2);
                        }
                    }
                }
            }
            expected += s.ln();
        }
        assert!((ll - expected).abs() < 1e-12);
    }

    fn grid(n: usize, hi: u32) -> Vec<Vec<u32>> {
        let mut out = vec![vec![]];
        for _ in 0..n {
            out = out
                .into_iter()
                .flat_map(|p| (0..=hi).map(move |v| [p.clone(), vec![v]].concat()))
                .collect();
        }
        out
    }

    #[test]
    fn joint_pmf_normalizes() {
        let p = ModelPartition::parse("[1 2][3]").unwrap();
        let params = vec![GroupParams::factor(1.2, vec![0.4, 2.0]), GroupParams::singleton(0.7)];
        for a in 0..=3 {
            let total: f64 = grid(3, 2 * a).iter().map(|y| joint_pmf(&p, &params, Some(a), y).unwrap()).sum();
            assert!((total - 1.0).abs() < 1e-12, "A = {a}: {total}");
        }
        let total: f64 = grid(3, 16).iter().map(|y| joint_pmf(&p, &params, None, y).unwrap()).sum();
        assert!(total > 1.0 - 1e-6 && total <= 1.0 + 1e-12);
        let ind = ModelPartition::independence(2);
        let sp = vec![GroupParams::singleton(0.3), GroupParams::singleton(1.1)];
        let prod = pois(0.3, 2) * pois(1.1, 1);
        assert!((joint_pmf(&ind, &sp, None, &[2, 1]).unwrap() - prod).abs() < 1e-15);
    }

    #[test]
    fn bivariate_correlation_from_joint_pmf() {
        let (l, m1, m2) = (0.5, 0.5, 1.5);
        let p = ModelPartition::parse("[1 2]").unwrap();
        let params = vec![GroupParams::factor(l, vec![m1, m2])];
        let (mut e1, mut e2, mut e11, mut e22, mut e12) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for y in grid(2, 25) {
            let pr = joint_pmf(&p, &params, None, &y).unwrap();
            let (a, b) = (y[0] as f64, y[1] as f64);
            e1 += pr * a;
            e2 += pr * b;
            e11 += pr * a * a;
            e22 += pr * b * b;
            e12 += pr * a * b;
        }
        let corr = (e12 - e1 * e2) / ((e11 - e1 * e1) * (e22 - e2 * e2)).sqrt();
        let expected = l / ((l + m1) * (l + m2)).sqrt();
        assert!((corr - expected).abs() < 1e-9, "{corr} vs {expected}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for trunc in [None, Some(4)] {
            let d = CountMatrix::new(
                vec![vec![1, 2, 0], vec![3, 2, 2], vec![0, 0, 1], vec![4, 3, 2]],
                trunc,
            )
            .unwrap();
            let vars = [0, 1, 2];
            let theta = [0.4f64.ln(), 1.1f64.ln(), 0.8f64.ln(), 0.5f64.ln()];
            let eval = |t: &[f64]| {
                let gp = GroupParams::factor(t[0].exp(), t[1..].iter().map(|x| x.exp()).collect());
                group_loglik(&d, &vars, &gp).unwrap()
            };
            let gp = GroupParams::factor(theta[0].exp(), theta[1..].iter().map(|x| x.exp()).collect());
            let (_, grad) = group_loglik_grad(&d, &vars, &gp).unwrap();
            for j in 0..4 {
                let h = 1e-6;
                let mut up = theta;
                let mut dn = theta;
                up[j] += h;
                dn[j] -= h;
                let fd = (eval(&up) - eval(&dn)) / (2.0 * h);
                assert!((fd - grad[j]).abs() < 1e-6, "trunc {trunc:?} j {j}: {fd} vs {}", grad[j]);
            }
        }
    }

    #[test]
    fn mixed_alternative_partition_and_params() {
        let base = ModelPartition::parse("[1 2 3][4 5]").unwrap();
        let spec = MixedModelSpec::new(base.clone(), 0, 1, 0.5).unwrap();
        assert_eq!(spec.alternative().unwrap().to_string(), "[1 4 5][2 3]");
        let params = vec![
            GroupParams::factor(1.0, vec![0.1, 0.2, 0.3]),
            GroupParams::factor(2.0, vec![0.4, 0.5]),
        ];
        let (_, alt_params) = alternative_params(&spec, &params).unwrap();
        assert_eq!(alt_params[0], GroupParams::factor(2.0, vec![0.1, 0.4, 0.5]));
        assert_eq!(alt_params[1], GroupParams::factor(1.0, vec![0.2, 0.3]));

        assert!(MixedModelSpec::new(base.clone(), 0, 0, 0.5).is_err());
        assert!(MixedModelSpec::new(base.clone(), 0, 1, 1.5).is_err());
        assert!(MixedModelSpec::new(base.clone(), 9, 1, 0.5).is_err());
        let with_single = ModelPartition::parse("[1 2 3][4 5][6]").unwrap();
        assert!(MixedModelSpec::new(with_single, 0, 2, 0.5).is_err());
    }

    #[test]
    fn mixed_collapses_at_endpoints() {
        let d = m(&[&[1, 2, 0, 1, 1], &[3, 2, 2, 0, 4], &[0, 0, 1, 2, 2]]);
        let base = ModelPartition::parse("[1 2 3][4 5]").unwrap();
        let params = vec![
            GroupParams::factor(0.6, vec![0.5, 0.9, 0.3]),
            GroupParams::factor(1.2, vec![0.4, 0.7]),
        ];
        let spec1 = MixedModelSpec::new(base.clone(), 0, 1, 1.0).unwrap();
        let ll_base = model_loglik(&d, &base, &params).unwrap();
        assert_eq!(mixed_loglik(&d, &spec1, &params).unwrap(), ll_base);

        let spec0 = MixedModelSpec::new(base, 0, 1, 0.0).unwrap();
        let (alt, alt_params) = alternative_params(&spec0, &params).unwrap();
        let ll_alt = model_loglik(&d, &alt, &alt_params).unwrap();
        assert!((mixed_loglik(&d, &spec0, &params).unwrap() - ll_alt).abs() < 1e-12);
    }

    #[test]
    fn mixed_row_matches_brute_force_latent_enumeration() {
        // (3,2) base with variable 1 movable, enumerate (u1, u2) directly.
        let y = [2i64, 1, 2, 1, 3];
        let d = m(&[&[2, 1, 2, 1, 3]]);
        let (l1, l2) = (0.8, 0.6);
        let mu = [0.5, 0.7, 0.9, 1.1, 0.4];
        let base = ModelPartition::parse("[1 2 3][4 5]").unwrap();
        let params = vec![
            GroupParams::factor(l1, mu[..3].to_vec()),
            GroupParams::factor(l2, mu[3..].to_vec()),
        ];
        let mut s_base = 0.0;
        let mut s_alt = 0.0;
        for u1 in 0..=6 {
            for u2 in 0..=6 {
                let fu = pois(l1, u1) * pois(l2, u2);
                let base_g = pois(mu[0], y[0] - u1)
                    * pois(mu[1], y[1] - u1)
                    * pois(mu[2], y[2] - u1)
                    * pois(mu[3], y[3] - u2)
                    * pois(mu[4], y[4] - u2);
                let alt_g = pois(mu[0], y[0] - u2)
                    * pois(mu[1], y[1] - u1)
                    * pois(mu[2], y[2] - u1)
                    * pois(mu[3], y[3] - u2)
                    * pois(mu[4], y[4] - u2);
                s_base += fu * base_g;
                s_alt += fu * alt_g;
            }
        }
        let spec = MixedModelSpec::new(base, 0, 1, 0.5).unwrap();
        let ll = mixed_loglik(&d, &spec, &params).unwrap();
        assert!((ll - (0.5 * s_base + 0.5 * s_alt).ln()).abs() < 1e-12);
    }

    #[test]
    fn mixed_row_likelihood_affine_in_pi() {
        let d = m(&[&[2, 1, 2, 1, 3]]);
        let base = ModelPartition::parse("[1 2 3][4 5]").unwrap();
        let params = vec![
            GroupParams::factor(0.8, vec![0.5, 0.7, 0.9]),
            GroupParams::factor(0.6, vec![1.1, 0.4]),
        ];
        let lik = |pi: f64| {
            let spec = MixedModelSpec::new(base.clone(), 0, 1, pi).unwrap();
            mixed_loglik(&d, &spec, &params).unwrap().exp()
        };
        let h = 1e-3;
        for &pi in &[0.2, 0.5, 0.8] {
            let second = (lik(pi + h) - 2.0 * lik(pi) + lik(pi - h)) / (h * h);
            assert!(second.abs() < 1e-6, "{second}");
        }
    }

    #[test]
    fn moved_singleton_joins_target() {
        let base = ModelPartition::parse("[1][2 3]").unwrap();
        let spec = MixedModelSpec::new(base.clone(), 0, 0, 0.3).unwrap();
        assert_eq!(spec.alternative().unwrap().to_string(), "[1 2 3]");
        let d = m(&[&[1, 2, 1], &[0, 1, 1]]);
        let params = vec![
            GroupParams::factor(0.5, vec![0.6, 0.7]),
            GroupParams::singleton(0.9),
        ];
        let ll = mixed_loglik(&d, &spec, &params).unwrap();
        let lb = model_row_logliks(&d, &base, &params).unwrap();
        let alt = ModelPartition::parse("[1 2 3]").unwrap();
        let la = model_row_logliks(&d, &alt, &[GroupParams::factor(0.5, vec![0.9, 0.6, 0.7])]).unwrap();
        let expected: f64 = lb
            .iter()
            .zip(&la)
            .map(|(b, a)| (0.3 * b.exp() + 0.7 * a.exp()).ln())
            .sum();
        assert!((ll - expected).abs() < 1e-12);
    }
}
