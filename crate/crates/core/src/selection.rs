//! AIC, forward selection from the independence model, and exhaustive
//! search over all partitions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{fit_model_cached, FitOptions, FittedModel, GroupFitCache};
use crate::likelihood::CountMatrix;
use crate::partitions::{enumerate_partitions, ModelPartition, MAX_ENUMERATION_DIM};

/// `−2·loglik + 2·n_params`.
pub fn aic(loglik: f64, n_params: usize) -> f64 {
    -2.0 * loglik + 2.0 * n_params as f64
}

/// One candidate model as it appears in a trace or table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub partition: ModelPartition,
    pub loglik: f64,
    pub n_params: usize,
    pub aic: f64,
    pub converged: bool,
    pub chosen: bool,
}

impl CandidateScore {
    fn from_fit(fit: &FittedModel) -> Self {
        Self {
            partition: fit.partition.clone(),
            loglik: fit.loglik,
            n_params: fit.n_params,
            aic: fit.aic,
            converged: fit.converged,
            chosen: false,
        }
    }
}

/// All successors of one incumbent, with the move taken (if any).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub incumbent: ModelPartition,
    pub incumbent_aic: f64,
    pub candidates: Vec<CandidateScore>,
    pub chosen: Option<ModelPartition>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub root: CandidateScore,
    pub steps: Vec<SelectionStep>,
    #[serde(rename = "final")]
    pub final_fit: FittedModel,
    pub n_models_tested: usize,
}

impl SelectionTrace {
    pub fn selected(&self) -> &ModelPartition {
        &self.final_fit.partition
    }

    /// Incumbent AICs from the root to the final model.
    pub fn aic_path(&self) -> Vec<f64> {
        let mut path = vec![self.root.aic];
        for step in &self.steps {
            if let Some(c) = step.candidates.iter().find(|c| c.chosen) {
                path.push(c.aic);
            }
        }
        path
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExhaustiveResult {
    /// Every partition in canonical order.
    pub table: Vec<CandidateScore>,
    pub best: FittedModel,
}

/// Index of the minimum-AIC fit; exact ties go to the earliest, and the
/// fits are supplied in canonical partition order.
fn argmin_aic<'a>(fits: impl IntoIterator<Item = &'a FittedModel>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, f) in fits.into_iter().enumerate() {
        if best.is_none_or(|(_, a)| f.aic < a) {
            best = Some((i, f.aic));
        }
    }
    best.map(|(i, _)| i)
}

fn tag_failure(p: &ModelPartition, e: Error) -> Error {
    match e {
        Error::FitFailed { .. } => e,
        other => Error::FitFailed {
            partition: p.to_string(),
            reason: other.to_string(),
        },
    }
}

/// Greedy forward search from the independence model.
pub fn select_forward(data: &CountMatrix, opts: &FitOptions) -> Result<SelectionTrace> {
    select_forward_cached(data, opts, &mut GroupFitCache::new())
}

pub fn select_forward_cached(
    data: &CountMatrix,
    opts: &FitOptions,
    cache: &mut GroupFitCache,
) -> Result<SelectionTrace> {
    let n = data.n_vars();
    if n < 2 {
        return Err(Error::InvalidData("forward selection needs at least two variables".into()));
    }
    let root_p = ModelPartition::independence(n);
    let mut incumbent = fit_model_cached(data, &root_p, opts, cache).map_err(|e| tag_failure(&root_p, e))?;
    let root = CandidateScore::from_fit(&incumbent);
    let mut steps = Vec::new();
    let mut tested = 1;
    loop {
        let successors = incumbent.partition.successor_models();
        if successors.is_empty() {
            break;
        }
        let fits = successors
            .iter()
            .map(|p| fit_model_cached(data, p, opts, cache).map_err(|e| tag_failure(p, e)))
            .collect::<Result<Vec<_>>>()?;
        tested += fits.len();
        let mut candidates: Vec<CandidateScore> = fits.iter().map(CandidateScore::from_fit).collect();
        let best = argmin_aic(&fits).expect("non-empty successors");
        let improves = fits[best].aic < incumbent.aic;
        if improves {
            candidates[best].chosen = true;
        }
        steps.push(SelectionStep {
            incumbent: incumbent.partition.clone(),
            incumbent_aic: incumbent.aic,
            candidates,
            chosen: improves.then(|| fits[best].partition.clone()),
        });
        if !improves {
            break;
        }
        incumbent = fits.into_iter().nth(best).expect("index in range");
    }
    Ok(SelectionTrace {
        root,
        steps,
        final_fit: incumbent,
        n_models_tested: tested,
    })
}

/// Fits every partition of the variables and returns the AIC minimizer.
pub fn select_exhaustive(data: &CountMatrix, opts: &FitOptions) -> Result<ExhaustiveResult> {
    select_exhaustive_cached(data, opts, &mut GroupFitCache::new())
}

pub fn select_exhaustive_cached(
    data: &CountMatrix,
    opts: &FitOptions,
    cache: &mut GroupFitCache,
) -> Result<ExhaustiveResult> {
    let n = data.n_vars();
    if n > MAX_ENUMERATION_DIM {
        return Err(Error::DimensionTooLarge {
            n,
            max: MAX_ENUMERATION_DIM,
        });
    }
    let fits = enumerate_partitions(n)?
        .iter()
        .map(|p| fit_model_cached(data, p, opts, cache).map_err(|e| tag_failure(p, e)))
        .collect::<Result<Vec<_>>>()?;
    let best = argmin_aic(&fits).ok_or_else(|| Error::InvalidData("no partitions to fit".into()))?;
    let mut table: Vec<CandidateScore> = fits.iter().map(CandidateScore::from_fit).collect();
    table[best].chosen = true;
    Ok(ExhaustiveResult {
        table,
        best: fits.into_iter().nth(best).expect("index in range"),
    })
}
