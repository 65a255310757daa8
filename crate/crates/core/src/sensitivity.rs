//! Module sensitivity scoring and budgeted module selection.
//!
//! Each module gets an index of dispersion `I = var / mean` over all of its
//! scalar outputs on the dataset, a mean per-datapoint gradient norm `G`, and
//! the combined score `S = I + beta * G`. Modules with the highest `S` are
//! marked trainable until the parameter budget is reached.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::TokenizedDoc;
use crate::error::{Error, Result};
use crate::io;
use crate::tinymodel::{Module, TinyClassifier, MODULE_NAMES};

/// Guard for the mean in the dispersion denominator.
pub const DISPERSION_EPS: f64 = 1e-12;
pub const DEFAULT_BETA: f64 = 0.1;
pub const BETA_GRID: [f64; 4] = [0.001, 0.01, 0.1, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct ModuleStats {
    pub name: String,
    pub mean: f64,
    pub variance: f64,
    pub dispersion: f64,
    pub grad_norm: f64,
    pub sensitivity: f64,
    pub param_count: usize,
}

/// Per-module trainability flags with the budget they were chosen for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreezeMask {
    pub modules: Vec<String>,
    pub trainable: Vec<bool>,
    pub budget_fraction: f64,
    pub achieved_fraction: f64,
}

impl FreezeMask {
    pub fn all_trainable() -> Self {
        FreezeMask {
            modules: MODULE_NAMES.iter().map(|s| s.to_string()).collect(),
            trainable: vec![true; MODULE_NAMES.len()],
            budget_fraction: 1.0,
            achieved_fraction: 1.0,
        }
    }

    /// Every module frozen. Task-token rows still train.
    pub fn all_frozen() -> Self {
        FreezeMask {
            trainable: vec![false; MODULE_NAMES.len()],
            budget_fraction: 0.0,
            achieved_fraction: 0.0,
            ..Self::all_trainable()
        }
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.modules
            .iter()
            .position(|m| m == name)
            .is_some_and(|i| self.trainable[i])
    }

    pub(crate) fn check_modules(&self, expected: &[&str]) -> Result<()> {
        if self.modules.len() != self.trainable.len()
            || self.modules.len() != expected.len()
            || self.modules.iter().zip(expected).any(|(a, b)| a != b)
        {
            return Err(Error::Config(format!(
                "mask modules {:?} do not match model modules {:?}",
                self.modules, expected
            )));
        }
        Ok(())
    }
}

/// Population mean, population variance, and `var / max(|mean|, eps) * sign(mean)`.
pub fn dispersion_index<I: IntoIterator<Item = f64>>(values: I) -> (f64, f64, f64) {
    let values: Vec<f64> = values.into_iter().collect();
    if values.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sign = if mean > 0.0 {
        1.0
    } else if mean < 0.0 {
        -1.0
    } else {
        0.0
    };
    let index = variance / mean.abs().max(DISPERSION_EPS) * sign;
    (mean, variance, index)
}

/// `(mean, variance, dispersion)` per module, over every scalar output of the
/// module on every datapoint.
pub fn measure_dispersion(model: &TinyClassifier, data: &[TokenizedDoc]) -> Result<Vec<(f64, f64, f64)>> {
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let traces = data
        .iter()
        .map(|d| model.trace(&d.ids))
        .collect::<Result<Vec<_>>>()?;
    Ok(Module::ALL
        .iter()
        .map(|&m| dispersion_index(traces.iter().flat_map(|t| t.module_output(m).iter().copied())))
        .collect())
}

/// Mean over datapoints of each module's gradient L2 norm.
pub fn measure_grad_norm(model: &TinyClassifier, data: &[TokenizedDoc]) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut sums = vec![0.0; Module::ALL.len()];
    for (index, doc) in data.iter().enumerate() {
        let (_, grads) = model.loss_and_grads(&[doc])?;
        for &m in &Module::ALL {
            let norm = grads.module_norm(m);
            if !norm.is_finite() {
                return Err(Error::NonFiniteGradient {
                    module: m.name().to_string(),
                    index,
                });
            }
            sums[m.index()] += norm;
        }
    }
    Ok(sums.into_iter().map(|s| s / data.len() as f64).collect())
}

/// `S = I + beta * G` for every module.
pub fn combine_sensitivity(stats: &mut [ModuleStats], beta: f64) {
    for s in stats {
        s.sensitivity = s.dispersion + beta * s.grad_norm;
    }
}

/// Dispersion, gradient norm and sensitivity of every module of `model`.
pub fn module_stats(model: &TinyClassifier, data: &[TokenizedDoc], beta: f64) -> Result<Vec<ModuleStats>> {
    let disp = measure_dispersion(model, data)?;
    let grads = measure_grad_norm(model, data)?;
    let mut stats: Vec<ModuleStats> = Module::ALL
        .iter()
        .map(|&m| {
            let (mean, variance, dispersion) = disp[m.index()];
            ModuleStats {
                name: m.name().to_string(),
                mean,
                variance,
                dispersion,
                grad_norm: grads[m.index()],
                sensitivity: 0.0,
                param_count: model.module_param_count(m),
            }
        })
        .collect();
    combine_sensitivity(&mut stats, beta);
    Ok(stats)
}

/// Parameters that must train regardless of the mask, and the module that
/// owns them.
#[derive(Debug, Clone, Copy)]
pub struct ForcedParams<'a> {
    pub module: &'a str,
    pub count: usize,
}

/// Marks modules trainable in order of sensitivity (ties by name) while the
/// trainable fraction stays within budget. The first module that would
/// overshoot is taken only if that lands strictly closer to the budget;
/// selection stops there. Forced parameters count first.
pub fn select_modules(
    stats: &[ModuleStats],
    budget_fraction: f64,
    forced: Option<ForcedParams<'_>>,
) -> Result<FreezeMask> {
    if !(budget_fraction > 0.0 && budget_fraction <= 1.0) {
        return Err(Error::Config(format!("budget {budget_fraction} must lie in (0, 1]")));
    }
    let total: usize = stats.iter().map(|s| s.param_count).sum();
    if total == 0 {
        return Err(Error::Config("modules have no parameters".into()));
    }
    let total = total as f64;
    let forced_count = forced.map_or(0, |f| f.count);
    let forced_fraction = forced_count as f64 / total;
    if budget_fraction < forced_fraction {
        return Err(Error::BudgetTooSmall {
            budget: budget_fraction,
            required: forced_fraction,
        });
    }

    let mut order: Vec<usize> = (0..stats.len()).collect();
    order.sort_by(|&a, &b| {
        stats[b]
            .sensitivity
            .total_cmp(&stats[a].sensitivity)
            .then_with(|| stats[a].name.cmp(&stats[b].name))
    });

    let mut trainable = vec![false; stats.len()];
    let mut count = forced_count;
    for i in order {
        let extra = match forced {
            Some(f) if f.module == stats[i].name => stats[i].param_count - f.count,
            _ => stats[i].param_count,
        };
        let with = (count + extra) as f64 / total;
        if with <= budget_fraction {
            trainable[i] = true;
            count += extra;
        } else {
            let without = count as f64 / total;
            if (with - budget_fraction).abs() < (without - budget_fraction).abs() {
                trainable[i] = true;
                count += extra;
            }
            break;
        }
    }
    Ok(FreezeMask {
        modules: stats.iter().map(|s| s.name.clone()).collect(),
        trainable,
        budget_fraction,
        achieved_fraction: count as f64 / total,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleReport {
    pub name: String,
    pub mu: f64,
    pub var: f64,
    #[serde(rename = "I")]
    pub dispersion: f64,
    #[serde(rename = "G")]
    pub grad_norm: f64,
    #[serde(rename = "S")]
    pub sensitivity: f64,
    pub params: usize,
    pub trainable: bool,
}

/// Sensitivity scores together with the resulting mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub beta: f64,
    pub modules: Vec<ModuleReport>,
    pub budget: f64,
    pub achieved: f64,
}

impl SensitivityReport {
    pub fn new(stats: &[ModuleStats], beta: f64, mask: &FreezeMask) -> Self {
        SensitivityReport {
            beta,
            modules: stats
                .iter()
                .zip(&mask.trainable)
                .map(|(s, &trainable)| ModuleReport {
                    name: s.name.clone(),
                    mu: s.mean,
                    var: s.variance,
                    dispersion: s.dispersion,
                    grad_norm: s.grad_norm,
                    sensitivity: s.sensitivity,
                    params: s.param_count,
                    trainable,
                })
                .collect(),
            budget: mask.budget_fraction,
            achieved: mask.achieved_fraction,
        }
    }

    pub fn mask(&self) -> FreezeMask {
        FreezeMask {
            modules: self.modules.iter().map(|m| m.name.clone()).collect(),
            trainable: self.modules.iter().map(|m| m.trainable).collect(),
            budget_fraction: self.budget,
            achieved_fraction: self.achieved,
        }
    }
}

/// Scores every module of `model` on `data` and selects modules under
/// `budget_fraction`, with task-token rows forced trainable.
pub fn analyze(model: &TinyClassifier, data: &[TokenizedDoc], beta: f64, budget_fraction: f64) -> Result<SensitivityReport> {
    if !(beta >= 0.0) {
        return Err(Error::Config(format!("beta must be non-negative, got {beta}")));
    }
    let stats = module_stats(model, data, beta)?;
    let forced = ForcedParams {
        module: Module::Embedding.name(),
        count: model.new_token_params(),
    };
    let mask = select_modules(&stats, budget_fraction, Some(forced))?;
    Ok(SensitivityReport::new(&stats, beta, &mask))
}

pub fn write_report(path: &Path, report: &SensitivityReport) -> Result<()> {
    io::write_json(path, report)
}

pub fn read_report(path: &Path) -> Result<SensitivityReport> {
    io::read_json(path)
}
