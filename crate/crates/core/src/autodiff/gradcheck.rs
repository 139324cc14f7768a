//! Central finite-difference verification of analytic gradients.

use std::collections::BTreeMap;

use super::{Graph, NodeId};
use crate::error::{Error, Result};

/// Outcome for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub max_rel_error: f64,
    /// Flat component index with the largest relative error.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Components where the perturbed loss was not finite.
    pub non_finite: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub entries: BTreeMap<String, GradCheckEntry>,
    pub epsilon: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.values().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.entries
            .values()
            .all(|e| e.non_finite.is_empty() && e.max_rel_error < self.tolerance)
    }

    /// Entries sorted from largest to smallest relative error.
    pub fn worst(&self, n: usize) -> Vec<(&str, &GradCheckEntry)> {
        let mut v: Vec<_> = self.entries.iter().map(|(k, e)| (k.as_str(), e)).collect();
        v.sort_by(|a, b| b.1.max_rel_error.total_cmp(&a.1.max_rel_error));
        v.truncate(n);
        v
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient of `loss` with `(L(p+eps) - L(p-eps)) / 2eps` for
/// every component of every parameter whose name passes `filter`.
///
/// The graph must already have its inputs bound by a forward pass. Parameters are
/// restored and the graph re-evaluated before returning.
pub fn grad_check(
    graph: &mut Graph,
    loss: NodeId,
    epsilon: f64,
    tolerance: f64,
    filter: impl Fn(&str) -> bool,
) -> Result<GradCheckReport> {
    if !(1e-7..=1e-4).contains(&epsilon) {
        return Err(Error::invalid(format!("epsilon {epsilon} outside [1e-7, 1e-4]")));
    }
    graph.recompute()?;
    let analytic = graph.backward(loss)?;
    let names: Vec<String> = graph
        .parameter_names()
        .filter(|n| filter(n))
        .map(String::from)
        .collect();
    let mut entries = BTreeMap::new();
    for name in names {
        let grad = analytic.entries[&name].data().to_vec();
        let mut entry = GradCheckEntry {
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: grad.first().copied().unwrap_or(0.0),
            numeric: 0.0,
            non_finite: Vec::new(),
        };
        for (k, &a) in grad.iter().enumerate() {
            let original = graph.parameter_data_mut(&name).expect("listed parameter")[k];
            let mut eval_at = |value: f64| -> Result<f64> {
                graph.parameter_data_mut(&name).expect("listed parameter")[k] = value;
                graph.recompute()?;
                Ok(graph.value(loss).expect("evaluated").item())
            };
            let plus = eval_at(original + epsilon)?;
            let minus = eval_at(original - epsilon)?;
            graph.parameter_data_mut(&name).expect("listed parameter")[k] = original;
            if !plus.is_finite() || !minus.is_finite() {
                entry.non_finite.push(k);
                continue;
            }
            let numeric = (plus - minus) / (2.0 * epsilon);
            let err = relative_error(a, numeric);
            if err > entry.max_rel_error || k == 0 {
                entry.max_rel_error = err;
                entry.worst_index = k;
                entry.analytic = a;
                entry.numeric = numeric;
            }
        }
        entries.insert(name, entry);
    }
    graph.recompute()?;
    Ok(GradCheckReport {
        entries,
        epsilon,
        tolerance,
    })
}
