use std::cmp::Ordering;
use std::collections::BTreeMap;

use super::graph::{Evaluation, Graph, InputKind, NodeId, Op};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Outcome of comparing analytic gradients to central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max over coordinates of |analytic − numeric| / max(1, |analytic|)
    pub max_rel_error: f64,
    pub checked: usize,
    /// (input name, flat index) pairs skipped because a relu/clamp_min kink
    /// lies within one step of the evaluation point.
    pub excluded: Vec<(String, usize)>,
}

/// Branch state of every kinked primitive; a coordinate whose ±step
/// perturbations change this pattern straddles a non-differentiable point.
fn kink_pattern(graph: &Graph, eval: &Evaluation<'_>) -> Vec<Ordering> {
    let mut out = Vec::new();
    for i in 0..graph.len() {
        let node = graph.node(NodeId::from_index(i));
        let floor = match node.op {
            Op::Relu => 0.0,
            Op::ClampMin(f) => f,
            _ => continue,
        };
        let x = eval.value(node.parents[0]);
        out.extend(x.data().iter().map(|v| v.total_cmp(&floor)));
    }
    out
}

fn scalar_value(graph: &Graph, bindings: &BTreeMap<String, Tensor>, output: NodeId) -> Result<(f64, Vec<Ordering>)> {
    let eval = graph.evaluate(bindings)?;
    let v = eval.value(output).item().ok_or(Error::NotScalar {
        node: output.index(),
        shape: eval.value(output).shape().to_vec(),
    })?;
    Ok((v, kink_pattern(graph, &eval)))
}

/// Checks d(output)/d(input) for every placeholder and trainable parameter.
pub fn grad_check(
    graph: &Graph,
    output: NodeId,
    point: &BTreeMap<String, Tensor>,
    step: f64,
) -> Result<GradCheckReport> {
    if !(step > 0.0) {
        return Err(Error::config("grad_check step must be positive"));
    }
    let eval = graph.evaluate(point)?;
    let grads = graph.backward(&eval, output)?;
    let base_pattern = kink_pattern(graph, &eval);
    drop(eval);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        excluded: Vec::new(),
    };
    let mut probe = point.clone();
    for (name, kind, _) in graph.inputs() {
        if matches!(kind, InputKind::Parameter { trainable: false }) {
            continue;
        }
        let analytic = grads.input(&name).expect("input exists");
        for idx in 0..analytic.len() {
            let orig = point[&name].data()[idx];
            probe.get_mut(&name).unwrap().data_mut()[idx] = orig + step;
            let (plus, p_pat) = scalar_value(graph, &probe, output)?;
            probe.get_mut(&name).unwrap().data_mut()[idx] = orig - step;
            let (minus, m_pat) = scalar_value(graph, &probe, output)?;
            probe.get_mut(&name).unwrap().data_mut()[idx] = orig;

            if p_pat != base_pattern || m_pat != base_pattern {
                report.excluded.push((name.clone(), idx));
                continue;
            }
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.data()[idx];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            report.max_rel_error = report.max_rel_error.max(err);
            report.checked += 1;
        }
    }
    Ok(report)
}
