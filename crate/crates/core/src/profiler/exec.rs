use crate::error::{Error, Result};
use crate::model::Model;
use crate::partition::{report_layout, LinkModel, PartitionPlan, RowSpec, TrafficReport};
use crate::tensor::{Scalar, Tensor};

pub(crate) fn check_link<T: Scalar>(link: &LinkModel) -> Result<()> {
    let word = T::PRECISION.word_size();
    if link.word_size != word {
        return Err(Error::Config(format!(
            "link word size {} does not match {} precision ({word} bytes)",
            link.word_size,
            T::PRECISION
        )));
    }
    Ok(())
}

pub(crate) fn report_from_node_bytes(
    layout: &[RowSpec],
    node_bytes: &[u64],
    link: &LinkModel,
) -> TrafficReport {
    let bytes: Vec<u64> = layout.iter().map(|row| node_bytes[row.last]).collect();
    TrafficReport::from_row_bytes(layout, &bytes, link)
}

/// Runs `model` on `x` in topological order, recording the bytes of every
/// layer's actual output. The output is the same tensor
/// [`Model::forward`] produces.
pub fn profile_forward<T: Scalar>(
    model: &Model<T>,
    x: &Tensor<T>,
    plan: &PartitionPlan,
    link: &LinkModel,
) -> Result<(Tensor<T>, TrafficReport)> {
    check_link::<T>(link)?;
    let layout = report_layout(model.graph(), plan)?;
    let mut node_bytes = vec![0u64; model.graph().len()];
    let word = link.word_size as u64;
    let out = model.forward_observed(x, |id, t| node_bytes[id] = t.len() as u64 * word)?;
    Ok((out, report_from_node_bytes(&layout, &node_bytes, link)))
}

/// Sequential reference for a stream of inputs: one [`profile_forward`] per
/// input, reports summed in input order.
pub fn profile_sequential<T: Scalar>(
    model: &Model<T>,
    inputs: &[Tensor<T>],
    plan: &PartitionPlan,
    link: &LinkModel,
) -> Result<(Vec<Tensor<T>>, TrafficReport)> {
    let mut outs = Vec::with_capacity(inputs.len());
    let mut reports = Vec::with_capacity(inputs.len());
    for x in inputs {
        let (y, r) = profile_forward(model, x, plan, link)?;
        outs.push(y);
        reports.push(r);
    }
    Ok((outs, TrafficReport::merge(&reports, link)?))
}
