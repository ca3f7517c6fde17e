use std::collections::{HashMap, HashSet};

use super::{with_grad_mode, Result, Tensor, TensorError};

/// Every tensor reachable from `root` through recorded nodes, newest first.
/// Ids are assigned at creation and inputs always predate their consumers, so
/// descending id order is a reverse topological order.
fn reverse_topo(root: &Tensor) -> Vec<Tensor> {
    let mut seen = HashSet::new();
    let mut stack = vec![root.clone()];
    let mut out = Vec::new();
    while let Some(t) = stack.pop() {
        if !t.requires_grad() || !seen.insert(t.id()) {
            continue;
        }
        if let Some(node) = t.node() {
            stack.extend(node.inputs.iter().filter(|i| i.requires_grad()).cloned());
        }
        out.push(t);
    }
    out.sort_unstable_by_key(|t| std::cmp::Reverse(t.id()));
    out
}

fn accumulate(grads: &mut HashMap<u64, Tensor>, id: u64, g: Tensor) -> Result<()> {
    let merged = match grads.remove(&id) {
        Some(prev) => prev.add(&g)?,
        None => g,
    };
    grads.insert(id, merged);
    Ok(())
}

/// Core reverse sweep. `targets` restricts propagation to paths that reach one
/// of the given ids (`None` means every leaf that requires a gradient).
/// Returns the gradient of each target (or leaf) that was reached.
fn sweep(
    root: &Tensor,
    seed: Tensor,
    targets: Option<&HashSet<u64>>,
    create_graph: bool,
) -> Result<(Vec<Tensor>, HashMap<u64, Tensor>)> {
    let order = reverse_topo(root);
    let needed: HashSet<u64> = match targets {
        None => order.iter().map(Tensor::id).collect(),
        Some(ids) => {
            let mut needed = HashSet::new();
            for t in order.iter().rev() {
                let reaches = ids.contains(&t.id())
                    || t.node()
                        .is_some_and(|n| n.inputs.iter().any(|i| needed.contains(&i.id())));
                if reaches {
                    needed.insert(t.id());
                }
            }
            needed
        }
    };

    with_grad_mode(create_graph, || {
        let mut grads: HashMap<u64, Tensor> = HashMap::new();
        let mut reached = HashMap::new();
        grads.insert(root.id(), seed);
        let mut leaves = Vec::new();
        for t in &order {
            if !needed.contains(&t.id()) {
                continue;
            }
            let is_target = targets.is_some_and(|ids| ids.contains(&t.id()));
            let Some(node) = t.node() else {
                if let Some(g) = grads.remove(&t.id()) {
                    reached.insert(t.id(), g);
                    leaves.push(t.clone());
                }
                continue;
            };
            let Some(g) = grads.remove(&t.id()) else {
                continue;
            };
            if is_target {
                reached.insert(t.id(), g.clone());
            }
            let mask: Vec<bool> = node
                .inputs
                .iter()
                .map(|i| i.requires_grad() && needed.contains(&i.id()))
                .collect();
            if !mask.iter().any(|&m| m) {
                continue;
            }
            if create_graph && !node.op.second_order() {
                return Err(TensorError::SecondOrderUnsupported(node.op.name()));
            }
            let input_grads = node.op.backward(&node.inputs, t, &g, &mask)?;
            for ((input, gi), m) in node.inputs.iter().zip(input_grads).zip(&mask) {
                if let (true, Some(gi)) = (*m, gi) {
                    accumulate(&mut grads, input.id(), gi)?;
                }
            }
        }
        Ok((leaves, reached))
    })
}

pub(super) fn backward_with_seed(root: &Tensor, seed: Tensor) -> Result<()> {
    if !root.requires_grad() {
        return Ok(());
    }
    let (leaves, grads) = sweep(root, seed, None, false)?;
    for leaf in leaves {
        if let Some(g) = grads.get(&leaf.id()) {
            leaf.accumulate_grad(&g.data());
        }
    }
    Ok(())
}

/// Gradients of `output` with respect to each tensor in `wrt`, seeded with
/// `seed` (ones when `None`, which requires a single-element output).
///
/// Leaf `.grad` buffers are not touched. Inputs that `output` does not depend
/// on get a zero gradient. With `create_graph`, the returned tensors are
/// themselves recorded and can be differentiated again.
pub fn grad(
    output: &Tensor,
    wrt: &[&Tensor],
    seed: Option<&Tensor>,
    create_graph: bool,
) -> Result<Vec<Tensor>> {
    let seed = match seed {
        Some(s) if s.shape() == output.shape() => s.clone(),
        Some(s) => {
            return Err(TensorError::ShapeMismatch {
                op: "grad",
                lhs: output.shape().to_vec(),
                rhs: s.shape().to_vec(),
            })
        }
        None if output.numel() == 1 => Tensor::full(output.shape(), 1.0),
        None => return Err(TensorError::NonScalarLoss(output.shape().to_vec())),
    };
    let ids: HashSet<u64> = wrt.iter().map(|t| t.id()).collect();
    let reached = if output.requires_grad() {
        sweep(output, seed, Some(&ids), create_graph)?.1
    } else {
        HashMap::new()
    };
    Ok(wrt
        .iter()
        .map(|t| {
            reached
                .get(&t.id())
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect())
}
