use clutterbridge_numcore::{Checkpoint, Net, ParamSet, Tensor};

use crate::error::{CoreError, Result};

/// Tensors of `net` renamed to `prefix.<param>`.
pub fn export(prefix: &str, net: &Net) -> Vec<(String, Tensor)> {
    net.params().with_prefix(prefix)
}

/// Copy of `template` carrying the parameters stored under `prefix.` in the
/// checkpoint. Fails when any tensor is missing or has the wrong shape.
pub fn restore(template: &Net, ckpt: &Checkpoint, prefix: &str) -> Result<Net> {
    let mut params = ParamSet::new();
    for (name, t) in template.params().iter() {
        let full = format!("{prefix}.{name}");
        let stored = ckpt
            .get(&full)
            .ok_or_else(|| CoreError::Format(format!("checkpoint lacks tensor `{full}`")))?;
        if stored.shape() != t.shape() {
            return Err(CoreError::Format(format!(
                "tensor `{full}` has shape {:?}, expected {:?}",
                stored.shape(),
                t.shape()
            )));
        }
        params.insert(name.clone(), stored.clone())?;
    }
    Ok(Net::from_parts(
        template.input_shape().to_vec(),
        template.layers().to_vec(),
        params,
    )?)
}
