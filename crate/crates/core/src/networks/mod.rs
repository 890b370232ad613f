//! Generator and semantic-aware discriminator networks, their parameter
//! registry, and the checkpoint container they serialize into.

pub mod container;
mod discriminator;
mod generator;
mod params;

pub use container::Container;
pub use discriminator::{
    discriminator_receptive_dims, one_hot_mask, DiscriminatorConfig, SemanticDiscriminatorNet, SemanticMask,
};
pub use generator::{GeneratorConfig, GeneratorNet, IMAGE_CHANNELS};
pub use params::{BoundParams, ParamSet};

/// Write a parameter set into `c` with every record name prefixed.
pub fn store_params(c: &mut Container, prefix: &str, params: &ParamSet) {
    for (name, t) in params.iter() {
        c.push(format!("{prefix}/{name}"), t.clone());
    }
}

/// Restore a parameter set from records written by [`store_params`].
pub fn restore_params(c: &Container, prefix: &str, params: &mut ParamSet) -> crate::Result<()> {
    let lookup: std::collections::HashMap<&str, &crate::tensor::Tensor> = c
        .records()
        .iter()
        .filter_map(|r| r.name.strip_prefix(prefix).and_then(|n| n.strip_prefix('/')).map(|n| (n, &r.tensor)))
        .collect();
    params.load_from(|name| lookup.get(name).copied())
}
