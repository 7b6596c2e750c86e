//! Closed-form parameter counts, computed from the spec alone.

use super::spec::{ArchitectureSpec, ConvType, EnsembleMode};

/// Parameters of one member network (the BL shape) of `spec`.
pub fn member_params(spec: &ArchitectureSpec) -> usize {
    let mut total = 0;
    let mut c_in = spec.input_channels;
    for (i, b) in spec.blocks.iter().enumerate() {
        let f = spec.block_filters(i);
        for _ in 0..b.conv_layers_in_block {
            total += c_in * f * b.kernel_size + f;
            c_in = f;
        }
    }
    total + c_in * spec.num_classes + spec.num_classes
}

/// Total trainable parameters of the bundle `build(spec)` produces.
///
/// PE/ME hold N full members. Uniform EE holds N members' encoders and head
/// weights but a single shared head bias, so it is `N·member − (N−1)·k`.
/// Stepwise and ablated EE sum `C_in·C_out·K / groups + C_out` per
/// convolution plus a `C_last → k` head.
pub fn closed_form_params(spec: &ArchitectureSpec) -> usize {
    let k = spec.num_classes;
    match spec.ensemble_mode {
        EnsembleMode::Baseline => member_params(spec),
        EnsembleMode::Pure | EnsembleMode::Merge => spec.n * member_params(spec),
        EnsembleMode::Easy if !spec.is_stepwise() && spec.conv_type() == ConvType::Group => {
            spec.n * member_params(spec) - (spec.n - 1) * k
        }
        EnsembleMode::Easy => {
            let groups = spec.block_groups();
            let mut c_in = spec.model_input_channels();
            let mut total = 0;
            for (i, b) in spec.blocks.iter().enumerate() {
                let c_out = spec.block_filters(i) * groups[i];
                let conv_groups = match spec.conv_type() {
                    ConvType::Group => groups[i],
                    ConvType::Conventional => 1,
                };
                for _ in 0..b.conv_layers_in_block {
                    total += c_in * c_out * b.kernel_size / conv_groups + c_out;
                    c_in = c_out;
                }
            }
            total + c_in * k + k
        }
    }
}
