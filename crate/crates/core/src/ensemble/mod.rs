//! BL, PE, ME and EE bundles built from one [`ArchitectureSpec`].

mod bundle;
mod checkpoint;
mod count;
mod network;
mod spec;

pub use bundle::{
    build, build_ablation_variant, build_stepwise, merge_outputs, transplant_me_to_ee, BundleForward, ModelBundle,
};
pub use checkpoint::{checkpoint_precision, load_checkpoint, member_path, save_checkpoint};
pub use count::{closed_form_params, member_params};
pub use network::{expand_group_mask, ForwardOptions, Layer, LayerDescriptor, LayerFamily, Network, NetworkForward};
pub use spec::{AblationCode, ArchitectureSpec, BlockSpec, ConvType, EnsembleMode, MergeWeight};
