//! Bottleneck adapters, attention fusion over adapter outputs, and the
//! adapted encoder that hosts them.

mod budget;
mod layers;
mod model;

pub use budget::{adapter_param_count, fusion_param_count, large_bottleneck, make_large_adapter, param_counts, ParamBudget};
pub use layers::{adapter_forward, adapter_graph, fusion_forward, fusion_graph, FusionOutput};
pub use model::{
    adapter_prefix, fusion_prefix, group_checksums, init_adapter, init_fusion, insert_adapters, param_group, verify_frozen, AdaptedEncoder, AdapterKind,
    AdapterSpec, Mode,
};
