//! Networks of 2D residual blocks with temporal shifts.

pub(crate) mod backward;
pub(crate) mod forward;
mod spec;
mod weights;

pub use forward::{block_forward, consensus_average, count_network, forward_offline, NetworkCost};
pub use spec::{load_spec, BlockSpec, HeadSpec, InputSpec, NetShapes, NetworkSpec, Placement};
pub use weights::{expected_entries, load_weights, save_weights, WeightStore, WEIGHTS_MAGIC, WEIGHTS_VERSION};
