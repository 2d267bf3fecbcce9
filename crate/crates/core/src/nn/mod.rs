//! Dense and masked layers, the named parameter store, and the `.gprl`
//! weight file.

mod layers;
mod masks;
mod store;
mod weights;

pub use layers::{dense, Activation, DenseLayer, MaskedDenseLayer};
pub use masks::{make_autoregressive_masks, AutoregressiveMasks};
pub use store::{BoundParams, ParamStore};
pub use weights::{load_weights, read_weights, save_weights, write_weights, MAGIC, VERSION};
