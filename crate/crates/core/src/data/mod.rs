//! Datasets, splits and padding-free batching.

mod adding;
mod bucket;
mod labeled;
mod split;

pub use adding::{
    adding_accuracy, gen_adding, read_adding, write_adding, AddingInstance, LengthModel, ADDING_MAGIC,
    ADDING_TOLERANCE,
};
pub use bucket::{bucket_batches, bucket_key, batched_forward};
pub use labeled::{load_labeled, parse_labeled, write_labeled, LabeledSequence, Vocabulary};
pub use split::{split, Split};
