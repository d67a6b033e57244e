//! Text processing units sharing one interface, and pipelines chaining them.

mod pipeline;
mod units;

pub use pipeline::{Category, PadValue, Pipeline, Sequence, Unit};
pub use units::{
    fixed_length, is_punctuation, lowercase, punc_removal, tokenize, word_hashing,
    FrequencyFilter, Vocabulary, OOV_INDEX, PAD_INDEX,
};
