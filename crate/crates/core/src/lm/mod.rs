//! Toy decoder-only language models with an externally manipulable KV cache.

pub mod cache;
pub mod checkpoint;
pub mod config;
pub mod model;
pub mod tokenizer;
pub mod train;

pub use cache::{CacheView, KvCache, LayerKv};
pub use config::ModelConfig;
pub use model::{decode_in_place, decode_step, greedy_next, prefill, ModelWeights, SegmentGrad, TransformerModel};
pub use tokenizer::{detokenize, tokenize, TokenSeq, Vocab, EOS};
pub use train::{train_lm, TrainExample, TrainHyper, TrainReport};
