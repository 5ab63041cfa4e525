//! Token and image encoders, `[H_kg; H_img; H_lang]` fusion and a small
//! prefix-LM decoder with greedy generation and a training loop.

mod dataset;
mod decoder;
mod generate;
mod model;
mod ops;
mod params;
mod train;
mod vocab;

pub use dataset::{
    dataset_vocab, make_planted_dataset, noise_patches, read_jsonl, write_jsonl, KnowledgeSource, PlantedDatasetConfig,
    PreparedData, QaInstance, Sample, Split,
};
pub use decoder::{
    decoder_nll, decoder_nll_backward, teacher_forced_logits, DecodeState, FusionInput, PrefixLayout, SEG_IMG, SEG_KG,
    SEG_LANG, SEG_OUT,
};
pub use generate::{argmax, generate_with, Generation};
pub use model::{ToyFusionModel, MODEL_CHECKPOINT_MAGIC};
pub use ops::{embed_rows, fuse, project_image};
pub use params::{BlockParams, FusionConfig, FusionParams, NUM_SEGMENTS};
pub use train::{
    answer_accuracy, parse_kv, train, train_with, EpochLog, TrainConfig, TrainLog, MAX_EPOCHS, TOY_LEARNING_RATE,
};
pub use vocab::{tokenize, Vocab, BOS, BOS_TOKEN, EOS, EOS_TOKEN, PAD, PAD_TOKEN, SEP, SEP_TOKEN};
