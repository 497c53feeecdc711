//! Shared subword vocabulary and seed-deterministic synthetic tasks.

mod batch;
mod error;
mod tasks;
mod tokenizer;

#[cfg(any(test, feature = "testing"))]
pub mod testing;

pub use batch::{make_batch, Batch, BatchInput, BatchTarget};
pub use error::{DataError, Result};
pub use tasks::{
    command_names, desk_tasks, desk_tasks_with, export_tsv, find_task, lang_words, sample,
    translation_table, vocab_corpus, LangPair, Modality, Sample, SampleInput, SampleTarget,
    TaskKind, TaskSpec, AUDIO_LEN, DEV_BASE, IMAGE_SIZE, LENGTH_GROUP, N_CLASSES,
};
pub use tokenizer::{Vocab, PAD_ID, TERM_ID, UNK_ID};
