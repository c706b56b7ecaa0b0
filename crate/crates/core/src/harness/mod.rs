//! Corpus loading, run configuration, checkpoints, and the commands behind the CLI.

mod checkpoint;
mod commands;
mod config;
mod corpus;


pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC};
pub use commands::{
    cmd_count_params, cmd_eval, cmd_inspect_memory, cmd_train, corpus_for, evaluate, format_log_line,
    param_table, predict_label, render_memory, train_with_config, EvalExample, EvalOutput, ParamTable,
    TrainOptions, TrainOutcome, LOG_HEADER,
};
pub use config::{MetricsConfig, Overrides, PathsConfig, RunConfig};
pub use corpus::{
    build_vocab, bundled_corpus, load_corpus, parse_corpus, to_examples, write_corpus, CorpusRecord,
    BUNDLED_CORPUS, BUNDLED_CORPUS_LEN, BUNDLED_CORPUS_NAME,
};
