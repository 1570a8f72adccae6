//! Training loops, finetuning partitions and per-task objectives.

mod config;
mod partition;
mod tasks;
mod trainer;

pub use config::TrainConfig;
pub use partition::{
    classify_name, freeze_mask_at, full_scale_trainable_counts, select_finetune_params, trainable_counts,
    FinetuneStrategy, NameClass, ParamPartition, Side, StrategyKind,
};
pub use tasks::{
    mbart_source, token_pair, w2v_masks, CtcTask, MbartTask, S2utItem, S2utTask, Seq2SeqTask, TokenPair, W2vTask,
};
pub use trainer::{metrics_tsv, train, MetricRow, Task, TrainOutcome, Trainable, METRICS_HEADER};
