//! Glue between raw episodes and model-ready step series.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::Result;
use crate::events::{encode_steps, normalize, EventSequence, FeatureCatalog, FeatureStats, Split, StepSeries};
use crate::seqmodel::TrainingExample;

/// Normalize and encode every episode, in corpus order.
pub fn encode_corpus(
    corpus: &[EventSequence],
    catalog: &FeatureCatalog,
    stats: &FeatureStats,
) -> Result<Vec<StepSeries>> {
    corpus.par_iter().map(|seq| encode_steps(&normalize(seq, stats), catalog)).collect()
}

/// Step series keyed by episode id.
pub fn steps_by_episode(corpus: &[EventSequence], steps: Vec<StepSeries>) -> BTreeMap<String, StepSeries> {
    corpus.iter().map(|s| s.episode_id.clone()).zip(steps).collect()
}

/// Training examples of one split. Empty episodes are skipped.
pub fn examples(corpus: &[EventSequence], steps: &[StepSeries], split: Split) -> Vec<TrainingExample> {
    corpus
        .iter()
        .zip(steps)
        .filter(|(seq, s)| seq.split == split && !s.is_empty())
        .map(|(seq, s)| TrainingExample { steps: s.clone(), outcome: seq.outcome })
        .collect()
}
