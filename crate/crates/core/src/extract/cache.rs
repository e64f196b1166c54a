//! Per-instance commonsense cache produced by the extraction step and read
//! by training.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CometClient, CommonsenseResult, Pipeline, QueryMode};
use crate::data::Instance;
use crate::error::{read_to_string, write_file, Error, Result};

pub const CS_CACHE_FORMAT: &str = "coffee-cs-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsEntry {
    pub query: String,
    pub topics: Vec<String>,
    pub commonsense: CommonsenseResult,
}

/// Instance id → extracted commonsense.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsCache {
    pub format: String,
    pub entries: BTreeMap<String, CsEntry>,
}

impl Default for CsCache {
    fn default() -> Self {
        Self {
            format: CS_CACHE_FORMAT.to_string(),
            entries: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExtractSummary {
    pub added: usize,
    pub skipped: usize,
    /// Instances whose text produced no topics; stored with no phrases.
    pub empty_topics: usize,
}

/// Text the pipeline sees for an instance: context then target.
pub fn instance_text(inst: &Instance) -> String {
    inst.utterances()
        .map(|u| u.text.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

impl CsCache {
    pub fn load(path: &Path) -> Result<Self> {
        let cache: CsCache = serde_json::from_str(&read_to_string(path)?)?;
        if cache.format != CS_CACHE_FORMAT {
            return Err(Error::Integrity(format!(
                "{}: expected format `{CS_CACHE_FORMAT}`, found `{}`",
                path.display(),
                cache.format
            )));
        }
        Ok(cache)
    }

    /// Load `path` if it exists, otherwise start empty.
    pub fn load_or_default(path: &Path) -> Result<Self> {
        if path.exists() {
            Self::load(path)
        } else {
            Ok(Self::default())
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &(serde_json::to_string_pretty(self)? + "\n"))
    }

    pub fn get(&self, instance_id: &str) -> Option<&CsEntry> {
        self.entries.get(instance_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Run the pipeline and the generator for every instance not yet
    /// cached. Instances with no topics get an empty result without a
    /// query.
    pub fn extend(
        &mut self,
        instances: &[Instance],
        pipeline: &Pipeline,
        client: &CometClient,
        mode: QueryMode,
    ) -> Result<ExtractSummary> {
        let mut summary = ExtractSummary::default();
        let todo: Vec<&Instance> = instances
            .iter()
            .filter(|i| !self.entries.contains_key(&i.id))
            .collect();
        summary.skipped = instances.len() - todo.len();

        let traces: Vec<_> = todo
            .par_iter()
            .map(|i| pipeline.run(&instance_text(i)))
            .collect();
        let results: Vec<CommonsenseResult> = match mode {
            QueryMode::Joint => {
                let queries: Vec<String> = traces
                    .iter()
                    .filter(|t| !t.topics.is_empty())
                    .map(|t| t.query.clone())
                    .collect();
                let mut fetched = client.query_many(&queries)?.into_iter();
                traces
                    .iter()
                    .map(|t| {
                        if t.topics.is_empty() {
                            CommonsenseResult::default()
                        } else {
                            fetched.next().expect("one result per query")
                        }
                    })
                    .collect()
            }
            QueryMode::PerTopic => traces
                .iter()
                .map(|t| {
                    if t.topics.is_empty() {
                        Ok(CommonsenseResult::default())
                    } else {
                        client.query_topics(&t.topics, mode)
                    }
                })
                .collect::<Result<_>>()?,
        };

        for ((inst, trace), commonsense) in todo.iter().zip(traces).zip(results) {
            if trace.topics.is_empty() {
                summary.empty_topics += 1;
            }
            self.entries.insert(
                inst.id.clone(),
                CsEntry {
                    query: trace.query,
                    topics: trace.topics.topics,
                    commonsense,
                },
            );
            summary.added += 1;
        }
        Ok(summary)
    }
}
