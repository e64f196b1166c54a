//! Commonsense extraction: language identification, transliteration,
//! preprocessing, topic translation, generator queries, attribute selection
//! and attribute–label correlation.

mod attributes;
mod cache;
mod comet;
mod lexicon;
mod stages;

pub use attributes::{
    correlate_attributes, parse_selection, select_attributes, AttributeCorrelation, Correlation,
    DEFAULT_SELECTION,
};
pub use cache::{instance_text, CsCache, CsEntry, ExtractSummary, CS_CACHE_FORMAT};
pub use comet::{
    query_key, CometBackend, CometClient, CommonsenseResult, EffectType, FixtureBackend,
    HttpBackend, HttpConfig, QueryMode, DEFAULT_MAX_IN_FLIGHT,
};
pub use lexicon::Lexicons;
pub use stages::{
    identify_language, preprocess, translate_topics, transliterate, transliterate_all, LangTag,
    LanguageIdentifier, Pipeline, PipelineTrace, TaggedToken, TopicSet, Translator, Transliterator,
};
