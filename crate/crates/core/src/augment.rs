//! Positive-view generation: online synonym substitution and an offline
//! back-translation cache.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, DomainCorpus, LabeledDocument};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMethod {
    SynonymSubstitution,
    BackTranslation,
}

impl std::str::FromStr for AugmentMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synonym_substitution" | "synonym" | "ss" => Ok(AugmentMethod::SynonymSubstitution),
            "back_translation" | "bt" => Ok(AugmentMethod::BackTranslation),
            other => Err(Error::InvalidArgument(format!("unknown augmentation method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    pub method: AugmentMethod,
    pub substitution_rate: f64,
    pub source_language: String,
    pub pivot_language: String,
    pub beam: u32,
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            method: AugmentMethod::BackTranslation,
            substitution_rate: 0.3,
            source_language: "en".into(),
            pivot_language: "de".into(),
            beam: 1,
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.substitution_rate) {
            return Err(Error::InvalidArgument(format!(
                "substitution_rate {} outside [0, 1]",
                self.substitution_rate
            )));
        }
        if self.beam < 1 {
            return Err(Error::InvalidArgument("beam must be at least 1".into()));
        }
        Ok(())
    }
}

/// Source of single-token synonyms. `lookup` receives a lowercased word and
/// must be deterministic.
pub trait SynonymProvider: Send + Sync {
    fn lookup(&self, word: &str) -> Vec<String>;
}

/// In-memory synonym table, loadable from a JSON object of
/// `word -> [synonyms]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl Lexicon {
    pub fn new() -> Self {
        Lexicon::default()
    }

    pub fn insert(&mut self, word: &str, synonyms: impl IntoIterator<Item = impl Into<String>>) {
        let entry = self.entries.entry(word.to_lowercase()).or_default();
        for s in synonyms {
            let s = s.into();
            if !entry.contains(&s) {
                entry.push(s);
            }
        }
    }

    /// Adds every pair within `group` as mutual synonyms.
    pub fn insert_group(&mut self, group: &[&str]) {
        for &w in group {
            self.insert(w, group.iter().filter(|&&o| o != w).copied());
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries: BTreeMap<String, Vec<String>> = serde_json::from_str(&raw)?;
        let mut lex = Lexicon::new();
        for (w, syns) in entries {
            lex.insert(&w, syns);
        }
        Ok(lex)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let raw = serde_json::to_string_pretty(&self.entries)?;
        std::fs::write(path, raw).map_err(|e| Error::io(path, e))
    }
}

impl SynonymProvider for Lexicon {
    fn lookup(&self, word: &str) -> Vec<String> {
        self.entries.get(word).cloned().unwrap_or_default()
    }
}

/// Provider output filtered to usable replacements: single tokens, never
/// the word itself, deduplicated, in a fixed order.
fn eligible_synonyms(provider: &dyn SynonymProvider, word: &str) -> Vec<String> {
    let mut out: Vec<String> = provider
        .lookup(word)
        .into_iter()
        .filter(|s| !s.is_empty() && !s.chars().any(char::is_whitespace))
        .filter(|s| s.to_lowercase() != word)
        .collect();
    out.sort();
    out.dedup();
    out
}

/// A whitespace-delimited token split into punctuation prefix, core word,
/// and punctuation suffix, as byte ranges into the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct TokenSpan {
    start: usize,
    core_start: usize,
    core_end: usize,
    end: usize,
}

fn token_spans(text: &str) -> Vec<TokenSpan> {
    let mut spans = Vec::new();
    let mut start = None;
    let mut push = |s: usize, e: usize| {
        let tok = &text[s..e];
        let lead = tok.len() - tok.trim_start_matches(|c: char| !c.is_alphanumeric()).len();
        let trail = tok.len() - tok.trim_end_matches(|c: char| !c.is_alphanumeric()).len();
        let (core_start, core_end) = if lead + trail >= tok.len() {
            (s + tok.len(), s + tok.len())
        } else {
            (s + lead, e - trail)
        };
        spans.push(TokenSpan {
            start: s,
            core_start,
            core_end,
            end: e,
        });
    };
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                push(s, i);
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        push(s, text.len());
    }
    spans
}

/// Whitespace token count, the quantity synonym substitution preserves.
pub fn token_count(text: &str) -> usize {
    token_spans(text).len()
}

fn match_case(original: &str, replacement: &str) -> String {
    let letters: Vec<char> = original.chars().filter(|c| c.is_alphabetic()).collect();
    if letters.len() > 1 && letters.iter().all(|c| c.is_uppercase()) {
        return replacement.to_uppercase();
    }
    if original.chars().next().is_some_and(char::is_uppercase) {
        let mut chars = replacement.chars();
        return match chars.next() {
            Some(first) => first.to_uppercase().chain(chars).collect(),
            None => String::new(),
        };
    }
    replacement.to_string()
}

/// Result of one substitution pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Substitution {
    pub document: Document,
    pub eligible: usize,
    pub replaced: usize,
}

/// Replaces each token that has at least one synonym, independently with
/// probability `substitution_rate`, by a uniformly chosen synonym. There is
/// no cap on the number of replaced tokens.
pub fn synonym_substitute_counted<R: Rng + ?Sized>(
    doc: &Document,
    provider: &dyn SynonymProvider,
    config: &AugmentationConfig,
    rng: &mut R,
) -> Substitution {
    let text = &doc.text;
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    let mut eligible = 0;
    let mut replaced = 0;
    for span in token_spans(text) {
        let core = &text[span.core_start..span.core_end];
        if core.is_empty() {
            continue;
        }
        let synonyms = eligible_synonyms(provider, &core.to_lowercase());
        if synonyms.is_empty() {
            continue;
        }
        eligible += 1;
        let draw: f64 = rng.gen();
        if draw < config.substitution_rate {
            let pick = &synonyms[rng.gen_range(0..synonyms.len())];
            out.push_str(&text[cursor..span.core_start]);
            out.push_str(&match_case(core, pick));
            cursor = span.core_end;
            replaced += 1;
        }
        debug_assert!(span.start <= span.core_start && span.core_end <= span.end);
    }
    out.push_str(&text[cursor..]);
    Substitution {
        document: Document {
            id: format!("{}::ss", doc.id),
            text: out,
            domain: doc.domain.clone(),
        },
        eligible,
        replaced,
    }
}

pub fn synonym_substitute<R: Rng + ?Sized>(
    doc: &Document,
    provider: &dyn SynonymProvider,
    config: &AugmentationConfig,
    rng: &mut R,
) -> Document {
    synonym_substitute_counted(doc, provider, config, rng).document
}

/// One substituted view of every document in `corpus`, labels kept, drawn
/// from a generator seeded with `config.seed`.
pub fn synonym_views(
    corpus: &DomainCorpus,
    provider: &dyn SynonymProvider,
    config: &AugmentationConfig,
) -> Result<DomainCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let labeled = corpus
        .labeled
        .iter()
        .map(|d| LabeledDocument::new(synonym_substitute(&d.base, provider, config, &mut rng), d.label))
        .collect();
    let unlabeled = corpus
        .unlabeled
        .iter()
        .map(|d| synonym_substitute(d, provider, config, &mut rng))
        .collect();
    DomainCorpus::new(corpus.domain.clone(), labeled, unlabeled)
}

/// Machine translation behind a narrow interface. Implementations must be
/// deterministic for fixed arguments.
pub trait TranslationProvider: Send + Sync {
    fn id(&self) -> String;
    fn translate(&self, text: &str, source: &str, target: &str, beam: u32) -> std::result::Result<String, String>;
}

/// Returns its input unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityTranslator;

impl TranslationProvider for IdentityTranslator {
    fn id(&self) -> String {
        "identity".into()
    }

    fn translate(&self, text: &str, _: &str, _: &str, _: u32) -> std::result::Result<String, String> {
        Ok(text.to_string())
    }
}

/// Runs an external program once per translation. The program receives
/// `--source <lang> --target <lang> --beam <n>` after its own arguments,
/// the text on stdin, and must print the translation on stdout.
#[derive(Debug, Clone)]
pub struct CommandTranslator {
    pub program: String,
    pub args: Vec<String>,
}

impl CommandTranslator {
    /// Splits a command line on whitespace.
    pub fn parse(command: &str) -> Result<Self> {
        let mut parts = command.split_whitespace().map(str::to_string);
        let program = parts
            .next()
            .ok_or_else(|| Error::InvalidArgument("empty translator command".into()))?;
        Ok(CommandTranslator {
            program,
            args: parts.collect(),
        })
    }
}

impl TranslationProvider for CommandTranslator {
    fn id(&self) -> String {
        std::iter::once(self.program.as_str())
            .chain(self.args.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn translate(&self, text: &str, source: &str, target: &str, beam: u32) -> std::result::Result<String, String> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .args(["--source", source, "--target", target, "--beam", &beam.to_string()])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| format!("spawn {}: {e}", self.program))?;
        child
            .stdin
            .take()
            .expect("stdin is piped")
            .write_all(text.as_bytes())
            .map_err(|e| e.to_string())?;
        let output = child.wait_with_output().map_err(|e| e.to_string())?;
        if !output.status.success() {
            return Err(format!(
                "exit status {}: {}",
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            ));
        }
        let text = String::from_utf8(output.stdout).map_err(|e| e.to_string())?;
        Ok(text.trim_end_matches(['\n', '\r']).to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheManifest {
    pub provider: String,
    pub source_language: String,
    pub pivot_language: String,
    pub beam: u32,
    pub created_unix: u64,
}

impl CacheManifest {
    fn for_run(provider: &dyn TranslationProvider, config: &AugmentationConfig) -> Self {
        let created_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        CacheManifest {
            provider: provider.id(),
            source_language: config.source_language.clone(),
            pivot_language: config.pivot_language.clone(),
            beam: config.beam,
            created_unix,
        }
    }

    /// Equality on everything except the creation time.
    pub fn compatible(&self, other: &CacheManifest) -> bool {
        self.provider == other.provider
            && self.source_language == other.source_language
            && self.pivot_language == other.pivot_language
            && self.beam == other.beam
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BuildStats {
    pub provider_calls: usize,
    pub skipped: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheEntry {
    id: String,
    text: String,
}

/// Back-translated text keyed by document id.
#[derive(Debug, Clone, PartialEq)]
pub struct BackTranslationCache {
    pub manifest: CacheManifest,
    entries: BTreeMap<String, String>,
    /// Ids whose translation failed in the most recent build, with the error.
    pub failed: BTreeMap<String, String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ENTRIES_FILE: &str = "entries.jsonl";
pub const FAILED_FILE: &str = "failed.jsonl";

impl BackTranslationCache {
    pub fn new(manifest: CacheManifest) -> Self {
        BackTranslationCache {
            manifest,
            entries: BTreeMap::new(),
            failed: BTreeMap::new(),
        }
    }

    pub fn get(&self, id: &str) -> Option<&str> {
        self.entries.get(id).map(String::as_str)
    }

    pub fn insert(&mut self, id: impl Into<String>, text: impl Into<String>) {
        self.entries.insert(id.into(), text.into());
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Translates every document of `corpus` that has no entry yet. Fails
    /// without calling the provider if the manifest does not match.
    pub fn extend(
        &mut self,
        corpus: &DomainCorpus,
        provider: &dyn TranslationProvider,
        config: &AugmentationConfig,
        mut on_entry: impl FnMut(&str, &str) -> Result<()>,
    ) -> Result<BuildStats> {
        config.validate()?;
        let wanted = CacheManifest::for_run(provider, config);
        if !self.manifest.compatible(&wanted) {
            return Err(Error::ManifestMismatch(format!(
                "cache built with provider {:?} ({} -> {}, beam {}), requested {:?} ({} -> {}, beam {}); \
                 delete the cache directory to rebuild",
                self.manifest.provider,
                self.manifest.source_language,
                self.manifest.pivot_language,
                self.manifest.beam,
                wanted.provider,
                wanted.source_language,
                wanted.pivot_language,
                wanted.beam
            )));
        }
        let mut stats = BuildStats::default();
        self.failed.clear();
        for doc in corpus.documents() {
            if self.entries.contains_key(&doc.id) {
                stats.skipped += 1;
                continue;
            }
            stats.provider_calls += 1;
            let round_trip = provider
                .translate(&doc.text, &config.source_language, &config.pivot_language, config.beam)
                .and_then(|pivot| {
                    provider.translate(&pivot, &config.pivot_language, &config.source_language, config.beam)
                });
            match round_trip {
                Ok(text) => {
                    on_entry(&doc.id, &text)?;
                    self.entries.insert(doc.id.clone(), text);
                }
                Err(message) => {
                    log::warn!("back-translation failed for {}: {message}", doc.id);
                    stats.failed += 1;
                    self.failed.insert(doc.id.clone(), message);
                }
            }
        }
        Ok(stats)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest_path = dir.join(MANIFEST_FILE);
        let raw = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: CacheManifest = serde_json::from_str(&raw)?;
        let mut cache = BackTranslationCache::new(manifest);
        let entries_path = dir.join(ENTRIES_FILE);
        if entries_path.exists() {
            let file = std::fs::File::open(&entries_path).map_err(|e| Error::io(&entries_path, e))?;
            for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(&entries_path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheEntry = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
                cache.entries.insert(entry.id, entry.text);
            }
        }
        Ok(cache)
    }
}

/// Builds the cache fully in memory.
pub fn back_translate_offline(
    corpus: &DomainCorpus,
    provider: &dyn TranslationProvider,
    config: &AugmentationConfig,
) -> Result<(BackTranslationCache, BuildStats)> {
    let mut cache = BackTranslationCache::new(CacheManifest::for_run(provider, config));
    let stats = cache.extend(corpus, provider, config, |_, _| Ok(()))?;
    Ok((cache, stats))
}

/// Builds or resumes an on-disk cache in `dir`. New entries are appended as
/// they complete, so an interrupted build keeps its progress.
pub fn build_cache_dir(
    dir: impl AsRef<Path>,
    corpus: &DomainCorpus,
    provider: &dyn TranslationProvider,
    config: &AugmentationConfig,
) -> Result<(BackTranslationCache, BuildStats)> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut cache = if manifest_path.exists() {
        BackTranslationCache::load(dir)?
    } else {
        let cache = BackTranslationCache::new(CacheManifest::for_run(provider, config));
        let raw = serde_json::to_string_pretty(&cache.manifest)?;
        std::fs::write(&manifest_path, raw).map_err(|e| Error::io(&manifest_path, e))?;
        cache
    };

    let entries_path = dir.join(ENTRIES_FILE);
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&entries_path)
        .map_err(|e| Error::io(&entries_path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let stats = cache.extend(corpus, provider, config, |id, text| {
        let entry = CacheEntry {
            id: id.to_string(),
            text: text.to_string(),
        };
        serde_json::to_writer(&mut out, &entry)?;
        out.write_all(b"\n").map_err(|e| Error::io(&entries_path, e))
    })?;
    out.flush().map_err(|e| Error::io(&entries_path, e))?;

    let failed_path = dir.join(FAILED_FILE);
    let mut failed = String::new();
    for (id, message) in &cache.failed {
        failed.push_str(&serde_json::to_string(&serde_json::json!({ "id": id, "error": message }))?);
        failed.push('\n');
    }
    std::fs::write(&failed_path, failed).map_err(|e| Error::io(&failed_path, e))?;
    Ok((cache, stats))
}

/// Produces the positive view of a document by the configured method.
#[derive(Clone)]
pub struct Augmenter {
    pub config: AugmentationConfig,
    synonyms: Option<Arc<dyn SynonymProvider>>,
    cache: Option<Arc<BackTranslationCache>>,
}

impl std::fmt::Debug for Augmenter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Augmenter")
            .field("config", &self.config)
            .field("synonyms", &self.synonyms.is_some())
            .field("cache_entries", &self.cache.as_ref().map(|c| c.len()))
            .finish()
    }
}

impl Augmenter {
    pub fn synonyms(config: AugmentationConfig, provider: Arc<dyn SynonymProvider>) -> Result<Self> {
        config.validate()?;
        Ok(Augmenter {
            config: AugmentationConfig {
                method: AugmentMethod::SynonymSubstitution,
                ..config
            },
            synonyms: Some(provider),
            cache: None,
        })
    }

    pub fn back_translation(config: AugmentationConfig, cache: Arc<BackTranslationCache>) -> Result<Self> {
        config.validate()?;
        Ok(Augmenter {
            config: AugmentationConfig {
                method: AugmentMethod::BackTranslation,
                ..config
            },
            synonyms: None,
            cache: Some(cache),
        })
    }

    pub fn make_positive<R: Rng + ?Sized>(&self, doc: &Document, rng: &mut R) -> Result<Document> {
        match self.config.method {
            AugmentMethod::SynonymSubstitution => {
                let provider = self
                    .synonyms
                    .as_deref()
                    .ok_or_else(|| Error::InvalidArgument("synonym substitution without a provider".into()))?;
                Ok(synonym_substitute(doc, provider, &self.config, rng))
            }
            AugmentMethod::BackTranslation => {
                let text = self
                    .cache
                    .as_ref()
                    .and_then(|c| c.get(&doc.id))
                    .ok_or_else(|| Error::CacheMiss(doc.id.clone()))?;
                Ok(Document {
                    id: format!("{}::bt", doc.id),
                    text: text.to_string(),
                    domain: doc.domain.clone(),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn doc(text: &str) -> Document {
        Document::new("d1", text, "books").unwrap()
    }

    fn lexicon() -> Lexicon {
        let mut lex = Lexicon::new();
        lex.insert_group(&["good", "fine"]);
        lex.insert_group(&["book", "volume"]);
        lex.insert("great", ["superb", "great", "very good"]);
        lex
    }

    fn cfg(rate: f64) -> AugmentationConfig {
        AugmentationConfig {
            method: AugmentMethod::SynonymSubstitution,
            substitution_rate: rate,
            ..Default::default()
        }
    }

    #[test]
    fn zero_rate_is_identity() {
        let d = doc("A  good book,\tgreat!  ");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = synonym_substitute(&d, &lexicon(), &cfg(0.0), &mut rng);
        assert_eq!(out.text, d.text);
        assert_eq!(out.domain, "books");
        assert_ne!(out.id, d.id);
    }

    #[test]
    fn full_rate_replaces_every_eligible_token() {
        let d = doc("Good book. GOOD BOOK");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = synonym_substitute_counted(&d, &lexicon(), &cfg(1.0), &mut rng);
        assert_eq!(s.document.text, "Fine volume. FINE VOLUME");
        assert_eq!((s.eligible, s.replaced), (4, 4));
    }

    #[test]
    fn self_and_multiword_synonyms_are_discarded() {
        let d = doc("great");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = synonym_substitute(&d, &lexicon(), &cfg(1.0), &mut rng);
        assert_eq!(out.text, "superb");
    }

    #[test]
    fn no_eligible_tokens_passes_through() {
        let d = doc("zzz qqq ...");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = synonym_substitute_counted(&d, &lexicon(), &cfg(1.0), &mut rng);
        assert_eq!(s.document.text, d.text);
        assert_eq!(s.eligible, 0);
    }

    #[test]
    fn token_spans_strip_punctuation() {
        let spans = token_spans("(good), ok... !!");
        assert_eq!(spans.len(), 3);
        let t = "(good), ok... !!";
        assert_eq!(&t[spans[0].core_start..spans[0].core_end], "good");
        assert_eq!(&t[spans[1].core_start..spans[1].core_end], "ok");
        assert_eq!(spans[2].core_start, spans[2].core_end);
    }

    #[test]
    fn config_validation() {
        assert!(cfg(1.5).validate().is_err());
        assert!(AugmentationConfig { beam: 0, ..Default::default() }.validate().is_err());
        assert!(AugmentationConfig::default().validate().is_ok());
    }

    #[test]
    fn method_parsing() {
        assert_eq!("bt".parse::<AugmentMethod>().unwrap(), AugmentMethod::BackTranslation);
        assert!("paraphrase".parse::<AugmentMethod>().is_err());
    }

    #[test]
    fn identity_cache_and_positive_lookup() {
        let corpus = DomainCorpus::new(
            "books",
            vec![],
            vec![Document::new("a", "first", "books").unwrap(), Document::new("b", "second", "books").unwrap()],
        )
        .unwrap();
        let config = AugmentationConfig::default();
        let (cache, stats) = back_translate_offline(&corpus, &IdentityTranslator, &config).unwrap();
        assert_eq!(stats.provider_calls, 2);
        assert_eq!(cache.get("a"), Some("first"));

        let aug = Augmenter::back_translation(config, Arc::new(cache)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pos = aug.make_positive(&corpus.unlabeled[1], &mut rng).unwrap();
        assert_eq!(pos.text, "second");
        let missing = Document::new("zz", "x", "books").unwrap();
        assert!(matches!(aug.make_positive(&missing, &mut rng), Err(Error::CacheMiss(id)) if id == "zz"));
    }

    #[test]
    fn manifest_mismatch_refuses_resume() {
        let corpus = DomainCorpus::new("b", vec![], vec![Document::new("a", "x", "b").unwrap()]).unwrap();
        let config = AugmentationConfig::default();
        let (mut cache, _) = back_translate_offline(&corpus, &IdentityTranslator, &config).unwrap();
        let other = AugmentationConfig {
            pivot_language: "fr".into(),
            ..config
        };
        let err = cache.extend(&corpus, &IdentityTranslator, &other, |_, _| Ok(())).unwrap_err();
        assert!(matches!(err, Error::ManifestMismatch(_)));
    }
}
