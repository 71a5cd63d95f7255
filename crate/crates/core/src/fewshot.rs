//! Retrieval-augmented prompt assembly for term/type extraction and term
//! typing, structured-output parsing and the completion backends.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Document, TermDocIndex, TfidfIndex};
use crate::service::{ServiceClient, ServiceError};
use crate::text::dedup_first_casing;

/// Retrieval depth used for every few-shot prompt.
pub const K_RETRIEVAL: usize = 3;
/// Keywords appended to each instruction block.
pub const KEYWORD_COUNT: usize = 20;

#[derive(Debug, Error)]
pub enum FewshotError {
    #[error("no parseable JSON object in model output: {raw:?}")]
    Unparseable { raw: String },
    #[error("unknown document {0:?}")]
    UnknownDocument(String),
    #[error("empty query")]
    EmptyQuery,
    #[error(transparent)]
    Service(#[from] ServiceError),
}

pub type Result<T> = std::result::Result<T, FewshotError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputSchema {
    TermsAndTypes,
    TypesOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Demonstrations pair each neighbor document with the types listed for
    /// it in `terms2docs.json`.
    M1,
    /// Demonstrations chain the repaired term index with `terms2types.json`.
    M2,
}

/// Canonical `{"terms":[...],"types":[...]}` payload.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub terms: Vec<String>,
    pub types: Vec<String>,
}

impl ExtractionResult {
    pub fn new<T, U>(terms: T, types: U) -> Self
    where
        T: IntoIterator,
        T::Item: AsRef<str>,
        U: IntoIterator,
        U::Item: AsRef<str>,
    {
        Self {
            terms: dedup_first_casing(terms),
            types: dedup_first_casing(types),
        }
    }

    /// Sorted copy, used for demonstration outputs.
    pub fn sorted(&self) -> Self {
        let mut out = self.clone();
        out.terms.sort();
        out.types.sort();
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("string arrays always serialize")
    }

    pub fn to_json_for(&self, schema: OutputSchema) -> String {
        match schema {
            OutputSchema::TermsAndTypes => self.to_json(),
            OutputSchema::TypesOnly => serde_json::json!({ "types": self.types }).to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionPair {
    pub instruction: String,
    pub output: String,
}

/// Title, text and optional keyword block for one document.
pub fn instruction_block(doc: &Document, keywords: &[String]) -> String {
    let mut s = format!("TITLE: {}\nTEXT: {}", doc.title, doc.text);
    if !keywords.is_empty() {
        s.push_str("\nKEYWORDS: ");
        s.push_str(&keywords.join(", "));
    }
    s
}

pub fn build_instruction_pair<T, U>(doc: &Document, terms: T, types: U, keywords: &[String]) -> InstructionPair
where
    T: IntoIterator,
    T::Item: AsRef<str>,
    U: IntoIterator,
    U::Item: AsRef<str>,
{
    InstructionPair {
        instruction: instruction_block(doc, keywords),
        output: ExtractionResult::new(terms, types).sorted().to_json(),
    }
}

/// One few-shot exemplar: an input block and its gold answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub input: String,
    pub answer: ExtractionResult,
}

impl Demonstration {
    pub fn render(&self, schema: OutputSchema) -> String {
        match schema {
            OutputSchema::TermsAndTypes => {
                format!("<INSTRUCTION>\n{}\n<OUTPUT>\n{}", self.input, self.answer.to_json())
            }
            OutputSchema::TypesOnly => format!(
                "TERM: {} → TYPES: {}",
                self.input,
                serde_json::to_string(&self.answer.types).expect("string array")
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub extraction_system: String,
    pub typing_system: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            extraction_system: "You extract ontology terms and types from scientific documents. \
                Answer with a single JSON object {\"terms\": [...], \"types\": [...]} and nothing else."
                .into(),
            typing_system: "You assign ontological types to terms. \
                Answer with a single JSON object {\"types\": [...]} and nothing else."
                .into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub system: String,
    pub demonstrations: Vec<Demonstration>,
    pub query: String,
    pub expected_schema: OutputSchema,
}

impl Prompt {
    /// The user message: demonstrations in retrieval order, then the query.
    pub fn render_user(&self) -> String {
        let mut out = String::new();
        for demo in &self.demonstrations {
            out.push_str(&demo.render(self.expected_schema));
            out.push_str("\n\n");
        }
        match self.expected_schema {
            OutputSchema::TermsAndTypes => {
                out.push_str("<INSTRUCTION>\n");
                out.push_str(&self.query);
                out.push_str("\n<OUTPUT>\n");
            }
            OutputSchema::TypesOnly => {
                out.push_str("TERM: ");
                out.push_str(&self.query);
                out.push_str(" → TYPES:");
            }
        }
        out
    }
}

/// A built prompt plus the number of neighbors dropped for lack of
/// supervision.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuiltPrompt {
    pub prompt: Prompt,
    pub skipped: usize,
}

/// Shared inputs for extraction prompts.
pub struct ExtractionContext<'a> {
    pub corpus: &'a Corpus,
    pub index: &'a TermDocIndex,
    pub tfidf: &'a TfidfIndex,
    pub templates: &'a PromptTemplates,
}

impl ExtractionContext<'_> {
    fn demonstration(&self, doc_id: &str, method: Method) -> Result<Option<Demonstration>> {
        let doc = self
            .corpus
            .document(doc_id)
            .ok_or_else(|| FewshotError::UnknownDocument(doc_id.to_string()))?;
        let answer = match method {
            Method::M1 => {
                let types = self.corpus.raw_types_for_doc(doc_id);
                if types.is_empty() {
                    return Ok(None);
                }
                ExtractionResult::new(Vec::<String>::new(), types)
            }
            Method::M2 => {
                let mut terms = BTreeSet::new();
                let mut types = BTreeSet::new();
                for (term, docs) in &self.index.term_to_docs {
                    if !docs.contains(doc_id) {
                        continue;
                    }
                    if let Some(tys) = self.corpus.term_to_types.get(term) {
                        terms.insert(term.clone());
                        types.extend(tys.iter().cloned());
                    }
                }
                if terms.is_empty() {
                    return Ok(None);
                }
                ExtractionResult::new(terms, types)
            }
        };
        let keywords = self.tfidf.keywords(doc, KEYWORD_COUNT);
        Ok(Some(Demonstration {
            input: instruction_block(doc, &keywords),
            answer: answer.sorted(),
        }))
    }
}

/// Few-shot extraction prompt for one test document. `neighbors` are training
/// doc ids in descending similarity order; at most [`K_RETRIEVAL`] are used.
pub fn build_prompt_task_a(
    ctx: &ExtractionContext<'_>,
    test_doc: &Document,
    test_keywords: &[String],
    neighbors: &[String],
    method: Method,
) -> Result<BuiltPrompt> {
    let mut demonstrations = Vec::new();
    let mut skipped = 0;
    for id in neighbors.iter().take(K_RETRIEVAL) {
        match ctx.demonstration(id, method)? {
            Some(d) => demonstrations.push(d),
            None => skipped += 1,
        }
    }
    Ok(BuiltPrompt {
        prompt: Prompt {
            system: ctx.templates.extraction_system.clone(),
            demonstrations,
            query: instruction_block(test_doc, test_keywords),
            expected_schema: OutputSchema::TermsAndTypes,
        },
        skipped,
    })
}

/// Few-shot typing prompt for one term. `neighbors` are (training term,
/// types) pairs in descending similarity order.
pub fn build_prompt_task_b(
    templates: &PromptTemplates,
    term: &str,
    neighbors: &[(String, BTreeSet<String>)],
) -> Result<Prompt> {
    if term.trim().is_empty() {
        return Err(FewshotError::EmptyQuery);
    }
    let demonstrations = neighbors
        .iter()
        .take(K_RETRIEVAL)
        .map(|(t, types)| Demonstration {
            input: t.clone(),
            answer: ExtractionResult::new(Vec::<String>::new(), types).sorted(),
        })
        .collect();
    Ok(Prompt {
        system: templates.typing_system.clone(),
        demonstrations,
        query: term.trim().to_string(),
        expected_schema: OutputSchema::TypesOnly,
    })
}

/// Byte offset of the end of the balanced `{...}` object starting at `start`,
/// skipping braces inside JSON strings.
fn balanced_end(text: &str, start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(start + i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

fn string_array(obj: &serde_json::Map<String, serde_json::Value>, key: &str) -> Vec<String> {
    match obj.get(key) {
        Some(serde_json::Value::Array(items)) => items.iter().filter_map(|v| v.as_str().map(str::to_string)).collect(),
        Some(serde_json::Value::String(s)) => vec![s.clone()],
        _ => Vec::new(),
    }
}

/// Parse the first balanced JSON object in `text`.
///
/// Missing keys become empty arrays; entries are trimmed and deduplicated
/// case-insensitively, first casing wins. Under [`OutputSchema::TypesOnly`]
/// any `terms` key is ignored.
pub fn parse_structured_output(text: &str, schema: OutputSchema) -> Result<ExtractionResult> {
    for (start, _) in text.match_indices('{') {
        let Some(end) = balanced_end(text, start) else {
            continue;
        };
        let Ok(serde_json::Value::Object(obj)) = serde_json::from_str(&text[start..end]) else {
            continue;
        };
        let terms = match schema {
            OutputSchema::TermsAndTypes => string_array(&obj, "terms"),
            OutputSchema::TypesOnly => Vec::new(),
        };
        return Ok(ExtractionResult::new(terms, string_array(&obj, "types")));
    }
    Err(FewshotError::Unparseable { raw: text.to_string() })
}

/// Concatenate in order and deduplicate case-insensitively.
pub fn aggregate_results<'a, I>(results: I) -> ExtractionResult
where
    I: IntoIterator<Item = &'a ExtractionResult>,
{
    let mut terms = Vec::new();
    let mut types = Vec::new();
    for r in results {
        terms.extend(r.terms.iter().cloned());
        types.extend(r.types.iter().cloned());
    }
    ExtractionResult::new(terms, types)
}

/// Anything that turns a prompt into raw model text.
pub trait CompletionBackend {
    fn complete(&self, prompt: &Prompt) -> Result<String>;
}

/// Offline backend: answers with the first demonstration's gold output in the
/// prompt's schema, or an empty answer when there are no demonstrations.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockCompletion;

impl CompletionBackend for MockCompletion {
    fn complete(&self, prompt: &Prompt) -> Result<String> {
        let answer = prompt
            .demonstrations
            .first()
            .map(|d| d.answer.clone())
            .unwrap_or_default();
        Ok(answer.to_json_for(prompt.expected_schema))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecodeParams {
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
}

/// OpenAI-compatible chat-completions backend.
#[derive(Debug, Clone)]
pub struct ChatCompletion {
    pub client: ServiceClient,
    pub params: DecodeParams,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

impl CompletionBackend for ChatCompletion {
    fn complete(&self, prompt: &Prompt) -> Result<String> {
        let user = prompt.render_user();
        let body = ChatRequest {
            model: &self.params.model,
            messages: vec![
                ChatMessage {
                    role: "system",
                    content: &prompt.system,
                },
                ChatMessage {
                    role: "user",
                    content: &user,
                },
            ],
            temperature: self.params.temperature,
        };
        let raw = self.client.post(&body)?;
        if raw.trim().is_empty() {
            return Err(ServiceError::EmptyCompletion.into());
        }
        let resp: ChatResponse = serde_json::from_str(&raw).map_err(|e| ServiceError::InvalidResponse {
            batch: None,
            message: e.to_string(),
        })?;
        let content = resp
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        if content.trim().is_empty() {
            return Err(ServiceError::EmptyCompletion.into());
        }
        Ok(content)
    }
}

/// Write one entry per line.
pub fn write_lines(path: impl AsRef<std::path::Path>, items: &[String]) -> std::io::Result<()> {
    let mut s = String::new();
    for item in items {
        s.push_str(item);
        s.push('\n');
    }
    std::fs::write(path, s)
}
