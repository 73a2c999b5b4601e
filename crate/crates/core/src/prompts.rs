//! Catalog of zero-shot and few-shot prompt templates, realized as
//! role-tagged chat messages. Model-specific chat formatting is left to the
//! serving endpoint.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, Entry};

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("unknown prompt template `{0}`")]
    UnknownTemplate(String),
    #[error("template `{0}` is a few-shot template")]
    NotZeroShot(String),
    #[error("template `{0}` is a zero-shot template")]
    NotFewShot(String),
    #[error("few-shot template expects {expected} examples, got {actual}")]
    ExampleCount { expected: usize, actual: usize },
    #[error("few-shot template `{0}` needs n >= 1")]
    MissingShots(String),
    #[error("template `{name}` fixes the search term to `{fixed}`")]
    FixedSearchTerm { name: String, fixed: SearchTerm },
    #[error("unknown search term `{0}`")]
    UnknownSearchTerm(String),
    #[error("unknown few-shot strategy `{0}`")]
    UnknownStrategy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// The noun naming what the model is asked to extract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchTerm {
    Keywords,
    #[default]
    Keyphrases,
    Concepts,
    Entities,
    Topics,
}

impl SearchTerm {
    pub const ALL: [SearchTerm; 5] = [
        SearchTerm::Keywords,
        SearchTerm::Keyphrases,
        SearchTerm::Concepts,
        SearchTerm::Entities,
        SearchTerm::Topics,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SearchTerm::Keywords => "keywords",
            SearchTerm::Keyphrases => "keyphrases",
            SearchTerm::Concepts => "concepts",
            SearchTerm::Entities => "entities",
            SearchTerm::Topics => "topics",
        }
    }

    fn capitalized(self) -> String {
        let s = self.as_str();
        s[..1].to_uppercase() + &s[1..]
    }
}

impl fmt::Display for SearchTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SearchTerm {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SearchTerm::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| PromptError::UnknownSearchTerm(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FewShotStrategy {
    Fixed,
    Random,
    Closest,
}

impl FewShotStrategy {
    pub fn label(self) -> &'static str {
        match self {
            FewShotStrategy::Fixed => "Fixed",
            FewShotStrategy::Random => "Random",
            FewShotStrategy::Closest => "Closest",
        }
    }
}

impl FromStr for FewShotStrategy {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fixed" => Ok(FewShotStrategy::Fixed),
            "random" => Ok(FewShotStrategy::Random),
            "closest" => Ok(FewShotStrategy::Closest),
            _ => Err(PromptError::UnknownStrategy(s.to_string())),
        }
    }
}

const TEMPLATE_NAMES: [&str; 12] = [
    "ZS-Keywords",
    "ZS-Keyphrases",
    "ZS-Concepts",
    "ZS-Entities",
    "ZS-Topics",
    "ZS-Domain",
    "ZS-ExtractingContext",
    "ZS-ExpertContext",
    "ZS-TaskContext",
    "FS-Fixed",
    "FS-Random",
    "FS-Closest",
];

/// Catalog names in a fixed order. The few-shot names take the number of
/// examples as a separate parameter.
pub fn list_templates() -> &'static [&'static str] {
    &TEMPLATE_NAMES
}

const DOMAIN_CLAUSE: &str = "related to the domains of Computer Science, Control, and Information Technology";
const EXTRACTING_CONTEXT: &str =
    "You are a helpful, respectful and honest assistant for extracting {term} from the provided document.";
const EXPERT_CONTEXT: &str = "You are an ontology expert in extracting {term} from the document.";
const TASK_CONTEXT: &str = "You are an expert in extracting {term} from documents. \
{Term} are important multi- or single noun phrases that cover main topics of the document.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub search_term: SearchTerm,
    pub system_text: Option<String>,
    pub domain_clause: Option<String>,
    pub fs_strategy: Option<FewShotStrategy>,
    pub fs_n: Option<usize>,
}

impl PromptTemplate {
    /// Looks up a zero-shot template by catalog name.
    pub fn zero_shot(name: &str) -> Result<Self, PromptError> {
        let term_sweep = match name {
            "ZS-Keywords" => Some(SearchTerm::Keywords),
            "ZS-Keyphrases" => Some(SearchTerm::Keyphrases),
            "ZS-Concepts" => Some(SearchTerm::Concepts),
            "ZS-Entities" => Some(SearchTerm::Entities),
            "ZS-Topics" => Some(SearchTerm::Topics),
            "ZS-Domain" | "ZS-ExtractingContext" | "ZS-ExpertContext" | "ZS-TaskContext" => None,
            "FS-Fixed" | "FS-Random" | "FS-Closest" => return Err(PromptError::NotZeroShot(name.to_string())),
            _ => return Err(PromptError::UnknownTemplate(name.to_string())),
        };
        let search_term = term_sweep.unwrap_or_default();
        Ok(PromptTemplate {
            name: name.to_string(),
            search_term,
            system_text: system_text(name, search_term),
            domain_clause: (name == "ZS-Domain").then(|| DOMAIN_CLAUSE.to_string()),
            fs_strategy: None,
            fs_n: None,
        })
    }

    pub fn few_shot(strategy: FewShotStrategy, n: usize) -> Result<Self, PromptError> {
        let name = format!("FS-{}", strategy.label());
        if n == 0 {
            return Err(PromptError::MissingShots(name));
        }
        Ok(PromptTemplate {
            name,
            search_term: SearchTerm::default(),
            system_text: None,
            domain_clause: None,
            fs_strategy: Some(strategy),
            fs_n: Some(n),
        })
    }

    /// Resolves a catalog name. Few-shot names need `fs_n`; the compact
    /// form `FS-3-Random` is accepted as well.
    pub fn from_name(name: &str, fs_n: Option<usize>) -> Result<Self, PromptError> {
        if let Some(rest) = name.strip_prefix("FS-") {
            let (n, label) = match rest.split_once('-') {
                Some((n, label)) => {
                    let n: usize = n.parse().map_err(|_| PromptError::UnknownTemplate(name.to_string()))?;
                    if fs_n.is_some_and(|given| given != n) {
                        return Err(PromptError::UnknownTemplate(name.to_string()));
                    }
                    (Some(n), label)
                }
                None => (fs_n, rest),
            };
            let strategy: FewShotStrategy = label
                .parse()
                .map_err(|_| PromptError::UnknownTemplate(name.to_string()))?;
            let n = n.ok_or_else(|| PromptError::MissingShots(name.to_string()))?;
            return PromptTemplate::few_shot(strategy, n);
        }
        PromptTemplate::zero_shot(name)
    }

    /// Overrides the search term. Term-sweep templates carry their term in
    /// their name and reject a different one.
    pub fn with_search_term(mut self, term: SearchTerm) -> Result<Self, PromptError> {
        if self.is_term_sweep() && term != self.search_term {
            return Err(PromptError::FixedSearchTerm {
                name: self.name,
                fixed: self.search_term,
            });
        }
        self.search_term = term;
        self.system_text = system_text(&self.name, term);
        Ok(self)
    }

    fn is_term_sweep(&self) -> bool {
        matches!(
            self.name.as_str(),
            "ZS-Keywords" | "ZS-Keyphrases" | "ZS-Concepts" | "ZS-Entities" | "ZS-Topics"
        )
    }

    pub fn is_few_shot(&self) -> bool {
        self.fs_strategy.is_some()
    }

    /// Name used in reports, e.g. `ZS-Domain` or `FS-3-Random`.
    pub fn display_name(&self) -> String {
        match (self.fs_strategy, self.fs_n) {
            (Some(strategy), Some(n)) => format!("FS-{n}-{}", strategy.label()),
            _ => self.name.clone(),
        }
    }

    fn request(&self) -> String {
        // The task-context template capitalizes the term in its request.
        let term = if self.name == "ZS-TaskContext" {
            self.search_term.capitalized()
        } else {
            self.search_term.as_str().to_string()
        };
        match &self.domain_clause {
            Some(clause) => format!(
                "Please give me the {term} {clause} that are present in this document and separate them with commas:"
            ),
            None => {
                format!("Please give me the {term} that are present in this document and separate them with commas:")
            }
        }
    }

    fn with_document_preface(&self, text: &str) -> String {
        format!("I have the following document: {text}\n{}", self.request())
    }

    fn plain(&self, text: &str) -> String {
        format!("{}\n{text}", self.request())
    }
}

fn system_text(name: &str, term: SearchTerm) -> Option<String> {
    let pattern = match name {
        "ZS-ExtractingContext" => EXTRACTING_CONTEXT,
        "ZS-ExpertContext" => EXPERT_CONTEXT,
        "ZS-TaskContext" => TASK_CONTEXT,
        _ => return None,
    };
    Some(
        pattern
            .replace("{term}", term.as_str())
            .replace("{Term}", &term.capitalized()),
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptInstance {
    pub messages: Vec<ChatMessage>,
    pub target_doc_id: String,
    pub template_name: String,
}

pub fn build_zero_shot(template: &PromptTemplate, doc: &Document) -> Result<PromptInstance, PromptError> {
    if template.is_few_shot() {
        return Err(PromptError::NotZeroShot(template.name.clone()));
    }
    let mut messages = Vec::with_capacity(2);
    let user = match template.system_text.clone() {
        Some(system) => {
            messages.push(ChatMessage::system(system));
            template.with_document_preface(&doc.text)
        }
        None => template.plain(&doc.text),
    };
    messages.push(ChatMessage::user(user));
    Ok(PromptInstance {
        messages,
        target_doc_id: doc.id.clone(),
        template_name: template.display_name(),
    })
}

pub fn build_few_shot(
    template: &PromptTemplate,
    doc: &Document,
    examples: &[&Entry],
) -> Result<PromptInstance, PromptError> {
    let n = match (template.fs_strategy, template.fs_n) {
        (Some(_), Some(n)) => n,
        _ => return Err(PromptError::NotFewShot(template.name.clone())),
    };
    if examples.len() != n {
        return Err(PromptError::ExampleCount {
            expected: n,
            actual: examples.len(),
        });
    }
    let mut messages = Vec::with_capacity(2 * n + 1);
    for example in examples {
        messages.push(ChatMessage::user(
            template.with_document_preface(&example.document.text),
        ));
        messages.push(ChatMessage::assistant(example.gold.keyphrases.join(", ")));
    }
    messages.push(ChatMessage::user(template.plain(&doc.text)));
    Ok(PromptInstance {
        messages,
        target_doc_id: doc.id.clone(),
        template_name: template.display_name(),
    })
}

/// Builds either kind of prompt; few-shot templates take their examples
/// from `examples`.
pub fn build_prompt(
    template: &PromptTemplate,
    doc: &Document,
    examples: &[&Entry],
) -> Result<PromptInstance, PromptError> {
    if template.is_few_shot() {
        build_few_shot(template, doc, examples)
    } else {
        build_zero_shot(template, doc)
    }
}

/// A template together with its messages rendered on placeholder text.
#[derive(Debug, Clone, Serialize)]
pub struct TemplateDump {
    #[serde(flatten)]
    pub template: PromptTemplate,
    pub display_name: String,
    pub preview: Vec<ChatMessage>,
}

/// Every zero-shot template plus each few-shot strategy at 1, 3 and 5
/// examples, with messages rendered on `[DOCUMENT]` placeholders.
pub fn dump_catalog() -> Vec<TemplateDump> {
    use crate::corpus::GroundTruth;

    let target = Document::new("target", "[DOCUMENT]");
    let mut templates: Vec<PromptTemplate> = TEMPLATE_NAMES
        .iter()
        .filter(|n| n.starts_with("ZS-"))
        .map(|n| PromptTemplate::zero_shot(n).expect("catalog name"))
        .collect();
    for strategy in [
        FewShotStrategy::Fixed,
        FewShotStrategy::Random,
        FewShotStrategy::Closest,
    ] {
        for n in [1, 3, 5] {
            templates.push(PromptTemplate::few_shot(strategy, n).expect("n >= 1"));
        }
    }
    templates
        .into_iter()
        .map(|template| {
            let examples: Vec<Entry> = (1..=template.fs_n.unwrap_or(0))
                .map(|i| Entry {
                    document: Document::new(format!("example{i}"), format!("[DOCUMENT_{i}]")),
                    gold: GroundTruth::new(format!("example{i}"), [format!("[KEYPHRASES_{i}]")]),
                })
                .collect();
            let refs: Vec<&Entry> = examples.iter().collect();
            let preview = build_prompt(&template, &target, &refs)
                .expect("placeholder prompt")
                .messages;
            TemplateDump {
                display_name: template.display_name(),
                template,
                preview,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::GroundTruth;

    fn doc() -> Document {
        Document::new("d1", "Graphical user interface for scanning data.")
    }

    fn entry(id: &str, text: &str, gold: &[&str]) -> Entry {
        Entry {
            document: Document::new(id, text),
            gold: GroundTruth::new(id, gold.iter().map(|s| s.to_string())),
        }
    }

    #[test]
    fn catalog_is_complete_and_stable() {
        let names = list_templates();
        assert_eq!(names.len(), 12);
        assert!(names.contains(&"ZS-TaskContext"));
        assert!(names.contains(&"ZS-Entities"));
        assert_eq!(names, list_templates());
        for name in names.iter().filter(|n| n.starts_with("ZS-")) {
            assert!(PromptTemplate::zero_shot(name).is_ok());
        }
    }

    #[test]
    fn plain_zero_shot() {
        let p = build_zero_shot(&PromptTemplate::zero_shot("ZS-Keyphrases").unwrap(), &doc()).unwrap();
        assert_eq!(p.messages.len(), 1);
        assert_eq!(p.messages[0].role, Role::User);
        assert_eq!(
            p.messages[0].content,
            "Please give me the keyphrases that are present in this document and separate them with commas:\n\
             Graphical user interface for scanning data."
        );
        assert_eq!(p.template_name, "ZS-Keyphrases");
        assert_eq!(p.target_doc_id, "d1");
    }

    #[test]
    fn term_sweep_substitutes_term() {
        for (name, term) in [
            ("ZS-Keywords", "keywords"),
            ("ZS-Concepts", "concepts"),
            ("ZS-Entities", "entities"),
            ("ZS-Topics", "topics"),
        ] {
            let p = build_zero_shot(&PromptTemplate::zero_shot(name).unwrap(), &doc()).unwrap();
            assert!(p.messages[0]
                .content
                .starts_with(&format!("Please give me the {term} that are present")));
        }
    }

    #[test]
    fn domain_clause() {
        let p = build_zero_shot(&PromptTemplate::zero_shot("ZS-Domain").unwrap(), &doc()).unwrap();
        assert_eq!(p.messages.len(), 1);
        assert!(p.messages[0].content.starts_with(
            "Please give me the keyphrases related to the domains of Computer Science, Control, and Information Technology that are present"
        ));
    }

    #[test]
    fn context_variants_have_system_message() {
        let cases = [
            ("ZS-ExtractingContext", "You are a helpful, respectful and honest assistant for extracting keyphrases from the provided document."),
            ("ZS-ExpertContext", "You are an ontology expert in extracting keyphrases from the document."),
            ("ZS-TaskContext", "You are an expert in extracting keyphrases from documents. Keyphrases are important multi- or single noun phrases that cover main topics of the document."),
        ];
        for (name, system) in cases {
            let p = build_zero_shot(&PromptTemplate::zero_shot(name).unwrap(), &doc()).unwrap();
            assert_eq!(p.messages.len(), 2);
            assert_eq!(p.messages[0], ChatMessage::system(system));
            assert!(p.messages[1].content.starts_with(
                "I have the following document: Graphical user interface for scanning data.\nPlease give me the"
            ));
        }
        let p = build_zero_shot(&PromptTemplate::zero_shot("ZS-TaskContext").unwrap(), &doc()).unwrap();
        assert!(p.messages[1].content.ends_with(
            "Please give me the Keyphrases that are present in this document and separate them with commas:"
        ));
    }

    #[test]
    fn zero_shot_rejects_few_shot_template() {
        let t = PromptTemplate::few_shot(FewShotStrategy::Fixed, 1).unwrap();
        assert_eq!(
            build_zero_shot(&t, &doc()),
            Err(PromptError::NotZeroShot("FS-Fixed".into()))
        );
        assert!(matches!(
            PromptTemplate::zero_shot("FS-Random"),
            Err(PromptError::NotZeroShot(_))
        ));
        assert!(matches!(
            PromptTemplate::zero_shot("ZS-Nope"),
            Err(PromptError::UnknownTemplate(_))
        ));
    }

    #[test]
    fn few_shot_layout() {
        let t = PromptTemplate::few_shot(FewShotStrategy::Random, 1).unwrap();
        let ex = entry("e1", "Alpha beta.", &["a", "b"]);
        let p = build_few_shot(&t, &doc(), &[&ex]).unwrap();
        assert_eq!(p.messages.len(), 3);
        assert_eq!(
            p.messages[0],
            ChatMessage::user(
                "I have the following document: Alpha beta.\n\
                 Please give me the keyphrases that are present in this document and separate them with commas:"
            )
        );
        assert_eq!(p.messages[1], ChatMessage::assistant("a, b"));
        assert_eq!(p.messages[2].role, Role::User);
        assert!(p.messages[2]
            .content
            .ends_with("Graphical user interface for scanning data."));
        assert_eq!(p.template_name, "FS-1-Random");

        let t3 = PromptTemplate::few_shot(FewShotStrategy::Closest, 3).unwrap();
        let exs = [
            entry("e1", "one", &["x"]),
            entry("e2", "two", &["y"]),
            entry("e3", "three", &["z"]),
        ];
        let refs: Vec<&Entry> = exs.iter().collect();
        let p = build_few_shot(&t3, &doc(), &refs).unwrap();
        assert_eq!(p.messages.len(), 7);
        let roles: Vec<Role> = p.messages.iter().map(|m| m.role).collect();
        assert_eq!(
            roles,
            [
                Role::User,
                Role::Assistant,
                Role::User,
                Role::Assistant,
                Role::User,
                Role::Assistant,
                Role::User
            ]
        );
    }

    #[test]
    fn few_shot_checks_example_count() {
        let t = PromptTemplate::few_shot(FewShotStrategy::Fixed, 5).unwrap();
        let exs: Vec<Entry> = (0..4).map(|i| entry(&format!("e{i}"), "t", &["x"])).collect();
        let refs: Vec<&Entry> = exs.iter().collect();
        assert_eq!(
            build_few_shot(&t, &doc(), &refs),
            Err(PromptError::ExampleCount { expected: 5, actual: 4 })
        );
        let zs = PromptTemplate::zero_shot("ZS-Keyphrases").unwrap();
        assert!(matches!(
            build_few_shot(&zs, &doc(), &[]),
            Err(PromptError::NotFewShot(_))
        ));
    }

    #[test]
    fn name_resolution() {
        let t = PromptTemplate::from_name("FS-3-Closest", None).unwrap();
        assert_eq!((t.fs_strategy, t.fs_n), (Some(FewShotStrategy::Closest), Some(3)));
        let t = PromptTemplate::from_name("FS-Random", Some(5)).unwrap();
        assert_eq!(t.display_name(), "FS-5-Random");
        assert!(matches!(
            PromptTemplate::from_name("FS-Random", None),
            Err(PromptError::MissingShots(_))
        ));
        assert!(PromptTemplate::from_name("FS-3-Random", Some(1)).is_err());
        assert_eq!(
            PromptTemplate::from_name("ZS-Topics", None).unwrap().search_term,
            SearchTerm::Topics
        );
    }

    #[test]
    fn search_term_override() {
        let t = PromptTemplate::zero_shot("ZS-Domain")
            .unwrap()
            .with_search_term(SearchTerm::Concepts)
            .unwrap();
        let p = build_zero_shot(&t, &doc()).unwrap();
        assert!(p.messages[0].content.starts_with("Please give me the concepts related"));
        assert!(PromptTemplate::zero_shot("ZS-Topics")
            .unwrap()
            .with_search_term(SearchTerm::Keywords)
            .is_err());
        assert!(PromptTemplate::zero_shot("ZS-Topics")
            .unwrap()
            .with_search_term(SearchTerm::Topics)
            .is_ok());
    }

    #[test]
    fn target_text_appears_once_in_final_message() {
        let target = Document::new("t", "UNIQUE-TARGET-TEXT");
        let exs = [
            entry("e1", "first example", &["x"]),
            entry("e2", "second example", &["y"]),
        ];
        let refs: Vec<&Entry> = exs.iter().collect();
        let mut templates: Vec<PromptTemplate> = list_templates()
            .iter()
            .filter(|n| n.starts_with("ZS-"))
            .map(|n| PromptTemplate::zero_shot(n).unwrap())
            .collect();
        templates.push(PromptTemplate::few_shot(FewShotStrategy::Fixed, 2).unwrap());
        for t in &templates {
            let p = build_prompt(t, &target, &refs).unwrap();
            let all: String = p.messages.iter().map(|m| m.content.as_str()).collect();
            assert_eq!(all.matches("UNIQUE-TARGET-TEXT").count(), 1, "{}", t.name);
            let last = p.messages.last().unwrap();
            assert_eq!(last.role, Role::User);
            assert!(last.content.contains("UNIQUE-TARGET-TEXT"));
            if !t.is_few_shot() {
                assert!(p.messages.iter().all(|m| m.role != Role::Assistant));
            }
            assert_eq!(p, build_prompt(t, &target, &refs).unwrap());
        }
    }

    #[test]
    fn dump_covers_catalog() {
        let dump = dump_catalog();
        assert_eq!(dump.len(), 9 + 9);
        let json = serde_json::to_value(&dump).unwrap();
        assert_eq!(json[0]["name"], "ZS-Keywords");
        assert_eq!(json[17]["display_name"], "FS-5-Closest");
        assert_eq!(json[17]["fs_strategy"], "closest");
        assert_eq!(json[17]["preview"].as_array().unwrap().len(), 11);
    }
}
