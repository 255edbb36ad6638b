use cat_core::registry::Registry;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("template {0:?} has an empty section")]
    EmptySection(String),
    #[error("record question is empty")]
    EmptyQuestion,
    #[error("record answer is empty")]
    EmptyAnswer,
}

/// Prompt layout: task description, worked demonstrations, output directive,
/// then the record to annotate.
pub trait Template: Send + Sync {
    fn name(&self) -> &str;
    fn task(&self) -> &str;
    fn demos(&self) -> &str;
    fn directive(&self) -> &str;

    fn render(&self, question: &str, answer: &str) -> Result<String, TemplateError> {
        for s in [self.task(), self.demos(), self.directive()] {
            if s.trim().is_empty() {
                return Err(TemplateError::EmptySection(self.name().to_string()));
            }
        }
        if question.trim().is_empty() {
            return Err(TemplateError::EmptyQuestion);
        }
        if answer.trim().is_empty() {
            return Err(TemplateError::EmptyAnswer);
        }
        Ok(format!(
            "{}\n\n{}\n\n{}\n\n{} Answer: {}",
            self.task(),
            self.demos(),
            self.directive(),
            question.trim(),
            answer.trim()
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub task: String,
    pub demos: String,
    pub directive: String,
}

impl PromptTemplate {
    /// Parses the three sections separated by lines of `=====`.
    pub fn parse(name: &str, text: &str) -> Option<Self> {
        let parts: Vec<&str> = text.split("\n=====\n").collect();
        let [task, demos, directive] = parts.as_slice() else { return None };
        Some(Self {
            name: name.to_string(),
            task: task.trim().to_string(),
            demos: demos.trim().to_string(),
            directive: directive.trim().to_string(),
        })
    }
}

impl Template for PromptTemplate {
    fn name(&self) -> &str {
        &self.name
    }
    fn task(&self) -> &str {
        &self.task
    }
    fn demos(&self) -> &str {
        &self.demos
    }
    fn directive(&self) -> &str {
        &self.directive
    }
}

const BUILTIN: [(&str, &str); 5] = [
    ("svamp", include_str!("../templates/svamp.txt")),
    ("arc_e", include_str!("../templates/arc_e.txt")),
    ("gsm8k", include_str!("../templates/gsm8k.txt")),
    ("mawps", include_str!("../templates/mawps.txt")),
    ("stg", include_str!("../templates/stg.txt")),
];

pub fn builtin_templates() -> Registry<dyn Template> {
    let mut r: Registry<dyn Template> = Registry::new("template");
    for (name, text) in BUILTIN {
        let t = PromptTemplate::parse(name, text).expect("built-in templates have three sections");
        r.register(name, Box::new(t));
    }
    r
}
