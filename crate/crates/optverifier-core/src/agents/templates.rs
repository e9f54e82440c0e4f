//! Prompt templates: plain-text files with `@role` turn markers and
//! `{placeholder}` substitution. Doubled braces escape literals, so the JSON
//! format blocks inside the shipped prompts survive rendering untouched.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::llm_gateway::{ChatMessage, Role};

/// Which shipped template set drives the agents. The `dsl` set instructs the
/// compilable formulation language; `paper_latex` keeps the original
/// LaTeX-format instructions and exists for replaying historical fixtures
/// (its formulations do not compile).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptSet {
    #[default]
    Dsl,
    PaperLatex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateStage {
    Distill,
    FormulateParams,
    FormulateModel,
    StruInterp,
    StruEval,
    SolInterp,
    SolEval,
    Refine,
}

/// One template: an ordered list of (role, templated text) turns.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub turns: Vec<(Role, String)>,
}

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("template has no turns")]
    Empty,
    #[error("unknown role marker '{0}'")]
    UnknownRole(String),
}

impl PromptTemplate {
    /// Parse the `@system` / `@user` / `@assistant` turn format.
    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        let mut turns: Vec<(Role, String)> = Vec::new();
        for line in text.lines() {
            if let Some(marker) = line.strip_prefix('@') {
                let role = match marker.trim() {
                    "system" => Role::System,
                    "user" => Role::User,
                    "assistant" => Role::Assistant,
                    other => return Err(TemplateError::UnknownRole(other.to_string())),
                };
                turns.push((role, String::new()));
            } else if let Some((_, content)) = turns.last_mut() {
                content.push_str(line);
                content.push('\n');
            }
        }
        if turns.is_empty() {
            return Err(TemplateError::Empty);
        }
        for (_, content) in &mut turns {
            while content.ends_with('\n') {
                content.pop();
            }
        }
        Ok(PromptTemplate { turns })
    }

    /// Substitute `{name}` placeholders from `vars`; `{{`/`}}` emit literal
    /// braces; unresolved brace runs pass through unchanged.
    pub fn render(&self, vars: &BTreeMap<&str, String>) -> Vec<ChatMessage> {
        self.turns
            .iter()
            .map(|(role, text)| ChatMessage {
                role: *role,
                content: render_text(text, vars),
            })
            .collect()
    }
}

fn render_text(text: &str, vars: &BTreeMap<&str, String>) -> String {
    let bytes = text.as_bytes();
    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            if i + 1 < bytes.len() && bytes[i + 1] == b'{' {
                out.push('{');
                i += 2;
                continue;
            }
            if let Some(end) = text[i + 1..].find('}').map(|p| i + 1 + p) {
                let name = &text[i + 1..end];
                if name.len() <= 40 && name.chars().all(|c| c.is_ascii_lowercase() || c == '_') {
                    if let Some(value) = vars.get(name) {
                        out.push_str(value);
                        i = end + 1;
                        continue;
                    }
                }
            }
            out.push('{');
            i += 1;
        } else if bytes[i] == b'}' && i + 1 < bytes.len() && bytes[i + 1] == b'}' {
            out.push('}');
            i += 2;
        } else {
            let c = text[i..].chars().next().unwrap();
            out.push(c);
            i += c.len_utf8();
        }
    }
    out
}

/// A full template set, loaded from the embedded defaults.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub set: PromptSet,
    distill: PromptTemplate,
    formulate_params: PromptTemplate,
    formulate_model: PromptTemplate,
    stru_interp: PromptTemplate,
    stru_eval: PromptTemplate,
    sol_interp: PromptTemplate,
    sol_eval: PromptTemplate,
    refine: PromptTemplate,
}

macro_rules! embedded {
    ($dir:literal, $file:literal) => {
        PromptTemplate::parse(include_str!(concat!("templates/", $dir, "/", $file)))
            .expect("embedded template must parse")
    };
}

impl TemplateSet {
    pub fn load(set: PromptSet) -> Self {
        match set {
            PromptSet::Dsl => TemplateSet {
                set,
                distill: embedded!("dsl", "distill.txt"),
                formulate_params: embedded!("dsl", "formulate_params.txt"),
                formulate_model: embedded!("dsl", "formulate_model.txt"),
                stru_interp: embedded!("dsl", "stru_interp.txt"),
                stru_eval: embedded!("dsl", "stru_eval.txt"),
                sol_interp: embedded!("dsl", "sol_interp.txt"),
                sol_eval: embedded!("dsl", "sol_eval.txt"),
                refine: embedded!("dsl", "refine.txt"),
            },
            PromptSet::PaperLatex => TemplateSet {
                set,
                distill: embedded!("paper_latex", "distill.txt"),
                formulate_params: embedded!("paper_latex", "formulate_params.txt"),
                formulate_model: embedded!("paper_latex", "formulate_model.txt"),
                stru_interp: embedded!("paper_latex", "stru_interp.txt"),
                stru_eval: embedded!("paper_latex", "stru_eval.txt"),
                sol_interp: embedded!("paper_latex", "sol_interp.txt"),
                sol_eval: embedded!("paper_latex", "sol_eval.txt"),
                refine: embedded!("paper_latex", "refine.txt"),
            },
        }
    }

    pub fn get(&self, stage: TemplateStage) -> &PromptTemplate {
        match stage {
            TemplateStage::Distill => &self.distill,
            TemplateStage::FormulateParams => &self.formulate_params,
            TemplateStage::FormulateModel => &self.formulate_model,
            TemplateStage::StruInterp => &self.stru_interp,
            TemplateStage::StruEval => &self.stru_eval,
            TemplateStage::SolInterp => &self.sol_interp,
            TemplateStage::SolEval => &self.sol_eval,
            TemplateStage::Refine => &self.refine,
        }
    }
}

/// The JSON document shape the formulation/refinement prompts request.
/// Injected as a placeholder value, so braces here are literal.
pub const MODEL_SCHEMA_BLOCK: &str = r#"Write the complete optimization model in JSON Format:

```json
{
    "parameters": [
        {
            "symbol": "CamelCase parameter symbol",
            "definition": "what the parameter means",
            "value": the concrete value (number or nested array),
            "shape": []
        }
    ],
    "variables": [
        {
            "symbol": "CamelCase variable symbol",
            "definition": "what the variable decides",
            "type": "continuous or integer or binary",
            "shape": []
        }
    ],
    "constraints": [
        {
            "name": "constraint name",
            "description": "what the constraint enforces",
            "formulation": "a formulation in the linear formulation language"
        }
    ],
    "objective": [
        {
            "description": "what is optimized",
            "formulation": "a formulation in the linear formulation language",
            "objective_sense": "Maximize or Minimize"
        }
    ]
}
```

- Note that I'm going to use python json.loads() function to parse the json file, so please make sure the format is correct (don't add ',' before enclosing '}' or ']' characters.
- Use '```json' and '```' to enclose the json file."#;
