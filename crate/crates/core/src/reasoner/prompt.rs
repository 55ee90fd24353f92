//! Prompt templates with `{{name}}` substitutions and `{{#flag}}...{{/flag}}`
//! / `{{^flag}}...{{/flag}}` conditional sections.
//!
//! Templates are plain text files keyed by [`TemplateId`]. Built-in copies
//! are compiled in; a directory of overrides can be loaded at startup.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("template `{template}` references `{name}` but no binding was supplied")]
    MissingPlaceholder { template: TemplateId, name: String },
    #[error("binding `{name}` is not used by template `{template}`")]
    UnusedBinding { template: TemplateId, name: String },
    #[error("`{name}` in template `{template}` is used as a {expected} but bound to a {found}")]
    BindingKind {
        template: TemplateId,
        name: String,
        expected: &'static str,
        found: &'static str,
    },
    #[error("template `{template}` is malformed: {message}")]
    Syntax {
        template: TemplateId,
        message: String,
    },
    #[error("cannot read template {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Referring,
    Reasoning,
    AppearanceRequirement,
    AppearanceRetrieval,
    Select,
}

impl TemplateId {
    pub const ALL: [TemplateId; 5] = [
        TemplateId::Referring,
        TemplateId::Reasoning,
        TemplateId::AppearanceRequirement,
        TemplateId::AppearanceRetrieval,
        TemplateId::Select,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TemplateId::Referring => "referring",
            TemplateId::Reasoning => "reasoning",
            TemplateId::AppearanceRequirement => "appearance_requirement",
            TemplateId::AppearanceRetrieval => "appearance_retrieval",
            TemplateId::Select => "select",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.txt", self.name())
    }

    fn builtin(self) -> &'static str {
        match self {
            TemplateId::Referring => include_str!("../templates/referring.txt"),
            TemplateId::Reasoning => include_str!("../templates/reasoning.txt"),
            TemplateId::AppearanceRequirement => {
                include_str!("../templates/appearance_requirement.txt")
            }
            TemplateId::AppearanceRetrieval => {
                include_str!("../templates/appearance_retrieval.txt")
            }
            TemplateId::Select => include_str!("../templates/select.txt"),
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Binding {
    Text(String),
    Flag(bool),
}

impl Binding {
    fn kind(&self) -> &'static str {
        match self {
            Binding::Text(_) => "text",
            Binding::Flag(_) => "flag",
        }
    }
}

impl From<String> for Binding {
    fn from(s: String) -> Self {
        Binding::Text(s)
    }
}

impl From<&str> for Binding {
    fn from(s: &str) -> Self {
        Binding::Text(s.to_string())
    }
}

impl From<bool> for Binding {
    fn from(b: bool) -> Self {
        Binding::Flag(b)
    }
}

pub type Bindings = BTreeMap<String, Binding>;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Node {
    Text(String),
    Var(String),
    Section {
        name: String,
        inverted: bool,
        children: Vec<Node>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub body: String,
    nodes: Vec<Node>,
}

impl PromptTemplate {
    pub fn parse(id: TemplateId, body: impl Into<String>) -> Result<Self, PromptError> {
        let body = body.into();
        let nodes = parse_nodes(id, &body)?;
        Ok(Self { id, body, nodes })
    }

    /// Every name referenced by the template with its kind ("text"/"flag").
    pub fn placeholders(&self) -> BTreeMap<String, &'static str> {
        fn walk(nodes: &[Node], out: &mut BTreeMap<String, &'static str>) {
            for n in nodes {
                match n {
                    Node::Text(_) => {}
                    Node::Var(name) => {
                        out.insert(name.clone(), "text");
                    }
                    Node::Section { name, children, .. } => {
                        out.insert(name.clone(), "flag");
                        walk(children, out);
                    }
                }
            }
        }
        let mut out = BTreeMap::new();
        walk(&self.nodes, &mut out);
        out
    }
}

fn parse_nodes(id: TemplateId, body: &str) -> Result<Vec<Node>, PromptError> {
    let syntax = |message: String| PromptError::Syntax {
        template: id,
        message,
    };
    // (section name, inverted, nodes collected so far)
    let mut stack: Vec<(String, bool, Vec<Node>)> = vec![(String::new(), false, Vec::new())];
    let mut rest = body;
    while let Some(start) = rest.find("{{") {
        let (before, after) = rest.split_at(start);
        let end = after
            .find("}}")
            .ok_or_else(|| syntax("unterminated `{{`".into()))?;
        let tag = after[2..end].trim();
        let mut next = &after[end + 2..];
        let is_section = tag.starts_with(['#', '^', '/']);
        // standalone section tags swallow their line break
        if is_section && (before.is_empty() || before.ends_with('\n')) && next.starts_with('\n') {
            next = &next[1..];
        }
        if !before.is_empty() {
            stack
                .last_mut()
                .expect("root")
                .2
                .push(Node::Text(before.to_string()));
        }
        let valid = |name: &str| {
            !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        };
        if let Some(name) = tag.strip_prefix('#').or_else(|| tag.strip_prefix('^')) {
            let name = name.trim();
            if !valid(name) {
                return Err(syntax(format!("bad section name `{name}`")));
            }
            stack.push((name.to_string(), tag.starts_with('^'), Vec::new()));
        } else if let Some(name) = tag.strip_prefix('/') {
            let name = name.trim();
            if stack.len() < 2 {
                return Err(syntax(format!("`{{{{/{name}}}}}` closes nothing")));
            }
            let (open, inverted, children) = stack.pop().expect("checked");
            if open != name {
                return Err(syntax(format!("`{open}` closed by `{name}`")));
            }
            stack.last_mut().expect("root").2.push(Node::Section {
                name: open,
                inverted,
                children,
            });
        } else {
            if !valid(tag) {
                return Err(syntax(format!("bad placeholder `{tag}`")));
            }
            stack
                .last_mut()
                .expect("root")
                .2
                .push(Node::Var(tag.to_string()));
        }
        rest = next;
    }
    if stack.len() != 1 {
        return Err(syntax(format!(
            "section `{}` is never closed",
            stack.last().expect("nonempty").0
        )));
    }
    let mut root = stack.pop().expect("root").2;
    if !rest.is_empty() {
        root.push(Node::Text(rest.to_string()));
    }
    Ok(root)
}

/// Substitutes `bindings` into `template`. Every placeholder needs a
/// binding of the right kind and every binding must be referenced.
pub fn render_prompt(
    template: &PromptTemplate,
    bindings: &Bindings,
) -> Result<String, PromptError> {
    let placeholders = template.placeholders();
    for (name, &kind) in &placeholders {
        match bindings.get(name) {
            None => {
                return Err(PromptError::MissingPlaceholder {
                    template: template.id,
                    name: name.clone(),
                })
            }
            Some(b) if b.kind() != kind => {
                return Err(PromptError::BindingKind {
                    template: template.id,
                    name: name.clone(),
                    expected: kind,
                    found: b.kind(),
                })
            }
            Some(_) => {}
        }
    }
    if let Some(name) = bindings.keys().find(|k| !placeholders.contains_key(*k)) {
        return Err(PromptError::UnusedBinding {
            template: template.id,
            name: name.clone(),
        });
    }
    fn emit(nodes: &[Node], bindings: &Bindings, out: &mut String) {
        for n in nodes {
            match n {
                Node::Text(t) => out.push_str(t),
                Node::Var(name) => {
                    if let Some(Binding::Text(v)) = bindings.get(name) {
                        out.push_str(v);
                    }
                }
                Node::Section {
                    name,
                    inverted,
                    children,
                } => {
                    if let Some(Binding::Flag(on)) = bindings.get(name) {
                        if on != inverted {
                            emit(children, bindings, out);
                        }
                    }
                }
            }
        }
    }
    let mut out = String::with_capacity(template.body.len());
    emit(&template.nodes, bindings, &mut out);
    Ok(out)
}

/// The five prompt templates used by the pipeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: BTreeMap<TemplateId, PromptTemplate>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let templates = TemplateId::ALL
            .into_iter()
            .map(|id| {
                (
                    id,
                    PromptTemplate::parse(id, id.builtin()).expect("built-in templates parse"),
                )
            })
            .collect();
        Self { templates }
    }

    /// Built-ins overridden by any `<template_id>.txt` found in `dir`.
    /// Overrides must reference the same placeholders as the built-ins.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::builtin();
        for id in TemplateId::ALL {
            let path = dir.join(id.file_name());
            if !path.exists() {
                continue;
            }
            let body = fs::read_to_string(&path).map_err(|e| PromptError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            set.replace(PromptTemplate::parse(id, body)?)?;
        }
        Ok(set)
    }

    pub fn replace(&mut self, template: PromptTemplate) -> Result<(), PromptError> {
        let expected = self.get(template.id).placeholders();
        let found = template.placeholders();
        if let Some((name, _)) = expected.iter().find(|(k, _)| !found.contains_key(*k)) {
            return Err(PromptError::Syntax {
                template: template.id,
                message: format!("placeholder `{name}` is missing"),
            });
        }
        if let Some((name, _)) = found.iter().find(|(k, _)| !expected.contains_key(*k)) {
            return Err(PromptError::Syntax {
                template: template.id,
                message: format!("unknown placeholder `{name}`"),
            });
        }
        self.templates.insert(template.id, template);
        Ok(())
    }

    pub fn get(&self, id: TemplateId) -> &PromptTemplate {
        &self.templates[&id]
    }

    pub fn render(&self, id: TemplateId, bindings: &Bindings) -> Result<String, PromptError> {
        render_prompt(self.get(id), bindings)
    }
}
