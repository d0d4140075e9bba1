use std::collections::BTreeMap;

use super::{ChatMessage, ChatRequest, ChatRole, LlmError};

/// A shipped prompt template: name, version, default temperature and the
/// raw text with `[system]` / `[user]` sections.
struct Template {
    name: &'static str,
    version: u32,
    temperature: f64,
    text: &'static str,
}

const TEMPLATES: &[Template] = &[
    Template {
        name: "reward_designer",
        version: 1,
        temperature: 0.7,
        text: include_str!("../../templates/reward_designer.txt"),
    },
    Template {
        name: "probe_generator",
        version: 1,
        temperature: 0.7,
        text: include_str!("../../templates/probe_generator.txt"),
    },
    Template {
        name: "guider",
        version: 1,
        temperature: 0.0,
        text: include_str!("../../templates/guider.txt"),
    },
    Template {
        name: "perceiver",
        version: 1,
        temperature: 0.0,
        text: include_str!("../../templates/perceiver.txt"),
    },
];

pub fn template_names() -> Vec<&'static str> {
    TEMPLATES.iter().map(|t| t.name).collect()
}

/// Placeholders (`{{name}}`) used by a template, in order of appearance.
pub fn template_variables(name: &str) -> Result<Vec<String>, LlmError> {
    let t = find(name)?;
    let mut vars = Vec::new();
    let mut rest = t.text;
    while let Some(i) = rest.find("{{") {
        let Some(j) = rest[i..].find("}}") else { break };
        let var = rest[i + 2..i + j].trim().to_string();
        if !vars.contains(&var) {
            vars.push(var);
        }
        rest = &rest[i + j + 2..];
    }
    Ok(vars)
}

fn find(name: &str) -> Result<&'static Template, LlmError> {
    TEMPLATES
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| LlmError::Template(format!("no template named '{name}'")))
}

fn substitute(text: &str, template: &str, vars: &BTreeMap<String, String>) -> Result<String, LlmError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(i) = rest.find("{{") {
        out.push_str(&rest[..i]);
        let Some(j) = rest[i..].find("}}") else {
            return Err(LlmError::Template(format!("unterminated placeholder in '{template}'")));
        };
        let var = rest[i + 2..i + j].trim();
        let value = vars.get(var).ok_or_else(|| LlmError::UnboundVariable {
            template: template.to_string(),
            variable: var.to_string(),
        })?;
        out.push_str(value);
        rest = &rest[i + j + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Fills a template. Every placeholder must be bound; extra variables are
/// ignored.
pub fn render_prompt(name: &str, vars: &BTreeMap<String, String>) -> Result<ChatRequest, LlmError> {
    let t = find(name)?;
    let (system, user) = split_sections(t)?;
    let messages = vec![
        ChatMessage {
            role: ChatRole::System,
            content: substitute(system, name, vars)?,
        },
        ChatMessage {
            role: ChatRole::User,
            content: substitute(user, name, vars)?,
        },
    ];
    Ok(ChatRequest {
        temperature: t.temperature,
        template: Some(format!("{}@v{}", t.name, t.version)),
        ..ChatRequest::new(messages)
    })
}

fn split_sections(t: &Template) -> Result<(&'static str, &'static str), LlmError> {
    let text = t.text;
    let sys = text
        .find("[system]\n")
        .ok_or_else(|| LlmError::Template(format!("'{}' lacks a [system] section", t.name)))?;
    let user = text
        .find("\n[user]\n")
        .ok_or_else(|| LlmError::Template(format!("'{}' lacks a [user] section", t.name)))?;
    Ok((
        text[sys + "[system]\n".len()..user].trim(),
        text[user + "\n[user]\n".len()..].trim(),
    ))
}
