//! `{placeholder}` prompt templates.
//!
//! Placeholders are `{name}` with `name` made of lowercase letters, digits and
//! underscores. Every placeholder in a body is required. `{{` and `}}` render as
//! literal braces; any other brace is copied through unchanged.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
    pub required: Vec<String>,
}

enum Piece<'a> {
    Literal(&'a str),
    Placeholder(&'a str),
}

fn pieces(body: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut rest = body;
    while !rest.is_empty() {
        if let Some(tail) = rest.strip_prefix("{{") {
            out.push(Piece::Literal("{"));
            rest = tail;
            continue;
        }
        if let Some(tail) = rest.strip_prefix("}}") {
            out.push(Piece::Literal("}"));
            rest = tail;
            continue;
        }
        if rest.starts_with('{') {
            if let Some(close) = rest.find('}') {
                let name = &rest[1..close];
                if is_placeholder_name(name) {
                    out.push(Piece::Placeholder(name));
                    rest = &rest[close + 1..];
                    continue;
                }
            }
            out.push(Piece::Literal(&rest[..1]));
            rest = &rest[1..];
            continue;
        }
        let next = rest[1..]
            .find(['{', '}'])
            .map_or(rest.len(), |i| i + 1);
        out.push(Piece::Literal(&rest[..next]));
        rest = &rest[next..];
    }
    out
}

fn is_placeholder_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
        && !name.as_bytes()[0].is_ascii_digit()
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Self {
        let body = body.into();
        let mut required: Vec<String> = Vec::new();
        for p in pieces(&body) {
            if let Piece::Placeholder(n) = p {
                if !required.iter().any(|r| r == n) {
                    required.push(n.to_string());
                }
            }
        }
        Self {
            name: name.into(),
            body,
            required,
        }
    }

    /// Loads a template; its name is the file stem.
    pub fn from_file(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(Self::new(name, body))
    }

    pub fn render(&self, vars: &BTreeMap<&str, String>) -> Result<String> {
        let mut out = String::with_capacity(self.body.len());
        for p in pieces(&self.body) {
            match p {
                Piece::Literal(s) => out.push_str(s),
                Piece::Placeholder(n) => match vars.get(n) {
                    Some(v) => out.push_str(v),
                    None => {
                        return Err(Error::UnboundPlaceholder {
                            template: self.name.clone(),
                            placeholder: n.to_string(),
                        })
                    }
                },
            }
        }
        Ok(out)
    }
}

/// Builds a placeholder map: `vars!{"a" => x, "b" => y}`.
#[macro_export]
macro_rules! vars {
    ($($k:expr => $v:expr),* $(,)?) => {{
        let mut m = ::std::collections::BTreeMap::<&str, String>::new();
        $( m.insert($k, $v.to_string()); )*
        m
    }};
}

macro_rules! builtin {
    ($($field:ident => $file:literal),* $(,)?) => {
        /// Every prompt the pipeline uses.
        #[derive(Debug, Clone)]
        pub struct PromptSet {
            $(pub $field: PromptTemplate,)*
        }

        impl PromptSet {
            pub fn builtin() -> Self {
                Self {
                    $($field: PromptTemplate::new(
                        stringify!($field),
                        include_str!(concat!("../prompts/", $file)),
                    ),)*
                }
            }

            /// Built-in prompts, with any `<name>.txt` found in `dir` taking
            /// precedence.
            pub fn load(dir: Option<&Path>) -> Result<Self> {
                let mut set = Self::builtin();
                if let Some(dir) = dir {
                    if !dir.is_dir() {
                        return Err(Error::Config(format!(
                            "prompt directory {} does not exist",
                            dir.display()
                        )));
                    }
                    $(
                        let path = dir.join($file);
                        if path.exists() {
                            set.$field = PromptTemplate::from_file(&path)?;
                            set.$field.name = stringify!($field).to_string();
                        }
                    )*
                }
                Ok(set)
            }

            pub fn files() -> &'static [&'static str] {
                &[$($file),*]
            }
        }
    };
}

builtin! {
    structuring_unified => "structuring_unified.txt",
    structuring_caption => "structuring_caption.txt",
    structuring_context => "structuring_context.txt",
    structuring_defects => "structuring_defects.txt",
    format_reminder => "format_reminder.txt",
    composition_intro => "composition_intro.txt",
    composition_group => "composition_group.txt",
    composition_global => "composition_global.txt",
    composition_tighten => "composition_tighten.txt",
    evaluation => "evaluation.txt",
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}
