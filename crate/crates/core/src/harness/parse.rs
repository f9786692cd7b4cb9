//! The line-oriented scenario text format: `[kind]` or `[kind NAME]` section
//! headers, `key = value` entries, and `#` comment lines.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::expr::{parse, Expr};

#[derive(Debug, Clone)]
pub(crate) struct Entry {
    /// Everything before `=`, whitespace-normalized (e.g. `arrow f`).
    pub key: String,
    pub value: String,
    pub line: usize,
}

impl Entry {
    /// The words of the key after the first, e.g. `["f"]` for `arrow f`.
    pub fn key_args(&self) -> Vec<&str> {
        self.key.split_whitespace().skip(1).collect()
    }

    pub fn head(&self) -> &str {
        self.key.split_whitespace().next().unwrap_or("")
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Section {
    pub kind: String,
    pub name: Option<String>,
    pub line: usize,
    pub entries: Vec<Entry>,
}

/// Builds located errors for one file.
#[derive(Debug, Clone)]
pub(crate) struct Source {
    pub path: String,
}

impl Source {
    pub fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Scenario {
            path: self.path.clone(),
            line,
            message: message.into(),
        }
    }

    /// Wraps a module error with the line it came from.
    pub fn at(&self, line: usize, e: Error) -> Error {
        match e {
            Error::Scenario { .. } => e,
            other => self.err(line, other.to_string()),
        }
    }

    pub fn sections(&self, text: &str) -> Result<Vec<Section>> {
        let mut out: Vec<Section> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') {
                continue;
            }
            if let Some(rest) = s.strip_prefix('[') {
                let inner = rest
                    .strip_suffix(']')
                    .ok_or_else(|| self.err(line, "section header is missing `]`"))?;
                let mut words = inner.split_whitespace();
                let kind = words
                    .next()
                    .ok_or_else(|| self.err(line, "empty section header"))?
                    .to_string();
                let name = words.next().map(str::to_string);
                if words.next().is_some() {
                    return Err(self.err(line, "section header has more than a kind and a name"));
                }
                out.push(Section {
                    kind,
                    name,
                    line,
                    entries: Vec::new(),
                });
                continue;
            }
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| self.err(line, format!("expected `key = value`, found `{s}`")))?;
            let key = k.split_whitespace().collect::<Vec<_>>().join(" ");
            if key.is_empty() {
                return Err(self.err(line, "empty key"));
            }
            let section = out
                .last_mut()
                .ok_or_else(|| self.err(line, "entry before the first section header"))?;
            section.entries.push(Entry {
                key,
                value: v.trim().to_string(),
                line,
            });
        }
        Ok(out)
    }
}

/// Typed access to one section's entries, with located errors.
pub(crate) struct View<'a> {
    pub src: &'a Source,
    pub section: &'a Section,
}

impl<'a> View<'a> {
    pub fn new(src: &'a Source, section: &'a Section) -> Self {
        View { src, section }
    }

    pub fn err(&self, line: usize, message: impl Into<String>) -> Error {
        self.src.err(line, message)
    }

    pub fn title(&self) -> String {
        match &self.section.name {
            Some(n) => format!("[{} {n}]", self.section.kind),
            None => format!("[{}]", self.section.kind),
        }
    }

    /// Rejects keys whose first word is not listed, and duplicates of single-valued keys.
    pub fn allow(&self, single: &[&str], repeated: &[&str]) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for e in &self.section.entries {
            let head = e.head();
            if single.contains(&e.key.as_str()) {
                if !seen.insert(e.key.clone()) {
                    return Err(self.err(e.line, format!("`{}` given twice in {}", e.key, self.title())));
                }
            } else if !repeated.contains(&head) {
                let mut known: Vec<&str> = single.iter().chain(repeated).copied().collect();
                known.sort_unstable();
                return Err(self.err(
                    e.line,
                    format!("unknown key `{}` in {} (known: {})", e.key, self.title(), known.join(", ")),
                ));
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&'a Entry> {
        self.section.entries.iter().find(|e| e.key == key)
    }

    pub fn all<'b>(&self, head: &'b str) -> impl Iterator<Item = &'a Entry> + 'b
    where
        'a: 'b,
    {
        self.section.entries.iter().filter(move |e| e.head() == head)
    }

    pub fn require(&self, key: &str) -> Result<&'a Entry> {
        self.get(key)
            .ok_or_else(|| self.err(self.section.line, format!("{} is missing `{key}`", self.title())))
    }

    pub fn str(&self, key: &str) -> Result<&'a str> {
        Ok(&self.require(key)?.value)
    }

    pub fn str_or(&self, key: &str, default: &'a str) -> &'a str {
        self.get(key).map_or(default, |e| e.value.as_str())
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(e) => number(self.src, e.line, &e.value),
        }
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        let e = self.require(key)?;
        number(self.src, e.line, &e.value)
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(e) => e
                .value
                .parse()
                .map_err(|_| self.err(e.line, format!("`{}` is not a non-negative integer", e.value))),
        }
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        let e = self.require(key)?;
        e.value
            .parse()
            .map_err(|_| self.err(e.line, format!("`{}` is not a non-negative integer", e.value)))
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some(e) => match e.value.as_str() {
                "true" | "yes" => Ok(true),
                "false" | "no" => Ok(false),
                v => Err(self.err(e.line, format!("`{v}` is not a boolean"))),
            },
        }
    }

    pub fn words(&self, key: &str) -> Vec<String> {
        self.get(key)
            .map(|e| e.value.split_whitespace().map(str::to_string).collect())
            .unwrap_or_default()
    }

    pub fn exprs(&self, key: &str) -> Result<Option<Vec<Expr>>> {
        self.get(key).map(|e| exprs(self.src, e)).transpose()
    }

    pub fn points(&self, key: &str) -> Result<Option<Vec<DVector<f64>>>> {
        self.get(key).map(|e| points(self.src, e.line, &e.value)).transpose()
    }
}

pub(crate) fn number(src: &Source, line: usize, s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| src.err(line, format!("`{s}` is not a number")))
}

/// Components separated by `;`; parse errors report the byte offset within the value.
pub(crate) fn exprs(src: &Source, e: &Entry) -> Result<Vec<Expr>> {
    e.value
        .split(';')
        .map(|part| {
            parse(part).map_err(|pe| {
                src.err(
                    e.line,
                    format!("in `{}`: {} (near `{}`)", part.trim(), pe, part.get(pe.offset..).unwrap_or("").trim()),
                )
            })
        })
        .collect()
}

/// Points separated by `;`, coordinates by whitespace.
pub(crate) fn points(src: &Source, line: usize, s: &str) -> Result<Vec<DVector<f64>>> {
    s.split(';')
        .map(|p| {
            let coords = p
                .split_whitespace()
                .map(|c| number(src, line, c))
                .collect::<Result<Vec<_>>>()?;
            if coords.is_empty() {
                return Err(src.err(line, "empty point"));
            }
            Ok(DVector::from_vec(coords))
        })
        .collect()
}
