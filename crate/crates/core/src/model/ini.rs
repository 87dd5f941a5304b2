//! Minimal INI reader shared by the provisioner config and scenario files.
//!
//! `key = value` lines grouped under `[section]` headers. A value ending in
//! a backslash continues on the next line; the backslash and line break are
//! dropped and the next line is appended verbatim. Lines starting with `#`
//! or `;` are comments.

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub line: usize,
    pub entries: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IniError {
    pub line: usize,
    pub msg: String,
}

pub fn parse(text: &str) -> Result<Vec<Section>, IniError> {
    let mut sections: Vec<Section> = Vec::new();
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    while let Some((lineno, raw)) = lines.next() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let Some(name) = rest.strip_suffix(']') else {
                return Err(IniError {
                    line: lineno,
                    msg: "section header is missing `]`".into(),
                });
            };
            let name = name.trim();
            if name.is_empty() {
                return Err(IniError {
                    line: lineno,
                    msg: "empty section name".into(),
                });
            }
            sections.push(Section {
                name: name.to_string(),
                line: lineno,
                entries: Vec::new(),
            });
            continue;
        }
        let Some((key, first)) = raw.split_once('=') else {
            return Err(IniError {
                line: lineno,
                msg: format!("expected `key=value` or `[section]`, found `{line}`"),
            });
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(IniError {
                line: lineno,
                msg: "empty key".into(),
            });
        }
        let mut value = first.to_string();
        loop {
            let trimmed_end = value.trim_end_matches([' ', '\t', '\r']);
            let Some(stripped) = trimmed_end.strip_suffix('\\') else {
                break;
            };
            value = stripped.to_string();
            match lines.next() {
                Some((_, next)) => value.push_str(next),
                None => {
                    return Err(IniError {
                        line: lineno,
                        msg: "line continuation at end of file".into(),
                    })
                }
            }
        }
        let Some(section) = sections.last_mut() else {
            return Err(IniError {
                line: lineno,
                msg: format!("key `{key}` appears before any section"),
            });
        };
        section.entries.push(Entry {
            key: key.to_string(),
            value: value.trim().to_string(),
            line: lineno,
        });
    }
    Ok(sections)
}
