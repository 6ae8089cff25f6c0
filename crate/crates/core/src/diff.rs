//! Minimal unified-diff reading: header paths and changed lines.
//!
//! Patches travel through the corpus as plain unified-diff text. Two
//! consumers need structure out of that text: corpus loading checks that a
//! trajectory's `edited_files` keys match the paths named in the patch
//! headers, and patch normalization consumes the added/removed lines.
//!
//! Parsing is deliberately lenient. Only three shapes carry meaning:
//!
//! * a `--- ` line immediately followed by a `+++ ` line (a file header pair),
//! * a line starting with `@@ ` and containing a closing ` @@` (a hunk marker),
//! * a line starting with a single `+` or `-` (an added/removed line).
//!
//! Everything else — `diff --git` lines, index lines, mode lines, context
//! lines, `\ No newline at end of file` markers — is ignored. Hunk line
//! counts are not book-kept, so a removed line whose content itself begins
//! with `--` is indistinguishable from a header and is rejected as malformed.

use crate::error::{Error, Result};

/// Whether a changed line was added or removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Add,
    Remove,
}

impl Sign {
    pub fn marker(self) -> char {
        match self {
            Sign::Add => '+',
            Sign::Remove => '-',
        }
    }
}

/// One added or removed line, without its leading marker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChangedLine<'a> {
    pub sign: Sign,
    pub content: &'a str,
}

/// The canonical file paths named by a patch's `---`/`+++` header pairs, in
/// first-appearance order and deduplicated.
///
/// For each pair the post-image path is used unless it is `/dev/null` (a
/// deletion), in which case the pre-image path is used. The conventional
/// `a/` and `b/` prefixes and any trailing tab-separated metadata are
/// stripped.
pub fn header_paths(patch: &str) -> Result<Vec<String>> {
    let mut paths = Vec::new();
    for event in events(patch)? {
        if let Event::Header { old, new } = event {
            let canonical = match (clean_path(old, "a/"), clean_path(new, "b/")) {
                (_, Some(new)) => new,
                (Some(old), None) => old,
                (None, None) => {
                    return Err(Error::Patch(
                        "header pair names /dev/null on both sides".into(),
                    ))
                }
            };
            if !paths.contains(&canonical) {
                paths.push(canonical);
            }
        }
    }
    Ok(paths)
}

/// All added/removed lines of a patch, in order.
pub fn changed_lines(patch: &str) -> Result<Vec<ChangedLine<'_>>> {
    let mut lines = Vec::new();
    for event in events(patch)? {
        if let Event::Changed(line) = event {
            lines.push(line);
        }
    }
    Ok(lines)
}

enum Event<'a> {
    Header { old: &'a str, new: &'a str },
    Changed(ChangedLine<'a>),
}

fn events(patch: &str) -> Result<Vec<Event<'_>>> {
    let mut events = Vec::new();
    let mut lines = patch.lines().enumerate().peekable();
    while let Some((index, line)) = lines.next() {
        if let Some(old) = line.strip_prefix("--- ") {
            match lines.peek() {
                Some((_, next)) if next.starts_with("+++ ") => {
                    let (_, next) = lines.next().expect("peeked");
                    events.push(Event::Header {
                        old,
                        new: &next[4..],
                    });
                }
                _ => {
                    return Err(Error::Patch(format!(
                        "line {}: `---` header not followed by a `+++` header",
                        index + 1
                    )))
                }
            }
        } else if line.starts_with("+++ ") {
            return Err(Error::Patch(format!(
                "line {}: `+++` header without a preceding `---` header",
                index + 1
            )));
        } else if line.starts_with("@@") {
            if !line.starts_with("@@ ") || !line[3..].contains(" @@") {
                return Err(Error::Patch(format!("line {}: malformed hunk header", index + 1)));
            }
        } else if let Some(content) = line.strip_prefix('+') {
            events.push(Event::Changed(ChangedLine {
                sign: Sign::Add,
                content,
            }));
        } else if let Some(content) = line.strip_prefix('-') {
            events.push(Event::Changed(ChangedLine {
                sign: Sign::Remove,
                content,
            }));
        }
    }
    Ok(events)
}

/// Strips the diff-tool prefix and trailing metadata from a raw header path.
/// Returns `None` for `/dev/null` (file creation or deletion).
fn clean_path(raw: &str, prefix: &str) -> Option<String> {
    let raw = raw.split('\t').next().unwrap_or(raw).trim_end();
    if raw == "/dev/null" {
        return None;
    }
    Some(raw.strip_prefix(prefix).unwrap_or(raw).to_string())
}
