use rustpython_parser::ast::{Ranged, Stmt};

/// Line-indexed view over a source string. Lines are 1-based; line ends are
/// `\n` and a trailing `\r` stays part of the line text.
pub(crate) struct SourceIndex<'a> {
    text: &'a str,
    starts: Vec<usize>,
}

impl<'a> SourceIndex<'a> {
    pub fn new(text: &'a str) -> Self {
        let mut starts = vec![0];
        for (i, b) in text.bytes().enumerate() {
            if b == b'\n' && i + 1 < text.len() {
                starts.push(i + 1);
            }
        }
        if text.is_empty() {
            starts.clear();
        }
        Self { text, starts }
    }

    pub fn text(&self) -> &'a str {
        self.text
    }

    pub fn line_count(&self) -> usize {
        self.starts.len()
    }

    pub fn line_of(&self, offset: usize) -> usize {
        match self.starts.binary_search(&offset) {
            Ok(idx) => idx + 1,
            Err(idx) => idx,
        }
    }

    pub fn line_start(&self, line: usize) -> usize {
        self.starts[line - 1]
    }

    /// Offset of the terminating `\n` (or end of text).
    pub fn line_end(&self, line: usize) -> usize {
        let start = self.line_start(line);
        self.text[start..]
            .find('\n')
            .map_or(self.text.len(), |i| start + i)
    }

    pub fn line(&self, line: usize) -> &'a str {
        &self.text[self.line_start(line)..self.line_end(line)]
    }

    pub fn indent(&self, line: usize) -> &'a str {
        let l = self.line(line);
        let trimmed = l.trim_start_matches([' ', '\t']);
        &l[..l.len() - trimmed.len()]
    }

    pub fn stmt_start(&self, stmt: &Stmt) -> usize {
        stmt.range().start().to_usize()
    }

    pub fn stmt_end(&self, stmt: &Stmt) -> usize {
        stmt.range().end().to_usize()
    }

    pub fn first_line(&self, stmt: &Stmt) -> usize {
        self.line_of(self.stmt_start(stmt))
    }

    pub fn last_line(&self, stmt: &Stmt) -> usize {
        self.line_of(self.stmt_end(stmt).saturating_sub(1).max(self.stmt_start(stmt)))
    }

    pub fn slice(&self, stmt: &Stmt) -> &'a str {
        &self.text[self.stmt_start(stmt)..self.stmt_end(stmt)]
    }

    /// True when nothing but whitespace precedes the statement on its first
    /// line and nothing but whitespace or a comment follows it on its last.
    pub fn stands_alone(&self, stmt: &Stmt) -> bool {
        let first = self.first_line(stmt);
        let before = &self.text[self.line_start(first)..self.stmt_start(stmt)];
        let last = self.last_line(stmt);
        let after = &self.text[self.stmt_end(stmt)..self.line_end(last)];
        let after = after.trim();
        before.trim().is_empty() && (after.is_empty() || after.starts_with('#'))
    }

    /// Indentation unit used when a one-line body has to be split out.
    pub fn indent_unit(&self) -> &'static str {
        let tabbed = (1..=self.line_count()).any(|l| self.line(l).starts_with('\t'));
        if tabbed {
            "\t"
        } else {
            "    "
        }
    }

    pub fn has_trailing_newline(&self) -> bool {
        self.text.ends_with('\n')
    }
}

pub(crate) fn join_lines(lines: &[String], trailing_newline: bool) -> String {
    let mut out = lines.join("\n");
    if trailing_newline && !lines.is_empty() {
        out.push('\n');
    }
    out
}
