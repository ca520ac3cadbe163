//! Line-oriented run event log.
//!
//! Each record is `epoch=<n> event=<kind>` followed by `key=value` fields in
//! the order given. Values never contain whitespace.

use std::fmt::{self, Display, Write as _};
use std::io::{self, Write};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventLog {
    lines: Vec<String>,
}

impl EventLog {
    pub fn new() -> Self {
        EventLog::default()
    }

    pub fn record(&mut self, epoch: u64, event: &str, fields: &[(&str, &dyn Display)]) {
        let mut line = format!("epoch={epoch} event={event}");
        for (k, v) in fields {
            let _ = write!(line, " {k}={v}");
        }
        self.lines.push(line);
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    /// Lines whose event kind is `event`.
    pub fn of_kind<'a>(&'a self, event: &'a str) -> impl Iterator<Item = &'a String> + 'a {
        let tag = format!(" event={event}");
        self.lines.iter().filter(move |l| {
            l.find(&tag).is_some_and(|i| l[i + tag.len()..].is_empty() || l[i + tag.len()..].starts_with(' '))
        })
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> io::Result<()> {
        for l in &self.lines {
            writeln!(out, "{l}")?;
        }
        Ok(())
    }
}

impl Display for EventLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.lines {
            writeln!(f, "{l}")?;
        }
        Ok(())
    }
}

/// Value of `key` in a record, if present.
pub fn field<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    line.split(' ').find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
}
