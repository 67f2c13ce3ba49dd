use std::io::{self, Write};

use super::SimTime;

/// Tab-separated event log: `time_us<TAB>node<TAB>kind<TAB>detail`.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    lines: Vec<String>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, time: SimTime, node: &str, kind: &str, detail: impl AsRef<str>) {
        self.lines
            .push(format!("{}\t{}\t{}\t{}", time.as_micros(), node, kind, detail.as_ref()));
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

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        for l in &self.lines {
            writeln!(w, "{l}")?;
        }
        Ok(())
    }
}
