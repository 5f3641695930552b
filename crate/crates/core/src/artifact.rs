//! Self-describing output files.
//!
//! Each artifact opens with a block of `# ` lines holding the command, the
//! base seed and the resolved configuration:
//!
//! ```text
//! # photodet artifact
//! # command = trajectories
//! # seed = 20191
//! # [system]
//! # gamma01 = 1.0
//! # ...
//! # end
//! branch,seed,S
//! ```

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use crate::config::{Resolved, RunConfig};
use crate::error::{Error, Result};

pub const MAGIC: &str = "photodet artifact";
const END: &str = "end";

#[derive(Clone, Debug, PartialEq)]
pub struct Header {
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
}

impl Header {
    pub fn new(command: &str, resolved: &Resolved) -> Self {
        Self {
            command: command.to_string(),
            seed: resolved.params.probe.base_seed,
            config: resolved.to_config(),
        }
    }

    pub fn write(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "# {MAGIC}")?;
        writeln!(out, "# command = {}", self.command)?;
        writeln!(out, "# seed = {}", self.seed)?;
        for line in self.config.to_toml().lines() {
            if line.is_empty() {
                writeln!(out, "#")?;
            } else {
                writeln!(out, "# {line}")?;
            }
        }
        writeln!(out, "# {END}")
    }
}

fn malformed(line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: message.into(),
    }
}

/// Reads the header block back. Returns the header and the byte offset of the body.
pub fn extract_header(text: &str) -> Result<(Header, usize)> {
    let mut lines = text.split_inclusive('\n').enumerate();
    let mut offset = 0;
    let mut next = |what: &str| -> Result<(usize, &str)> {
        let (i, raw) = lines
            .next()
            .ok_or_else(|| malformed(0, format!("artifact header ends before {what}")))?;
        offset += raw.len();
        let body = raw.trim_end_matches(['\n', '\r']);
        let content = body
            .strip_prefix('#')
            .ok_or_else(|| malformed(i + 1, format!("expected a `#` header line, found {body:?}")))?;
        Ok((i + 1, content.strip_prefix(' ').unwrap_or(content)))
    };

    let (n, magic) = next("the magic line")?;
    if magic != MAGIC {
        return Err(malformed(n, format!("not a photodet artifact (first line {magic:?})")));
    }
    let (n, cmd) = next("the command")?;
    let command = cmd
        .strip_prefix("command = ")
        .filter(|c| !c.is_empty() && !c.contains(char::is_whitespace))
        .ok_or_else(|| malformed(n, "expected `command = <name>`"))?
        .to_string();
    let (n, seed) = next("the seed")?;
    let seed = seed
        .strip_prefix("seed = ")
        .and_then(|s| s.parse::<u64>().ok())
        .ok_or_else(|| malformed(n, "expected `seed = <integer>`"))?;

    let first_config_line = n + 1;
    let mut toml_text = String::new();
    loop {
        let (_, content) = next("the end marker")?;
        if content == END {
            break;
        }
        toml_text.push_str(content);
        toml_text.push('\n');
    }
    let config = RunConfig::parse(&toml_text).map_err(|e| match e {
        Error::Config { line, message } => malformed(line + first_config_line - 1, message),
        other => other,
    })?;
    Ok((Header { command, seed, config }, offset))
}

/// Writes `header` then `body` to `path` through a sibling temporary file,
/// so a failed run never leaves a partial artifact behind.
pub fn write_atomic(
    path: &Path,
    header: &Header,
    body: impl FnOnce(&mut dyn Write) -> io::Result<()>,
) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidParams(format!("artifact path {} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| -> io::Result<()> {
        let mut out = BufWriter::new(fs::File::create(&tmp)?);
        header.write(&mut out)?;
        body(&mut out)?;
        out.into_inner().map_err(|e| e.into_error())?.sync_all()
    })();
    match result.and_then(|_| fs::rename(&tmp, path)) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e.into())
        }
    }
}
