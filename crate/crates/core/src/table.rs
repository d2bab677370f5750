//! Small helpers shared by the delimited-text readers and writers.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Field delimiter of a delimited text table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Delimiter {
    /// Pick `;` when the header line holds more semicolons than commas.
    #[default]
    Auto,
    Comma,
    Semicolon,
}

impl Delimiter {
    pub fn resolve(self, header_line: &str) -> u8 {
        match self {
            Delimiter::Comma => b',',
            Delimiter::Semicolon => b';',
            Delimiter::Auto => {
                let semis = header_line.matches(';').count();
                let commas = header_line.matches(',').count();
                if semis > commas {
                    b';'
                } else {
                    b','
                }
            }
        }
    }
}

pub fn read_to_string(path: &Path) -> Result<String> {
    let mut s = String::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_string(&mut s))
        .map_err(|e| Error::io(path, e))?;
    Ok(s)
}

/// Splits leading `# key=value` comment lines from the table body.
pub fn split_comment_header(text: &str) -> (Vec<(String, String)>, &str) {
    let mut meta = Vec::new();
    let mut rest = text;
    loop {
        let line_end = rest.find('\n').map(|i| i + 1).unwrap_or(rest.len());
        let line = rest[..line_end].trim();
        if let Some(body) = line.strip_prefix('#') {
            if let Some((k, v)) = body.split_once('=') {
                meta.push((k.trim().to_string(), v.trim().to_string()));
            }
            rest = &rest[line_end..];
            if rest.is_empty() {
                break;
            }
        } else {
            break;
        }
    }
    (meta, rest)
}

pub(crate) fn first_line<R: BufRead>(reader: &mut R) -> std::io::Result<String> {
    let mut line = String::new();
    reader.read_line(&mut line)?;
    Ok(line)
}

/// Writes a float with a fixed number of decimals, trimming `-0`.
pub fn fmt_f(x: f64, decimals: usize) -> String {
    let s = format!("{:.*}", decimals, x);
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

pub fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}
