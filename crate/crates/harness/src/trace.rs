//! Plain-text traces: one `<key>[,<weight>]` record per line, keys as dotted
//! IPv4 or `0x` hex, `#` starts a comment.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use hidden_sketch::Key;
use thiserror::Error;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct TraceRecord {
    pub key: Key,
    pub weight: u64,
}

impl TraceRecord {
    pub fn new(key: Key) -> Self {
        Self { key, weight: 1 }
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub fn parse_key(s: &str) -> Result<Key, String> {
    let s = s.trim();
    if let Some(hex) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        return u128::from_str_radix(hex, 16)
            .map(Key)
            .map_err(|e| format!("bad hex key {s:?}: {e}"));
    }
    s.parse::<Ipv4Addr>()
        .map(Key::from)
        .map_err(|_| format!("bad key {s:?}: expected dotted IPv4 or 0x-prefixed hex"))
}

/// Parses a trace, rejecting keys wider than `key_bits`.
pub fn read_trace<R: Read>(input: R, key_bits: u32) -> Result<Vec<TraceRecord>, TraceError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| TraceError::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        let body = line.split('#').next().unwrap().trim();
        if body.is_empty() {
            continue;
        }
        let err = |msg: String| TraceError::Parse { line: line_no, msg };
        let (key_part, weight_part) = match body.split_once(',') {
            Some((k, w)) => (k, Some(w.trim())),
            None => (body, None),
        };
        let key = parse_key(key_part).map_err(err)?;
        if key_bits < 128 && key.0 >> key_bits != 0 {
            return Err(err(format!("key {key} wider than {key_bits} bits")));
        }
        let weight = match weight_part {
            None => 1,
            Some(w) => match w.parse::<u64>() {
                Ok(0) | Err(_) => {
                    return Err(err(format!("weight {w:?} is not a positive integer")))
                }
                Ok(v) => v,
            },
        };
        out.push(TraceRecord { key, weight });
    }
    Ok(out)
}

pub fn read_trace_file(path: &Path, key_bits: u32) -> Result<Vec<TraceRecord>, TraceError> {
    let file = std::fs::File::open(path).map_err(|source| TraceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_trace(file, key_bits)
}

pub fn format_key(key: Key) -> String {
    format!("{:#010x}", key.0)
}

pub fn write_trace<W: Write>(mut out: W, records: &[TraceRecord]) -> std::io::Result<()> {
    let mut buf = String::with_capacity(records.len() * 12);
    for r in records {
        buf.push_str(&format_key(r.key));
        if r.weight != 1 {
            write!(buf, ",{}", r.weight).unwrap();
        }
        buf.push('\n');
    }
    out.write_all(buf.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_both_key_forms_weights_and_comments() {
        let text = "# header\n192.168.133.1\n0xc0a88501, 3 # same key\n\n10.0.0.1,2\n";
        let recs = read_trace(text.as_bytes(), 32).unwrap();
        assert_eq!(
            recs,
            vec![
                TraceRecord {
                    key: Key(0xC0A8_8501),
                    weight: 1
                },
                TraceRecord {
                    key: Key(0xC0A8_8501),
                    weight: 3
                },
                TraceRecord {
                    key: Key(0x0A00_0001),
                    weight: 2
                },
            ]
        );
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad = "1.2.3.4\n\nnot-a-key\n";
        match read_trace(bad.as_bytes(), 32) {
            Err(TraceError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let zero = "1.2.3.4,0\n";
        assert!(matches!(
            read_trace(zero.as_bytes(), 32),
            Err(TraceError::Parse { line: 1, .. })
        ));
        let wide = "0x1ffffffff\n";
        assert!(read_trace(wide.as_bytes(), 32).is_err());
    }

    #[test]
    fn write_then_read() {
        let recs = vec![
            TraceRecord::new(Key(1)),
            TraceRecord {
                key: Key(0xFFFF_FFFF),
                weight: 9,
            },
        ];
        let mut buf = Vec::new();
        write_trace(&mut buf, &recs).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "0x00000001\n0xffffffff,9\n"
        );
        assert_eq!(read_trace(&buf[..], 32).unwrap(), recs);
    }
}
