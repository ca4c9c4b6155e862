//! Shared framing for the binary containers.
//!
//! Every container starts with a 4-byte magic, a `u32` format version, a `u64`
//! manifest length and a UTF-8 manifest of `key=value` lines (each terminated
//! by `\n`), all little-endian. The payload follows immediately.

use crate::error::{Error, Result};

pub(crate) struct Header<'a> {
    pub version: u32,
    pub entries: Vec<(String, String)>,
    pub payload: &'a [u8],
}

pub(crate) fn encode_header(magic: &[u8; 4], version: u32, entries: &[(String, String)]) -> Vec<u8> {
    let manifest = format_manifest(entries);
    let mut out = Vec::with_capacity(16 + manifest.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(manifest.as_bytes());
    out
}

pub(crate) fn decode_header<'a>(bytes: &'a [u8], magic: &[u8; 4], kind: &str) -> Result<Header<'a>> {
    if bytes.len() < 16 || &bytes[..4] != magic {
        return Err(Error::Format(format!(
            "not a {kind} file: bad magic (expected {:?})",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let rest = &bytes[16..];
    if len > rest.len() as u64 {
        return Err(Error::Format(format!(
            "{kind} manifest length {len} exceeds file size"
        )));
    }
    let (manifest, payload) = rest.split_at(len as usize);
    let text = std::str::from_utf8(manifest)
        .map_err(|_| Error::Format(format!("{kind} manifest is not UTF-8")))?;
    let entries = parse_manifest(text)?;
    Ok(Header {
        version,
        entries,
        payload,
    })
}

pub(crate) fn format_manifest(entries: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in entries {
        s.push_str(k);
        s.push('=');
        s.push_str(v);
        s.push('\n');
    }
    s
}

pub(crate) fn parse_manifest(text: &str) -> Result<Vec<(String, String)>> {
    if !text.is_empty() && !text.ends_with('\n') {
        return Err(Error::Format("manifest does not end with a newline".into()));
    }
    let mut entries: Vec<(String, String)> = Vec::new();
    for line in text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("manifest line {line:?} is not key=value")))?;
        if k.is_empty() {
            return Err(Error::Format(format!("manifest line {line:?} has an empty key")));
        }
        if entries.iter().any(|(existing, _)| existing == k) {
            return Err(Error::Format(format!("duplicate manifest key {k:?}")));
        }
        entries.push((k.to_string(), v.to_string()));
    }
    Ok(entries)
}

pub(crate) fn lookup<'a>(entries: &'a [(String, String)], key: &str) -> Option<&'a str> {
    entries
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
}

pub(crate) fn required<'a>(entries: &'a [(String, String)], key: &str, kind: &str) -> Result<&'a str> {
    lookup(entries, key).ok_or_else(|| Error::Format(format!("{kind} manifest lacks required key {key:?}")))
}

pub(crate) fn parse_usize(value: &str, key: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| Error::Format(format!("manifest key {key} has non-integer value {value:?}")))
}

pub(crate) fn parse_flag(value: &str, key: &str) -> Result<bool> {
    match value {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        _ => Err(Error::Format(format!("manifest flag {key} has value {value:?}"))),
    }
}

/// Sequential little-endian reader over a payload.
pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Integrity(format!(
                "payload truncated while reading {what}: need {n} bytes, {} left",
                self.remaining()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn f32s(&mut self, count: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(count * 4, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn u16s(&mut self, count: usize, what: &str) -> Result<Vec<u16>> {
        let raw = self.take(count * 2, what)?;
        Ok(raw
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_parsing_is_strict() {
        assert!(parse_manifest("a=1\nb=2\n").is_ok());
        assert!(parse_manifest("a=1").is_err());
        assert!(parse_manifest("a=1\na=2\n").is_err());
        assert!(parse_manifest("novalue\n").is_err());
        assert!(parse_manifest("=x\n").is_err());
        let e = parse_manifest("k=a=b\n").unwrap();
        assert_eq!(e[0], ("k".to_string(), "a=b".to_string()));
    }

    #[test]
    fn header_round_trip() {
        let entries = vec![("x".to_string(), "1".to_string())];
        let mut bytes = encode_header(b"TEST", 3, &entries);
        bytes.extend_from_slice(&[9, 9]);
        let h = decode_header(&bytes, b"TEST", "test").unwrap();
        assert_eq!(h.version, 3);
        assert_eq!(h.entries, entries);
        assert_eq!(h.payload, &[9, 9]);
        assert!(decode_header(&bytes, b"NOPE", "test").is_err());
    }
}
