//! Sectioned run checkpoints: named byte sections behind a small header.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const RUN_MAGIC: &[u8; 8] = b"COEXRUN\0";
pub const RUN_VERSION: u32 = 1;

/// Section names in the order they are written.
pub const SECTIONS: [&str; 8] = [
    "config",
    "policy.params",
    "policy.optimizer",
    "adm.params",
    "adm.optimizer",
    "counter",
    "clusters",
    "runtime",
];

fn err(section: &str, msg: impl Into<String>) -> Error {
    Error::Checkpoint {
        section: section.to_string(),
        msg: msg.into(),
    }
}

pub fn write_sections<W: Write>(w: &mut W, sections: &[(&str, Vec<u8>)]) -> Result<()> {
    w.write_all(RUN_MAGIC)?;
    w.write_all(&RUN_VERSION.to_le_bytes())?;
    w.write_all(&(sections.len() as u32).to_le_bytes())?;
    for (name, bytes) in sections {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(bytes.len() as u64).to_le_bytes())?;
        w.write_all(bytes)?;
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], section: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => err(section, "file truncated"),
        _ => Error::Io(e),
    })
}

/// Reads every section, checking names against [`SECTIONS`]. A truncated
/// file reports the section that could not be read.
pub fn read_sections<R: Read>(r: &mut R) -> Result<Vec<(String, Vec<u8>)>> {
    let mut magic = [0u8; 8];
    read_exact(r, &mut magic, "header")?;
    if &magic != RUN_MAGIC {
        return Err(err("header", "not a run checkpoint (bad magic)"));
    }
    let mut word = [0u8; 4];
    read_exact(r, &mut word, "header")?;
    let version = u32::from_le_bytes(word);
    if version != RUN_VERSION {
        return Err(err("header", format!("unsupported version {version}, expected {RUN_VERSION}")));
    }
    read_exact(r, &mut word, "header")?;
    let count = u32::from_le_bytes(word) as usize;
    if count != SECTIONS.len() {
        return Err(err("header", format!("expected {} sections, found {count}", SECTIONS.len())));
    }
    let mut out = Vec::with_capacity(count);
    for expected in SECTIONS {
        read_exact(r, &mut word, expected)?;
        let len = u32::from_le_bytes(word) as usize;
        if len > 256 {
            return Err(err(expected, "corrupt section name"));
        }
        let mut name = vec![0u8; len];
        read_exact(r, &mut name, expected)?;
        if name != expected.as_bytes() {
            return Err(err(expected, format!("found section `{}` instead", String::from_utf8_lossy(&name))));
        }
        let mut long = [0u8; 8];
        read_exact(r, &mut long, expected)?;
        let size = u64::from_le_bytes(long) as usize;
        let mut bytes = Vec::new();
        r.by_ref().take(size as u64).read_to_end(&mut bytes)?;
        if bytes.len() != size {
            return Err(err(expected, format!("file truncated ({} of {size} bytes)", bytes.len())));
        }
        out.push((expected.to_string(), bytes));
    }
    Ok(out)
}
